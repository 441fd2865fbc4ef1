//! Paired image/text feature datasets, splits, and the synthetic generator.
//!
//! On disk a dataset is a directory holding `manifest.json`, two raw
//! little-endian `f32` row-major feature blobs, and a `c x n` label blob with
//! one byte per entry. Splits live next to it as `query.ids`,
//! `retrieval.ids`, and `train.ids`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstore::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const QUERY_IDS_FILE: &str = "query.ids";
pub const RETRIEVAL_IDS_FILE: &str = "retrieval.ids";
pub const TRAIN_IDS_FILE: &str = "train.ids";

/// Pairwise semantic relation `S` queried on demand; never materialized.
pub trait Similarity: Sync {
    /// Number of instances the relation is defined over.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `S_ij`. Callers guarantee `i, j < len()`.
    fn similar(&self, i: usize, j: usize) -> bool;
}

/// Multi-hot label matrix `L` (`c x n`, entries in {0, 1}).
///
/// Each instance's label column is also kept as a packed bitset so that the
/// similarity test is a handful of `AND`s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    c: usize,
    n: usize,
    /// Row-major `c x n`.
    data: Vec<u8>,
    words: usize,
    bits: Vec<u64>,
}

impl Labels {
    /// Builds from a row-major `c x n` byte buffer.
    pub fn from_row_major(c: usize, n: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != c * n {
            return Err(Error::contract(format!(
                "label buffer of length {} does not match {c}x{n}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::contract(format!(
                "label entry ({}, {}) is {}, expected 0 or 1",
                pos / n,
                pos % n,
                data[pos]
            )));
        }
        let words = c.div_ceil(64).max(1);
        let mut bits = vec![0u64; words * n];
        for k in 0..c {
            for i in 0..n {
                if data[k * n + i] == 1 {
                    bits[i * words + k / 64] |= 1 << (k % 64);
                }
            }
        }
        Ok(Self {
            c,
            n,
            data,
            words,
            bits,
        })
    }

    /// Builds from per-instance label columns (each of length `c`).
    pub fn from_columns<C: AsRef<[u8]>>(c: usize, columns: &[C]) -> Result<Self> {
        let n = columns.len();
        let mut data = vec![0u8; c * n];
        for (i, col) in columns.iter().enumerate() {
            let col = col.as_ref();
            if col.len() != c {
                return Err(Error::contract(format!(
                    "label column {i} has length {}, expected {c}",
                    col.len()
                )));
            }
            for (k, &v) in col.iter().enumerate() {
                data[k * n + i] = v;
            }
        }
        Self::from_row_major(c, n, data)
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn num_instances(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, class: usize, instance: usize) -> u8 {
        self.data[class * self.n + instance]
    }

    pub fn as_row_major(&self) -> &[u8] {
        &self.data
    }

    /// Label column of one instance.
    pub fn column(&self, i: usize) -> Vec<u8> {
        (0..self.c).map(|k| self.get(k, i)).collect()
    }

    /// Number of positive labels per instance.
    pub fn column_sums(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                self.bits[i * self.words..(i + 1) * self.words]
                    .iter()
                    .map(|w| w.count_ones() as usize)
                    .sum()
            })
            .collect()
    }

    /// Checked `S_ij`: 1 iff the instances share a positive label.
    pub fn similarity(&self, i: usize, j: usize) -> Result<bool> {
        if i >= self.n || j >= self.n {
            return Err(Error::contract(format!(
                "similarity index ({i}, {j}) out of range for n = {}",
                self.n
            )));
        }
        Ok(self.shares_label(i, j))
    }

    #[inline]
    fn shares_label(&self, i: usize, j: usize) -> bool {
        let a = &self.bits[i * self.words..(i + 1) * self.words];
        let b = &self.bits[j * self.words..(j + 1) * self.words];
        a.iter().zip(b).any(|(x, y)| x & y != 0)
    }

    /// True iff instance `i` here and instance `j` in `other` share a label.
    pub fn shares_label_with(&self, i: usize, other: &Labels, j: usize) -> bool {
        debug_assert_eq!(self.c, other.c);
        let a = &self.bits[i * self.words..(i + 1) * self.words];
        let b = &other.bits[j * other.words..(j + 1) * other.words];
        a.iter().zip(b).any(|(x, y)| x & y != 0)
    }

    /// Labels of the given instances, in order.
    pub fn select(&self, ids: &[usize]) -> Labels {
        let columns: Vec<Vec<u8>> = ids.iter().map(|&i| self.column(i)).collect();
        Labels::from_columns(self.c, &columns).expect("selected columns are valid")
    }

    /// `L` as a dense `c x n` real matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.c, self.n, |k, i| f64::from(self.get(k, i)))
    }
}

impl Similarity for Labels {
    fn len(&self) -> usize {
        self.n
    }

    #[inline]
    fn similar(&self, i: usize, j: usize) -> bool {
        self.shares_label(i, j)
    }
}

/// Aligned image/text feature pairs with multi-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalDataset {
    pub name: String,
    /// `n x d_x`
    pub image: Matrix,
    /// `n x d_y`
    pub text: Matrix,
    /// `c x n`
    pub labels: Labels,
}

impl MultiModalDataset {
    pub fn new(name: impl Into<String>, image: Matrix, text: Matrix, labels: Labels) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            image,
            text,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.image.rows();
        if self.text.rows() != n || self.labels.num_instances() != n {
            return Err(Error::contract(format!(
                "unaligned dataset: {} image rows, {} text rows, {} label columns",
                n,
                self.text.rows(),
                self.labels.num_instances()
            )));
        }
        if let Some(i) = self.labels.column_sums().iter().position(|&s| s == 0) {
            return Err(Error::contract(format!("instance {i} has no positive label")));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.image.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_dim(&self) -> usize {
        self.image.cols()
    }

    pub fn text_dim(&self) -> usize {
        self.text.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub c: usize,
    pub image_blob: String,
    pub text_blob: String,
    pub label_blob: String,
    pub dtype: String,
    pub layout: String,
}

const IMAGE_BLOB: &str = "image.f32";
const TEXT_BLOB: &str = "text.f32";
const LABEL_BLOB: &str = "labels.u8";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn f32_blob(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.as_slice().len() * 4);
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn parse_f32_blob(field: &str, bytes: &[u8], rows: usize, cols: usize) -> Result<Matrix> {
    let expected = rows * cols * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{field}: expected {expected} bytes for {rows}x{cols} f32, found {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| Error::Format(format!("{field}: {e}")))
}

/// Writes `ds` under `dir` and returns the manifest path.
///
/// Features are narrowed to `f32`.
pub fn save_dataset(ds: &MultiModalDataset, dir: &Path) -> Result<PathBuf> {
    if ds.is_empty() {
        return Err(Error::contract("refusing to save an empty dataset"));
    }
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    write_file(&dir.join(IMAGE_BLOB), &f32_blob(&ds.image))?;
    write_file(&dir.join(TEXT_BLOB), &f32_blob(&ds.text))?;
    write_file(&dir.join(LABEL_BLOB), ds.labels.as_row_major())?;

    let manifest = Manifest {
        name: ds.name.clone(),
        n: ds.len(),
        d_x: ds.image_dim(),
        d_y: ds.text_dim(),
        c: ds.num_classes(),
        image_blob: IMAGE_BLOB.into(),
        text_blob: TEXT_BLOB.into(),
        label_blob: LABEL_BLOB.into(),
        dtype: "f32le".into(),
        layout: "row_major".into(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&path, json.as_bytes())?;
    Ok(path)
}

/// Loads a dataset from its manifest (or from the directory holding it).
pub fn load_dataset(manifest_path: &Path) -> Result<MultiModalDataset> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join(MANIFEST_FILE)
    } else {
        manifest_path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let raw = read_file(&manifest_path)?;
    let m: Manifest = serde_json::from_slice(&raw)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if m.dtype != "f32le" {
        return Err(Error::Format(format!("dtype: unsupported {:?}", m.dtype)));
    }
    if m.layout != "row_major" {
        return Err(Error::Format(format!("layout: unsupported {:?}", m.layout)));
    }

    let image = parse_f32_blob("image_blob", &read_file(&dir.join(&m.image_blob))?, m.n, m.d_x)?;
    let text = parse_f32_blob("text_blob", &read_file(&dir.join(&m.text_blob))?, m.n, m.d_y)?;
    let label_bytes = read_file(&dir.join(&m.label_blob))?;
    if label_bytes.len() != m.c * m.n {
        return Err(Error::Format(format!(
            "label_blob: expected {} bytes for {}x{} labels, found {}",
            m.c * m.n,
            m.c,
            m.n,
            label_bytes.len()
        )));
    }
    let labels = Labels::from_row_major(m.c, m.n, label_bytes)
        .map_err(|e| Error::Format(format!("label_blob: {e}")))?;
    if let Some(i) = labels.column_sums().iter().position(|&s| s == 0) {
        return Err(Error::Format(format!(
            "label_blob: instance {i} has no positive label"
        )));
    }
    MultiModalDataset::new(m.name, image, text, labels)
}

/// Query / retrieval / train partition of instance indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub query: Vec<usize>,
    pub retrieval: Vec<usize>,
    pub train: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut role = vec![0u8; n];
        for (name, ids, mark) in [("query", &self.query, 1u8), ("retrieval", &self.retrieval, 2)] {
            for &i in ids.iter() {
                if i >= n {
                    return Err(Error::contract(format!("{name} index {i} out of range for n = {n}")));
                }
                if role[i] & mark != 0 {
                    return Err(Error::contract(format!("{name} index {i} repeated")));
                }
                role[i] |= mark;
            }
        }
        if let Some(i) = role.iter().position(|&r| r == 3) {
            return Err(Error::contract(format!("index {i} is both query and retrieval")));
        }
        let mut seen = vec![false; n];
        for &i in &self.train {
            if i >= n {
                return Err(Error::contract(format!("train index {i} out of range for n = {n}")));
            }
            if role[i] != 2 {
                return Err(Error::contract(format!("train index {i} is not in the retrieval set")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::contract(format!("train index {i} repeated")));
            }
        }
        Ok(())
    }
}

/// Random disjoint query set; the rest is retrieval; train is a random
/// subset of retrieval. All lists are sorted ascending.
pub fn make_split(n: usize, n_query: usize, n_train: usize, seed: u64) -> Result<SplitSpec> {
    if n_query + 1 > n {
        return Err(Error::contract(format!(
            "n_query = {n_query} leaves no retrieval items for n = {n}"
        )));
    }
    if n_train > n - n_query {
        return Err(Error::contract(format!(
            "n_train = {n_train} exceeds retrieval size {}",
            n - n_query
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let mut query = perm[..n_query].to_vec();
    let mut retrieval = perm[n_query..].to_vec();
    let mut pool = retrieval.clone();
    pool.shuffle(&mut rng);
    let mut train = pool[..n_train].to_vec();

    query.sort_unstable();
    retrieval.sort_unstable();
    train.sort_unstable();
    Ok(SplitSpec {
        query,
        retrieval,
        train,
    })
}

fn write_ids(path: &Path, ids: &[usize]) -> Result<()> {
    let mut buf = Vec::with_capacity(ids.len() * 6);
    for i in ids {
        writeln!(buf, "{i}").expect("writing to a Vec cannot fail");
    }
    write_file(path, &buf)
}

fn read_ids(path: &Path) -> Result<Vec<usize>> {
    let raw = read_file(path)?;
    let text = String::from_utf8(raw)
        .map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(ln, l)| {
            l.trim().parse::<usize>().map_err(|_| {
                Error::Format(format!("{}:{}: bad index {l:?}", path.display(), ln + 1))
            })
        })
        .collect()
}

pub fn save_split(split: &SplitSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ids(&dir.join(QUERY_IDS_FILE), &split.query)?;
    write_ids(&dir.join(RETRIEVAL_IDS_FILE), &split.retrieval)?;
    write_ids(&dir.join(TRAIN_IDS_FILE), &split.train)
}

/// Reads the three split files and validates them against `n`.
pub fn load_split(dir: &Path, n: usize) -> Result<SplitSpec> {
    let split = SplitSpec {
        query: read_ids(&dir.join(QUERY_IDS_FILE))?,
        retrieval: read_ids(&dir.join(RETRIEVAL_IDS_FILE))?,
        train: read_ids(&dir.join(TRAIN_IDS_FILE))?,
    };
    split.validate(n)?;
    Ok(split)
}

/// Parameters of [`synth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub c: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Synthetic paired dataset with `c` classes.
///
/// Every instance carries one or two classes. Its image feature is the mean
/// of its classes' Gaussian prototypes plus `noise`-scaled Gaussian noise;
/// its text feature is the mean of nonnegative bag-of-words prototypes, each
/// concentrated on a class-specific vocabulary block, plus nonnegative noise.
/// Values are rounded to `f32` so the dataset survives a save/load cycle
/// unchanged.
pub fn synth(p: SynthParams) -> Result<MultiModalDataset> {
    let SynthParams {
        n,
        d_x,
        d_y,
        c,
        noise,
        seed,
    } = p;
    if c < 1 || n < c {
        return Err(Error::contract(format!("synth requires n >= c >= 1 (n = {n}, c = {c})")));
    }
    if d_x < c || d_y < c {
        return Err(Error::contract(format!(
            "synth requires d_x, d_y >= c (d_x = {d_x}, d_y = {d_y}, c = {c})"
        )));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::contract(format!("noise must be finite and >= 0, got {noise}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image_protos: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d_x).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let block = d_y / c;
    let text_protos: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            let mut v = vec![0.0; d_y];
            for w in &mut v[k * block..(k + 1) * block] {
                *w = f64::from(rng.random_range(1u8..=3));
            }
            v
        })
        .collect();

    let round = |v: f64| f64::from(v as f32);
    let mut image = Matrix::zeros(n, d_x);
    let mut text = Matrix::zeros(n, d_y);
    let mut columns = Vec::with_capacity(n);
    for i in 0..n {
        let first = rng.random_range(0..c);
        let mut classes = vec![first];
        if c > 1 && rng.random_bool(0.5) {
            let mut second = rng.random_range(0..c - 1);
            if second >= first {
                second += 1;
            }
            classes.push(second);
        }
        let mut col = vec![0u8; c];
        for &k in &classes {
            col[k] = 1;
        }
        columns.push(col);

        let w = 1.0 / classes.len() as f64;
        for j in 0..d_x {
            let mean: f64 = classes.iter().map(|&k| image_protos[k][j]).sum::<f64>() * w;
            let eps: f64 = rng.sample(StandardNormal);
            image[(i, j)] = round(mean + noise * eps);
        }
        for j in 0..d_y {
            let mean: f64 = classes.iter().map(|&k| text_protos[k][j]).sum::<f64>() * w;
            let eps: f64 = rng.sample(StandardNormal);
            text[(i, j)] = round(mean + noise * eps.abs());
        }
    }
    let labels = Labels::from_columns(c, &columns)?;
    MultiModalDataset::new(format!("synth-n{n}-c{c}-s{seed}"), image, text, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels_from(cols: &[&[u8]]) -> Labels {
        Labels::from_columns(cols[0].len(), cols).unwrap()
    }

    #[test]
    fn similarity_cases() {
        let l = labels_from(&[&[1, 0, 1], &[0, 0, 1], &[1, 0, 0], &[0, 1, 0]]);
        assert!(l.similarity(0, 1).unwrap());
        assert!(!l.similarity(2, 3).unwrap());
        assert!(l.similarity(3, 3).unwrap());
        assert!(l.similarity(0, 4).is_err());
    }

    #[test]
    fn similarity_is_symmetric() {
        let ds = synth(SynthParams { n: 40, d_x: 8, d_y: 8, c: 5, noise: 0.1, seed: 2 }).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(ds.labels.similar(i, j), ds.labels.similar(j, i));
            }
        }
    }

    #[test]
    fn wide_label_sets_pack_across_words() {
        let c = 130;
        let mut a = vec![0u8; c];
        let mut b = vec![0u8; c];
        a[129] = 1;
        b[129] = 1;
        b[3] = 1;
        let l = Labels::from_columns(c, &[a, b]).unwrap();
        assert!(l.similar(0, 1));
        assert_eq!(l.column_sums(), vec![1, 2]);
    }

    #[test]
    fn synth_is_deterministic() {
        let p = SynthParams { n: 100, d_x: 16, d_y: 32, c: 4, noise: 0.0, seed: 7 };
        assert_eq!(synth(p).unwrap(), synth(p).unwrap());
    }

    #[test]
    fn noiseless_same_class_features_identical() {
        let ds = synth(SynthParams { n: 100, d_x: 16, d_y: 32, c: 4, noise: 0.0, seed: 7 }).unwrap();
        let single: Vec<(usize, usize)> = (0..ds.len())
            .filter_map(|i| {
                let col = ds.labels.column(i);
                (col.iter().filter(|&&v| v == 1).count() == 1)
                    .then(|| (i, col.iter().position(|&v| v == 1).unwrap()))
            })
            .collect();
        let mut checked = 0;
        for &(i, ki) in &single {
            for &(j, kj) in &single {
                if ki == kj {
                    assert_eq!(ds.image.row(i), ds.image.row(j));
                    assert!(ds.labels.similarity(i, j).unwrap());
                    checked += 1;
                }
            }
        }
        assert!(checked > single.len());
    }

    #[test]
    fn synth_text_is_nonnegative() {
        let ds = synth(SynthParams { n: 60, d_x: 8, d_y: 12, c: 3, noise: 0.5, seed: 1 }).unwrap();
        assert!(ds.text.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn synth_rejects_bad_params() {
        let ok = SynthParams { n: 10, d_x: 4, d_y: 4, c: 4, noise: 0.0, seed: 0 };
        assert!(synth(SynthParams { n: 3, ..ok }).is_err());
        assert!(synth(SynthParams { d_x: 3, ..ok }).is_err());
        assert!(synth(SynthParams { noise: -1.0, ..ok }).is_err());
        assert!(synth(SynthParams { c: 0, ..ok }).is_err());
    }

    #[test]
    fn split_invariants() {
        let s = make_split(10, 2, 5, 3).unwrap();
        assert_eq!(s.query.len(), 2);
        assert_eq!(s.retrieval.len(), 8);
        assert_eq!(s.train.len(), 5);
        assert!(s.train.iter().all(|i| s.retrieval.contains(i)));
        assert!(s.query.iter().all(|i| !s.retrieval.contains(i)));
        s.validate(10).unwrap();
        assert_eq!(s, make_split(10, 2, 5, 3).unwrap());
    }

    #[test]
    fn split_full_train() {
        let s = make_split(10, 3, 7, 9).unwrap();
        assert_eq!(s.train, s.retrieval);
    }

    #[test]
    fn split_size_errors() {
        assert!(make_split(5, 5, 0, 0).is_err());
        assert!(make_split(5, 2, 4, 0).is_err());
    }

    #[test]
    fn split_validation_catches_overlap() {
        let s = SplitSpec { query: vec![0, 1], retrieval: vec![1, 2], train: vec![2] };
        assert!(s.validate(3).is_err());
        let s = SplitSpec { query: vec![0], retrieval: vec![1, 2], train: vec![0] };
        assert!(s.validate(3).is_err());
    }
}
