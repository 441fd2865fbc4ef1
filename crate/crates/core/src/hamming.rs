//! Bit-packed hash codes, Hamming ranking, and online query encoding.
//!
//! A code column is stored as `ceil(r / 64)` little-endian `u64` words;
//! bit `k` of a column is 1 iff sign `k` is `+1`. Pad bits above `r` are
//! always zero so XOR + popcount over whole words gives the distance.

use std::fs;
use std::path::Path;

use crate::dataset::{Labels, MultiModalDataset, SplitSpec};
use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::matstore::Matrix;
use crate::objective::Task;
use crate::trainer::TaskModel;

/// `sgn` with the tie rule `sgn(0) = +1`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `r x n` matrix over {-1, +1}, packed one column per instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    r: usize,
    n: usize,
    words: usize,
    packed: Vec<u64>,
}

impl CodeMatrix {
    pub fn words_for(r: usize) -> usize {
        r.div_ceil(64)
    }

    /// Elementwise sign of a real `r x n` matrix.
    pub fn from_real(m: &Matrix) -> Self {
        let (r, n) = m.shape();
        let words = Self::words_for(r);
        let mut packed = vec![0u64; words * n];
        for k in 0..r {
            for (i, &v) in m.row(k).iter().enumerate() {
                if v >= 0.0 {
                    packed[i * words + k / 64] |= 1 << (k % 64);
                }
            }
        }
        Self { r, n, words, packed }
    }

    /// From a row-major `r x n` list of `+-1` signs.
    pub fn from_signs(r: usize, n: usize, signs: &[i8]) -> Result<Self> {
        if signs.len() != r * n {
            return Err(Error::contract(format!(
                "{} signs cannot fill a {r}x{n} code matrix",
                signs.len()
            )));
        }
        if let Some(p) = signs.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::contract(format!("sign at position {p} is {}, expected +-1", signs[p])));
        }
        let m = Matrix::from_fn(r, n, |k, i| f64::from(signs[k * n + i]));
        Ok(Self::from_real(&m))
    }

    /// From packed words (column-major by instance). Pad bits must be zero.
    pub fn from_packed(r: usize, n: usize, packed: Vec<u64>) -> Result<Self> {
        let words = Self::words_for(r);
        if packed.len() != words * n {
            return Err(Error::Format(format!(
                "expected {} words for r = {r}, n = {n}, found {}",
                words * n,
                packed.len()
            )));
        }
        if !r.is_multiple_of(64) && r > 0 {
            let mask = !0u64 << (r % 64);
            if let Some(i) = (0..n).find(|&i| packed[i * words + words - 1] & mask != 0) {
                return Err(Error::Format(format!("code {i} has nonzero pad bits")));
            }
        }
        Ok(Self { r, n, words, packed })
    }

    /// Column-wise concatenation of two code matrices with the same `r`.
    pub fn hconcat(&self, other: &CodeMatrix) -> Result<CodeMatrix> {
        if self.r != other.r {
            return Err(Error::contract(format!("code lengths differ: {} vs {}", self.r, other.r)));
        }
        let mut packed = self.packed.clone();
        packed.extend_from_slice(&other.packed);
        Ok(Self { r: self.r, n: self.n + other.n, words: self.words, packed })
    }

    #[inline]
    pub fn bits(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn words_per_code(&self) -> usize {
        self.words
    }

    pub fn packed(&self) -> &[u64] {
        &self.packed
    }

    /// Packed words of instance `i`.
    #[inline]
    pub fn code(&self, i: usize) -> &[u64] {
        &self.packed[i * self.words..(i + 1) * self.words]
    }

    #[inline]
    pub fn sign(&self, bit: usize, i: usize) -> i8 {
        if self.code(i)[bit / 64] >> (bit % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Logical `+-1` view as an `r x n` real matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.r, self.n, |k, i| f64::from(self.sign(k, i)))
    }

    pub fn select(&self, ids: &[usize]) -> CodeMatrix {
        let mut packed = Vec::with_capacity(ids.len() * self.words);
        for &i in ids {
            packed.extend_from_slice(self.code(i));
        }
        Self { r: self.r, n: ids.len(), words: self.words, packed }
    }
}

/// Positions where two packed codes of length `r` differ.
pub fn hamming_distance(a: &[u64], b: &[u64], r: usize) -> Result<u32> {
    let words = CodeMatrix::words_for(r);
    if a.len() != words || b.len() != words {
        return Err(Error::contract(format!(
            "codes of {} and {} words do not both hold r = {r} bits",
            a.len(),
            b.len()
        )));
    }
    Ok(packed_distance(a, b))
}

#[inline]
fn packed_distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Database side of a retrieval task.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub codes: CodeMatrix,
    pub labels: Labels,
    /// Original instance index of each database column.
    pub ids: Vec<usize>,
}

impl RetrievalIndex {
    pub fn new(codes: CodeMatrix, labels: Labels, ids: Vec<usize>) -> Result<Self> {
        if codes.len() != labels.num_instances() || codes.len() != ids.len() {
            return Err(Error::contract(format!(
                "index parts disagree: {} codes, {} label columns, {} ids",
                codes.len(),
                labels.num_instances(),
                ids.len()
            )));
        }
        Ok(Self { codes, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Full ranking as positions into the index: ascending distance, ties
    /// by ascending original id.
    pub fn rank(&self, query: &[u64]) -> Result<Vec<usize>> {
        let r = self.codes.bits();
        if query.len() != self.codes.words_per_code() {
            return Err(Error::contract(format!(
                "query has {} words, index codes have r = {r}",
                query.len()
            )));
        }
        let mut keyed: Vec<(u32, usize, usize)> = (0..self.len())
            .map(|p| (packed_distance(query, self.codes.code(p)), self.ids[p], p))
            .collect();
        keyed.sort_unstable();
        Ok(keyed.into_iter().map(|(_, _, p)| p).collect())
    }
}

/// The `k` nearest database ids to `query`.
pub fn topk(index: &RetrievalIndex, query: &[u64], k: usize) -> Result<Vec<usize>> {
    if k < 1 || k > index.len() {
        return Err(Error::contract(format!("k = {k} outside [1, {}]", index.len())));
    }
    let mut ranking = index.rank(query)?;
    ranking.truncate(k);
    Ok(ranking.into_iter().map(|p| index.ids[p]).collect())
}

const ENCODE_CHUNK: usize = 1024;

/// `sgn(enc(x))` for every row of `feats`.
pub fn encode_queries(enc: &MlpEncoder, feats: &Matrix) -> Result<CodeMatrix> {
    if feats.cols() != enc.input_dim() {
        return Err(Error::Shape {
            op: "encode_queries",
            left: (enc.output_dim(), enc.input_dim()),
            right: feats.shape(),
        });
    }
    let mut codes = CodeMatrix::from_real(&Matrix::zeros(enc.output_dim(), 0));
    let rows: Vec<usize> = (0..feats.rows()).collect();
    for chunk in rows.chunks(ENCODE_CHUNK) {
        let out = enc.encode(&feats.select_rows(chunk))?;
        codes = codes.hconcat(&CodeMatrix::from_real(&out))?;
    }
    Ok(codes)
}

/// How training-set database items get their codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatabaseCodes {
    /// Use the codes learned during training.
    #[default]
    Learned,
    /// Re-encode every item with the database-side network.
    Reencode,
}

/// The encoder that hashes database items for `model`'s task.
pub fn database_encoder(model: &TaskModel) -> &MlpEncoder {
    match model.task {
        Task::I2T => &model.text_encoder,
        Task::T2I => &model.image_encoder,
    }
}

/// The encoder that hashes queries for `model`'s task.
pub fn query_encoder(model: &TaskModel) -> &MlpEncoder {
    match model.task {
        Task::I2T => &model.image_encoder,
        Task::T2I => &model.text_encoder,
    }
}

/// Query-side features for `model`'s task.
pub fn query_features<'d>(model: &TaskModel, ds: &'d MultiModalDataset) -> &'d Matrix {
    match model.task {
        Task::I2T => &ds.image,
        Task::T2I => &ds.text,
    }
}

fn database_features<'d>(model: &TaskModel, ds: &'d MultiModalDataset) -> &'d Matrix {
    match model.task {
        Task::I2T => &ds.text,
        Task::T2I => &ds.image,
    }
}

/// Builds the retrieval index over `split.retrieval`.
///
/// Items in `split.train` keep their learned codes (unless `mode` asks for
/// re-encoding); all others go through the task's database-side encoder.
pub fn encode_database(
    model: &TaskModel,
    ds: &MultiModalDataset,
    split: &SplitSpec,
    mode: DatabaseCodes,
) -> Result<RetrievalIndex> {
    split.validate(ds.len())?;
    if model.codes.len() != split.train.len() {
        return Err(Error::contract(format!(
            "model holds {} learned codes but the split trains on {}",
            model.codes.len(),
            split.train.len()
        )));
    }
    let enc = database_encoder(model);
    let feats = database_features(model, ds);
    if feats.cols() != enc.input_dim() {
        return Err(Error::Shape {
            op: "encode_database",
            left: (enc.output_dim(), enc.input_dim()),
            right: feats.shape(),
        });
    }

    let mut train_pos = vec![usize::MAX; ds.len()];
    for (p, &i) in split.train.iter().enumerate() {
        train_pos[i] = p;
    }
    let learned = mode == DatabaseCodes::Learned;
    let outside: Vec<usize> = split
        .retrieval
        .iter()
        .copied()
        .filter(|&i| !learned || train_pos[i] == usize::MAX)
        .collect();
    let fresh = if outside.is_empty() {
        CodeMatrix::from_real(&Matrix::zeros(model.r, 0))
    } else {
        encode_queries(enc, &feats.select_rows(&outside))?
    };

    let words = fresh.words_per_code();
    let mut packed = Vec::with_capacity(split.retrieval.len() * words);
    let mut next_fresh = 0;
    for &i in &split.retrieval {
        if learned && train_pos[i] != usize::MAX {
            packed.extend_from_slice(model.codes.code(train_pos[i]));
        } else {
            packed.extend_from_slice(fresh.code(next_fresh));
            next_fresh += 1;
        }
    }
    let codes = CodeMatrix::from_packed(model.r, split.retrieval.len(), packed)?;
    RetrievalIndex::new(codes, ds.labels.select(&split.retrieval), split.retrieval.clone())
}

const CODE_MAGIC: &[u8; 4] = b"TACB";
pub const CODE_FORMAT_VERSION: u16 = 1;

/// Serializes codes: magic, `u16` version, `u32` r, `u32` n, then the packed
/// little-endian words, one code after another.
pub fn codes_to_bytes(codes: &CodeMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + codes.packed.len() * 8);
    out.extend_from_slice(CODE_MAGIC);
    out.extend_from_slice(&CODE_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(codes.r as u32).to_le_bytes());
    out.extend_from_slice(&(codes.n as u32).to_le_bytes());
    for w in &codes.packed {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn codes_from_bytes(bytes: &[u8]) -> Result<CodeMatrix> {
    if bytes.len() < 14 || &bytes[..4] != CODE_MAGIC {
        return Err(Error::Format("not a code file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CODE_FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: CODE_FORMAT_VERSION });
    }
    let r = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let n = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let body = &bytes[14..];
    if body.len() != CodeMatrix::words_for(r) * n * 8 {
        return Err(Error::Format(format!(
            "code file body has {} bytes, expected {}",
            body.len(),
            CodeMatrix::words_for(r) * n * 8
        )));
    }
    let packed = body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    CodeMatrix::from_packed(r, n, packed)
}

pub fn write_codes(codes: &CodeMatrix, path: &Path) -> Result<()> {
    fs::write(path, codes_to_bytes(codes)).map_err(|e| Error::io(path, e))
}

pub fn read_codes(path: &Path) -> Result<CodeMatrix> {
    codes_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
