//! Alternating optimization for one retrieval direction.
//!
//! Each outer epoch runs, in order:
//!
//! 1. an image-network sweep (forward, `dJ/dF`, backprop, SGD) over
//!    mini-batches of the training set,
//! 2. the same sweep for the text network with `dJ/dG`,
//! 3. the exact code update `B = sgn(lambda F + beta G)`,
//! 4. the ridge closed form for the query-side projection.
//!
//! `F`, `G` and `B` only cover the training items. The pairwise sums inside
//! the feature gradients always run over the whole training set; a batch
//! only decides which columns get refreshed and backpropagated.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{MultiModalDataset, SplitSpec};
use crate::encoder::{Activation, Dense, MlpEncoder, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::hamming::{sgn, CodeMatrix};
use crate::matstore::{spd_solve, Matrix};
use crate::objective::{self, HyperParams, ObjectiveState, Regression, Task};

/// Training strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Task-adaptive model: query-side features regress onto labels.
    Full,
    /// Shared codes regress onto labels, `B = sgn(lambda F + beta G + mu V L)`.
    V1SymmetricLabel,
    /// No label regression at all; pairwise supervision only.
    V2Unsupervised,
    /// Real-valued codes during training, thresholded once at the end.
    V3Relaxed,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::V1SymmetricLabel => "v1",
            Variant::V2Unsupervised => "v2",
            Variant::V3Relaxed => "v3",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Variant::Full => 0,
            Variant::V1SymmetricLabel => 1,
            Variant::V2Unsupervised => 2,
            Variant::V3Relaxed => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Variant::Full,
            1 => Variant::V1SymmetricLabel,
            2 => Variant::V2Unsupervised,
            3 => Variant::V3Relaxed,
            _ => return None,
        })
    }

    fn regression(self, task: Task) -> Regression {
        match self {
            Variant::Full | Variant::V3Relaxed => Regression::for_task(task),
            Variant::V1SymmetricLabel => Regression::Codes,
            Variant::V2Unsupervised => Regression::None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "v1" => Ok(Variant::V1SymmetricLabel),
            "v2" => Ok(Variant::V2Unsupervised),
            "v3" => Ok(Variant::V3Relaxed),
            other => Err(Error::contract(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Code length `r`.
    pub bits: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_image: f64,
    pub lr_text: f64,
    pub variant: Variant,
    pub seed: u64,
    /// One batch per sweep covering the whole training set, in index order.
    pub full_batch: bool,
    /// Stop once the relative objective change over the last 10 epochs
    /// drops below 1e-6.
    pub early_stop: bool,
    /// Hidden width of both encoders.
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bits: 16,
            epochs: 500,
            batch_size: 128,
            lr_image: 1e-2,
            lr_text: 1e-2,
            variant: Variant::Full,
            seed: 0,
            full_batch: false,
            early_stop: false,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

pub const LR_RANGE: (f64, f64) = (1e-6, 1e-1);
const EARLY_STOP_WINDOW: usize = 10;
const EARLY_STOP_TOL: f64 = 1e-6;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            return Err(Error::contract("bits must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1"));
        }
        if self.hidden == 0 {
            return Err(Error::contract("hidden width must be >= 1"));
        }
        for (name, lr) in [("lr_image", self.lr_image), ("lr_text", self.lr_text)] {
            if !(LR_RANGE.0..=LR_RANGE.1).contains(&lr) {
                return Err(Error::contract(format!(
                    "{name} = {lr} outside [{:e}, {:e}]",
                    LR_RANGE.0, LR_RANGE.1
                )));
            }
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub objective: f64,
    pub seconds: f64,
}

/// Objective values around the exact block updates of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    /// After both network sweeps.
    pub after_networks: f64,
    /// After the code update.
    pub after_codes: f64,
    /// After the projection update; equals the logged objective.
    pub after_projection: f64,
}

/// Everything learned for one retrieval direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub task: Task,
    pub variant: Variant,
    pub image_encoder: MlpEncoder,
    pub text_encoder: MlpEncoder,
    /// `r x c`: P (I2T), W (T2I) or V (shared-code variant).
    pub proj: Matrix,
    /// `r x n_train` learned codes, columns in `split.train` order.
    pub codes: CodeMatrix,
    pub hp: HyperParams,
    pub r: usize,
    pub train_log: Vec<EpochLog>,
}

/// `B = sgn(lambda F + beta G)`.
pub fn update_codes(f: &Matrix, g: &Matrix, hp: &HyperParams) -> Result<CodeMatrix> {
    update_codes_with_labels(f, g, None, hp)
}

/// `B = sgn(lambda F + beta G + mu V L)`, the label term only when given.
pub fn update_codes_with_labels(
    f: &Matrix,
    g: &Matrix,
    label_term: Option<(&Matrix, &Matrix)>,
    hp: &HyperParams,
) -> Result<CodeMatrix> {
    if f.shape() != g.shape() {
        return Err(Error::Shape { op: "update_codes", left: f.shape(), right: g.shape() });
    }
    if hp.lambda + hp.beta <= 0.0 && label_term.is_none_or(|_| hp.mu == 0.0) {
        return Err(Error::contract("code update needs lambda + beta > 0"));
    }
    let mut target = f.zip_with(g, "update_codes", |a, b| hp.lambda * a + hp.beta * b)?;
    if let Some((v, l)) = label_term {
        let vl = v.matmul(l)?;
        target = target.zip_with(&vl, "update_codes", |t, x| t + hp.mu * x)?;
    }
    Ok(CodeMatrix::from_real(&target))
}

/// Relaxed codes `(lambda F + beta G) / (lambda + beta)`.
pub fn relaxed_codes(f: &Matrix, g: &Matrix, hp: &HyperParams) -> Result<Matrix> {
    let w = hp.lambda + hp.beta;
    if w <= 0.0 {
        return Err(Error::contract("relaxed code update needs lambda + beta > 0"));
    }
    f.zip_with(g, "relaxed_codes", |a, b| (hp.lambda * a + hp.beta * b) / w)
}

/// Minimizer of `mu |feat - P L|^2 + nu |P|^2`:
/// `P = feat L^T (L L^T + (nu / mu) I)^-1`.
pub fn update_projection(feat: &Matrix, labels: &Matrix, mu: f64, nu: f64) -> Result<Matrix> {
    if !mu.is_finite() || mu <= 0.0 {
        return Err(Error::contract(format!("projection update needs mu > 0, got {mu}")));
    }
    if !nu.is_finite() || nu < 0.0 {
        return Err(Error::contract(format!("nu must be finite and >= 0, got {nu}")));
    }
    if feat.cols() != labels.cols() {
        return Err(Error::Shape { op: "update_projection", left: feat.shape(), right: labels.shape() });
    }
    let lt = labels.transpose();
    let mut gram = labels.matmul(&lt)?;
    let ridge = nu / mu;
    for k in 0..gram.rows() {
        gram[(k, k)] += ridge;
    }
    // P gram = feat L^T  <=>  gram P^T = L feat^T
    let rhs = labels.matmul(&feat.transpose())?;
    Ok(spd_solve(&gram, &rhs)?.transpose())
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains one task model. See [`train_task_traced`] for per-step values.
pub fn train_task(
    ds: &MultiModalDataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    hp: &HyperParams,
) -> Result<TaskModel> {
    train_task_traced(ds, split, cfg, hp, None)
}

/// Codes carried through training: discrete for every variant except the
/// relaxed one.
enum Codes {
    Discrete(CodeMatrix),
    Relaxed(Matrix),
}

impl Codes {
    fn as_matrix(&self) -> Matrix {
        match self {
            Codes::Discrete(c) => c.to_matrix(),
            Codes::Relaxed(m) => m.clone(),
        }
    }
}

struct Blocks {
    f: Matrix,
    g: Matrix,
    b: Matrix,
    proj: Matrix,
}

impl Blocks {
    fn state<'a>(&'a self, labels: &'a Matrix, regression: Regression) -> ObjectiveState<'a> {
        ObjectiveState { f: &self.f, g: &self.g, b: &self.b, proj: &self.proj, labels, regression }
    }
}

/// Trains one task model, reporting the objective around each exact block
/// update to `observer` when given.
pub fn train_task_traced(
    ds: &MultiModalDataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    hp: &HyperParams,
    mut observer: Option<&mut dyn FnMut(&EpochTrace)>,
) -> Result<TaskModel> {
    cfg.validate()?;
    hp.validate()?;
    ds.validate()?;
    split.validate(ds.len())?;
    let n = split.train.len();
    if n == 0 {
        return Err(Error::contract("training set is empty"));
    }

    let variant = cfg.variant;
    let mut hp = *hp;
    if variant == Variant::V2Unsupervised {
        hp.mu = 0.0;
    }
    let regression = variant.regression(hp.task);
    let r = cfg.bits;
    let c = ds.num_classes();

    let x = ds.image.select_rows(&split.train);
    let y = ds.text.select_rows(&split.train);
    let labels = ds.labels.select(&split.train);
    let l = labels.to_matrix();

    let mut image_enc = MlpEncoder::glorot(&[ds.image_dim(), cfg.hidden, r], derive_seed(cfg.seed, 1))?;
    let mut text_enc = MlpEncoder::glorot(&[ds.text_dim(), cfg.hidden, r], derive_seed(cfg.seed, 2))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));

    let init_b = Matrix::from_fn(r, n, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    let init_proj = if regression == Regression::None {
        Matrix::zeros(r, c)
    } else {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-0.1..0.1))
    };
    let mut codes = match variant {
        Variant::V3Relaxed => Codes::Relaxed(init_b.clone()),
        _ => Codes::Discrete(CodeMatrix::from_real(&init_b)),
    };
    let mut blocks = Blocks {
        f: image_enc.encode(&x)?,
        g: text_enc.encode(&y)?,
        b: init_b,
        proj: init_proj,
    };

    let all: Vec<usize> = (0..n).collect();
    let mut order = all.clone();
    let mut log: Vec<EpochLog> = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    let ctx = |epoch: usize, step: &'static str| move |e: Error| Error::Training { epoch, step, source: Box::new(e) };

    for epoch in 1..=cfg.epochs {
        // Step 1: image network.
        if !cfg.full_batch {
            order.shuffle(&mut rng);
        }
        let batch_size = if cfg.full_batch { n } else { cfg.batch_size };
        for batch in order.chunks(batch_size) {
            sweep_batch(&mut image_enc, &x, batch, cfg.lr_image, n, &mut blocks, |b| {
                objective::grad_f(&b.state(&l, regression), &hp, &labels, batch)
            }, true)
            .map_err(ctx(epoch, "image network"))?;
        }

        // Step 2: text network.
        if !cfg.full_batch {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(batch_size) {
            sweep_batch(&mut text_enc, &y, batch, cfg.lr_text, n, &mut blocks, |b| {
                objective::grad_g(&b.state(&l, regression), &hp, &labels, batch)
            }, false)
            .map_err(ctx(epoch, "text network"))?;
        }

        let after_networks = match observer {
            Some(_) => objective::objective_value(&blocks.state(&l, regression), &hp, &labels)
                .map_err(ctx(epoch, "objective"))?,
            None => f64::NAN,
        };

        // Step 3: codes.
        codes = match variant {
            Variant::V3Relaxed => Codes::Relaxed(relaxed_codes(&blocks.f, &blocks.g, &hp).map_err(ctx(epoch, "codes"))?),
            Variant::V1SymmetricLabel => Codes::Discrete(
                update_codes_with_labels(&blocks.f, &blocks.g, Some((&blocks.proj, &l)), &hp)
                    .map_err(ctx(epoch, "codes"))?,
            ),
            _ => Codes::Discrete(update_codes(&blocks.f, &blocks.g, &hp).map_err(ctx(epoch, "codes"))?),
        };
        blocks.b = codes.as_matrix();

        let after_codes = match observer {
            Some(_) => objective::objective_value(&blocks.state(&l, regression), &hp, &labels)
                .map_err(ctx(epoch, "objective"))?,
            None => f64::NAN,
        };

        // Step 4: projection.
        let target = match regression {
            Regression::Image => Some(&blocks.f),
            Regression::Text => Some(&blocks.g),
            Regression::Codes => Some(&blocks.b),
            Regression::None => None,
        };
        if let Some(target) = target {
            if hp.mu > 0.0 {
                blocks.proj = update_projection(target, &l, hp.mu, hp.nu).map_err(ctx(epoch, "projection"))?;
            } else if hp.nu > 0.0 {
                blocks.proj = Matrix::zeros(r, c);
            }
        }

        let value = objective::objective_value(&blocks.state(&l, regression), &hp, &labels)
            .map_err(ctx(epoch, "objective"))?;
        log.push(EpochLog { epoch, objective: value, seconds: start.elapsed().as_secs_f64() });
        if let Some(obs) = observer.as_mut() {
            obs(&EpochTrace { epoch, after_networks, after_codes, after_projection: value });
        }

        if cfg.early_stop && plateaued(&log) {
            break;
        }
    }

    let codes = match codes {
        Codes::Discrete(c) => c,
        Codes::Relaxed(m) => CodeMatrix::from_real(&m.map(sgn)),
    };
    Ok(TaskModel {
        task: hp.task,
        variant,
        image_encoder: image_enc,
        text_encoder: text_enc,
        proj: blocks.proj,
        codes,
        hp,
        r,
        train_log: log,
    })
}

/// Relative objective change over the last `EARLY_STOP_WINDOW` epochs is
/// below `EARLY_STOP_TOL`.
fn plateaued(log: &[EpochLog]) -> bool {
    if log.len() <= EARLY_STOP_WINDOW {
        return false;
    }
    let old = log[log.len() - 1 - EARLY_STOP_WINDOW].objective;
    let new = log[log.len() - 1].objective;
    ((old - new) / old.abs().max(f64::MIN_POSITIVE)).abs() < EARLY_STOP_TOL
}

/// Refreshes the batch's feature columns, evaluates their objective
/// gradient, and takes one SGD step on `enc`.
///
/// The gradient handed to the network is scaled by `1 / (n * |batch|)`.
#[allow(clippy::too_many_arguments)]
fn sweep_batch(
    enc: &mut MlpEncoder,
    feats: &Matrix,
    batch: &[usize],
    lr: f64,
    n: usize,
    blocks: &mut Blocks,
    grad: impl Fn(&Blocks) -> Result<Matrix>,
    image_side: bool,
) -> Result<()> {
    let (out, tape) = enc.forward(&feats.select_rows(batch))?;
    let cols = if image_side { &mut blocks.f } else { &mut blocks.g };
    for (k, &i) in batch.iter().enumerate() {
        cols.set_column(i, &out.column(k));
    }
    let scale = 1.0 / (n as f64 * batch.len() as f64);
    let upstream = grad(blocks)?.scale(scale);
    let (grads, _) = enc.backward(&tape, &upstream)?;
    enc.sgd_step(&grads, lr)
}

/// Writes the training log as `epoch,objective` CSV.
///
/// Wall times are left out so the file is reproducible; see
/// [`write_timing_log`].
pub fn write_train_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,objective\n");
    for e in log {
        out.push_str(&format!("{},{:.17e}\n", e.epoch, e.objective));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes cumulative wall time per epoch as `epoch,seconds` CSV.
pub fn write_timing_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,seconds\n");
    for e in log {
        out.push_str(&format!("{},{:.6}\n", e.epoch, e.seconds));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const MODEL_MAGIC: &[u8; 4] = b"TADC";
pub const MODEL_FORMAT_VERSION: u16 = 1;

/// Model file layout (all integers and floats little-endian):
///
/// ```text
/// "TADC" | u16 version | u8 task | u8 variant | u32 r | u32 c | u32 n_codes
/// | f64 lambda, beta, mu, nu
/// | encoder (image) | encoder (text)
/// | f64 proj[r * c], row-major
/// | u64 codes[n_codes * ceil(r / 64)], one code after another
///
/// encoder = u32 layers, then per layer:
///           u32 in | u32 out | u8 activation | f64 weight[out * in] | f64 bias[out]
/// ```
///
/// The training log is not stored; it goes to its own CSV.
pub fn model_to_bytes(m: &TaskModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.push(match m.task {
        Task::I2T => 0,
        Task::T2I => 1,
    });
    out.push(m.variant.tag());
    for v in [m.r, m.proj.cols(), m.codes.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [m.hp.lambda, m.hp.beta, m.hp.mu, m.hp.nu] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for enc in [&m.image_encoder, &m.text_encoder] {
        out.extend_from_slice(&(enc.layers().len() as u32).to_le_bytes());
        for l in enc.layers() {
            out.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
            out.push(l.activation.tag());
            for v in l.weight.as_slice().iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    for v in m.proj.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for w in m.codes.packed() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("model file truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Format(format!("{what}: size overflow")))?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn encoder(&mut self, what: &str) -> Result<MlpEncoder> {
        let count = self.u32(what)?;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let in_dim = self.u32(what)?;
            let out_dim = self.u32(what)?;
            let activation = Activation::from_tag(self.u8(what)?)
                .ok_or_else(|| Error::Format(format!("{what}: unknown activation tag")))?;
            let weight = Matrix::from_vec(out_dim, in_dim, self.f64s(out_dim * in_dim, what)?)
                .map_err(|e| Error::Format(format!("{what}: {e}")))?;
            let bias = self.f64s(out_dim, what)?;
            layers.push(Dense { weight, bias, activation });
        }
        MlpEncoder::from_layers(layers).map_err(|e| Error::Format(format!("{what}: {e}")))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TaskModel> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    if rd.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = rd.u16("version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: MODEL_FORMAT_VERSION });
    }
    let task = match rd.u8("task")? {
        0 => Task::I2T,
        1 => Task::T2I,
        t => return Err(Error::Format(format!("unknown task tag {t}"))),
    };
    let variant = Variant::from_tag(rd.u8("variant")?).ok_or_else(|| Error::Format("unknown variant tag".into()))?;
    let r = rd.u32("r")?;
    let c = rd.u32("c")?;
    let n_codes = rd.u32("code count")?;
    let hpv = rd.f64s(4, "hyperparameters")?;
    let hp = HyperParams::new(hpv[0], hpv[1], hpv[2], hpv[3], task).map_err(|e| Error::Format(e.to_string()))?;
    let image_encoder = rd.encoder("image encoder")?;
    let text_encoder = rd.encoder("text encoder")?;
    if image_encoder.output_dim() != r || text_encoder.output_dim() != r {
        return Err(Error::Format(format!("encoder output width does not match r = {r}")));
    }
    let proj = Matrix::from_vec(r, c, rd.f64s(r * c, "projection")?).map_err(|e| Error::Format(e.to_string()))?;
    let words = CodeMatrix::words_for(r) * n_codes;
    let packed = rd
        .take(words * 8, "codes")?
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let codes = CodeMatrix::from_packed(r, n_codes, packed)?;
    if rd.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after model", bytes.len() - rd.pos)));
    }
    Ok(TaskModel { task, variant, image_encoder, text_encoder, proj, codes, hp, r, train_log: Vec::new() })
}

pub fn save_model(m: &TaskModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TaskModel> {
    model_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
