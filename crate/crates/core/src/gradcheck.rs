//! Finite-difference verification of the analytic gradients.
//!
//! Three families of checks run on random desk-sized instances:
//!
//! * `grad_f` / `grad_g` against central differences of the objective,
//!   cycling through every `{0, 0.1}^4` hyperparameter corner for both tasks;
//! * encoder backprop (parameters and inputs) against central differences
//!   of a quadratic probe loss;
//! * the composed chain `theta -> F -> J` for both encoders.
//!
//! The gradient routines under test are injected through [`GradientFns`] so a
//! deliberately broken implementation can be shown to fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Labels, Similarity};
use crate::encoder::{GradBuffer, MlpEncoder};
use crate::error::Result;
use crate::matstore::Matrix;
use crate::objective::{self, HyperParams, ObjectiveState, Regression, Task};

pub type FeatureGradFn =
    fn(&ObjectiveState<'_>, &HyperParams, &dyn Similarity, &[usize]) -> Result<Matrix>;

#[derive(Clone, Copy)]
pub struct GradientFns {
    pub grad_f: FeatureGradFn,
    pub grad_g: FeatureGradFn,
}

impl Default for GradientFns {
    fn default() -> Self {
        Self {
            grad_f: |st, hp, sim, batch| objective::grad_f(st, hp, sim, batch),
            grad_g: |st, hp, sim, batch| objective::grad_g(st, hp, sim, batch),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { trials: 64, seed: 0, step: 1e-6, tolerance: 1e-4 }
    }
}

/// Floor on the relative-error denominator, so entries that are zero up to
/// rounding compare absolutely.
pub const REL_FLOOR: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub check: String,
    pub location: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl std::fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} at {}: analytic {:.9e}, numeric {:.9e}, relative error {:.3e}",
            self.check, self.location, self.analytic, self.numeric, self.rel_error
        )
    }
}

/// Worst discrepancy per check family.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub name: String,
    pub instances: usize,
    pub entries: usize,
    pub worst: Option<Discrepancy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub checks: Vec<CheckSummary>,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&Discrepancy> {
        self.checks
            .iter()
            .filter_map(|c| c.worst.as_ref())
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passed(&self) -> bool {
        self.worst().is_none_or(|w| w.rel_error < self.tolerance)
    }
}

struct Tracker {
    summary: CheckSummary,
}

impl Tracker {
    fn new(name: &str) -> Self {
        Self { summary: CheckSummary { name: name.into(), instances: 0, entries: 0, worst: None } }
    }

    fn record(&mut self, location: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.summary.entries += 1;
        let rel = if analytic.is_finite() && numeric.is_finite() {
            relative_error(analytic, numeric)
        } else {
            f64::INFINITY
        };
        if self.summary.worst.as_ref().is_none_or(|w| rel > w.rel_error) {
            self.summary.worst = Some(Discrepancy {
                check: self.summary.name.clone(),
                location: location(),
                analytic,
                numeric,
                rel_error: rel,
            });
        }
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_labels(c: usize, n: usize, rng: &mut ChaCha8Rng) -> Labels {
    let cols: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let mut col: Vec<u8> = (0..c).map(|_| u8::from(rng.random_bool(0.4))).collect();
            let forced = rng.random_range(0..c);
            col[forced] = 1;
            col
        })
        .collect();
    Labels::from_columns(c, &cols).expect("valid labels")
}

struct Instance {
    f: Matrix,
    g: Matrix,
    b: Matrix,
    proj: Matrix,
    l: Matrix,
    labels: Labels,
    batch: Vec<usize>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let r = rng.random_range(1..=4);
    let n = rng.random_range(2..=8);
    let c = rng.random_range(1..=3);
    let labels = random_labels(c, n, rng);
    let mut batch: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    if batch.is_empty() {
        batch.push(rng.random_range(0..n));
    }
    Instance {
        f: random_matrix(r, n, rng),
        g: random_matrix(r, n, rng),
        b: Matrix::from_fn(r, n, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }),
        proj: random_matrix(r, c, rng),
        l: labels.to_matrix(),
        labels,
        batch,
    }
}

fn corner(trial: usize) -> (HyperParams, Regression) {
    let bit = |k: usize| if trial >> k & 1 == 1 { 0.1 } else { 0.0 };
    let task = if trial >> 4 & 1 == 1 { Task::T2I } else { Task::I2T };
    let hp = HyperParams { lambda: bit(0), beta: bit(1), mu: bit(2), nu: bit(3), task };
    (hp, Regression::for_task(task))
}

fn check_feature_gradients(
    cfg: &GradcheckConfig,
    fns: &GradientFns,
    rng: &mut ChaCha8Rng,
    image: &mut Tracker,
    text: &mut Tracker,
) -> Result<()> {
    for trial in 0..cfg.trials {
        let inst = random_instance(rng);
        let (hp, regression) = corner(trial);
        let tag = format!("trial {trial} ({})", hp.task);

        for (side, tracker) in [(0, &mut *image), (1, &mut *text)] {
            let st = ObjectiveState {
                f: &inst.f,
                g: &inst.g,
                b: &inst.b,
                proj: &inst.proj,
                labels: &inst.l,
                regression,
            };
            let grad_fn = if side == 0 { fns.grad_f } else { fns.grad_g };
            let analytic = grad_fn(&st, &hp, &inst.labels, &inst.batch)?;
            tracker.summary.instances += 1;
            for (col, &i) in inst.batch.iter().enumerate() {
                for k in 0..inst.f.rows() {
                    let eval = |delta: f64| -> Result<f64> {
                        let (mut f, mut g) = (inst.f.clone(), inst.g.clone());
                        if side == 0 {
                            f[(k, i)] += delta;
                        } else {
                            g[(k, i)] += delta;
                        }
                        let st = ObjectiveState { f: &f, g: &g, ..st };
                        objective::objective_value(&st, &hp, &inst.labels)
                    };
                    let numeric = (eval(cfg.step)? - eval(-cfg.step)?) / (2.0 * cfg.step);
                    tracker.record(|| format!("{tag}, entry ({k}, {i})"), analytic[(k, col)], numeric);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
fn flat_params(enc: &MlpEncoder) -> Vec<f64> {
    enc.layers()
        .iter()
        .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
        .collect()
}

fn flat_grads(g: &GradBuffer) -> Vec<f64> {
    g.weights
        .iter()
        .zip(&g.biases)
        .flat_map(|(w, b)| w.as_slice().iter().chain(b).copied())
        .collect()
}

/// Encoder with parameter `idx` (in [`flat_params`] order) shifted by `delta`.
fn perturbed(enc: &MlpEncoder, idx: usize, delta: f64) -> MlpEncoder {
    let mut grads = GradBuffer::zeros_like(enc);
    let mut left = idx;
    for (w, b) in grads.weights.iter_mut().zip(grads.biases.iter_mut()) {
        let wl = w.as_slice().len();
        if left < wl {
            w.as_mut_slice()[left] = 1.0;
            break;
        }
        left -= wl;
        if left < b.len() {
            b[left] = 1.0;
            break;
        }
        left -= b.len();
    }
    let mut out = enc.clone();
    // theta - 1 * (-delta e_idx)
    out.sgd_step(&scale_grads(&grads, -delta), 1.0).expect("finite perturbation");
    out
}

fn scale_grads(g: &GradBuffer, s: f64) -> GradBuffer {
    GradBuffer {
        weights: g.weights.iter().map(|w| w.scale(s)).collect(),
        biases: g.biases.iter().map(|b| b.iter().map(|v| v * s).collect()).collect(),
    }
}

fn param_location(enc: &MlpEncoder, mut idx: usize) -> String {
    for (k, l) in enc.layers().iter().enumerate() {
        let wl = l.weight.as_slice().len();
        if idx < wl {
            return format!("layer {k} weight ({}, {})", idx / l.in_dim(), idx % l.in_dim());
        }
        idx -= wl;
        if idx < l.bias.len() {
            return format!("layer {k} bias {idx}");
        }
        idx -= l.bias.len();
    }
    "out of range".into()
}

fn check_encoder_backprop(
    cfg: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
    params: &mut Tracker,
    inputs: &mut Tracker,
) -> Result<()> {
    for trial in 0..cfg.trials {
        let d = rng.random_range(1..=32);
        let hidden = rng.random_range(1..=8);
        let r = rng.random_range(1..=8);
        let nb = rng.random_range(1..=16);
        let enc = MlpEncoder::glorot(&[d, hidden, r], rng.random())?;
        // Nonzero biases keep ReLU pre-activations away from the kink.
        let mut enc_b = enc.clone();
        let bias_shift = GradBuffer {
            weights: enc.layers().iter().map(|l| Matrix::zeros(l.out_dim(), l.in_dim())).collect(),
            biases: enc.layers().iter().map(|l| (0..l.out_dim()).map(|_| rng.random_range(-0.5..0.5)).collect()).collect(),
        };
        enc_b.sgd_step(&bias_shift, 1.0)?;
        let enc = enc_b;

        let x = random_matrix(nb, d, rng);
        let w = random_matrix(r, nb, rng);
        // probe(out) = sum(w . out) + |out|^2 / 2, d probe / d out = w + out
        let probe = |out: &Matrix| -> f64 {
            out.as_slice().iter().zip(w.as_slice()).map(|(o, wi)| wi * o + 0.5 * o * o).sum()
        };
        let (out, tape) = enc.forward(&x)?;
        let upstream = w.add(&out)?;
        let (grads, dx) = enc.backward(&tape, &upstream)?;
        params.summary.instances += 1;
        inputs.summary.instances += 1;

        let analytic = flat_grads(&grads);
        for (idx, &a) in analytic.iter().enumerate() {
            let plus = probe(&perturbed(&enc, idx, cfg.step).encode(&x)?);
            let minus = probe(&perturbed(&enc, idx, -cfg.step).encode(&x)?);
            let numeric = (plus - minus) / (2.0 * cfg.step);
            params.record(|| format!("trial {trial}, {}", param_location(&enc, idx)), a, numeric);
        }
        for i in 0..nb {
            for j in 0..d {
                let mut xp = x.clone();
                xp[(i, j)] += cfg.step;
                let mut xm = x.clone();
                xm[(i, j)] -= cfg.step;
                let numeric = (probe(&enc.encode(&xp)?) - probe(&enc.encode(&xm)?)) / (2.0 * cfg.step);
                inputs.record(|| format!("trial {trial}, input ({i}, {j})"), dx[(i, j)], numeric);
            }
        }
    }
    Ok(())
}

/// `theta -> F = enc(X) -> J`, for the image and the text encoder.
fn check_chain(
    cfg: &GradcheckConfig,
    fns: &GradientFns,
    rng: &mut ChaCha8Rng,
    tracker: &mut Tracker,
) -> Result<()> {
    let trials = cfg.trials.div_ceil(4).max(1);
    for trial in 0..trials {
        let inst = random_instance(rng);
        let (r, n) = inst.f.shape();
        let (hp, regression) = corner(rng.random_range(0..32));
        let d = rng.random_range(1..=6);
        let enc = MlpEncoder::glorot(&[d, rng.random_range(1..=5), r], rng.random())?;
        let x = random_matrix(n, d, rng);
        let all: Vec<usize> = (0..n).collect();

        for side in 0..2 {
            let (out, tape) = enc.forward(&x)?;
            let objective_at = |feat: &Matrix| -> Result<f64> {
                let (f, g) = if side == 0 { (feat, &inst.g) } else { (&inst.f, feat) };
                let st = ObjectiveState { f, g, b: &inst.b, proj: &inst.proj, labels: &inst.l, regression };
                objective::objective_value(&st, &hp, &inst.labels)
            };
            let (f, g) = if side == 0 { (&out, &inst.g) } else { (&inst.f, &out) };
            let st = ObjectiveState { f, g, b: &inst.b, proj: &inst.proj, labels: &inst.l, regression };
            let upstream = if side == 0 {
                (fns.grad_f)(&st, &hp, &inst.labels, &all)?
            } else {
                (fns.grad_g)(&st, &hp, &inst.labels, &all)?
            };
            let (grads, _) = enc.backward(&tape, &upstream)?;
            tracker.summary.instances += 1;
            for (idx, &a) in flat_grads(&grads).iter().enumerate() {
                let plus = objective_at(&perturbed(&enc, idx, cfg.step).encode(&x)?)?;
                let minus = objective_at(&perturbed(&enc, idx, -cfg.step).encode(&x)?)?;
                let numeric = (plus - minus) / (2.0 * cfg.step);
                let which = if side == 0 { "image" } else { "text" };
                tracker.record(
                    || format!("trial {trial} ({which} side, {}), {}", hp.task, param_location(&enc, idx)),
                    a,
                    numeric,
                );
            }
        }
    }
    Ok(())
}

/// Runs every check family and reports the worst entry of each.
pub fn run_gradcheck(cfg: &GradcheckConfig, fns: &GradientFns) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut image = Tracker::new("grad_F");
    let mut text = Tracker::new("grad_G");
    let mut params = Tracker::new("encoder parameters");
    let mut inputs = Tracker::new("encoder inputs");
    let mut chain = Tracker::new("encoder chain");
    check_feature_gradients(cfg, fns, &mut rng, &mut image, &mut text)?;
    check_encoder_backprop(cfg, &mut rng, &mut params, &mut inputs)?;
    check_chain(cfg, fns, &mut rng, &mut chain)?;
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        checks: [image, text, params, inputs, chain].into_iter().map(|t| t.summary).collect(),
    })
}
