//! Task objectives and their gradients with respect to the deep features.
//!
//! For one retrieval direction the minimized objective is
//!
//! ```text
//! J = sum_ij [softplus(phi_ij) - S_ij phi_ij]          phi_ij = F_i . G_j / 2
//!   + lambda |B - F|^2 + beta |B - G|^2
//!   + mu |Q - Proj L|^2                                 Q = F (I2T) or G (T2I)
//!   + nu (|F 1|^2 + |G 1|^2 + |Proj|^2)
//! ```
//!
//! All sums over `j` run in ascending order, so results are bitwise
//! reproducible regardless of how batch columns are spread over threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Similarity;
use crate::error::{Error, Result};
use crate::matstore::{row_sums, Matrix};

/// Retrieval direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Image query, text database.
    I2T,
    /// Text query, image database.
    T2I,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::I2T => "i2t",
            Task::T2I => "t2i",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i2t" => Ok(Task::I2T),
            "t2i" => Ok(Task::T2I),
            other => Err(Error::contract(format!("unknown task {other:?}"))),
        }
    }
}

/// Dataset-specific hyperparameter defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    MirFlickr,
    NusWide,
    IaprTc12,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mirflickr" => Ok(Preset::MirFlickr),
            "nuswide" => Ok(Preset::NusWide),
            "iaprtc12" => Ok(Preset::IaprTc12),
            other => Err(Error::contract(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub lambda: f64,
    pub beta: f64,
    pub mu: f64,
    pub nu: f64,
    pub task: Task,
}

impl HyperParams {
    pub fn new(lambda: f64, beta: f64, mu: f64, nu: f64, task: Task) -> Result<Self> {
        let hp = Self { lambda, beta, mu, nu, task };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("beta", self.beta), ("mu", self.mu), ("nu", self.nu)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::contract(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Best-reported settings per benchmark corpus.
    pub fn preset(preset: Preset, task: Task) -> Self {
        let (lambda, beta, mu, nu) = match (preset, task) {
            (Preset::MirFlickr, _) => (1e-1, 1e-2, 1e-4, 1e-1),
            (Preset::NusWide, _) => (1e-1, 1.0, 1.0, 1e-1),
            (Preset::IaprTc12, Task::I2T) => (1.0, 1e-5, 0.1, 0.1),
            (Preset::IaprTc12, Task::T2I) => (1.0, 10.0, 0.1, 1e-5),
        };
        Self { lambda, beta, mu, nu, task }
    }
}

/// Which block the label regression term pulls toward `Proj L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regression {
    /// `mu |F - P L|^2` (I2T).
    Image,
    /// `mu |G - W L|^2` (T2I).
    Text,
    /// `mu |B - V L|^2` (shared-code variant).
    Codes,
    /// No label term.
    None,
}

impl Regression {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::I2T => Regression::Image,
            Task::T2I => Regression::Text,
        }
    }
}

/// Borrowed view of every block the objective depends on.
///
/// `b` is `+-1` for the discrete model; the relaxed variant stores its real
/// codes here as well.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveState<'a> {
    /// `r x n` image features.
    pub f: &'a Matrix,
    /// `r x n` text features.
    pub g: &'a Matrix,
    /// `r x n` codes.
    pub b: &'a Matrix,
    /// `r x c` projection (P, W or V).
    pub proj: &'a Matrix,
    /// `c x n` labels as reals.
    pub labels: &'a Matrix,
    pub regression: Regression,
}

impl ObjectiveState<'_> {
    pub fn validate(&self, sim: &(impl Similarity + ?Sized)) -> Result<()> {
        let (r, n) = self.f.shape();
        for (name, m) in [("G", self.g), ("B", self.b)] {
            if m.shape() != (r, n) {
                return Err(Error::Shape { op: name, left: (r, n), right: m.shape() });
            }
        }
        if self.proj.rows() != r {
            return Err(Error::Shape { op: "projection", left: (r, n), right: self.proj.shape() });
        }
        if self.labels.shape() != (self.proj.cols(), n) {
            return Err(Error::Shape { op: "labels", left: self.proj.shape(), right: self.labels.shape() });
        }
        if sim.len() != n {
            return Err(Error::contract(format!(
                "similarity oracle covers {} instances, features cover {n}",
                sim.len()
            )));
        }
        for (name, m) in [("F", self.f), ("G", self.g), ("B", self.b), ("projection", self.proj)] {
            if !m.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(())
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function, branch-stable for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_ij softplus(phi_ij) - S_ij phi_ij` with `phi_ij = F_i . G_j / 2`.
pub fn pairwise_nll(f: &Matrix, g: &Matrix, sim: &(impl Similarity + ?Sized)) -> Result<f64> {
    if f.shape() != g.shape() {
        return Err(Error::Shape { op: "pairwise_nll", left: f.shape(), right: g.shape() });
    }
    if sim.len() != f.cols() {
        return Err(Error::contract(format!(
            "similarity oracle covers {} instances, features cover {}",
            sim.len(),
            f.cols()
        )));
    }
    if !f.is_finite() || !g.is_finite() {
        return Err(Error::NonFinite("features in pairwise_nll".into()));
    }
    let (ft, gt) = (f.transpose(), g.transpose());
    let n = f.cols();
    let per_row: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = ft.row(i);
            let mut acc = 0.0;
            for j in 0..n {
                let phi = 0.5 * dot(fi, gt.row(j));
                acc += stable_softplus(phi);
                if sim.similar(i, j) {
                    acc -= phi;
                }
            }
            acc
        })
        .collect();
    let total: f64 = per_row.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("pairwise_nll".into()));
    }
    Ok(total)
}

/// Individual objective terms, already weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub likelihood: f64,
    pub quant_image: f64,
    pub quant_text: f64,
    pub regression: f64,
    pub balance: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.quant_image + self.quant_text + self.regression + self.balance
    }
}

fn regression_residual(st: &ObjectiveState<'_>) -> Result<Option<Matrix>> {
    let target = match st.regression {
        Regression::Image => st.f,
        Regression::Text => st.g,
        Regression::Codes => st.b,
        Regression::None => return Ok(None),
    };
    Ok(Some(target.sub(&st.proj.matmul(st.labels)?)?))
}

pub fn objective_terms(
    st: &ObjectiveState<'_>,
    hp: &HyperParams,
    sim: &(impl Similarity + ?Sized),
) -> Result<ObjectiveTerms> {
    hp.validate()?;
    st.validate(sim)?;
    let likelihood = pairwise_nll(st.f, st.g, sim)?;
    let quant_image = hp.lambda * st.b.sub(st.f)?.frobenius_sq();
    let quant_text = hp.beta * st.b.sub(st.g)?.frobenius_sq();
    let regression = match regression_residual(st)? {
        Some(res) => hp.mu * res.frobenius_sq(),
        None => 0.0,
    };
    let sq = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>();
    let balance = hp.nu * (sq(row_sums(st.f)) + sq(row_sums(st.g)) + st.proj.frobenius_sq());
    let terms = ObjectiveTerms { likelihood, quant_image, quant_text, regression, balance };
    if !terms.total().is_finite() {
        return Err(Error::NonFinite("objective value".into()));
    }
    Ok(terms)
}

pub fn objective_value(
    st: &ObjectiveState<'_>,
    hp: &HyperParams,
    sim: &(impl Similarity + ?Sized),
) -> Result<f64> {
    objective_terms(st, hp, sim).map(|t| t.total())
}

#[derive(Clone, Copy)]
enum Side {
    Image,
    Text,
}

fn feature_gradient(
    side: Side,
    st: &ObjectiveState<'_>,
    hp: &HyperParams,
    sim: &(impl Similarity + ?Sized),
    batch: &[usize],
) -> Result<Matrix> {
    hp.validate()?;
    st.validate(sim)?;
    let (r, n) = st.f.shape();
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::contract(format!("batch index {bad} out of range for n = {n}")));
    }

    // `own` is the block being differentiated, `other` the block it pairs with.
    let (own, other, quant_weight, regress) = match side {
        Side::Image => (st.f, st.g, hp.lambda, st.regression == Regression::Image),
        Side::Text => (st.g, st.f, hp.beta, st.regression == Regression::Text),
    };
    let own_t = own.transpose();
    let other_t = other.transpose();
    let b_t = st.b.transpose();
    let balance: Vec<f64> = row_sums(own).iter().map(|s| 2.0 * hp.nu * s).collect();
    let proj_l_t = if regress && hp.mu != 0.0 {
        Some(st.proj.matmul(st.labels)?.transpose())
    } else {
        None
    };

    let columns: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|&i| {
            let own_i = own_t.row(i);
            let mut col = vec![0.0; r];
            for j in 0..n {
                let other_j = other_t.row(j);
                let phi = 0.5 * dot(own_i, other_j);
                let s = match side {
                    Side::Image => sim.similar(i, j),
                    Side::Text => sim.similar(j, i),
                };
                let coef = 0.5 * (sigmoid(phi) - if s { 1.0 } else { 0.0 });
                for (c, o) in col.iter_mut().zip(other_j) {
                    *c += coef * o;
                }
            }
            let b_i = b_t.row(i);
            for k in 0..r {
                col[k] += 2.0 * quant_weight * (own_i[k] - b_i[k]) + balance[k];
            }
            if let Some(pl) = &proj_l_t {
                let pl_i = pl.row(i);
                for k in 0..r {
                    col[k] += 2.0 * hp.mu * (own_i[k] - pl_i[k]);
                }
            }
            col
        })
        .collect();

    let mut out = Matrix::zeros(r, batch.len());
    for (k, col) in columns.iter().enumerate() {
        out.set_column(k, col);
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("feature gradient".into()));
    }
    Ok(out)
}

/// `dJ/dF` for the listed instances (one column each).
pub fn grad_f(
    st: &ObjectiveState<'_>,
    hp: &HyperParams,
    sim: &(impl Similarity + ?Sized),
    batch: &[usize],
) -> Result<Matrix> {
    feature_gradient(Side::Image, st, hp, sim, batch)
}

/// `dJ/dG` for the listed instances (one column each).
pub fn grad_g(
    st: &ObjectiveState<'_>,
    hp: &HyperParams,
    sim: &(impl Similarity + ?Sized),
    batch: &[usize],
) -> Result<Matrix> {
    feature_gradient(Side::Text, st, hp, sim, batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense similarity table for hand-built cases.
    struct Table(usize, Vec<bool>);

    impl Similarity for Table {
        fn len(&self) -> usize {
            self.0
        }
        fn similar(&self, i: usize, j: usize) -> bool {
            self.1[i * self.0 + j]
        }
    }

    #[test]
    fn softplus_values() {
        assert!((stable_softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(stable_softplus(1000.0), 1000.0);
        let tiny = stable_softplus(-1000.0);
        assert!((0.0..1e-300).contains(&tiny));
    }

    #[test]
    fn sigmoid_branches() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
        for x in [-3.0, -0.5, 0.5, 3.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nll_at_zero_features() {
        let n = 5;
        let z = Matrix::zeros(3, n);
        let table = Table(n, vec![true; n * n]);
        let v = pairwise_nll(&z, &z, &table).unwrap();
        assert!((v - (n * n) as f64 * std::f64::consts::LN_2).abs() < 1e-12);

        let one = Matrix::zeros(2, 1);
        let v = pairwise_nll(&one, &one, &Table(1, vec![true])).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    fn zero_state_hp(lambda: f64, beta: f64, mu: f64, nu: f64) -> HyperParams {
        HyperParams::new(lambda, beta, mu, nu, Task::I2T).unwrap()
    }

    #[test]
    fn objective_closed_form_assembly() {
        let (r, n, c) = (3, 2, 2);
        let f = Matrix::zeros(r, n);
        let b = Matrix::from_fn(r, n, |_, _| 1.0);
        let proj = Matrix::zeros(r, c);
        let labels = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        let st = ObjectiveState { f: &f, g: &f, b: &b, proj: &proj, labels: &labels, regression: Regression::Image };
        let sim = Table(n, vec![true, false, false, true]);
        let v = objective_value(&st, &zero_state_hp(1.0, 1.0, 0.0, 0.0), &sim).unwrap();
        // n^2 log 2 + (lambda + beta) * r * n
        let expected = 4.0 * std::f64::consts::LN_2 + 2.0 * (2 * r) as f64;
        assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
    }

    #[test]
    fn grad_f_hand_case() {
        let f = Matrix::zeros(1, 1);
        let b = Matrix::from_rows(&[[1.0]]).unwrap();
        let proj = Matrix::zeros(1, 1);
        let labels = Matrix::from_rows(&[[1.0]]).unwrap();
        let st = ObjectiveState { f: &f, g: &f, b: &b, proj: &proj, labels: &labels, regression: Regression::Image };
        let sim = Table(1, vec![true]);
        let g = grad_f(&st, &zero_state_hp(0.5, 0.0, 0.0, 0.0), &sim, &[0]).unwrap();
        assert_eq!(g.as_slice(), &[-1.0]);

        let g = grad_g(&st, &zero_state_hp(0.0, 0.5, 0.0, 0.0), &sim, &[0]).unwrap();
        assert_eq!(g.as_slice(), &[-1.0]);
    }

    #[test]
    fn gradients_vanish_on_zero_features() {
        let (r, n) = (2, 3);
        let z = Matrix::zeros(r, n);
        let proj = Matrix::zeros(r, 1);
        let labels = Matrix::from_fn(1, n, |_, _| 1.0);
        let st = ObjectiveState { f: &z, g: &z, b: &z, proj: &proj, labels: &labels, regression: Regression::Image };
        let hp = zero_state_hp(0.0, 0.0, 0.0, 0.0);
        let g = grad_f(&st, &hp, &Table(n, vec![false; n * n]), &[0, 1, 2]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        let g = grad_g(&st, &hp, &Table(n, vec![true; n * n]), &[0, 2]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_bounds_checked() {
        let z = Matrix::zeros(1, 2);
        let proj = Matrix::zeros(1, 1);
        let labels = Matrix::from_fn(1, 2, |_, _| 1.0);
        let st = ObjectiveState { f: &z, g: &z, b: &z, proj: &proj, labels: &labels, regression: Regression::None };
        let hp = zero_state_hp(0.1, 0.1, 0.1, 0.1);
        assert!(grad_f(&st, &hp, &Table(2, vec![true; 4]), &[2]).is_err());
    }

    #[test]
    fn presets() {
        let hp = HyperParams::preset(Preset::MirFlickr, Task::T2I);
        assert_eq!((hp.lambda, hp.beta, hp.mu, hp.nu), (1e-1, 1e-2, 1e-4, 1e-1));
        let hp = HyperParams::preset(Preset::IaprTc12, Task::T2I);
        assert_eq!((hp.lambda, hp.beta, hp.mu, hp.nu), (1.0, 10.0, 0.1, 1e-5));
        assert!(HyperParams::new(-1.0, 0.0, 0.0, 0.0, Task::I2T).is_err());
    }
}
