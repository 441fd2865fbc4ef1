//! Exactness of the closed-form block updates against brute-force oracles.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tadcmh::dataset::Labels;
use tadcmh::objective::{objective_value, ObjectiveState};
use tadcmh::trainer::{update_codes, update_codes_with_labels, update_projection};
use tadcmh::{HyperParams, Matrix, Regression, Task};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn random_labels(rng: &mut ChaCha8Rng, c: usize, n: usize) -> Labels {
    let cols: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let mut col: Vec<u8> = (0..c).map(|_| u8::from(rng.random_bool(0.4))).collect();
            col[rng.random_range(0..c)] = 1;
            col
        })
        .collect();
    Labels::from_columns(c, &cols).unwrap()
}

fn sign_matrix(r: usize, n: usize, mask: u32) -> Matrix {
    Matrix::from_fn(r, n, |i, j| if mask >> (i * n + j) & 1 == 1 { 1.0 } else { -1.0 })
}

/// Searches all `2^(r n)` code matrices for the minimum objective.
fn brute_force_min(eval: impl Fn(&Matrix) -> f64, r: usize, n: usize) -> f64 {
    (0..1u32 << (r * n)).map(|m| eval(&sign_matrix(r, n, m))).fold(f64::INFINITY, f64::min)
}

#[test]
fn code_update_beats_every_alternative() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (r, n) in [(1, 1), (2, 3), (4, 4), (2, 8), (3, 5), (1, 16)] {
        for task in [Task::I2T, Task::T2I] {
            let c = 3;
            let f = random_matrix(&mut rng, r, n, 1.5);
            let g = random_matrix(&mut rng, r, n, 1.5);
            let proj = random_matrix(&mut rng, r, c, 0.5);
            let labels = random_labels(&mut rng, c, n);
            let l = labels.to_matrix();
            let hp = HyperParams::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), 0.3, 0.1, task).unwrap();
            let eval = |b: &Matrix| {
                let st = ObjectiveState { f: &f, g: &g, b, proj: &proj, labels: &l, regression: Regression::for_task(task) };
                objective_value(&st, &hp, &labels).unwrap()
            };
            let best = brute_force_min(eval, r, n);
            let got = eval(&update_codes(&f, &g, &hp).unwrap().to_matrix());
            assert!(got <= best + 1e-9 * best.abs().max(1.0), "r={r} n={n}: {got} vs {best}");
        }
    }
}

#[test]
fn label_code_update_beats_every_alternative() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (r, n) in [(2, 2), (4, 4), (2, 7)] {
        let c = 2;
        let f = random_matrix(&mut rng, r, n, 1.0);
        let g = random_matrix(&mut rng, r, n, 1.0);
        let v = random_matrix(&mut rng, r, c, 1.0);
        let labels = random_labels(&mut rng, c, n);
        let l = labels.to_matrix();
        let hp = HyperParams::new(0.7, 0.4, 0.9, 0.1, Task::I2T).unwrap();
        let eval = |b: &Matrix| {
            let st = ObjectiveState { f: &f, g: &g, b, proj: &v, labels: &l, regression: Regression::Codes };
            objective_value(&st, &hp, &labels).unwrap()
        };
        let best = brute_force_min(eval, r, n);
        let got = eval(&update_codes_with_labels(&f, &g, Some((&v, &l)), &hp).unwrap().to_matrix());
        assert!(got <= best + 1e-9 * best.abs().max(1.0));
    }
}

/// `mu |feat - P L|^2 + nu |P|^2` and its gradient in `P`.
fn ridge(feat: &Matrix, l: &Matrix, p: &Matrix, mu: f64, nu: f64) -> (f64, Matrix) {
    let res = feat.sub(&p.matmul(l).unwrap()).unwrap();
    let value = mu * res.frobenius_sq() + nu * p.frobenius_sq();
    let grad = res.matmul(&l.transpose()).unwrap().scale(-2.0 * mu).add(&p.scale(2.0 * nu)).unwrap();
    (value, grad)
}

/// Plain gradient descent with step `1 / Lipschitz`, run to a tiny gradient.
fn descend(feat: &Matrix, l: &Matrix, mu: f64, nu: f64) -> Matrix {
    let gram = l.matmul(&l.transpose()).unwrap();
    // Gershgorin bound on the largest eigenvalue of L L^T.
    let lmax = (0..gram.rows()).map(|i| gram.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / (2.0 * mu * lmax + 2.0 * nu);
    let mut p = Matrix::zeros(feat.rows(), l.rows());
    for _ in 0..200_000 {
        let (_, grad) = ridge(feat, l, &p, mu, nu);
        if grad.frobenius_sq().sqrt() < 1e-13 {
            break;
        }
        p = p.sub(&grad.scale(step)).unwrap();
    }
    p
}

#[test]
fn projection_update_is_the_ridge_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..20 {
        let (r, c, n) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(4..30));
        let feat = random_matrix(&mut rng, r, n, 1.0);
        let l = random_labels(&mut rng, c, n).to_matrix();
        let mu = [1e-2, 0.1, 1.0, 3.0][trial % 4];
        let nu = [1e-3, 0.1, 1.0][trial % 3];
        let p = update_projection(&feat, &l, mu, nu).unwrap();
        let (_, grad) = ridge(&feat, &l, &p, mu, nu);
        assert!(grad.frobenius_sq().sqrt() < 1e-8, "trial {trial}: |grad| = {:e}", grad.frobenius_sq().sqrt());
        let oracle = descend(&feat, &l, mu, nu);
        let gap = p.sub(&oracle).unwrap().as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(gap < 1e-6, "trial {trial}: gap {gap:e}");
    }
}

#[test]
fn no_single_bit_flip_improves_the_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (r, n, c) = (8, 40, 4);
    let f = random_matrix(&mut rng, r, n, 1.0);
    let g = random_matrix(&mut rng, r, n, 1.0);
    let proj = random_matrix(&mut rng, r, c, 0.3);
    let labels = random_labels(&mut rng, c, n);
    let l = labels.to_matrix();
    let hp = HyperParams::new(0.5, 1.5, 1.0, 0.1, Task::T2I).unwrap();
    let eval = |b: &Matrix| {
        let st = ObjectiveState { f: &f, g: &g, b, proj: &proj, labels: &l, regression: Regression::Text };
        objective_value(&st, &hp, &labels).unwrap()
    };
    let b = update_codes(&f, &g, &hp).unwrap().to_matrix();
    let base = eval(&b);
    for i in 0..r {
        for j in 0..n {
            let mut flipped = b.clone();
            flipped[(i, j)] = -flipped[(i, j)];
            assert!(eval(&flipped) >= base);
        }
    }
}

fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..6, 1usize..6, 1usize..6, 1usize..6)
            .prop_flat_map(|(m, k, p, q)| (arb_matrix(m, k), arb_matrix(k, p), arb_matrix(p, q)))
    ) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn code_update_is_scale_invariant(f in arb_matrix(3, 4), g in arb_matrix(3, 4), s in 0.1f64..10.0) {
        let hp = HyperParams::new(0.3, 0.7, 0.0, 0.0, Task::I2T).unwrap();
        let scaled = HyperParams::new(0.3 * s, 0.7 * s, 0.0, 0.0, Task::I2T).unwrap();
        prop_assert_eq!(update_codes(&f, &g, &hp).unwrap(), update_codes(&f, &g, &scaled).unwrap());
    }
}
