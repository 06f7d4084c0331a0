//! Shared fixtures and independent reference computations for the
//! integration tests. Nothing here calls into the curvature or solver code.
#![allow(dead_code)]

use eacg::fcnn::{mean_loss, Activation, Criterion, FcnnModel, Layer};
use eacg::linalg::DenseMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    DenseMatrix::from_row_major(rows, cols, data).unwrap()
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize) -> DenseMatrix {
    let a = random_matrix(rng, n, n, 1.0);
    a.add(&a.transpose()).unwrap().scaled(0.5)
}

pub fn random_spd(rng: &mut impl Rng, n: usize, shift: f64) -> DenseMatrix {
    let a = random_matrix(rng, n, n, 1.0);
    let mut s = a.matmul(&a.transpose()).unwrap();
    s.add_to_diag(shift);
    s.symmetrize();
    s
}

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.row_mut(r)[c] = m[(r, c)];
        }
    }
    out
}

/// Dense LU solve via nalgebra.
pub fn na_solve(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    to_na(a)
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("oracle system is nonsingular")
        .as_slice()
        .to_vec()
}

pub fn na_inverse(a: &DenseMatrix) -> DenseMatrix {
    from_na(&to_na(a).try_inverse().expect("oracle matrix is invertible"))
}

pub fn na_min_eigenvalue(a: &DenseMatrix) -> f64 {
    to_na(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// A network with the given widths and weights uniform in `[-scale, scale]`.
pub fn random_model(rng: &mut impl Rng, widths: &[usize], act: Activation, scale: f64) -> FcnnModel {
    let layers = widths
        .windows(2)
        .map(|w| Layer {
            weight: random_matrix(rng, w[1], w[0], scale),
            bias: (0..w[1]).map(|_| rng.random_range(-scale..scale)).collect(),
        })
        .collect();
    FcnnModel::new(layers, act).unwrap()
}

/// Widths `n_0..n_k` with `1 <= k <= max_depth`, hidden and input widths in
/// `1..=max_width`, output width in `2..=max_width`.
pub fn random_widths(rng: &mut impl Rng, max_depth: usize, max_width: usize) -> Vec<usize> {
    let k = rng.random_range(1..=max_depth);
    let mut w: Vec<usize> = (0..k).map(|_| rng.random_range(1..=max_width)).collect();
    w.push(rng.random_range(2..=max_width));
    w
}

pub fn random_batch(rng: &mut impl Rng, n: usize, dim: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let xs = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (xs, ys)
}

pub fn random_criterion(rng: &mut impl Rng) -> Criterion {
    if rng.random_bool(0.5) {
        Criterion::CrossEntropySoftmax
    } else {
        Criterion::sigmoid_gate_default()
    }
}

/// Smallest `|W h + b|` over every hidden pre-activation of the batch,
/// computed with a plain forward pass. ReLU finite differences are only
/// meaningful when this stays well away from the kink.
pub fn min_hidden_preactivation(model: &FcnnModel, xs: &[Vec<f64>]) -> f64 {
    let mut min = f64::INFINITY;
    let k = model.depth();
    for x in xs {
        let mut h = x.clone();
        for (t, layer) in model.layers().iter().enumerate() {
            let z: Vec<f64> = (0..layer.fan_out())
                .map(|r| layer.bias[r] + layer.weight.row(r).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            if t + 1 < k {
                min = z.iter().fold(min, |m, v| m.min(v.abs()));
                h = z.iter().map(|&v| model.activation().value(v)).collect();
            } else {
                h = z;
            }
        }
    }
    min
}

/// Which parameter of which layer to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Param {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, index: usize },
}

pub fn perturbed(model: &FcnnModel, p: Param, delta: f64) -> FcnnModel {
    let mut m = model.clone();
    match p {
        Param::Weight { layer, row, col } => {
            m.layers_mut()[layer].weight.row_mut(row)[col] += delta;
        }
        Param::Bias { layer, index } => m.layers_mut()[layer].bias[index] += delta,
    }
    m
}

/// Richardson-extrapolated central difference, `O(h⁴)` truncation error.
pub fn richardson<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    let d = |s: f64| (f(s) - f(-s)) / (2.0 * s);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

pub fn richardson_vec<F: Fn(f64) -> Vec<f64>>(f: F, h: f64) -> Vec<f64> {
    let d = |s: f64| -> Vec<f64> {
        let (p, m) = (f(s), f(-s));
        p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * s)).collect()
    };
    let (half, full) = (d(h / 2.0), d(h));
    half.iter().zip(&full).map(|(a, b)| (4.0 * a - b) / 3.0).collect()
}

pub fn fd_loss_gradient(
    model: &FcnnModel,
    criterion: &Criterion,
    xs: &[Vec<f64>],
    ys: &[usize],
    p: Param,
    h: f64,
) -> f64 {
    richardson(|d| mean_loss(&perturbed(model, p, d), criterion, xs, ys).unwrap(), h)
}
