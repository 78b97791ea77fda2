#![allow(dead_code)]

use langevin_core::gaussian::GaussianMoments;
use langevin_core::linalg::SymMatrix;
use langevin_core::lyapunov::WeightMatrixS;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `x ↦ log N(x; g)` in two dimensions.
fn log_density(g: &GaussianMoments) -> impl Fn(f64, f64) -> f64 {
    let c = g.cov.as_matrix();
    let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
    let inv = [[c[(1, 1)] / det, -c[(0, 1)] / det], [-c[(1, 0)] / det, c[(0, 0)] / det]];
    let norm = -0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln();
    let m = [g.mean[0], g.mean[1]];
    move |x, y| {
        let (dx, dy) = (x - m[0], y - m[1]);
        norm - 0.5 * (dx * (inv[0][0] * dx + inv[0][1] * dy) + dy * (inv[1][0] * dx + inv[1][1] * dy))
    }
}

/// Trapezoid rule on `[−w, w]²` with `n²` nodes for
/// `∫ (h−1)²π + π⟨∇h, S∇h⟩`, `h = ρ/π`, with `∇h` by central differences.
pub fn lyapunov_quadrature_2d(rho: &GaussianMoments, pi: &GaussianMoments, s: &WeightMatrixS, w: f64, n: usize) -> f64 {
    let (lr, lp) = (log_density(rho), log_density(pi));
    let h = |x: f64, y: f64| (lr(x, y) - lp(x, y)).exp();
    let sm = s.matrix.as_matrix();
    let step = 2.0 * w / (n - 1) as f64;
    let fd = 1e-5;
    let mut total = 0.0;
    for i in 0..n {
        let x = -w + step * i as f64;
        let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let mut row = 0.0;
        for k in 0..n {
            let y = -w + step * k as f64;
            let wk = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            let gx = (h(x + fd, y) - h(x - fd, y)) / (2.0 * fd);
            let gy = (h(x, y + fd) - h(x, y - fd)) / (2.0 * fd);
            let form = gx * (sm[(0, 0)] * gx + sm[(0, 1)] * gy) + gy * (sm[(1, 0)] * gx + sm[(1, 1)] * gy);
            row += wk * lp(x, y).exp() * ((h(x, y) - 1.0).powi(2) + form);
        }
        total += wi * row;
    }
    total * step * step
}

/// `BBᵀ/d + 0.1 I` with uniform entries in `[−1, 1]`.
pub fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::symmetrize(&b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1)
}

pub fn random_symmetric(d: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::symmetrize((&b + b.transpose()) * 0.5)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
