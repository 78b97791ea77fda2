//! Potential functions `V: ℝ^d → ℝ` and their strong-convexity constants.
//!
//! Besides value, gradient and Hessian, every potential exposes the
//! per-coordinate derivative of `√(Hess V)`, which bounds how fast the
//! Hessian-shaped friction varies in space (the constant `gamma`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{spd_sqrt, SymMatrix};
use crate::optimize::maximize_scalar;

/// Half-width of the window on which suprema over a coordinate are taken.
pub const SUP_WINDOW: f64 = 20.0;

/// Where a set of assumption constants came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstantsProvenance {
    /// Exact for the family (for perturbed families, `sup_window` records the
    /// coordinate window on which the supremum defining gamma was taken).
    ClosedForm { sup_window: Option<f64> },
    /// Extremes over uniformly sampled points of a box.
    Estimated {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n_samples: usize,
        seed: u64,
    },
    /// Produced by the rescaling adapter from another set of constants.
    Rescaled { from_alpha: f64 },
    /// Supplied directly by the caller.
    UserSupplied,
}

/// `α I ⪯ Hess V ⪯ β I` and `‖∂√HessV/∂q_i‖₂ ≤ γ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionConstants {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub dim: usize,
    pub provenance: ConstantsProvenance,
}

impl AssumptionConstants {
    pub fn new(alpha: f64, beta: f64, gamma: f64, dim: usize) -> Result<Self> {
        Self::with_provenance(alpha, beta, gamma, dim, ConstantsProvenance::UserSupplied)
    }

    pub fn with_provenance(
        alpha: f64,
        beta: f64,
        gamma: f64,
        dim: usize,
        provenance: ConstantsProvenance,
    ) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if !(beta >= alpha) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "beta must satisfy beta >= alpha, got alpha={alpha}, beta={beta}"
            )));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(AssumptionConstants {
            alpha,
            beta,
            gamma,
            kappa: beta / alpha,
            dim,
            provenance,
        })
    }

    pub fn is_estimate(&self) -> bool {
        matches!(self.provenance, ConstantsProvenance::Estimated { .. })
    }
}

/// A smooth strongly convex potential on `ℝ^d`.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    /// Short family name used in reports.
    fn family(&self) -> &'static str;

    fn value(&self, q: &[f64]) -> f64;

    fn gradient(&self, q: &[f64], out: &mut [f64]);

    fn hessian(&self, q: &[f64]) -> SymMatrix;

    /// `∂ √(Hess V) / ∂ q_i` at `q`.
    fn sqrt_hessian_derivative(&self, q: &[f64], i: usize) -> Result<SymMatrix>;

    /// `∂ Hess V / ∂ q_i` at `q`.
    fn hessian_derivative(&self, q: &[f64], i: usize) -> SymMatrix;

    /// The Hessian if it does not depend on `q`.
    fn constant_hessian(&self) -> Option<&SymMatrix> {
        None
    }

    /// Constants known in closed form for this family.
    fn closed_form_constants(&self) -> Option<AssumptionConstants>;

    /// Mean and covariance of the position marginal of the Gibbs law
    /// `∝ exp(−V(q))`, when they can be computed cheaply.
    fn gibbs_position_moments(&self) -> Option<(Vec<f64>, SymMatrix)> {
        None
    }
}

fn check_frequencies(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("frequency vector is empty".into()));
    }
    for (index, &value) in v.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveFrequency { index, value });
        }
    }
    Ok(())
}

/// `V(q) = ½ Σ v_i² q_i²`.
#[derive(Debug, Clone)]
pub struct QuadraticDiagonal {
    v: Vec<f64>,
    hessian: SymMatrix,
}

impl QuadraticDiagonal {
    pub fn frequencies(&self) -> &[f64] {
        &self.v
    }
}

pub fn quadratic_diagonal(v: &[f64]) -> Result<QuadraticDiagonal> {
    check_frequencies(v)?;
    let squares: Vec<f64> = v.iter().map(|x| x * x).collect();
    Ok(QuadraticDiagonal {
        v: v.to_vec(),
        hessian: SymMatrix::from_diagonal(&squares),
    })
}

impl Potential for QuadraticDiagonal {
    fn dim(&self) -> usize {
        self.v.len()
    }

    fn family(&self) -> &'static str {
        "quadratic_diagonal"
    }

    fn value(&self, q: &[f64]) -> f64 {
        0.5 * self.v.iter().zip(q).map(|(v, x)| v * v * x * x).sum::<f64>()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        for ((o, v), x) in out.iter_mut().zip(&self.v).zip(q) {
            *o = v * v * x;
        }
    }

    fn hessian(&self, _q: &[f64]) -> SymMatrix {
        self.hessian.clone()
    }

    fn sqrt_hessian_derivative(&self, _q: &[f64], _i: usize) -> Result<SymMatrix> {
        Ok(SymMatrix::zeros(self.dim()))
    }

    fn hessian_derivative(&self, _q: &[f64], _i: usize) -> SymMatrix {
        SymMatrix::zeros(self.dim())
    }

    fn constant_hessian(&self) -> Option<&SymMatrix> {
        Some(&self.hessian)
    }

    fn closed_form_constants(&self) -> Option<AssumptionConstants> {
        let sq = self.v.iter().map(|v| v * v);
        let alpha = sq.clone().fold(f64::INFINITY, f64::min);
        let beta = sq.fold(0.0, f64::max);
        AssumptionConstants::with_provenance(
            alpha,
            beta,
            0.0,
            self.dim(),
            ConstantsProvenance::ClosedForm { sup_window: None },
        )
        .ok()
    }

    fn gibbs_position_moments(&self) -> Option<(Vec<f64>, SymMatrix)> {
        let var: Vec<f64> = self.v.iter().map(|v| 1.0 / (v * v)).collect();
        Some((vec![0.0; self.dim()], SymMatrix::from_diagonal(&var)))
    }
}

/// `V(q) = ½ qᵀ A q` for SPD `A`.
#[derive(Debug, Clone)]
pub struct QuadraticGeneral {
    a: SymMatrix,
    alpha: f64,
    beta: f64,
}

pub fn quadratic_general(a: SymMatrix) -> Result<QuadraticGeneral> {
    // spd_sqrt performs the positive-definiteness check with the default floor.
    spd_sqrt(&a, None)?;
    let eig = a.eigen();
    let n = a.dim();
    Ok(QuadraticGeneral {
        alpha: eig.eigenvalues[0],
        beta: eig.eigenvalues[n - 1],
        a,
    })
}

impl Potential for QuadraticGeneral {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn family(&self) -> &'static str {
        "quadratic_general"
    }

    fn value(&self, q: &[f64]) -> f64 {
        let mut g = vec![0.0; q.len()];
        self.gradient(q, &mut g);
        0.5 * g.iter().zip(q).map(|(g, x)| g * x).sum::<f64>()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        let a = self.a.as_matrix();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..q.len()).map(|j| a[(i, j)] * q[j]).sum();
        }
    }

    fn hessian(&self, _q: &[f64]) -> SymMatrix {
        self.a.clone()
    }

    fn sqrt_hessian_derivative(&self, _q: &[f64], _i: usize) -> Result<SymMatrix> {
        Ok(SymMatrix::zeros(self.dim()))
    }

    fn hessian_derivative(&self, _q: &[f64], _i: usize) -> SymMatrix {
        SymMatrix::zeros(self.dim())
    }

    fn constant_hessian(&self) -> Option<&SymMatrix> {
        Some(&self.a)
    }

    fn closed_form_constants(&self) -> Option<AssumptionConstants> {
        AssumptionConstants::with_provenance(
            self.alpha,
            self.beta,
            0.0,
            self.dim(),
            ConstantsProvenance::ClosedForm { sup_window: None },
        )
        .ok()
    }

    fn gibbs_position_moments(&self) -> Option<(Vec<f64>, SymMatrix)> {
        Some((vec![0.0; self.dim()], self.a.spd_inverse().ok()?))
    }
}

/// Scalar perturbation `f` with bounded second and third derivatives.
pub trait Perturbation: Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
    fn d3(&self, x: f64) -> f64;
    fn inf_d2(&self) -> f64;
    fn sup_d2(&self) -> f64;
}

/// `f(x) = log cosh x`: `f'' = sech² x ∈ (0, 1]`, `|f'''| ≤ 4/(3√3)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogCosh;

impl Perturbation for LogCosh {
    fn name(&self) -> &'static str {
        "log_cosh"
    }

    fn value(&self, x: f64) -> f64 {
        let a = x.abs();
        a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }

    fn d1(&self, x: f64) -> f64 {
        x.tanh()
    }

    fn d2(&self, x: f64) -> f64 {
        let t = x.tanh();
        1.0 - t * t
    }

    fn d3(&self, x: f64) -> f64 {
        let t = x.tanh();
        -2.0 * t * (1.0 - t * t)
    }

    fn inf_d2(&self) -> f64 {
        0.0
    }

    fn sup_d2(&self) -> f64 {
        1.0
    }
}

/// `V(q) = ½ Σ v_i² q_i² + ε Σ f(q_i)`.
#[derive(Debug, Clone)]
pub struct PerturbedDiagonal<P: Perturbation> {
    v: Vec<f64>,
    eps: f64,
    f: P,
}

pub fn perturbed_diagonal<P: Perturbation>(v: &[f64], eps: f64, f: P) -> Result<PerturbedDiagonal<P>> {
    check_frequencies(v)?;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be >= 0, got {eps}")));
    }
    let p = PerturbedDiagonal { v: v.to_vec(), eps, f };
    let alpha = p.alpha();
    if !(alpha > 0.0) {
        return Err(Error::ConvexityLost { alpha });
    }
    Ok(p)
}

impl<P: Perturbation> PerturbedDiagonal<P> {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.v
    }

    fn curvature(&self, i: usize, x: f64) -> f64 {
        self.v[i] * self.v[i] + self.eps * self.f.d2(x)
    }

    fn sqrt_curvature_slope(&self, i: usize, x: f64) -> f64 {
        self.eps * self.f.d3(x) / (2.0 * self.curvature(i, x).sqrt())
    }

    fn alpha(&self) -> f64 {
        self.v
            .iter()
            .map(|v| v * v + self.eps * self.f.inf_d2())
            .fold(f64::INFINITY, f64::min)
    }

    fn beta(&self) -> f64 {
        self.v
            .iter()
            .map(|v| v * v + self.eps * self.f.sup_d2())
            .fold(0.0, f64::max)
    }

    /// `max_i sup_{|x| ≤ SUP_WINDOW} |ε f'''(x) / (2√(v_i² + ε f''(x)))|`.
    pub fn gamma(&self) -> f64 {
        if self.eps == 0.0 {
            return 0.0;
        }
        (0..self.v.len())
            .map(|i| {
                maximize_scalar(
                    |x| self.sqrt_curvature_slope(i, x).abs(),
                    -SUP_WINDOW,
                    SUP_WINDOW,
                    8000,
                    200,
                    1e-12,
                )
                .value
            })
            .fold(0.0, f64::max)
    }
}

impl<P: Perturbation> Potential for PerturbedDiagonal<P> {
    fn dim(&self) -> usize {
        self.v.len()
    }

    fn family(&self) -> &'static str {
        "perturbed_diagonal"
    }

    fn value(&self, q: &[f64]) -> f64 {
        self.v
            .iter()
            .zip(q)
            .map(|(v, x)| 0.5 * v * v * x * x + self.eps * self.f.value(*x))
            .sum()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.v[i] * self.v[i] * q[i] + self.eps * self.f.d1(q[i]);
        }
    }

    fn hessian(&self, q: &[f64]) -> SymMatrix {
        let diag: Vec<f64> = (0..self.dim()).map(|i| self.curvature(i, q[i])).collect();
        SymMatrix::from_diagonal(&diag)
    }

    fn sqrt_hessian_derivative(&self, q: &[f64], i: usize) -> Result<SymMatrix> {
        let c = self.curvature(i, q[i]);
        if !(c > 0.0) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: c,
                tolerance: 0.0,
            });
        }
        let mut diag = vec![0.0; self.dim()];
        diag[i] = self.sqrt_curvature_slope(i, q[i]);
        Ok(SymMatrix::from_diagonal(&diag))
    }

    fn hessian_derivative(&self, q: &[f64], i: usize) -> SymMatrix {
        let mut diag = vec![0.0; self.dim()];
        diag[i] = self.eps * self.f.d3(q[i]);
        SymMatrix::from_diagonal(&diag)
    }

    fn closed_form_constants(&self) -> Option<AssumptionConstants> {
        AssumptionConstants::with_provenance(
            self.alpha(),
            self.beta(),
            self.gamma(),
            self.dim(),
            ConstantsProvenance::ClosedForm {
                sup_window: Some(SUP_WINDOW),
            },
        )
        .ok()
    }

    fn gibbs_position_moments(&self) -> Option<(Vec<f64>, SymMatrix)> {
        let mut means = Vec::with_capacity(self.dim());
        let mut vars = Vec::with_capacity(self.dim());
        for v in &self.v {
            // exp(-V_i) < e^{-40} beyond this half-width (f ≥ 0 for log cosh
            // and, in general, the quadratic part dominates for small eps).
            let half = (80.0_f64).sqrt() / (v * v + self.eps * self.f.inf_d2()).sqrt();
            let (m, var) = marginal_moments(
                |x| 0.5 * v * v * x * x + self.eps * self.f.value(x),
                -half,
                half,
                20_001,
            );
            means.push(m);
            vars.push(var);
        }
        Some((means, SymMatrix::from_diagonal(&vars)))
    }
}

/// `k · V` for a wrapped potential; with `k = 1/α` this is the potential of
/// the rescaled dynamics.
pub struct Scaled<'a> {
    inner: &'a dyn Potential,
    k: f64,
    hessian: Option<SymMatrix>,
}

pub fn scaled(inner: &dyn Potential, k: f64) -> Result<Scaled<'_>> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {k}")));
    }
    Ok(Scaled {
        inner,
        k,
        hessian: inner.constant_hessian().map(|h| h.scale(k)),
    })
}

impl Potential for Scaled<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn family(&self) -> &'static str {
        self.inner.family()
    }

    fn value(&self, q: &[f64]) -> f64 {
        self.k * self.inner.value(q)
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        self.inner.gradient(q, out);
        for o in out.iter_mut() {
            *o *= self.k;
        }
    }

    fn hessian(&self, q: &[f64]) -> SymMatrix {
        self.inner.hessian(q).scale(self.k)
    }

    fn sqrt_hessian_derivative(&self, q: &[f64], i: usize) -> Result<SymMatrix> {
        Ok(self.inner.sqrt_hessian_derivative(q, i)?.scale(self.k.sqrt()))
    }

    fn hessian_derivative(&self, q: &[f64], i: usize) -> SymMatrix {
        self.inner.hessian_derivative(q, i).scale(self.k)
    }

    fn constant_hessian(&self) -> Option<&SymMatrix> {
        self.hessian.as_ref()
    }

    fn closed_form_constants(&self) -> Option<AssumptionConstants> {
        let c = self.inner.closed_form_constants()?;
        AssumptionConstants::with_provenance(
            self.k * c.alpha,
            self.k * c.beta,
            self.k.sqrt() * c.gamma,
            c.dim,
            c.provenance,
        )
        .ok()
    }

    fn gibbs_position_moments(&self) -> Option<(Vec<f64>, SymMatrix)> {
        None
    }
}

/// Mean and variance of the density `∝ exp(−u(x))` on `[lo, hi]` by the
/// trapezoidal rule.
fn marginal_moments(u: impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> (f64, f64) {
    let h = (hi - lo) / (nodes - 1) as f64;
    let shift = u(0.0_f64.clamp(lo, hi));
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for k in 0..nodes {
        let x = lo + h * k as f64;
        let w = if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
        let p = w * (shift - u(x)).exp();
        z += p;
        m1 += p * x;
        m2 += p * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Axis-aligned sampling box for [`estimate_constants`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        SampleBox {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }
}

/// Empirical constants: extremes of the Hessian spectrum and of
/// `‖∂√HessV/∂q_i‖₂` over `n_samples` uniform points of `sample_box`.
///
/// A degenerate box (`lo == hi`) evaluates at that single point.
pub fn estimate_constants(
    p: &dyn Potential,
    sample_box: &SampleBox,
    n_samples: usize,
    seed: u64,
) -> Result<AssumptionConstants> {
    let d = p.dim();
    if sample_box.lo.len() != d || sample_box.hi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sample_box.lo.len().min(sample_box.hi.len()),
        });
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut alpha, mut beta, mut gamma) = (f64::INFINITY, 0.0_f64, 0.0_f64);
    let mut q = vec![0.0; d];
    for _ in 0..n_samples {
        for (k, x) in q.iter_mut().enumerate() {
            let (lo, hi) = (sample_box.lo[k], sample_box.hi[k]);
            let u: f64 = rng.random();
            *x = lo + (hi - lo) * u;
        }
        let eig = p.hessian(&q).eigen();
        alpha = alpha.min(eig.eigenvalues[0]);
        beta = beta.max(eig.eigenvalues[d - 1]);
        for i in 0..d {
            gamma = gamma.max(p.sqrt_hessian_derivative(&q, i)?.spectral_norm());
        }
    }
    AssumptionConstants::with_provenance(
        alpha,
        beta,
        gamma,
        d,
        ConstantsProvenance::Estimated {
            lo: sample_box.lo.clone(),
            hi: sample_box.hi.clone(),
            n_samples,
            seed,
        },
    )
}
