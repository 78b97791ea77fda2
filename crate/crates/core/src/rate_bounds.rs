//! Closed-form rate certificates for Hessian-shaped friction, the DMS
//! baseline for constant scalar friction, and the comparison between them.
//!
//! Certificates are evaluated in the rescaled frame, where the potential is
//! 1-strongly convex: constants `(α, β, γ) ↦ (1, κ, γ/√α)` and coefficients
//! `(a, b, c) ↦ (αa, αb, αc)`. Rates are converted back by the factor `√α`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimize::maximize_scalar;
use crate::potentials::{AssumptionConstants, ConstantsProvenance};

/// Relative tolerance on the equality `a + c = b s⁻²`.
pub const CONSTRAINT_TOL: f64 = 1e-12;

/// Weights of `S = [[bΓ⁻², aΓ⁻¹], [aΓ⁻¹, cI]]` for `Γ = s√(Hess V)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovCoefficients {
    pub s: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LyapunovCoefficients {
    /// Checks positivity and `bc − a² > 0`.
    pub fn new(s: f64, a: f64, b: f64, c: f64) -> Result<Self> {
        for (name, v) in [("s", s), ("a", a), ("b", b), ("c", c)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidCoefficients(format!("{name} must be positive, got {v}")));
            }
        }
        let k = LyapunovCoefficients { s, a, b, c };
        k.det()?;
        Ok(k)
    }

    /// `bc − a²`, or [`Error::DegenerateS`] when not positive.
    pub fn det(&self) -> Result<f64> {
        let det = self.b * self.c - self.a * self.a;
        if det > 0.0 {
            Ok(det)
        } else {
            Err(Error::DegenerateS { det })
        }
    }

    /// `a + c − b s⁻²`.
    pub fn constraint_residual(&self) -> f64 {
        self.a + self.c - self.b / (self.s * self.s)
    }

    /// Enforces `a + c = b s⁻²` and `α⁻¹ + c − a s⁻² > 0`.
    pub fn check_constraints(&self, alpha: f64) -> Result<()> {
        let r = self.constraint_residual();
        if r.abs() > CONSTRAINT_TOL * self.b {
            return Err(Error::InvalidCoefficients(format!(
                "a + c - b/s^2 = {r:e} violates the equality constraint"
            )));
        }
        let strict = 1.0 / alpha + self.c - self.a / (self.s * self.s);
        if !(strict > 0.0) {
            return Err(Error::InvalidCoefficients(format!(
                "1/alpha + c - a/s^2 = {strict:e} must be positive"
            )));
        }
        Ok(())
    }

    /// `(αa, αb, αc)`: the same functional expressed for the rescaled frame.
    pub fn scaled(&self, alpha: f64) -> Self {
        LyapunovCoefficients {
            s: self.s,
            a: alpha * self.a,
            b: alpha * self.b,
            c: alpha * self.c,
        }
    }
}

/// `(L₁, L₂)`.
pub fn l_constants(k: &AssumptionConstants, co: &LyapunovCoefficients) -> Result<(f64, f64)> {
    let det = co.det()?;
    let (alpha, beta, d, s) = (k.alpha, k.beta, k.dim as f64, co.s);
    let (a, b, c) = (co.a, co.b, co.c);
    let weight = b * d * alpha + c * d * s * s * beta;
    let l1 = weight / (4.0 * det * alpha) * (8.0 * b * b * s.powi(-5) / alpha + a * a * s.powi(-3) / alpha);
    let l2 = 0.25 * b * d / (s * alpha) + weight / (2.0 * det) * a * a * s.powi(-3) / (alpha * alpha);
    Ok((l1, l2))
}

/// `f(x) = 2ax(α⁻¹+c−as⁻²) / ((α⁻¹+bx²)(α⁻¹+c−as⁻²) + (α⁻¹+c)ax²)`.
pub fn f_of(x: f64, k: &AssumptionConstants, co: &LyapunovCoefficients) -> Result<f64> {
    co.det()?;
    if !(x > 0.0) {
        return Err(Error::InvalidArgument(format!("x must be positive, got {x}")));
    }
    let inv = 1.0 / k.alpha;
    let (a, b, c, s) = (co.a, co.b, co.c, co.s);
    let w = inv + c - a / (s * s);
    let num = 2.0 * a * x * w;
    let den = (inv + b * x * x) * w + (inv + c) * a * x * x;
    if !(den > 0.0) {
        return Err(Error::NonPositiveDenominator { value: den });
    }
    Ok(num / den)
}

/// `g(x) = 2((α⁻¹+c)L₁ + (α⁻¹+bx²)L₂) / ((α⁻¹+bx²)(α⁻¹+c) − a²x²)`.
pub fn g_of(x: f64, k: &AssumptionConstants, co: &LyapunovCoefficients) -> Result<f64> {
    let (l1, l2) = l_constants(k, co)?;
    g_with(x, k.alpha, co, l1, l2)
}

fn g_with(x: f64, alpha: f64, co: &LyapunovCoefficients, l1: f64, l2: f64) -> Result<f64> {
    let inv = 1.0 / alpha;
    let (a, b, c) = (co.a, co.b, co.c);
    let num = 2.0 * ((inv + c) * l1 + (inv + b * x * x) * l2);
    let den = (inv + b * x * x) * (inv + c) - a * a * x * x;
    if !(den > 0.0) {
        return Err(Error::NonPositiveDenominator { value: den });
    }
    Ok(num / den)
}

/// Maps `(α, β, γ)` to `(1, β/α, γ/√α)`; the second value is the factor `√α`
/// converting rescaled-time rates to original time.
pub fn rescale_rate(k: &AssumptionConstants) -> Result<(AssumptionConstants, f64)> {
    let root = k.alpha.sqrt();
    let rescaled = AssumptionConstants::with_provenance(
        1.0,
        k.beta / k.alpha,
        k.gamma / root,
        k.dim,
        ConstantsProvenance::Rescaled { from_alpha: k.alpha },
    )?;
    Ok((rescaled, root))
}

/// Inverse of [`rescale_rate`] given the multiplier `√α`.
pub fn unscale_rate(rescaled: &AssumptionConstants, multiplier: f64) -> Result<AssumptionConstants> {
    let alpha = multiplier * multiplier;
    AssumptionConstants::with_provenance(
        alpha,
        rescaled.beta * alpha,
        rescaled.gamma * multiplier,
        rescaled.dim,
        ConstantsProvenance::UserSupplied,
    )
}

/// Decay certificate `L(ρ_t) ≤ e^{−rate·t} L(ρ_0)`.
///
/// `l1`, `l2`, `m1`, `m2` and the evaluation points are those of the rescaled
/// frame; `coefficients` are as supplied (parameterised by the original α).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCertificate {
    pub constants: AssumptionConstants,
    pub rescaled_constants: AssumptionConstants,
    pub coefficients: LyapunovCoefficients,
    pub rescaled_coefficients: LyapunovCoefficients,
    pub l1: f64,
    pub l2: f64,
    pub points: [f64; 2],
    pub f_values: [f64; 2],
    pub g_values: [f64; 2],
    pub m1: f64,
    pub m2: f64,
    pub rescaled_rate: f64,
    pub rate_multiplier: f64,
    pub original_rate: f64,
    pub valid: bool,
}

/// Certificate for original-frame constants and coefficients.
///
/// Never fails because the rate is non-positive: that is reported through
/// `valid = false`.
pub fn certificate(k: &AssumptionConstants, co: &LyapunovCoefficients) -> Result<RateCertificate> {
    co.check_constraints(k.alpha)?;
    co.det()?;
    let (rk, multiplier) = rescale_rate(k)?;
    let rco = co.scaled(k.alpha);
    let (l1, l2) = l_constants(&rk, &rco)?;
    let points = [1.0 / (co.s * rk.kappa.sqrt()), 1.0 / co.s];
    let f_values = [f_of(points[0], &rk, &rco)?, f_of(points[1], &rk, &rco)?];
    let g_values = [
        g_with(points[0], rk.alpha, &rco, l1, l2)?,
        g_with(points[1], rk.alpha, &rco, l1, l2)?,
    ];
    let m1 = f_values[0].min(f_values[1]);
    let m2 = g_values[0].max(g_values[1]);
    let rescaled_rate = m1 - rk.gamma * rk.gamma * m2;
    Ok(RateCertificate {
        constants: k.clone(),
        rescaled_constants: rk,
        coefficients: *co,
        rescaled_coefficients: rco,
        l1,
        l2,
        points,
        f_values,
        g_values,
        m1,
        m2,
        rescaled_rate,
        rate_multiplier: multiplier,
        original_rate: multiplier * rescaled_rate,
        valid: rescaled_rate > 0.0,
    })
}

/// `s = 2, a = α⁻¹(2x+2), b = α⁻¹(12x+8), c = α⁻¹x`.
pub fn canonical_coefficients(k: &AssumptionConstants, x0: f64) -> Result<LyapunovCoefficients> {
    if !(x0 > std::f64::consts::FRAC_1_SQRT_2) || !x0.is_finite() {
        return Err(Error::InvalidArgument(format!("x0 must exceed 1/sqrt(2), got {x0}")));
    }
    let inv = 1.0 / k.alpha;
    LyapunovCoefficients::new(2.0, inv * (2.0 * x0 + 2.0), inv * (12.0 * x0 + 8.0), inv * x0)
}

/// The family above for general `s`: `a = α⁻¹(s²/2)(1+x)`, `c = α⁻¹x`,
/// `b = s²(a+c)`. Equal to [`canonical_coefficients`] at `s = 2`.
pub fn family_coefficients(k: &AssumptionConstants, s: f64, x0: f64) -> Result<LyapunovCoefficients> {
    if s == 2.0 {
        return canonical_coefficients(k, x0);
    }
    if !(x0 > 0.0) || !x0.is_finite() {
        return Err(Error::InvalidArgument(format!("x0 must be positive, got {x0}")));
    }
    let inv = 1.0 / k.alpha;
    let a = inv * 0.5 * s * s * (1.0 + x0);
    let c = inv * x0;
    LyapunovCoefficients::new(s, a, s * s * (a + c), c)
}

/// One cell of an `optimize_m1` sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub s: f64,
    pub x0: f64,
    pub certificate: Option<RateCertificate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct M1Sweep {
    pub best: RateCertificate,
    pub best_index: usize,
    pub table: Vec<SweepEntry>,
}

/// Sweeps `(s, x0)` over the coefficient family and returns the certificate
/// with the largest `m₁`. Ties (within 1e-12) go to the larger rate, then to
/// the lowest grid index (s-major order).
pub fn optimize_m1(k: &AssumptionConstants, s_grid: &[f64], x0_grid: &[f64]) -> Result<M1Sweep> {
    if s_grid.is_empty() || x0_grid.is_empty() {
        return Err(Error::InvalidArgument("grids must be nonempty".into()));
    }
    let mut table = Vec::with_capacity(s_grid.len() * x0_grid.len());
    for &s in s_grid {
        for &x0 in x0_grid {
            let entry = match family_coefficients(k, s, x0).and_then(|co| certificate(k, &co)) {
                Ok(c) => SweepEntry {
                    s,
                    x0,
                    certificate: Some(c),
                    error: None,
                },
                Err(e) => SweepEntry {
                    s,
                    x0,
                    certificate: None,
                    error: Some(e.to_string()),
                },
            };
            table.push(entry);
        }
    }
    let mut best: Option<(usize, &RateCertificate)> = None;
    for (i, e) in table.iter().enumerate() {
        let Some(c) = &e.certificate else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => {
                if (c.m1 - b.m1).abs() <= 1e-12 {
                    c.rescaled_rate > b.rescaled_rate
                } else {
                    c.m1 > b.m1
                }
            }
        };
        if better {
            best = Some((i, c));
        }
    }
    let (best_index, best) = best.ok_or_else(|| {
        Error::InvalidCoefficients("no grid point produced admissible coefficients".into())
    })?;
    let best = best.clone();
    Ok(M1Sweep {
        best,
        best_index,
        table,
    })
}

/// The canonical-family certificate with the largest rate over `x0_grid`.
pub fn best_canonical_certificate(k: &AssumptionConstants, x0_grid: &[f64]) -> Result<RateCertificate> {
    let mut best: Option<RateCertificate> = None;
    for &x0 in x0_grid {
        let c = certificate(k, &canonical_coefficients(k, x0)?)?;
        if best.as_ref().is_none_or(|b| c.rescaled_rate > b.rescaled_rate) {
            best = Some(c);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("x0 grid is empty".into()))
}

/// Log-spaced grid from `lo` to `hi` with `n` points.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// DMS hypocoercive rate for `Γ = λI`.
pub fn lambda_dms(lambda: f64, alpha: f64, eps: f64) -> f64 {
    let root = (eps * eps * (std::f64::consts::SQRT_2 + lambda / 2.0).powi(2)
        + (lambda - (2.0 * alpha + 1.0) / (alpha + 1.0) * eps).powi(2))
    .sqrt();
    (lambda - eps / (1.0 + alpha) - root) / (2.0 * (1.0 + eps.abs()))
}

/// `sup_{ε ∈ (0,1)} λ_DMS(λ, α, ε)` by grid search and golden-section
/// refinement; never below 0 (the value at `ε = 0`).
pub fn lambda_dms_sup(lambda: f64, alpha: f64, grid_size: usize, refine_iters: usize) -> Result<f64> {
    if grid_size < 64 {
        return Err(Error::InvalidArgument(format!("grid_size must be >= 64, got {grid_size}")));
    }
    if !(lambda > 0.0 && alpha > 0.0) {
        return Err(Error::InvalidArgument("lambda and alpha must be positive".into()));
    }
    let best = maximize_scalar(|e| lambda_dms(lambda, alpha, e), 0.0, 1.0, grid_size, refine_iters, 1e-12);
    Ok(best.value.max(0.0))
}

/// Default resolution used by callers that do not choose their own.
pub const DMS_GRID: usize = 2048;
pub const DMS_REFINE: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub lambda: f64,
    /// `2 Λ_DMS(λ, α)`.
    pub baseline_rate: f64,
    pub certificate_rate: f64,
    pub dominates: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `false` when the certificate is invalid; rows are then empty.
    pub applicable: bool,
    pub alpha: f64,
    pub certificate_rate: f64,
    pub rows: Vec<ComparisonRow>,
    pub all_dominate: bool,
    pub min_margin: Option<f64>,
    /// `β²γ²d / α³`; small values are the sufficient condition for domination.
    pub sufficient_ratio: f64,
}

/// Certificate rate (original time) against `2Λ_DMS(λ, α)` on a λ grid.
pub fn compare_to_constant_friction(
    k: &AssumptionConstants,
    cert: &RateCertificate,
    lambda_grid: &[f64],
) -> Result<ComparisonReport> {
    let sufficient_ratio = k.beta * k.beta * k.gamma * k.gamma * k.dim as f64 / k.alpha.powi(3);
    if !cert.valid {
        return Ok(ComparisonReport {
            applicable: false,
            alpha: k.alpha,
            certificate_rate: cert.original_rate,
            rows: Vec::new(),
            all_dominate: false,
            min_margin: None,
            sufficient_ratio,
        });
    }
    let mut rows = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let baseline_rate = 2.0 * lambda_dms_sup(lambda, k.alpha, DMS_GRID, DMS_REFINE)?;
        let margin = cert.original_rate - baseline_rate;
        rows.push(ComparisonRow {
            lambda,
            baseline_rate,
            certificate_rate: cert.original_rate,
            dominates: margin > 0.0,
            margin,
        });
    }
    let min_margin = rows.iter().map(|r| r.margin).reduce(f64::min);
    Ok(ComparisonReport {
        applicable: true,
        alpha: k.alpha,
        certificate_rate: cert.original_rate,
        all_dominate: rows.iter().all(|r| r.dominates),
        rows,
        min_margin,
        sufficient_ratio,
    })
}

/// Witness `(a, x, y)` with `b = 2(a+x)`, `c = ½(a−y)` for the diagonal
/// quadratic rate `2 − ε` in rescaled time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagWitness {
    pub a: f64,
    pub x: f64,
    pub y: f64,
    pub b: f64,
    pub c: f64,
    /// `min v²`, the strong-convexity constant of the original potential.
    pub alpha: f64,
    /// `v / min v`.
    pub normalized_v: Vec<f64>,
    pub eps_rate: f64,
    pub rescaled_rate: f64,
    pub original_rate: f64,
}

/// Largest `a` tried by [`diag_quadratic_certificate`].
pub const WITNESS_CAP: f64 = 1e12;

/// `(g₁, g₂, g₃)` for one normalized frequency.
pub fn witness_entries(v: f64, a: f64, x: f64, y: f64, k: f64, alpha: f64) -> (f64, f64, f64) {
    let inv = 1.0 / alpha;
    let m = 1.0 - k;
    let g1 = (1.0 / v - m / (v * v)) * a - m * (x / (v * v) + 2.0 * inv);
    let g2 = (1.0 - m / v) * a - 0.5 * (x + y);
    let g3 = (v - m) * a - (2.0 * v - m) * (y - 2.0 * inv);
    (g1, g2, g3)
}

fn witness_holds(vs: &[f64], a: f64, x: f64, y: f64, k: f64, alpha: f64) -> bool {
    let (b, c) = (2.0 * (a + x), 0.5 * (a - y));
    if !(c > 0.0 && b * c - a * a > 0.0) {
        return false;
    }
    vs.iter().all(|&v| {
        let (g1, g2, g3) = witness_entries(v, a, x, y, k, alpha);
        g1 > 0.0 && g3 > 0.0 && g1 * g3 - g2 * g2 > 0.0
    })
}

/// Searches `a ∈ {1, 2, 4, …}` up to [`WITNESS_CAP`], first with
/// `(x, y) = (1, ½)`, then over `x = 2^j`, `y ∈ {x/4, x/2, 3x/4}`.
pub fn diag_quadratic_certificate(v: &[f64], eps_rate: f64) -> Result<DiagWitness> {
    crate::potentials::quadratic_diagonal(v)?;
    if !(eps_rate > 0.0 && eps_rate < 2.0) {
        return Err(Error::InvalidArgument(format!("eps_rate must lie in (0, 2), got {eps_rate}")));
    }
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let alpha = vmin * vmin;
    let vs: Vec<f64> = v.iter().map(|x| x / vmin).collect();
    let k = eps_rate / 2.0;

    let mut pairs = vec![(1.0, 0.5)];
    for j in -10..=20 {
        let x = 2f64.powi(j);
        for f in [0.25, 0.5, 0.75] {
            pairs.push((x, f * x));
        }
    }
    for (x, y) in pairs {
        let mut a = 1.0;
        while a <= WITNESS_CAP {
            if witness_holds(&vs, a, x, y, k, alpha) {
                let rescaled_rate = 2.0 - eps_rate;
                return Ok(DiagWitness {
                    a,
                    x,
                    y,
                    b: 2.0 * (a + x),
                    c: 0.5 * (a - y),
                    alpha,
                    normalized_v: vs,
                    eps_rate,
                    rescaled_rate,
                    original_rate: vmin * rescaled_rate,
                });
            }
            a *= 2.0;
        }
    }
    Err(Error::WitnessNotFound { cap: WITNESS_CAP })
}
