//! The Lyapunov functional `L(ρ) = χ²(ρ‖π) + E_π[⟨∇h, S∇h⟩]`, `h = ρ/π`,
//! for Gaussian `ρ` and `π`, and its decay along exact trajectories.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{gaussian_chi2, propagate, GaussianMoments, LinearDynamics};
use crate::linalg::{gaussian_quadratic_expectation, SymMatrix};
use crate::rate_bounds::{LyapunovCoefficients, RateCertificate};

/// `S = [[bΓ⁻², aΓ⁻¹], [aΓ⁻¹, cI]]` for a constant SPD `Γ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightMatrixS {
    pub coefficients: LyapunovCoefficients,
    pub matrix: SymMatrix,
}

impl WeightMatrixS {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

pub fn build_s(coeffs: &LyapunovCoefficients, gamma: &SymMatrix) -> Result<WeightMatrixS> {
    coeffs.det()?;
    let d = gamma.dim();
    let inv = gamma.spd_inverse()?;
    let inv2 = inv.as_matrix() * inv.as_matrix();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&(inv2 * coeffs.b));
    m.view_mut((0, d), (d, d)).copy_from(&(inv.as_matrix() * coeffs.a));
    m.view_mut((d, 0), (d, d)).copy_from(&(inv.as_matrix() * coeffs.a));
    m.view_mut((d, d), (d, d)).fill_with_identity();
    m.view_mut((d, d), (d, d)).scale_mut(coeffs.c);
    let matrix = SymMatrix::symmetrize(m);
    let min_eigenvalue = matrix.min_eigenvalue();
    if !(min_eigenvalue > 0.0) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue,
            tolerance: 0.0,
        });
    }
    Ok(WeightMatrixS {
        coefficients: *coeffs,
        matrix,
    })
}

/// `PᵀS̃P` with `P = blockdiag(I, √α I)`: the rescaled-frame weight
/// (`coeffs`, `gamma` in the rescaled frame) pulled back to original variables.
pub fn build_s_rescaled(coeffs: &LyapunovCoefficients, gamma: &SymMatrix, alpha: f64) -> Result<WeightMatrixS> {
    let tilde = build_s(coeffs, gamma)?;
    let d = gamma.dim();
    let mut p = DMatrix::identity(2 * d, 2 * d);
    p.view_mut((d, d), (d, d)).scale_mut(alpha.sqrt());
    Ok(WeightMatrixS {
        coefficients: *coeffs,
        matrix: tilde.matrix.congruence(&p.transpose()),
    })
}

/// Closed-form `L(ρ)`.
///
/// With `∇log h = Jx + j`, `J = Σπ⁻¹ − Σρ⁻¹`, `j = Σρ⁻¹μρ − Σπ⁻¹μπ`, the cross
/// term is `(1 + χ²)·E[(Jx+j)ᵀS(Jx+j)]` under the tilted law
/// `ρ²/π ∝ N(K⁻¹(2Σρ⁻¹μρ − Σπ⁻¹μπ), K⁻¹)`, `K = 2Σρ⁻¹ − Σπ⁻¹`.
pub fn lyapunov_value_gaussian(rho: &GaussianMoments, pi: &GaussianMoments, s: &WeightMatrixS) -> Result<f64> {
    let n = pi.dim();
    if s.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: s.dim() });
    }
    let chi2 = gaussian_chi2(rho, pi)?;
    let rho_inv = rho.cov.spd_inverse()?;
    let pi_inv = pi.cov.spd_inverse()?;
    let k = SymMatrix::symmetrize(rho_inv.as_matrix() * 2.0 - pi_inv.as_matrix());
    let k_inv = k.spd_inverse().map_err(|_| Error::Divergent)?;
    let (mr, mp) = (rho.mean_vec(), pi.mean_vec());
    let j_mat = pi_inv.as_matrix() - rho_inv.as_matrix();
    let j_vec: DVector<f64> = rho_inv.as_matrix() * &mr - pi_inv.as_matrix() * &mp;
    let mean = k_inv.as_matrix() * (rho_inv.as_matrix() * &mr * 2.0 - pi_inv.as_matrix() * &mp);
    let sm = s.matrix.as_matrix();
    let quad = SymMatrix::symmetrize(j_mat.transpose() * sm * &j_mat);
    let lin = j_mat.transpose() * sm * &j_vec * 2.0;
    let constant = j_vec.dot(&(sm * &j_vec));
    let cross = (1.0 + chi2) * gaussian_quadratic_expectation(&mean, &k_inv, &quad, &lin, constant)?;
    Ok(chi2 + cross.max(0.0))
}

/// One audited time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditPoint {
    pub t: f64,
    /// `None` where `L` diverges; such points are excluded from the checks.
    pub value: Option<f64>,
    pub chi2: Option<f64>,
    /// `e^{−rate(t−t₀)}L(t₀)(1+tol) − L(t)`.
    pub bound_margin: Option<f64>,
    /// `−rate·L − dL/dt` by central differences (interior points only).
    pub derivative_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub rate: f64,
    pub tolerance: f64,
    pub points: Vec<AuditPoint>,
    pub divergent_points: usize,
    pub monotone: bool,
    pub bound_holds: bool,
    pub derivative_holds: bool,
    pub passed: bool,
}

/// Step of the central difference used for `dL/dt`.
pub const DERIVATIVE_STEP: f64 = 1e-4;

/// Evaluates `L` along the exact law for each time in `times` (ascending)
/// and checks nonincrease, the exponential bound at `rate`, and
/// `dL/dt ≤ −rate·L`, each with relative tolerance `tol`.
pub fn decay_audit(
    dynamics: &LinearDynamics,
    init: &GaussianMoments,
    s: &WeightMatrixS,
    rate: f64,
    times: &[f64],
    tol: f64,
) -> Result<AuditReport> {
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("times must be nonempty and strictly increasing".into()));
    }
    let pi = crate::gaussian::stationary_moments(dynamics)?;
    let value_at = |t: f64| -> Result<Option<(f64, f64)>> {
        let rho = propagate(dynamics, init, t)?;
        match (gaussian_chi2(&rho, &pi), lyapunov_value_gaussian(&rho, &pi, s)) {
            (Ok(c), Ok(l)) => Ok(Some((c, l))),
            (Err(Error::Divergent), _) | (_, Err(Error::Divergent)) => Ok(None),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    };

    let mut points = Vec::with_capacity(times.len());
    let mut anchor: Option<(f64, f64)> = None;
    let mut prev: Option<f64> = None;
    let (mut monotone, mut bound_holds, mut derivative_holds) = (true, true, true);
    let last = times.len() - 1;
    for (i, &t) in times.iter().enumerate() {
        let Some((chi2, value)) = value_at(t)? else {
            points.push(AuditPoint {
                t,
                value: None,
                chi2: None,
                bound_margin: None,
                derivative_margin: None,
            });
            continue;
        };
        let (t0, l0) = *anchor.get_or_insert((t, value));
        let bound_margin = (-rate * (t - t0)).exp() * l0 * (1.0 + tol) - value;
        bound_holds &= bound_margin >= 0.0;
        if let Some(p) = prev {
            monotone &= value <= p * (1.0 + tol);
        }
        prev = Some(value);
        let derivative_margin = if i > 0 && i < last && t > DERIVATIVE_STEP {
            match (value_at(t + DERIVATIVE_STEP)?, value_at(t - DERIVATIVE_STEP)?) {
                (Some((_, up)), Some((_, down))) => {
                    let slope = (up - down) / (2.0 * DERIVATIVE_STEP);
                    let margin = -rate * value - slope;
                    derivative_holds &= margin >= -tol * value;
                    Some(margin)
                }
                _ => None,
            }
        } else {
            None
        };
        points.push(AuditPoint {
            t,
            value: Some(value),
            chi2: Some(chi2),
            bound_margin: Some(bound_margin),
            derivative_margin,
        });
    }
    let divergent_points = points.iter().filter(|p| p.value.is_none()).count();
    Ok(AuditReport {
        rate,
        tolerance: tol,
        divergent_points,
        monotone,
        bound_holds,
        derivative_holds,
        passed: monotone && bound_holds && derivative_holds && anchor.is_some(),
        points,
    })
}

/// [`decay_audit`] at the certificate's original-time rate.
pub fn audit_certificate(
    dynamics: &LinearDynamics,
    init: &GaussianMoments,
    s: &WeightMatrixS,
    cert: &RateCertificate,
    times: &[f64],
    tol: f64,
) -> Result<AuditReport> {
    if !cert.valid {
        return Err(Error::InvalidArgument("certificate is not valid".into()));
    }
    decay_audit(dynamics, init, s, cert.original_rate, times, tol)
}
