//! Exact Gaussian solutions of the linear (quadratic-potential) dynamics.
//!
//! Phase-space vectors stack positions first, then momenta.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::friction::{gamma, FrictionSpec};
use crate::linalg::{expm, SymMatrix};
use crate::potentials::{quadratic_diagonal, Potential};

/// Mean and covariance of a Gaussian law on phase space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

impl GaussianMoments {
    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: mean.len(),
            });
        }
        let min = cov.min_eigenvalue();
        let floor = -1e-10 * cov.spectral_norm().max(f64::MIN_POSITIVE);
        if min < floor {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
                tolerance: floor,
            });
        }
        Ok(GaussianMoments { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    /// Max-abs distance between means plus Frobenius distance of covariances.
    pub fn distance(&self, other: &GaussianMoments) -> f64 {
        let dm = self
            .mean
            .iter()
            .zip(&other.mean)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        dm + (self.cov.as_matrix() - other.cov.as_matrix()).norm()
    }
}

/// `dX = F X dt + σ dW` with `F = [[0, I], [−A, −Γ]]`, `σ = [[0, 0], [0, √(2Γ)]]`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    a: SymMatrix,
    gamma: SymMatrix,
    drift: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(a: SymMatrix, gamma: SymMatrix) -> Result<Self> {
        let d = a.dim();
        if gamma.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: gamma.dim(),
            });
        }
        for m in [&a, &gamma] {
            m.cholesky()?;
        }
        let mut drift = DMatrix::zeros(2 * d, 2 * d);
        let mut noise_cov = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            drift[(i, d + i)] = 1.0;
            for j in 0..d {
                drift[(d + i, j)] = -a[(i, j)];
                drift[(d + i, d + j)] = -gamma[(i, j)];
                noise_cov[(d + i, d + j)] = 2.0 * gamma[(i, j)];
            }
        }
        Ok(LinearDynamics {
            a,
            gamma,
            drift,
            noise_cov,
        })
    }

    /// Dynamics of a quadratic potential under a friction spec. Fails unless
    /// both the Hessian and `Γ` are constant.
    pub fn from_potential(p: &dyn Potential, spec: &FrictionSpec) -> Result<Self> {
        let a = p
            .constant_hessian()
            .ok_or_else(|| Error::InvalidArgument("linear dynamics need a constant Hessian".into()))?
            .clone();
        spec.validate()?;
        let g = gamma(spec, p, &vec![0.0; p.dim()])?;
        Self::new(a, g)
    }

    /// Scalar oscillator `A = w²`, `Γ = λ`.
    pub fn oscillator(w: f64, lambda: f64) -> Result<Self> {
        Self::new(SymMatrix::from_diagonal(&[w * w]), SymMatrix::from_diagonal(&[lambda]))
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn hessian(&self) -> &SymMatrix {
        &self.a
    }

    pub fn friction(&self) -> &SymMatrix {
        &self.gamma
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    /// `σσᵀ`.
    pub fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    /// `(Φ, Q)` for a step of length `h` with `Q = ∫₀ʰ e^{Fs}σσᵀe^{Fᵀs} ds`,
    /// via the Van Loan block exponential of `[[F, σσᵀ], [0, −Fᵀ]]`.
    fn van_loan(&self, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.drift.nrows();
        let mut big = DMatrix::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&self.drift);
        big.view_mut((0, n), (n, n)).copy_from(&self.noise_cov);
        big.view_mut((n, n), (n, n)).copy_from(&(-self.drift.transpose()));
        let e = expm(&big, h);
        let phi = e.view((0, 0), (n, n)).into_owned();
        let upper = e.view((0, n), (n, n)).into_owned();
        let q = &upper * phi.transpose();
        (phi, symmetric_part(q))
    }

    /// Transition `(Φ, Q)` over time `t`: a Van Loan step of length
    /// `h = t/m` with `‖F‖₁ h ≤ 1`, raised to the `m`-th power by repeated
    /// squaring of the affine map `Σ ↦ ΦΣΦᵀ + Q`.
    pub fn transition(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.drift.nrows();
        if t == 0.0 {
            return (DMatrix::identity(n, n), DMatrix::zeros(n, n));
        }
        let norm1 = self
            .drift
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0_f64, f64::max);
        let steps = (norm1 * t).ceil().max(1.0) as u64;
        let (mut base_phi, mut base_q) = self.van_loan(t / steps as f64);
        let (mut phi, mut q) = (DMatrix::identity(n, n), DMatrix::zeros(n, n));
        let mut k = steps;
        while k > 0 {
            if k & 1 == 1 {
                // Apply the accumulated map, then one more block.
                q = symmetric_part(&base_phi * &q * base_phi.transpose() + &base_q);
                phi = &base_phi * &phi;
            }
            k >>= 1;
            if k > 0 {
                base_q = symmetric_part(&base_phi * &base_q * base_phi.transpose() + &base_q);
                base_phi = &base_phi * &base_phi;
            }
        }
        (phi, q)
    }
}

fn symmetric_part(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn apply_transition(phi: &DMatrix<f64>, q: &DMatrix<f64>, m: &GaussianMoments) -> GaussianMoments {
    let mean = phi * m.mean_vec();
    let cov = SymMatrix::symmetrize(phi * m.cov.as_matrix() * phi.transpose() + q);
    GaussianMoments {
        mean: mean.as_slice().to_vec(),
        cov,
    }
}

/// Law at time `t` of the linear dynamics started from `init`.
pub fn propagate(dynamics: &LinearDynamics, init: &GaussianMoments, t: f64) -> Result<GaussianMoments> {
    check_init(dynamics, init)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(init.clone());
    }
    let (phi, q) = dynamics.transition(t);
    let mut out = apply_transition(&phi, &q, init);
    let mean = expm(&dynamics.drift, t) * init.mean_vec();
    out.mean = mean.as_slice().to_vec();
    Ok(out)
}

/// Laws on the grid `k·dt`, `k = 0..=n_steps`.
pub fn propagate_grid(
    dynamics: &LinearDynamics,
    init: &GaussianMoments,
    dt: f64,
    n_steps: usize,
) -> Result<Vec<GaussianMoments>> {
    check_init(dynamics, init)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let (phi, q) = dynamics.transition(dt);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(init.clone());
    for _ in 0..n_steps {
        let next = apply_transition(&phi, &q, out.last().expect("non-empty"));
        out.push(next);
    }
    Ok(out)
}

fn check_init(dynamics: &LinearDynamics, init: &GaussianMoments) -> Result<()> {
    if init.dim() != 2 * dynamics.dim() {
        return Err(Error::DimensionMismatch {
            expected: 2 * dynamics.dim(),
            got: init.dim(),
        });
    }
    Ok(())
}

/// Gibbs law `N(0, blockdiag(A⁻¹, I))`.
pub fn stationary_moments(dynamics: &LinearDynamics) -> Result<GaussianMoments> {
    let d = dynamics.dim();
    let inv = dynamics.a.spd_inverse()?;
    let mut cov = DMatrix::identity(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(inv.as_matrix());
    Ok(GaussianMoments {
        mean: vec![0.0; 2 * d],
        cov: SymMatrix::symmetrize(cov),
    })
}

/// `χ²(ρ‖π)` for Gaussian `ρ`, `π`.
///
/// With `δ_i` the eigenvalues of `Σπ^{-1/2}(Σρ − Σπ)Σπ^{-1/2}`,
/// `log(1 + χ²) = −½ Σ log(1 − δ_i²) + Δμᵀ(2Σπ − Σρ)⁻¹Δμ`. Returns
/// [`Error::Divergent`] when `2Σπ − Σρ` is not positive definite.
pub fn gaussian_chi2(rho: &GaussianMoments, pi: &GaussianMoments) -> Result<f64> {
    if rho.dim() != pi.dim() {
        return Err(Error::DimensionMismatch {
            expected: pi.dim(),
            got: rho.dim(),
        });
    }
    rho.cov.cholesky()?;
    let pi_eig = pi.cov.eigen();
    if !(pi_eig.eigenvalues[0] > 0.0) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: pi_eig.eigenvalues[0],
            tolerance: 0.0,
        });
    }
    let inv_sqrt = pi_eig.map(|l| 1.0 / l.sqrt());
    let diff = SymMatrix::symmetrize(rho.cov.as_matrix() - pi.cov.as_matrix());
    let delta = diff.congruence(inv_sqrt.as_matrix()).eigen().eigenvalues;
    let mut log_ratio = 0.0;
    for &d in delta.iter() {
        if d.abs() >= 1.0 {
            return Err(Error::Divergent);
        }
        log_ratio -= 0.5 * (-d * d).ln_1p();
    }
    let k = SymMatrix::symmetrize(pi.cov.as_matrix() * 2.0 - rho.cov.as_matrix());
    let chol = k.cholesky().map_err(|_| Error::Divergent)?;
    let dm = rho.mean_vec() - pi.mean_vec();
    log_ratio += dm.dot(&chol.solve(&dm));
    Ok(log_ratio.exp_m1())
}

/// Negated least-squares slope of `log χ²` against `t` over the last
/// `tail_fraction` of the samples.
pub fn fit_decay_rate(times: &[f64], chi2_values: &[f64], tail_fraction: f64) -> Result<f64> {
    if times.len() != chi2_values.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: chi2_values.len(),
        });
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail_fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    for (index, &value) in chi2_values.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveValues { index, value });
        }
    }
    let n = times.len();
    let tail = ((n as f64) * tail_fraction).ceil() as usize;
    if tail < 8 {
        return Err(Error::InsufficientData { needed: 8, got: tail });
    }
    let ts = &times[n - tail..];
    let ys: Vec<f64> = chi2_values[n - tail..].iter().map(|c| c.ln()).collect();
    let t_mean = ts.iter().sum::<f64>() / tail as f64;
    let y_mean = ys.iter().sum::<f64>() / tail as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in ts.iter().zip(&ys) {
        sxy += (t - t_mean) * (y - y_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("tail times are all equal".into()));
    }
    Ok(-sxy / sxx)
}

/// Exact χ² decay rate of the scalar oscillator with `A = w²`, `Γ = λ`.
pub fn ou_rate_closed_form(w: f64, lambda: f64) -> f64 {
    if lambda > 2.0 * w {
        lambda - (lambda * lambda - 4.0 * w * w).sqrt()
    } else {
        lambda
    }
}

/// Real part of the eigenvector of the slowest drift eigenvalue of the scalar
/// oscillator, scaled to unit position: `(1, Re α₁)`. A mean offset along it
/// decays without the polynomial prefactor of generic initial laws.
pub fn ou_slow_mode(w: f64, lambda: f64) -> [f64; 2] {
    let disc = lambda * lambda - 4.0 * w * w;
    if disc >= 0.0 {
        [1.0, (-lambda + disc.sqrt()) / 2.0]
    } else {
        [1.0, -lambda / 2.0]
    }
}

/// `(t_k, χ²(ρ_t‖π))` on `n` equispaced times in `[t0, t1]` for the scalar
/// oscillator started from the stationary covariance shifted along
/// [`ou_slow_mode`].
pub fn ou_chi2_series(w: f64, lambda: f64, t0: f64, t1: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 || !(t0 >= 0.0 && t1 > t0) {
        return Err(Error::InvalidArgument("need n >= 2 and 0 <= t0 < t1".into()));
    }
    let dynamics = LinearDynamics::oscillator(w, lambda)?;
    let pi = stationary_moments(&dynamics)?;
    let init = GaussianMoments::new(ou_slow_mode(w, lambda).to_vec(), pi.cov.clone())?;
    let start = propagate(&dynamics, &init, t0)?;
    let dt = (t1 - t0) / (n - 1) as f64;
    let laws = propagate_grid(&dynamics, &start, dt, n - 1)?;
    let times = (0..n).map(|k| t0 + k as f64 * dt).collect();
    let chi2 = laws.iter().map(|l| gaussian_chi2(l, &pi)).collect::<Result<Vec<_>>>()?;
    Ok((times, chi2))
}

/// Fitted decay rate on the window `[10/r, 20/r]`, `r` the closed-form rate.
pub fn ou_fitted_rate(w: f64, lambda: f64) -> Result<f64> {
    let r = ou_rate_closed_form(w, lambda);
    let (t, chi2) = ou_chi2_series(w, lambda, 10.0 / r, 20.0 / r, 201)?;
    fit_decay_rate(&t, &chi2, 1.0)
}

/// Fitted decay rate on `[10/r, 10/r + L]`.
///
/// In the underdamped case `χ²` carries a factor `1 + ρ cos(2ωt + φ)` with
/// `ρ = λ/(2w)`, which biases a slope fitted over a partial period. `L` is
/// then a whole number of periods `π/ω`, at least 4 and at least `10/r`,
/// reduced while `r(10/r + L) > 60` so that `χ²` stays well above the
/// roundoff floor (~1e-32) of the propagated covariance. Otherwise `L = 10/r`.
pub fn ou_fitted_rate_full_periods(w: f64, lambda: f64) -> Result<f64> {
    let r = ou_rate_closed_form(w, lambda);
    let base = 10.0 / r;
    let disc = 4.0 * w * w - lambda * lambda;
    let len = if disc > 0.0 {
        let period = std::f64::consts::PI / (0.5 * disc.sqrt());
        let mut n = (base / period).ceil().max(4.0);
        while n > 1.0 && r * (base + n * period) > 60.0 {
            n -= 1.0;
        }
        n * period
    } else {
        base
    };
    let (t, chi2) = ou_chi2_series(w, lambda, base, base + len, 401)?;
    fit_decay_rate(&t, &chi2, 1.0)
}

/// Slowest coordinate rate of `V = ½ Σ v_i² q_i²` under the given friction.
pub fn diagonal_system_rate(v: &[f64], spec: &FrictionSpec) -> Result<f64> {
    // Validates the frequencies.
    quadratic_diagonal(v)?;
    match spec {
        FrictionSpec::HessianSqrt { s } if *s == 2.0 => Ok(2.0 * v.iter().cloned().fold(f64::INFINITY, f64::min)),
        FrictionSpec::ConstantScalar { lambda } => {
            spec.validate()?;
            Ok(v.iter()
                .map(|&w| ou_rate_closed_form(w, *lambda))
                .fold(f64::INFINITY, f64::min))
        }
        other => Err(Error::UnsupportedFriction(format!("{other:?}"))),
    }
}
