//! Friction coefficients `Γ(q)` and the matching diffusion matrices.

use std::borrow::Cow;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{spd_sqrt, SymMatrix};
use crate::potentials::Potential;

/// How `Γ(q)` is produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrictionSpec {
    /// `Γ = λ I`.
    ConstantScalar { lambda: f64 },
    /// `Γ = M` for a fixed SPD matrix.
    ConstantMatrix { matrix: SymMatrix },
    /// `Γ(q) = s √(Hess V(q))`.
    HessianSqrt { s: f64 },
}

impl FrictionSpec {
    /// Rejects non-positive scalars and matrices that are not SPD.
    pub fn validate(&self) -> Result<()> {
        match self {
            FrictionSpec::ConstantScalar { lambda } => positive("lambda", *lambda),
            FrictionSpec::HessianSqrt { s } => positive("s", *s),
            FrictionSpec::ConstantMatrix { matrix } => {
                let min = matrix.min_eigenvalue();
                if min > 0.0 {
                    Ok(())
                } else {
                    Err(Error::NotPositiveDefinite {
                        min_eigenvalue: min,
                        tolerance: 0.0,
                    })
                }
            }
        }
    }

    /// The friction of the rescaled dynamics, `Γ/√α`, expressed against the
    /// rescaled potential `V/α` (so `hessian_sqrt(s)` keeps its `s`).
    pub fn rescaled(&self, alpha: f64) -> Result<FrictionSpec> {
        positive("alpha", alpha)?;
        let k = 1.0 / alpha.sqrt();
        Ok(match self {
            FrictionSpec::ConstantScalar { lambda } => FrictionSpec::ConstantScalar { lambda: lambda * k },
            FrictionSpec::ConstantMatrix { matrix } => FrictionSpec::ConstantMatrix {
                matrix: matrix.scale(k),
            },
            FrictionSpec::HessianSqrt { s } => FrictionSpec::HessianSqrt { s: *s },
        })
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, FrictionSpec::HessianSqrt { .. })
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {x}")))
    }
}

fn is_diagonal(m: &SymMatrix) -> bool {
    let a = m.as_matrix();
    (0..m.dim()).all(|i| (0..m.dim()).all(|j| i == j || a[(i, j)] == 0.0))
}

/// `√m` with a shortcut for diagonal input.
fn sqrt_of(m: &SymMatrix) -> Result<SymMatrix> {
    if is_diagonal(m) {
        let diag: Vec<f64> = (0..m.dim()).map(|i| m[(i, i)]).collect();
        if let Some(&value) = diag.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: value,
                tolerance: 0.0,
            });
        }
        return Ok(SymMatrix::from_diagonal(&diag.iter().map(|v| v.sqrt()).collect::<Vec<_>>()));
    }
    spd_sqrt(m, None)
}

/// `Γ(q)`.
pub fn gamma(spec: &FrictionSpec, p: &dyn Potential, q: &[f64]) -> Result<SymMatrix> {
    match spec {
        FrictionSpec::ConstantScalar { lambda } => Ok(SymMatrix::identity(p.dim()).scale(*lambda)),
        FrictionSpec::ConstantMatrix { matrix } => {
            if matrix.dim() != p.dim() {
                return Err(Error::DimensionMismatch {
                    expected: p.dim(),
                    got: matrix.dim(),
                });
            }
            Ok(matrix.clone())
        }
        FrictionSpec::HessianSqrt { s } => Ok(sqrt_of(&p.hessian(q))?.scale(*s)),
    }
}

/// `√(2Γ(q))`, or `√(2α⁻¹Γ(q))` for the rescaled dynamics.
pub fn diffusion(
    spec: &FrictionSpec,
    p: &dyn Potential,
    q: &[f64],
    rescaled: bool,
    alpha: f64,
) -> Result<SymMatrix> {
    let g = gamma(spec, p, q)?;
    diffusion_from_gamma(&g, noise_factor(rescaled, alpha)?)
}

fn noise_factor(rescaled: bool, alpha: f64) -> Result<f64> {
    if !rescaled {
        return Ok(2.0);
    }
    positive("alpha", alpha)?;
    Ok(2.0 / alpha)
}

fn diffusion_from_gamma(g: &SymMatrix, factor: f64) -> Result<SymMatrix> {
    sqrt_of(&g.scale(factor))
}

/// A friction spec bound to a potential, with `Γ` and the diffusion matrix
/// precomputed whenever they do not depend on `q`.
#[derive(Debug, Clone)]
pub struct FrictionField {
    spec: FrictionSpec,
    noise_factor: f64,
    memo: Option<(SymMatrix, SymMatrix)>,
}

impl FrictionField {
    /// Original dynamics (`√(2Γ)` noise).
    pub fn new(spec: FrictionSpec, p: &dyn Potential) -> Result<Self> {
        Self::with_noise(spec, p, false, 1.0)
    }

    /// `rescaled = true` selects `√(2α⁻¹Γ)` noise.
    pub fn with_noise(spec: FrictionSpec, p: &dyn Potential, rescaled: bool, alpha: f64) -> Result<Self> {
        spec.validate()?;
        let noise_factor = noise_factor(rescaled, alpha)?;
        let constant = match &spec {
            FrictionSpec::HessianSqrt { .. } => p.constant_hessian().is_some(),
            _ => true,
        };
        let memo = if constant {
            let q0 = vec![0.0; p.dim()];
            let g = gamma(&spec, p, &q0)?;
            let sigma = diffusion_from_gamma(&g, noise_factor)?;
            Some((g, sigma))
        } else {
            // Fail early on a bad dimension rather than mid-simulation.
            gamma(&spec, p, &vec![0.0; p.dim()])?;
            None
        };
        Ok(FrictionField {
            spec,
            noise_factor,
            memo,
        })
    }

    pub fn spec(&self) -> &FrictionSpec {
        &self.spec
    }

    pub fn constant(&self) -> Option<(&SymMatrix, &SymMatrix)> {
        self.memo.as_ref().map(|(g, s)| (g, s))
    }

    pub fn gamma_at(&self, p: &dyn Potential, q: &[f64]) -> Result<Cow<'_, SymMatrix>> {
        match &self.memo {
            Some((g, _)) => Ok(Cow::Borrowed(g)),
            None => Ok(Cow::Owned(gamma(&self.spec, p, q)?)),
        }
    }

    /// `Γ(q)` and the diffusion matrix together, sharing one square root.
    pub fn at(&self, p: &dyn Potential, q: &[f64]) -> Result<(Cow<'_, SymMatrix>, Cow<'_, SymMatrix>)> {
        match &self.memo {
            Some((g, s)) => Ok((Cow::Borrowed(g), Cow::Borrowed(s))),
            None => {
                let g = gamma(&self.spec, p, q)?;
                let s = diffusion_from_gamma(&g, self.noise_factor)?;
                Ok((Cow::Owned(g), Cow::Owned(s)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{perturbed_diagonal, quadratic_diagonal, quadratic_general, LogCosh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &SymMatrix, b: &SymMatrix, tol: f64) -> bool {
        (a.as_matrix() - b.as_matrix()).norm() <= tol * b.as_matrix().norm().max(1.0)
    }

    #[test]
    fn constant_scalar_gamma() {
        let p = quadratic_diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let g = gamma(&FrictionSpec::ConstantScalar { lambda: 2.0 }, &p, &[0.4, -1.0, 9.0]).unwrap();
        assert_eq!(g, SymMatrix::identity(3).scale(2.0));
    }

    #[test]
    fn hessian_sqrt_on_diagonal_quadratic() {
        let p = quadratic_diagonal(&[1.0, 2.0]).unwrap();
        let g = gamma(&FrictionSpec::HessianSqrt { s: 2.0 }, &p, &[3.0, 1.0]).unwrap();
        assert!(close(&g, &SymMatrix::from_diagonal(&[2.0, 4.0]), 1e-15));
    }

    #[test]
    fn hessian_sqrt_log_cosh_origin() {
        let p = perturbed_diagonal(&[1.0], 0.1, LogCosh).unwrap();
        let g = gamma(&FrictionSpec::HessianSqrt { s: 1.0 }, &p, &[0.0]).unwrap();
        assert!((g[(0, 0)] - 1.1_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn diffusion_examples() {
        let p = quadratic_diagonal(&[1.0, 2.0]).unwrap();
        let s = diffusion(&FrictionSpec::ConstantScalar { lambda: 2.0 }, &p, &[0.0, 0.0], false, 1.0).unwrap();
        assert!(close(&s, &SymMatrix::identity(2).scale(2.0), 1e-15));

        let s = diffusion(&FrictionSpec::HessianSqrt { s: 2.0 }, &p, &[0.0, 0.0], false, 1.0).unwrap();
        assert!(close(&s, &SymMatrix::from_diagonal(&[2.0, 2.0 * 2f64.sqrt()]), 1e-15));

        let p4 = quadratic_diagonal(&[1.0, 4.0]).unwrap();
        let s = diffusion(&FrictionSpec::HessianSqrt { s: 2.0 }, &p4, &[0.0, 0.0], false, 1.0).unwrap();
        assert!(close(&s, &SymMatrix::from_diagonal(&[2.0, 4.0]), 1e-15));

        let s = diffusion(&FrictionSpec::ConstantScalar { lambda: 2.0 }, &p, &[0.0, 0.0], true, 4.0).unwrap();
        assert!(close(&s, &SymMatrix::identity(2), 1e-15));
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let p = quadratic_diagonal(&[1.0, 1.0]).unwrap();
        let m = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            FrictionField::new(FrictionSpec::ConstantMatrix { matrix: m }, &p),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(FrictionField::new(FrictionSpec::ConstantScalar { lambda: 0.0 }, &p).is_err());
        assert!(FrictionField::new(FrictionSpec::HessianSqrt { s: -1.0 }, &p).is_err());
    }

    #[test]
    fn rejects_wrong_dimension() {
        let p = quadratic_diagonal(&[1.0, 1.0]).unwrap();
        let m = SymMatrix::identity(3);
        assert!(matches!(
            FrictionField::new(FrictionSpec::ConstantMatrix { matrix: m }, &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn memo_only_for_constant_hessian() {
        let quad = quadratic_diagonal(&[1.0, 3.0]).unwrap();
        let pert = perturbed_diagonal(&[1.0, 3.0], 0.1, LogCosh).unwrap();
        let spec = FrictionSpec::HessianSqrt { s: 2.0 };
        assert!(FrictionField::new(spec.clone(), &quad).unwrap().constant().is_some());
        assert!(FrictionField::new(spec, &pert).unwrap().constant().is_none());
    }

    #[test]
    fn fluctuation_dissipation_and_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = nalgebra::DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = SymMatrix::symmetrize(b.transpose() * &b + nalgebra::DMatrix::identity(3, 3) * 0.5);
        let potentials: Vec<Box<dyn Potential>> = vec![
            Box::new(quadratic_diagonal(&[0.5, 1.0, 2.0]).unwrap()),
            Box::new(quadratic_general(a).unwrap()),
            Box::new(perturbed_diagonal(&[0.5, 1.0, 2.0], 0.3, LogCosh).unwrap()),
        ];
        for p in &potentials {
            let c = p.closed_form_constants().unwrap();
            for s in [1.0, 2.0, 3.5] {
                let spec = FrictionSpec::HessianSqrt { s };
                let field = FrictionField::new(spec, p.as_ref()).unwrap();
                for _ in 0..1000 {
                    let q: Vec<f64> = (0..3).map(|_| rng.random_range(-6.0..6.0)).collect();
                    let (g, sigma) = field.at(p.as_ref(), &q).unwrap();
                    let sq = SymMatrix::symmetrize(sigma.as_matrix() * sigma.as_matrix());
                    assert!(close(&sq, &g.scale(2.0), 1e-10));
                    let eig = g.eigen();
                    assert!(eig.eigenvalues[0] >= s * c.alpha.sqrt() - 1e-8);
                    assert!(eig.eigenvalues[2] <= s * c.beta.sqrt() + 1e-8);
                }
            }
        }
    }

    #[test]
    fn constant_kinds_are_bitwise_stable() {
        let p = perturbed_diagonal(&[1.0, 2.0], 0.2, LogCosh).unwrap();
        let m = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        for spec in [
            FrictionSpec::ConstantScalar { lambda: 1.7 },
            FrictionSpec::ConstantMatrix { matrix: m },
        ] {
            let g0 = gamma(&spec, &p, &[0.0, 0.0]).unwrap();
            let d0 = diffusion(&spec, &p, &[0.0, 0.0], false, 1.0).unwrap();
            for q in [[1.0, -2.0], [7.5, 0.25], [-30.0, 4.0]] {
                assert_eq!(gamma(&spec, &p, &q).unwrap(), g0);
                assert_eq!(diffusion(&spec, &p, &q, false, 1.0).unwrap(), d0);
            }
        }
    }
}
