//! Dense symmetric linear algebra kernels.
//!
//! Everything here is a pure function of its inputs. Matrices are small
//! (phase-space dimension rarely exceeds a few dozen), so the kernels favour
//! a single eigendecomposition over iterative schemes: the same spectral
//! data serves the square root, its Fréchet derivative and the SPD checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative symmetry tolerance used when accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m` after checking squareness and symmetry to
    /// `SYMMETRY_TOL * max(1, ‖m‖_F)`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOL * m.norm().max(1.0) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(SymMatrix(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2`. Used for products that are symmetric in
    /// exact arithmetic but pick up rounding asymmetry.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize needs a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds a matrix from a row-major list of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        SymMatrix::new(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, k: f64) -> Self {
        SymMatrix(&self.0 * k)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 - &other.0)
    }

    /// `B M Bᵀ`, symmetrised.
    pub fn congruence(&self, b: &DMatrix<f64>) -> Self {
        SymMatrix::symmetrize(b * &self.0 * b.transpose())
    }

    pub fn eigen(&self) -> SpectralDecomposition {
        SpectralDecomposition::of(self)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let e = self.eigen();
        e.eigenvalues[e.eigenvalues.len() - 1]
    }

    /// Spectral norm, i.e. the largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.eigen()
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, l| acc.max(l.abs()))
    }

    /// Inverse of an SPD matrix via Cholesky.
    pub fn spd_inverse(&self) -> Result<SymMatrix> {
        let chol = self.cholesky()?;
        Ok(SymMatrix::symmetrize(chol.inverse()))
    }

    /// Cholesky factorisation, failing with `NotPositiveDefinite`.
    pub fn cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        self.0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite {
                min_eigenvalue: self.min_eigenvalue(),
                tolerance: 0.0,
            })
    }

    /// Row-major nested vectors, convenient for reports.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigen-decomposition `M = U diag(λ) Uᵀ` with eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn of(m: &SymMatrix) -> Self {
        let n = m.dim();
        let eig = SymmetricEigen::new(m.0.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        SpectralDecomposition {
            eigenvalues,
            eigenvectors,
        }
    }

    /// `U f(Λ) Uᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let u = &self.eigenvectors;
        let d = DMatrix::from_diagonal(&self.eigenvalues.map(f));
        SymMatrix::symmetrize(u * d * u.transpose())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map(|l| l)
    }
}

fn default_spd_tol(eigenvalues: &DVector<f64>) -> f64 {
    let scale = eigenvalues.iter().fold(0.0_f64, |acc, l| acc.max(l.abs()));
    1e-10 * scale
}

fn check_spd(eig: &SpectralDecomposition, tol: Option<f64>) -> Result<()> {
    let tol = tol.unwrap_or_else(|| default_spd_tol(&eig.eigenvalues));
    let min = eig.eigenvalues[0];
    // The default floor is zero for the zero matrix, which must still fail.
    if min <= tol || min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
            tolerance: tol,
        });
    }
    Ok(())
}

/// Symmetric positive definite square root.
///
/// `tol` is the eigenvalue floor; `None` uses `1e-10 · max|λ|`.
pub fn spd_sqrt(m: &SymMatrix, tol: Option<f64>) -> Result<SymMatrix> {
    let eig = m.eigen();
    check_spd(&eig, tol)?;
    Ok(eig.map(f64::sqrt))
}

/// Directional (Fréchet) derivative of the SPD square root of `m` along `dm`.
///
/// Returns the solution `X` of the Sylvester equation `R X + X R = dm`
/// with `R = √m`, solved in the eigenbasis of `m`.
pub fn spd_sqrt_directional_derivative(m: &SymMatrix, dm: &SymMatrix) -> Result<SymMatrix> {
    if m.dim() != dm.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: dm.dim(),
        });
    }
    let eig = m.eigen();
    check_spd(&eig, None)?;
    let u = &eig.eigenvectors;
    let roots = eig.eigenvalues.map(f64::sqrt);
    let mut rotated = u.transpose() * dm.as_matrix() * u;
    let n = m.dim();
    for k in 0..n {
        for l in 0..n {
            rotated[(k, l)] /= roots[k] + roots[l];
        }
    }
    Ok(SymMatrix::symmetrize(u * rotated * u.transpose()))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential `e^{m t}` by Padé-13 scaling and squaring.
pub fn expm(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    assert_eq!(m.nrows(), m.ncols(), "expm needs a square matrix");
    let n = m.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    if t == 0.0 || n == 0 {
        return ident;
    }
    let a = m * t;
    let norm1 = a
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    if norm1 == 0.0 {
        return ident;
    }
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a / 2f64.powi(squarings);

    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// `E[xᵀ Q x + lᵀ x + c]` for `x ~ N(mean, cov)`.
pub fn gaussian_quadratic_expectation(
    mean: &DVector<f64>,
    cov: &SymMatrix,
    quad: &SymMatrix,
    lin: &DVector<f64>,
    constant: f64,
) -> Result<f64> {
    let n = cov.dim();
    for got in [mean.len(), quad.dim(), lin.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    cov.cholesky()?;
    let trace = (quad.as_matrix() * cov.as_matrix()).trace();
    let quad_mean = mean.dot(&(quad.as_matrix() * mean));
    Ok(trace + quad_mean + lin.dot(mean) + constant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrize(b.transpose() * &b + DMatrix::identity(n, n))
    }

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        SymMatrix::symmetrize(DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn sqrt_of_diagonal_and_identity() {
        let r = spd_sqrt(&SymMatrix::from_diagonal(&[4.0, 9.0]), None).unwrap();
        assert!((r[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((r[(1, 1)] - 3.0).abs() < 1e-14);
        assert!(r[(0, 1)].abs() < 1e-14);

        let i = spd_sqrt(&SymMatrix::identity(4), None).unwrap();
        assert!((i.as_matrix() - DMatrix::identity(4, 4)).norm() < 1e-14);
    }

    #[test]
    fn sqrt_rejects_indefinite_and_zero() {
        let m = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(spd_sqrt(&m, None), Err(Error::NotPositiveDefinite { .. })));
        assert!(matches!(
            spd_sqrt(&SymMatrix::zeros(2), None),
            Err(Error::NotPositiveDefinite { .. })
        ));
        // Explicit floor above the smallest eigenvalue.
        let m = SymMatrix::from_diagonal(&[1e-3, 1.0]);
        assert!(spd_sqrt(&m, Some(1e-2)).is_err());
        assert!(spd_sqrt(&m, None).is_ok());
    }

    #[test]
    fn sqrt_squaring_residual_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 3, 7] {
            let a = random_spd(n, &mut rng);
            let r = spd_sqrt(&a, None).unwrap();
            let res = (r.as_matrix() * r.as_matrix() - a.as_matrix()).norm();
            assert!(res < 1e-10 * a.as_matrix().norm(), "residual {res}");
            assert!(r.min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn sqrt_of_square_reproduces_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 4, 6] {
            let r = random_spd(n, &mut rng);
            let back = spd_sqrt(&SymMatrix::symmetrize(r.as_matrix() * r.as_matrix()), None).unwrap();
            assert!((back.as_matrix() - r.as_matrix()).norm() <= 1e-9 * r.as_matrix().norm());
        }
    }

    #[test]
    fn decomposition_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_sym(6, &mut rng);
        let e = m.eigen();
        assert!(e.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
        let ortho = e.eigenvectors.transpose() * &e.eigenvectors - DMatrix::identity(6, 6);
        assert!(ortho.norm() <= 1e-12 * 6.0);
        let rec = (e.reconstruct().as_matrix() - m.as_matrix()).norm();
        assert!(rec <= 1e-10 * m.as_matrix().norm().max(1.0));
    }

    #[test]
    fn derivative_scalar_case_and_zero_direction() {
        let m = SymMatrix::from_diagonal(&[4.0, 9.0]);
        let x = spd_sqrt_directional_derivative(&m, &SymMatrix::from_diagonal(&[1.0, 0.0])).unwrap();
        assert!((x[(0, 0)] - 0.25).abs() < 1e-15);
        assert!(x[(1, 1)].abs() < 1e-15 && x[(0, 1)].abs() < 1e-15);

        let z = spd_sqrt_directional_derivative(&m, &SymMatrix::zeros(2)).unwrap();
        assert_eq!(z.as_matrix().norm(), 0.0);
    }

    #[test]
    fn derivative_solves_sylvester_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [2, 5, 9] {
            let m = random_spd(n, &mut rng);
            let dm = random_sym(n, &mut rng);
            let r = spd_sqrt(&m, None).unwrap();
            let x = spd_sqrt_directional_derivative(&m, &dm).unwrap();
            let res = r.as_matrix() * x.as_matrix() + x.as_matrix() * r.as_matrix() - dm.as_matrix();
            assert!(res.norm() <= 1e-10 * dm.as_matrix().norm());
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-5;
        for n in [2, 4] {
            let m = random_spd(n, &mut rng);
            let dm = random_sym(n, &mut rng);
            let plus = spd_sqrt(&m.add(&dm.scale(h)), None).unwrap();
            let minus = spd_sqrt(&m.sub(&dm.scale(h)), None).unwrap();
            let fd = (plus.as_matrix() - minus.as_matrix()) / (2.0 * h);
            let x = spd_sqrt_directional_derivative(&m, &dm).unwrap();
            assert!((x.as_matrix() - &fd).norm() < 1e-6 * fd.norm());
        }
    }

    #[test]
    fn expm_zero_time_is_identity() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(expm(&m, 0.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn expm_critical_oscillator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -2.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 0.0]) * (-1.0f64).exp();
        let got = expm(&a, 1.0);
        assert!((got - &expected).norm() <= 1e-14 * expected.norm());
    }

    fn taylor_expm(m: &DMatrix<f64>, t: f64, terms: usize) -> DMatrix<f64> {
        let n = m.nrows();
        let a = m * t;
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..terms {
            term = &term * &a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_matches_taylor_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..5 {
            let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let oracle = taylor_expm(&m, 0.3, 30);
            let got = expm(&m, 0.3);
            assert!((got - &oracle).norm() < 1e-9 * oracle.norm());
        }
    }

    #[test]
    fn expm_large_norm_uses_squaring() {
        let a = DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 0.0, -5.0]);
        let t = 4.0;
        // Upper triangular with distinct eigenvalues: closed form.
        let (e1, e2) = ((-3.0 * t as f64).exp(), (-5.0 * t as f64).exp());
        let expected = DMatrix::from_row_slice(2, 2, &[e1, (e1 - e2) / 2.0, 0.0, e2]);
        let got = expm(&a, t);
        assert!((got - &expected).norm() <= 1e-10 * expected.norm());
    }

    #[test]
    fn expm_group_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let (s, t) = (0.7, 1.1);
            let scale = m.norm() * (s + t);
            let m = if scale > 5.0 { m * (5.0 / scale) } else { m };
            let lhs = expm(&m, s) * expm(&m, t);
            assert!((lhs - expm(&m, s + t)).norm() <= 1e-8);
        }
    }

    #[test]
    fn quadratic_expectation_basics() {
        let e = gaussian_quadratic_expectation(
            &DVector::zeros(3),
            &SymMatrix::identity(3),
            &SymMatrix::identity(3),
            &DVector::zeros(3),
            0.0,
        )
        .unwrap();
        assert!((e - 3.0).abs() < 1e-15);

        let e = gaussian_quadratic_expectation(
            &DVector::from_vec(vec![2.0, 0.0]),
            &SymMatrix::identity(2),
            &SymMatrix::zeros(2),
            &DVector::from_vec(vec![1.0, 0.0]),
            5.0,
        )
        .unwrap();
        assert!((e - 7.0).abs() < 1e-15);

        let bad = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(gaussian_quadratic_expectation(
            &DVector::zeros(2),
            &bad,
            &SymMatrix::identity(2),
            &DVector::zeros(2),
            0.0
        )
        .is_err());
    }

    #[test]
    fn quadratic_expectation_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mean = DVector::from_vec(vec![0.5, -1.0]);
        let cov = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.5]]).unwrap();
        let quad = SymMatrix::from_rows(&[vec![2.0, -0.4], vec![-0.4, 1.0]]).unwrap();
        let lin = DVector::from_vec(vec![0.7, 1.3]);
        let exact = gaussian_quadratic_expectation(&mean, &cov, &quad, &lin, 0.25).unwrap();

        let l = cov.cholesky().unwrap().l();
        let n = 1_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let z = DVector::from_vec(vec![std_normal(&mut rng), std_normal(&mut rng)]);
            let x = &mean + &l * z;
            let v = x.dot(&(quad.as_matrix() * &x)) + lin.dot(&x) + 0.25;
            sum += v;
            sum2 += v * v;
        }
        let m = sum / n as f64;
        let se = ((sum2 / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - exact).abs() < 4.0 * se, "mc {m} exact {exact} se {se}");
    }

    fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
