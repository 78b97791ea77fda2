//! Euler–Maruyama ensembles for the kinetic Langevin dynamics.
//!
//! Noise is counter based: particle `i` reads ChaCha8 stream `i` of the run
//! seed, at a word offset fixed by the fine-step index. A particle's path is
//! therefore independent of the ensemble size, the worker count and the loop
//! order. With `noise_refinement = r` each step sums `r` consecutive fine
//! increments, so runs at `dt`, `dt/2`, `dt/4` (with `r = 4, 2, 1`) share one
//! Brownian path.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::friction::{FrictionField, FrictionSpec};
use crate::gaussian::{gaussian_chi2, GaussianMoments};
use crate::linalg::SymMatrix;
use crate::potentials::Potential;

pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Particles per work unit. Reductions are summed chunk by chunk in index
/// order, so results do not depend on how chunks are scheduled.
const CHUNK: usize = 1024;

/// Streams with this bit set are reserved for initial-state sampling.
const INIT_STREAM: u64 = 1 << 63;

/// Which SDE is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum DynamicsForm {
    /// Noise `√(2Γ(q))`.
    Original,
    /// Noise `√(2α⁻¹Γ(q))`. The potential and friction are used as given, so
    /// callers pass `V/α` and `Γ/√α` (see [`crate::potentials::scaled`] and
    /// [`FrictionSpec::rescaled`]).
    Rescaled { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_steps: u64,
    pub n_particles: usize,
    pub seed: u64,
    pub form: DynamicsForm,
    /// Fine noise increments summed per step.
    pub noise_refinement: u32,
    /// `false` drops the diffusion term (deterministic flow).
    pub inject_noise: bool,
}

impl SimConfig {
    pub fn new(dt: f64, n_steps: u64, n_particles: usize, seed: u64) -> Self {
        SimConfig {
            dt,
            n_steps,
            n_particles,
            seed,
            form: DynamicsForm::Original,
            noise_refinement: 1,
            inject_noise: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_particles == 0 {
            return Err(Error::InvalidArgument("n_particles must be >= 1".into()));
        }
        if self.noise_refinement == 0 {
            return Err(Error::InvalidArgument("noise_refinement must be >= 1".into()));
        }
        if let DynamicsForm::Rescaled { alpha } = self.form {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
            }
        }
        Ok(())
    }
}

/// `N` particles in phase space, stored row-major (`N × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dim: usize,
    positions: Vec<f64>,
    momenta: Vec<f64>,
    pub time: f64,
    /// Seed used to draw the initial state.
    pub seed: u64,
    pub steps_taken: u64,
    /// Step size of the most recent step, if any.
    pub dt: Option<f64>,
}

impl Ensemble {
    /// Every particle at `(q, p)`.
    pub fn from_point(q: &[f64], p: &[f64], n: usize, seed: u64) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        if n == 0 || q.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs N >= 1 and d >= 1".into()));
        }
        Ok(Ensemble {
            dim: q.len(),
            positions: q.repeat(n),
            momenta: p.repeat(n),
            time: 0.0,
            seed,
            steps_taken: 0,
            dt: None,
        })
    }

    /// `n` independent draws from a Gaussian on phase space.
    pub fn from_gaussian(law: &GaussianMoments, n: usize, seed: u64) -> Result<Self> {
        let big = law.dim();
        if big == 0 || big % 2 != 0 {
            return Err(Error::InvalidArgument(format!("phase-space dimension must be even, got {big}")));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("ensemble needs N >= 1".into()));
        }
        let d = big / 2;
        let root = law.cov.eigen().map(|l| l.max(0.0).sqrt());
        let root = root.as_matrix();
        let mut positions = vec![0.0; n * d];
        let mut momenta = vec![0.0; n * d];
        positions
            .par_chunks_mut(CHUNK * d)
            .zip(momenta.par_chunks_mut(CHUNK * d))
            .enumerate()
            .for_each(|(c, (qs, ps))| {
                let mut z = vec![0.0; big + 1];
                let mut x = vec![0.0; big];
                for (k, (q, p)) in qs.chunks_mut(d).zip(ps.chunks_mut(d)).enumerate() {
                    let particle = (c * CHUNK + k) as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(INIT_STREAM | particle);
                    fill_normals(&mut rng, &mut z[..big]);
                    for i in 0..big {
                        x[i] = law.mean[i] + (0..big).map(|j| root[(i, j)] * z[j]).sum::<f64>();
                    }
                    q.copy_from_slice(&x[..d]);
                    p.copy_from_slice(&x[d..]);
                }
            });
        Ok(Ensemble {
            dim: d,
            positions,
            momenta,
            time: 0.0,
            seed,
            steps_taken: 0,
            dt: None,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn momenta(&self) -> &[f64] {
        &self.momenta
    }

    pub fn particle(&self, i: usize) -> (&[f64], &[f64]) {
        let d = self.dim;
        (&self.positions[i * d..(i + 1) * d], &self.momenta[i * d..(i + 1) * d])
    }

    /// Empirical mean and covariance (normalised by `N − 1`) of `(q, p)`.
    pub fn moments(&self) -> MomentSummary {
        let (n, d) = (self.len(), self.dim);
        let big = 2 * d;
        let n_chunks = n.div_ceil(CHUNK);
        let chunk_range = |c: usize| c * CHUNK..((c + 1) * CHUNK).min(n);
        let state = |i: usize, k: usize| {
            if k < d {
                self.positions[i * d + k]
            } else {
                self.momenta[i * d + k - d]
            }
        };

        let sums: Vec<Vec<f64>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut s = vec![0.0; big];
                for i in chunk_range(c) {
                    for (k, sk) in s.iter_mut().enumerate() {
                        *sk += state(i, k);
                    }
                }
                s
            })
            .collect();
        let mut mean = vec![0.0; big];
        for s in &sums {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }

        let cross: Vec<Vec<f64>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut s = vec![0.0; big * big];
                let mut x = vec![0.0; big];
                for i in chunk_range(c) {
                    for (k, xk) in x.iter_mut().enumerate() {
                        *xk = state(i, k) - mean[k];
                    }
                    for a in 0..big {
                        for b in a..big {
                            s[a * big + b] += x[a] * x[b];
                        }
                    }
                }
                s
            })
            .collect();
        let norm = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let mut cov = nalgebra::DMatrix::zeros(big, big);
        for s in &cross {
            for a in 0..big {
                for b in a..big {
                    cov[(a, b)] += s[a * big + b];
                }
            }
        }
        for a in 0..big {
            for b in a..big {
                cov[(a, b)] /= norm;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        MomentSummary {
            time: self.time,
            n,
            mean,
            cov: SymMatrix::symmetrize(cov),
        }
    }
}

/// Empirical first two moments of an ensemble at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSummary {
    pub time: f64,
    pub n: usize,
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

impl MomentSummary {
    /// `√(cov_kk / N)` for each mean component.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.mean.len())
            .map(|k| (self.cov[(k, k)] / self.n as f64).sqrt())
            .collect()
    }

    pub fn to_gaussian(&self) -> Result<GaussianMoments> {
        GaussianMoments::new(self.mean.clone(), self.cov.clone())
    }
}

/// Output of [`Simulator::run`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<MomentSummary>,
    pub final_state: Ensemble,
}

/// Standard normals by Box–Muller, always consuming two `u64` per pair.
fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    for pair in out.chunks_mut(2) {
        let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * SCALE;
        let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = r * c;
        if pair.len() > 1 {
            pair[1] = r * s;
        }
    }
}

/// 32-bit words consumed per fine step for `d` normals.
fn words_per_fine_step(d: usize) -> u128 {
    4 * d.div_ceil(2) as u128
}

/// A potential and friction bound to a configuration.
pub struct Simulator<'a> {
    potential: &'a dyn Potential,
    field: FrictionField,
    cfg: SimConfig,
}

struct Failure {
    step: u64,
    particle: usize,
    error: Error,
}

impl<'a> Simulator<'a> {
    pub fn new(potential: &'a dyn Potential, spec: &FrictionSpec, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let field = match cfg.form {
            DynamicsForm::Original => FrictionField::new(spec.clone(), potential)?,
            DynamicsForm::Rescaled { alpha } => FrictionField::with_noise(spec.clone(), potential, true, alpha)?,
        };
        Ok(Simulator { potential, field, cfg })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Warns when `dt · λ_max(Γ) ≥ 2` at the mean initial position.
    pub fn stability_warning(&self, ens: &Ensemble) -> Option<String> {
        let d = ens.dim();
        let mut q_mean = vec![0.0; d];
        for i in 0..ens.len() {
            for (k, m) in q_mean.iter_mut().enumerate() {
                *m += ens.positions[i * d + k];
            }
        }
        for m in q_mean.iter_mut() {
            *m /= ens.len() as f64;
        }
        let g = match self.field.gamma_at(self.potential, &q_mean) {
            Ok(g) => g,
            Err(e) => return Some(format!("friction not evaluable at the mean position: {e}")),
        };
        let lmax = g.max_eigenvalue();
        let product = self.cfg.dt * lmax;
        (product >= 2.0).then(|| {
            format!(
                "dt * lambda_max(Gamma) = {product:.4} >= 2 at the mean initial position; Euler-Maruyama may be unstable"
            )
        })
    }

    /// Advances every particle by `n` steps.
    pub fn advance(&self, ens: &mut Ensemble, n: u64) -> Result<()> {
        let d = ens.dim();
        if d != self.potential.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.potential.dim(),
                got: d,
            });
        }
        if n == 0 {
            return Ok(());
        }
        let first = ens.steps_taken;
        let failure = ens
            .positions
            .par_chunks_mut(CHUNK * d)
            .zip(ens.momenta.par_chunks_mut(CHUNK * d))
            .enumerate()
            .map(|(c, (qs, ps))| {
                let mut worst: Option<Failure> = None;
                for (k, (q, p)) in qs.chunks_mut(d).zip(ps.chunks_mut(d)).enumerate() {
                    if let Err(f) = self.advance_particle(c * CHUNK + k, q, p, first, n) {
                        if worst.as_ref().is_none_or(|w| f.step < w.step) {
                            worst = Some(f);
                        }
                    }
                }
                worst
            })
            .reduce(
                || None,
                |a, b| match (a, b) {
                    (Some(a), Some(b)) => Some(if (b.step, b.particle) < (a.step, a.particle) { b } else { a }),
                    (a, None) => a,
                    (None, b) => b,
                },
            );
        if let Some(f) = failure {
            return Err(match f.error {
                Error::NumericalBlowup { value, .. } => Error::NumericalBlowup {
                    step: f.step,
                    particle: f.particle,
                    value,
                },
                other => other,
            });
        }
        ens.steps_taken += n;
        ens.time += n as f64 * self.cfg.dt;
        ens.dt = Some(self.cfg.dt);
        Ok(())
    }

    fn advance_particle(
        &self,
        particle: usize,
        q: &mut [f64],
        p: &mut [f64],
        first: u64,
        n: u64,
    ) -> std::result::Result<(), Failure> {
        let d = q.len();
        let dt = self.cfg.dt;
        let r = self.cfg.noise_refinement as u64;
        let fine_scale = (dt / r as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        if self.cfg.inject_noise {
            rng.set_stream(particle as u64);
            rng.set_word_pos(first as u128 * r as u128 * words_per_fine_step(d));
        }
        let mut grad = vec![0.0; d];
        let mut dw = vec![0.0; d];
        let mut z = vec![0.0; d + 1];
        let mut p_next = vec![0.0; d];
        for s in 0..n {
            let step = first + s + 1;
            let fail = |error: Error| Failure { step, particle, error };
            self.potential.gradient(q, &mut grad);
            let (g, sigma) = self.field.at(self.potential, q).map_err(fail)?;
            let (g, sigma) = (g.as_matrix(), sigma.as_matrix());
            if self.cfg.inject_noise {
                dw.iter_mut().for_each(|w| *w = 0.0);
                for _ in 0..r {
                    fill_normals(&mut rng, &mut z[..d]);
                    for (w, zk) in dw.iter_mut().zip(&z) {
                        *w += zk * fine_scale;
                    }
                }
            }
            for i in 0..d {
                let mut friction = 0.0;
                let mut kick = 0.0;
                for j in 0..d {
                    friction += g[(i, j)] * p[j];
                    kick += sigma[(i, j)] * dw[j];
                }
                p_next[i] = p[i] - (grad[i] + friction) * dt;
                if self.cfg.inject_noise {
                    p_next[i] += kick;
                }
            }
            for i in 0..d {
                q[i] += p[i] * dt;
                p[i] = p_next[i];
            }
            for &x in q.iter().chain(p.iter()) {
                if !x.is_finite() || x.abs() > BLOWUP_THRESHOLD {
                    return Err(fail(Error::NumericalBlowup {
                        step,
                        particle,
                        value: x,
                    }));
                }
            }
        }
        Ok(())
    }

    /// Runs `cfg.n_steps` steps from `init`, recording moments at step 0 and
    /// after every `record_every` steps (and at the final step).
    pub fn run(&self, init: &Ensemble, record_every: u64) -> Result<Trajectory> {
        if record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be >= 1".into()));
        }
        let mut ens = init.clone();
        let mut records = vec![ens.moments()];
        let mut done = 0;
        while done < self.cfg.n_steps {
            let k = record_every.min(self.cfg.n_steps - done);
            self.advance(&mut ens, k)?;
            done += k;
            records.push(ens.moments());
        }
        Ok(Trajectory {
            records,
            final_state: ens,
        })
    }
}

/// One Euler–Maruyama step of every particle.
pub fn step(ens: &Ensemble, p: &dyn Potential, spec: &FrictionSpec, cfg: &SimConfig) -> Result<Ensemble> {
    let sim = Simulator::new(p, spec, cfg.clone())?;
    let mut out = ens.clone();
    sim.advance(&mut out, 1)?;
    Ok(out)
}

/// `cfg.n_steps` steps with moments recorded every `record_every` steps.
pub fn run(
    init: &Ensemble,
    p: &dyn Potential,
    spec: &FrictionSpec,
    cfg: &SimConfig,
    record_every: u64,
) -> Result<Trajectory> {
    Simulator::new(p, spec, cfg.clone())?.run(init, record_every)
}

/// χ² between the Gaussian with the ensemble's first two moments and `pi`.
///
/// A proxy: exact only when the ensemble law is itself Gaussian.
pub fn estimate_chi2_gaussian_proxy(ens: &Ensemble, pi: &GaussianMoments) -> Result<f64> {
    chi2_proxy_from_moments(&ens.moments(), pi)
}

/// Empirical covariances with smallest eigenvalue below this multiple of
/// `λ_max(Σπ)` are treated as singular.
pub const PROXY_RANK_TOL: f64 = 1e-12;

pub fn chi2_proxy_from_moments(m: &MomentSummary, pi: &GaussianMoments) -> Result<f64> {
    let tolerance = PROXY_RANK_TOL * pi.cov.max_eigenvalue();
    let min_eigenvalue = m.cov.min_eigenvalue();
    if !(min_eigenvalue > tolerance) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue,
            tolerance,
        });
    }
    let fit = GaussianMoments {
        mean: m.mean.clone(),
        cov: m.cov.clone(),
    };
    gaussian_chi2(&fit, pi)
}
