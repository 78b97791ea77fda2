//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use langevin_core::friction::FrictionSpec;
use langevin_core::linalg::SymMatrix;
use langevin_core::potentials::{perturbed_diagonal, quadratic_diagonal, quadratic_general, LogCosh, Potential};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    OracleOu,
    Simulate,
    Certify,
    Compare,
    Audit,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::OracleOu => "oracle-ou",
            Kind::Simulate => "simulate",
            Kind::Certify => "certify",
            Kind::Compare => "compare",
            Kind::Audit => "audit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub friction: FrictionConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub certificate: CertificateConfig,
    #[serde(default)]
    pub audit: AuditConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    QuadraticDiagonal { v: Vec<f64> },
    QuadraticGeneral { matrix: Vec<Vec<f64>> },
    LogCosh { v: Vec<f64>, eps: f64 },
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig::QuadraticDiagonal { v: vec![1.0] }
    }
}

impl PotentialConfig {
    pub fn build(&self) -> Result<Box<dyn Potential>> {
        Ok(match self {
            PotentialConfig::QuadraticDiagonal { v } => {
                Box::new(quadratic_diagonal(v).context("potential.v")?)
            }
            PotentialConfig::QuadraticGeneral { matrix } => {
                let m = SymMatrix::from_rows(matrix).context("potential.matrix")?;
                Box::new(quadratic_general(m).context("potential.matrix")?)
            }
            PotentialConfig::LogCosh { v, eps } => {
                Box::new(perturbed_diagonal(v, *eps, LogCosh).context("potential (log_cosh)")?)
            }
        })
    }

    pub fn family(&self) -> &'static str {
        match self {
            PotentialConfig::QuadraticDiagonal { .. } => "quadratic_diagonal",
            PotentialConfig::QuadraticGeneral { .. } => "quadratic_general",
            PotentialConfig::LogCosh { .. } => "log_cosh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FrictionConfig {
    ConstantScalar { lambda: f64 },
    ConstantMatrix { matrix: Vec<Vec<f64>> },
    HessianSqrt { s: f64 },
}

impl Default for FrictionConfig {
    fn default() -> Self {
        FrictionConfig::HessianSqrt { s: 2.0 }
    }
}

impl FrictionConfig {
    pub fn build(&self) -> Result<FrictionSpec> {
        let spec = match self {
            FrictionConfig::ConstantScalar { lambda } => FrictionSpec::ConstantScalar { lambda: *lambda },
            FrictionConfig::ConstantMatrix { matrix } => FrictionSpec::ConstantMatrix {
                matrix: SymMatrix::from_rows(matrix).context("friction.matrix")?,
            },
            FrictionConfig::HessianSqrt { s } => FrictionSpec::HessianSqrt { s: *s },
        };
        spec.validate().context("friction")?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Original,
    Rescaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub n_steps: u64,
    pub n_particles: usize,
    pub record_every: u64,
    pub form: Form,
    pub noise_refinement: u32,
    /// Initial mean `(q, p)`; the default is `q = 1`, `p = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<Vec<f64>>,
    /// Initial covariance; omitted means every particle starts at the mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_cov: Option<Vec<Vec<f64>>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt: 1e-3,
            n_steps: 1000,
            n_particles: 10_000,
            record_every: 100,
            form: Form::Original,
            noise_refinement: 1,
            init_mean: None,
            init_cov: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub w: Vec<f64>,
    pub lambda: Vec<f64>,
    pub n_times: usize,
    /// Frequencies of a diagonal system for the friction dominance table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominance_lambda: Option<Vec<f64>>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            w: vec![1.0],
            lambda: vec![1.0, 2.0, 3.0],
            n_times: 401,
            v: None,
            dominance_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateConfig {
    pub s_grid: Vec<f64>,
    pub x0_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    /// Replaces the potential's constants, e.g. to probe large `γ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsOverride>,
    /// Box half-width and sample count when constants must be estimated.
    pub estimate_half_width: f64,
    pub estimate_samples: usize,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig {
            s_grid: vec![1.0, 1.5, 2.0, 3.0, 4.0],
            x0_grid: vec![1.0, 10.0, 100.0, 1e3, 1e4],
            lambda_grid: langevin_core::rate_bounds::log_grid(0.1, 10.0, 25),
            constants: None,
            estimate_half_width: 3.0,
            estimate_samples: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsOverride {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub t_max: f64,
    pub n_times: usize,
    pub x0: f64,
    pub tol: f64,
    /// Initial law `N(init_mean, init_cov_scale · I)` on phase space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<Vec<f64>>,
    pub init_cov_scale: f64,
    pub eps_rates: Vec<f64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            t_max: 10.0,
            n_times: 200,
            x0: 1e3,
            tol: 1e-6,
            init_mean: None,
            init_cov_scale: 0.95,
            eps_rates: vec![1.0, 0.5, 0.1],
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        bail!("{field}: must be positive and finite, got {v}");
    }
    Ok(())
}

fn nonempty_positive(field: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        bail!("{field}: must not be empty");
    }
    for (i, &x) in v.iter().enumerate() {
        positive(&format!("{field}[{i}]"), x)?;
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Field-level checks for the sections `kind` uses.
    pub fn validate(&self, kind: Kind) -> Result<()> {
        self.potential.build()?;
        self.friction.build()?;
        match kind {
            Kind::OracleOu => {
                let o = &self.oracle;
                nonempty_positive("oracle.w", &o.w)?;
                nonempty_positive("oracle.lambda", &o.lambda)?;
                if o.n_times < 16 {
                    bail!("oracle.n_times: must be >= 16, got {}", o.n_times);
                }
                if let Some(v) = &o.v {
                    nonempty_positive("oracle.v", v)?;
                }
                if let Some(l) = &o.dominance_lambda {
                    nonempty_positive("oracle.dominance_lambda", l)?;
                }
            }
            Kind::Simulate => {
                let s = &self.simulation;
                if self.seed.is_none() {
                    bail!("seed: required for simulate");
                }
                positive("simulation.dt", s.dt)?;
                if s.n_particles < 2 {
                    bail!("simulation.n_particles: must be >= 2, got {}", s.n_particles);
                }
                if s.record_every == 0 {
                    bail!("simulation.record_every: must be >= 1");
                }
                if s.noise_refinement == 0 {
                    bail!("simulation.noise_refinement: must be >= 1");
                }
                let d2 = 2 * self.potential.build()?.dim();
                if let Some(m) = &s.init_mean {
                    if m.len() != d2 {
                        bail!("simulation.init_mean: expected {d2} entries, got {}", m.len());
                    }
                }
                if let Some(c) = &s.init_cov {
                    if c.len() != d2 || c.iter().any(|r| r.len() != d2) {
                        bail!("simulation.init_cov: expected a {d2}x{d2} matrix");
                    }
                }
            }
            Kind::Certify | Kind::Compare => {
                let c = &self.certificate;
                nonempty_positive("certificate.s_grid", &c.s_grid)?;
                nonempty_positive("certificate.x0_grid", &c.x0_grid)?;
                nonempty_positive("certificate.lambda_grid", &c.lambda_grid)?;
                positive("certificate.estimate_half_width", c.estimate_half_width)?;
                if c.estimate_samples == 0 {
                    bail!("certificate.estimate_samples: must be >= 1");
                }
                if let Some(k) = c.constants {
                    positive("certificate.constants.alpha", k.alpha)?;
                    positive("certificate.constants.beta", k.beta)?;
                    if !(k.gamma >= 0.0) {
                        bail!("certificate.constants.gamma: must be >= 0, got {}", k.gamma);
                    }
                }
            }
            Kind::Audit => {
                let a = &self.audit;
                positive("audit.t_max", a.t_max)?;
                positive("audit.tol", a.tol)?;
                positive("audit.init_cov_scale", a.init_cov_scale)?;
                if a.n_times < 3 {
                    bail!("audit.n_times: must be >= 3, got {}", a.n_times);
                }
                if !(a.x0 > std::f64::consts::FRAC_1_SQRT_2) {
                    bail!("audit.x0: must exceed 1/sqrt(2), got {}", a.x0);
                }
                for (i, &e) in a.eps_rates.iter().enumerate() {
                    if !(e > 0.0 && e < 2.0) {
                        bail!("audit.eps_rates[{i}]: must lie in (0, 2), got {e}");
                    }
                }
            }
        }
        Ok(())
    }
}
