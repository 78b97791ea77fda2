//! Kinetic Langevin dynamics with Hessian-shaped friction.

pub mod error;
pub mod friction;
pub mod gaussian;
pub mod linalg;
pub mod lyapunov;
pub mod optimize;
pub mod potentials;
pub mod rate_bounds;
pub mod sde_sim;

pub use error::{Error, Result};
pub use friction::{FrictionField, FrictionSpec};
pub use gaussian::{GaussianMoments, LinearDynamics};
pub use linalg::SymMatrix;
pub use lyapunov::{AuditReport, WeightMatrixS};
pub use potentials::{AssumptionConstants, Potential};
pub use rate_bounds::{LyapunovCoefficients, RateCertificate};
pub use sde_sim::{Ensemble, MomentSummary, SimConfig};
