//! Simulation, least squares estimation and Monte Carlo bound
//! verification for finite impulse response (FIR) systems with
//! sub-Gaussian inputs.
//!
//! The crate is organized around six pieces:
//!
//! - [`sampler`]: seeded sub-Gaussian families with exact psi2 metadata;
//! - [`fir`]: FIR systems, trajectories, the time-shifted design matrix;
//! - [`linalg`]: dense SVD, pseudo-inverse, operator norms;
//! - [`toeplitz`]: the X = L + S corner decomposition and the certified
//!   multiplication-polynomial supremum;
//! - [`estimator`]: least squares, prediction loss / risk, oracle
//!   minimizer and excess risk;
//! - [`bounds`]: closed-form bound and sample-complexity formulas, the
//!   Fisher information and the CRLB floor;
//! - [`montecarlo`]: parallel deterministic trials, tail probabilities,
//!   rate fits, and calibration of the absolute constant.
//!
//! Everything is deterministic given a master seed: trials derive
//! counter-based streams, so a batch is a pure function of its config
//! regardless of how many worker threads execute it.

pub mod bounds;
pub mod estimator;
pub mod fir;
pub mod linalg;
pub mod montecarlo;
pub mod sampler;
pub mod toeplitz;

pub use bounds::{BoundConfig, BoundReport, TheoremId};
pub use fir::{build_design, simulate, DesignMatrix, FirSystem, Regressor, Trajectory};
pub use montecarlo::{ExperimentConfig, Quantity, TrialBatch, TrialRecord};
pub use sampler::{DistributionSpec, Family, SeedSpec};
