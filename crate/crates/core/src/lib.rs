//! First-order stochastic bilevel optimizers (SSGD, TSGD, UD) together with
//! estimators for on-average argument stability and the outer generalization
//! gap, and calculators for the matching theoretical bounds.

pub mod analysis;
pub mod error;
pub mod problems;
pub mod rng;
pub mod solvers;
pub mod stability;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
pub use rng::RandomStream;
pub use types::{joint_norm, Checkpoint, Dataset, ParameterPair, RegularityConstants, Sample, TrajectoryRecord};

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
