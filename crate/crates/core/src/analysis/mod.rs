//! Generalization-gap estimation, bound calculators and regularity checks.

mod bounds;
mod gap;
mod regularity;

pub use bounds::{
    beta_theorem2, beta_theorem3, bound_theorem1_holder, bound_theorem1_l1, bound_theorem1_l2,
    inputs_hash, self_bounding_constant, tsgd_window_constant, BoundInputs, BoundRecord, FreeConstants,
    StabilityNorm,
};
pub use gap::{estimate_gap, gap_from_outcomes, trial_gap, GapReport, TrialGap};
pub use regularity::{
    central_difference, gradient_check, relative_error, verify_regularity, GradientCheck, RegularityReport,
};
