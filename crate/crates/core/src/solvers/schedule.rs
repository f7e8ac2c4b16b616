use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Regime;
use crate::types::RegularityConstants;

use super::Algorithm;

fn one() -> f64 {
    1.0
}

fn default_window_scale() -> f64 {
    0.9
}

/// Step-size rule. `ℓ` below is `max(ℓ_f, ℓ_g)`; `k` and `t` are the 0-based
/// outer and inner iteration indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// `c4 / (ℓ (k + 1))`.
    OuterInverse {
        #[serde(default = "one")]
        c4: f64,
    },
    /// `c3 / (ℓ_g (t + 1))`.
    InnerInverse {
        #[serde(default = "one")]
        c3: f64,
    },
    /// `c1 ln K / (√2 K ℓ)`.
    LogOverK {
        #[serde(default = "one")]
        c1: f64,
    },
    /// `c2 ln T / (√(1 + T²) K ℓ)`.
    LogOverT {
        #[serde(default = "one")]
        c2: f64,
    },
    /// `scale · hi` of the strongly convex step window; must land inside it.
    ScscWindow {
        #[serde(default = "default_window_scale")]
        scale: f64,
    },
}

impl StepSchedule {
    /// Default rule for a regime: the largest step admitted by the matching
    /// stability result.
    pub fn default_for(regime: Regime, algorithm: Algorithm, inner: bool) -> Self {
        match (regime, algorithm) {
            (Regime::StronglyConvex, _) => StepSchedule::ScscWindow {
                scale: default_window_scale(),
            },
            (Regime::Convex, Algorithm::Ssgd) => StepSchedule::LogOverK { c1: 1.0 },
            (Regime::Convex, _) => StepSchedule::LogOverT { c2: 1.0 },
            (Regime::Nonconvex, _) if inner => StepSchedule::InnerInverse { c3: 1.0 },
            (Regime::Nonconvex, _) => StepSchedule::OuterInverse { c4: 1.0 },
        }
    }

    /// Binds the rule to concrete constants and horizons.
    pub fn resolve(&self, constants: &RegularityConstants, k: usize, t: usize) -> Result<ResolvedStep> {
        let ell = constants.smooth_max();
        let positive = |name: &'static str, v: f64| -> Result<f64> {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::invalid(name, format!("step size must be finite and positive, got {v}")))
            }
        };
        let resolved = match *self {
            StepSchedule::Constant { eta } => ResolvedStep::Constant(positive("eta", eta)?),
            StepSchedule::OuterInverse { c4 } => ResolvedStep::OuterInverse(positive("c4 / ell", c4 / ell)?),
            StepSchedule::InnerInverse { c3 } => {
                ResolvedStep::InnerInverse(positive("c3 / ell_g", c3 / constants.smooth_g)?)
            }
            StepSchedule::LogOverK { c1 } => {
                let kf = k as f64;
                let eta = c1 * kf.ln() / (std::f64::consts::SQRT_2 * kf * ell);
                ResolvedStep::Constant(positive("log_over_k (needs K >= 2)", eta)?)
            }
            StepSchedule::LogOverT { c2 } => {
                let (kf, tf) = (k as f64, t as f64);
                let eta = c2 * tf.ln() / ((1.0 + tf * tf).sqrt() * kf * ell);
                ResolvedStep::Constant(positive("log_over_t (needs T >= 2)", eta)?)
            }
            StepSchedule::ScscWindow { scale } => {
                let w = scsc_stepsize_window(
                    constants.mu_f,
                    constants.mu_g,
                    constants.smooth_f,
                    constants.smooth_g,
                )?;
                let eta = positive("scale", scale * w.hi)?;
                if eta < w.lo {
                    return Err(Error::invalid(
                        "scale",
                        format!("step {eta} falls below the window [{}, {}]", w.lo, w.hi),
                    ));
                }
                if eta > w.hi {
                    return Err(Error::invalid(
                        "scale",
                        format!("step {eta} exceeds the window [{}, {}]", w.lo, w.hi),
                    ));
                }
                ResolvedStep::Constant(eta)
            }
        };
        Ok(resolved)
    }
}

/// A schedule bound to constants; `at(k, t)` is always finite and positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResolvedStep {
    Constant(f64),
    /// `scale / (k + 1)`.
    OuterInverse(f64),
    /// `scale / (t + 1)`.
    InnerInverse(f64),
}

impl ResolvedStep {
    #[inline]
    pub fn at(&self, k: usize, t: usize) -> f64 {
        match *self {
            ResolvedStep::Constant(eta) => eta,
            ResolvedStep::OuterInverse(s) => s / (k as f64 + 1.0),
            ResolvedStep::InnerInverse(s) => s / (t as f64 + 1.0),
        }
    }
}

/// Closed interval of admissible constant step sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepWindow {
    pub lo: f64,
    pub hi: f64,
}

/// Step-size window for SSGD on a strongly convex pair:
/// `[(2(μ_f+μ_g) ∓ √Δ) / (2(ℓ_f²+ℓ_g²))]` with
/// `Δ = 4(μ_f+μ_g)² − 2(ℓ_f²+ℓ_g²)`.
pub fn scsc_stepsize_window(mu_f: f64, mu_g: f64, ell_f: f64, ell_g: f64) -> Result<StepWindow> {
    for (name, v) in [("mu_f", mu_f), ("mu_g", mu_g), ("ell_f", ell_f), ("ell_g", ell_g)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(name, format!("must be finite and positive, got {v}")));
        }
    }
    let mu = mu_f + mu_g;
    let ell_sq = ell_f * ell_f + ell_g * ell_g;
    let discriminant = 4.0 * mu * mu - 2.0 * ell_sq;
    if discriminant < 0.0 {
        return Err(Error::InfeasibleWindow { discriminant });
    }
    let root = discriminant.sqrt();
    Ok(StepWindow {
        lo: (2.0 * mu - root) / (2.0 * ell_sq),
        hi: (2.0 * mu + root) / (2.0 * ell_sq),
    })
}
