//! Bilevel problem abstraction and the concrete instances.
//!
//! Every instance exposes the per-sample outer loss `f(x, y; ξ)`, the inner
//! loss `g(x, y; ζ)`, their analytic partial gradients and declared regularity
//! constants. Constants are declared over the Euclidean ball of
//! `region_radius()` around the origin in the joint `(x, y)` space; the
//! solvers refuse to leave that ball.

mod logistic;
mod quadratic;
mod reweighting;
mod tanh;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::stats::{Estimate, Moments};
use crate::types::{Dataset, ParameterPair, RegularityConstants, Sample};

pub use logistic::{make_logistic_cc, LogisticParams, LogisticPopulation, LogisticProblem, OuterLossKind};
pub use quadratic::{make_quadratic_scsc, MatrixSpec, QuadraticParams, QuadraticPopulation, QuadraticProblem};
pub use reweighting::{
    make_data_reweighting, ReweightingParams, ReweightingPopulation, ReweightingProblem,
};
pub use tanh::{make_smooth_ncnc, TanhParams, TanhPopulation, TanhProblem};

/// Convexity regime of the pair `(f, g)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "sc-sc")]
    StronglyConvex,
    #[serde(rename = "c-c")]
    Convex,
    #[serde(rename = "nc-nc")]
    Nonconvex,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::StronglyConvex => "sc-sc",
            Regime::Convex => "c-c",
            Regime::Nonconvex => "nc-nc",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Evaluation and gradient surface of a bilevel problem.
///
/// Gradient methods overwrite `out`, whose length must match the
/// corresponding block dimension.
pub trait BilevelProblem: Send + Sync {
    fn name(&self) -> &'static str;

    /// `(d1, d2)`.
    fn dims(&self) -> (usize, usize);

    fn regime(&self) -> Regime;

    fn constants(&self) -> &RegularityConstants;

    /// Radius of the joint ball on which the declared constants hold.
    fn region_radius(&self) -> f64;

    fn outer_loss(&self, x: &[f64], y: &[f64], xi: &Sample) -> f64;

    fn inner_loss(&self, x: &[f64], y: &[f64], zeta: &Sample) -> f64;

    fn outer_grad_x(&self, x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]);

    fn outer_grad_y(&self, x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]);

    fn inner_grad_x(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]);

    fn inner_grad_y(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]);

    /// Outer loss on many samples at one point. Instances with shared
    /// per-point work override this.
    fn outer_losses(&self, x: &[f64], y: &[f64], samples: &[Sample]) -> Vec<f64> {
        samples.iter().map(|s| self.outer_loss(x, y, s)).collect()
    }

    /// Exact population inner solution `y*(x)`, when known.
    fn inner_solution(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Exact fixed point of the population first-order dynamics, when known.
    fn stationary_point(&self) -> Option<ParameterPair> {
        None
    }

    /// Exact population outer risk `E_ξ f(x, y; ξ)`, when known.
    fn population_risk(&self, _x: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }
}

/// Sampler for the outer (validation) and inner (training) distributions.
pub trait Population: Send + Sync {
    fn sample_outer(&self, stream: &mut RandomStream) -> Sample;

    fn sample_inner(&self, stream: &mut RandomStream) -> Sample;

    fn draw_outer(&self, m: usize, stream: &mut RandomStream) -> Dataset {
        Dataset::new((0..m).map(|_| self.sample_outer(stream)).collect())
    }

    fn draw_inner(&self, m: usize, stream: &mut RandomStream) -> Dataset {
        Dataset::new((0..m).map(|_| self.sample_inner(stream)).collect())
    }
}

/// A problem together with its sampling distribution.
#[derive(Clone)]
pub struct ProblemInstance {
    pub problem: Arc<dyn BilevelProblem>,
    pub population: Arc<dyn Population>,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("problem", &self.problem.name())
            .field("dims", &self.problem.dims())
            .finish()
    }
}

/// Serializable description of a problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic(QuadraticParams),
    Logistic(LogisticParams),
    Tanh(TanhParams),
    Reweighting(ReweightingParams),
}

impl ProblemSpec {
    pub fn build(&self, stream: &mut RandomStream) -> Result<ProblemInstance> {
        Ok(match self {
            ProblemSpec::Quadratic(p) => {
                let (problem, population) = make_quadratic_scsc(p, stream)?;
                ProblemInstance {
                    problem: Arc::new(problem),
                    population: Arc::new(population),
                }
            }
            ProblemSpec::Logistic(p) => {
                let (problem, population) = make_logistic_cc(p, stream)?;
                ProblemInstance {
                    problem: Arc::new(problem),
                    population: Arc::new(population),
                }
            }
            ProblemSpec::Tanh(p) => {
                let (problem, population) = make_smooth_ncnc(p, stream)?;
                ProblemInstance {
                    problem: Arc::new(problem),
                    population: Arc::new(population),
                }
            }
            ProblemSpec::Reweighting(p) => {
                let (problem, population) = make_data_reweighting(p, stream)?;
                ProblemInstance {
                    problem: Arc::new(problem),
                    population: Arc::new(population),
                }
            }
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic(_) => "quadratic",
            ProblemSpec::Logistic(_) => "logistic",
            ProblemSpec::Tanh(_) => "tanh",
            ProblemSpec::Reweighting(_) => "reweighting",
        }
    }
}

/// Mean outer loss over the validation set.
pub fn empirical_outer_risk(
    problem: &dyn BilevelProblem,
    d_val: &Dataset,
    w: &ParameterPair,
) -> Result<f64> {
    if d_val.is_empty() {
        return Err(Error::EmptyDataset("validation set"));
    }
    let losses = problem.outer_losses(&w.x, &w.y, d_val.samples());
    let m: Moments = losses.into_iter().collect();
    Ok(m.mean())
}

/// Population outer risk at `w`: the exact value when the problem knows it,
/// otherwise a Monte-Carlo mean over `n_mc` fresh outer samples.
pub fn population_outer_risk(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    w: &ParameterPair,
    n_mc: usize,
    stream: &mut RandomStream,
) -> Result<Estimate> {
    if n_mc < 2 {
        return Err(Error::invalid("n_mc", "need at least 2 Monte-Carlo samples"));
    }
    if let Some(exact) = problem.population_risk(&w.x, &w.y) {
        return Ok(Estimate::exact(exact));
    }
    let samples: Vec<Sample> = (0..n_mc).map(|_| population.sample_outer(stream)).collect();
    let m: Moments = problem.outer_losses(&w.x, &w.y, &samples).into_iter().collect();
    Ok(m.estimate())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_finite_nonneg(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and nonnegative, got {v}")))
    }
}

pub(crate) fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and positive, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(-800.0), 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
