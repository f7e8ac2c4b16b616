use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::BilevelProblem;
use crate::types::ParameterPair;

use super::schedule::{ResolvedStep, StepSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ssgd,
    Tsgd,
    Ud,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Ssgd => "ssgd",
            Algorithm::Tsgd => "tsgd",
            Algorithm::Ud => "ud",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How SSGD combines its two updates within one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Both updates read `(x_k, y_k)`.
    #[default]
    Simultaneous,
    /// The outer update reads the freshly updated `y_{k+1}`.
    GaussSeidel,
}

fn default_t() -> usize {
    1
}

fn default_batch() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Number of outer updates.
    pub k: usize,
    /// Inner steps per outer update; ignored by SSGD.
    #[serde(default = "default_t")]
    pub t: usize,
    /// `None` picks the regime default.
    #[serde(default)]
    pub schedule_x: Option<StepSchedule>,
    #[serde(default)]
    pub schedule_y: Option<StepSchedule>,
    /// `None` starts from zeros.
    #[serde(default)]
    pub init: Option<ParameterPair>,
    /// Snapshot `(x_k, y_k^0)` every this many outer iterations; 0 keeps the
    /// final pair only.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Gradients average this many i.i.d. index draws.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Use the whole dataset for every gradient and draw nothing.
    #[serde(default)]
    pub full_batch: bool,
    #[serde(default)]
    pub update_order: UpdateOrder,
    /// Record the empirical outer risk after every outer update.
    #[serde(default = "default_true")]
    pub record_risk: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, k: usize, t: usize) -> Self {
        Self {
            algorithm,
            k,
            t,
            schedule_x: None,
            schedule_y: None,
            init: None,
            checkpoint_every: 0,
            batch_size: 1,
            full_batch: false,
            update_order: UpdateOrder::Simultaneous,
            record_risk: true,
        }
    }

    pub fn with_schedules(mut self, x: StepSchedule, y: StepSchedule) -> Self {
        self.schedule_x = Some(x);
        self.schedule_y = Some(y);
        self
    }

    /// Effective `(schedule_x, schedule_y)` after regime defaults.
    pub fn schedules(&self, problem: &dyn BilevelProblem) -> (StepSchedule, StepSchedule) {
        let regime = problem.regime();
        (
            self.schedule_x
                .unwrap_or_else(|| StepSchedule::default_for(regime, self.algorithm, false)),
            self.schedule_y
                .unwrap_or_else(|| StepSchedule::default_for(regime, self.algorithm, true)),
        )
    }

    /// Resolved `(x, y)` step rules.
    pub fn resolve_steps(&self, problem: &dyn BilevelProblem) -> Result<(ResolvedStep, ResolvedStep)> {
        let (sx, sy) = self.schedules(problem);
        let c = problem.constants();
        let x = sx.resolve(c, self.k, self.t).map_err(|e| e.context("schedule_x"))?;
        let y = sy.resolve(c, self.k, self.t).map_err(|e| e.context("schedule_y"))?;
        Ok((x, y))
    }

    pub fn initial_pair(&self, problem: &dyn BilevelProblem) -> Result<ParameterPair> {
        let (d1, d2) = problem.dims();
        match &self.init {
            None => Ok(ParameterPair::zeros(d1, d2)),
            Some(p) => {
                if p.x.len() != d1 {
                    return Err(Error::DimensionMismatch {
                        what: "init.x",
                        expected: d1,
                        got: p.x.len(),
                    });
                }
                if p.y.len() != d2 {
                    return Err(Error::DimensionMismatch {
                        what: "init.y",
                        expected: d2,
                        got: p.y.len(),
                    });
                }
                ParameterPair::new(p.x.clone(), p.y.clone())
            }
        }
    }

    /// Checks the configuration against a problem without running anything.
    pub fn validate(&self, problem: &dyn BilevelProblem) -> Result<()> {
        if self.algorithm != Algorithm::Ssgd && self.t < 1 {
            return Err(Error::invalid("t", "TSGD and UD need at least one inner step"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        let init = self.initial_pair(problem)?;
        if init.norm() > problem.region_radius() {
            return Err(Error::invalid(
                "init",
                format!(
                    "norm {} lies outside the operating region of radius {}",
                    init.norm(),
                    problem.region_radius()
                ),
            ));
        }
        if self.k > 0 {
            self.resolve_steps(problem)?;
        }
        Ok(())
    }
}
