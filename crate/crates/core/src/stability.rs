//! On-average argument stability by coupled runs on neighbouring validation
//! sets.
//!
//! Trial `r` derives every stream from `base.fork_indexed("trial", r)`:
//! `data` draws `D_m1`, `D_m2` and the replacement set, `perturb` picks the
//! replaced indices and `solver` drives the algorithm. With shared coupling
//! the perturbed runs reuse the `solver` stream verbatim.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{BilevelProblem, Population};
use crate::rng::RandomStream;
use crate::solvers::{self, SolverConfig};
use crate::stats::{Estimate, Moments};
use crate::types::{joint_norm, Dataset, TrajectoryRecord};

/// Default cap on replaced indices per trial.
pub const DEFAULT_MAX_PERTURB: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Both runs consume the same solver stream.
    #[default]
    Shared,
    /// Each perturbed run gets its own solver stream.
    Independent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    L1,
    L2,
    #[default]
    Both,
}

fn default_trials() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityProtocol {
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// `None` means `min(m1, 16)`.
    #[serde(default)]
    pub n_perturb: Option<usize>,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default)]
    pub which: Which,
    /// Replace each sample with itself; every distance must then be zero.
    #[serde(default)]
    pub identical_replacement: bool,
}

impl Default for StabilityProtocol {
    fn default() -> Self {
        Self {
            trials: 1,
            n_perturb: None,
            coupling: Coupling::Shared,
            which: Which::Both,
            identical_replacement: false,
        }
    }
}

impl StabilityProtocol {
    pub fn with_trials(trials: usize) -> Self {
        Self {
            trials,
            ..Self::default()
        }
    }

    pub fn perturb_count(&self, m1: usize) -> usize {
        self.n_perturb.unwrap_or(m1.min(DEFAULT_MAX_PERTURB))
    }

    pub fn validate(&self, m1: usize) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::invalid("trials", "need at least one trial"));
        }
        let n = self.perturb_count(m1);
        if n < 1 || n > m1 {
            return Err(Error::invalid(
                "n_perturb",
                format!("must lie in [1, m1 = {m1}], got {n}"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexDistance {
    pub trial: usize,
    pub index: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Mean over replaced indices, then over trials, of the output distance.
    pub beta_l1: Estimate,
    /// Same for the squared distance.
    pub beta_sq_l2: Estimate,
    pub per_index: Vec<IndexDistance>,
    /// Largest single distance seen; a diagnostic only.
    pub sup_distance: f64,
    pub trials: usize,
    pub n_perturb: usize,
    pub m1: usize,
    pub m2: usize,
    /// Trial-averaged risk path of the unperturbed runs; empty when risk
    /// recording is off.
    pub mean_risk_path: Vec<f64>,
}

/// Everything one trial produced.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub trial: usize,
    pub d_val: Dataset,
    pub d_train: Dataset,
    pub base: TrajectoryRecord,
    /// `(replaced index, distance)` in draw order.
    pub distances: Vec<(usize, f64)>,
}

/// Streams for trial `r`.
pub struct TrialStreams {
    pub data: RandomStream,
    pub perturb: RandomStream,
    pub solver: RandomStream,
    pub population: RandomStream,
    root: RandomStream,
}

impl TrialStreams {
    pub fn new(base: &RandomStream, r: usize) -> Self {
        let root = base.fork_indexed("trial", r as u64);
        Self {
            data: root.fork("data"),
            perturb: root.fork("perturb"),
            solver: root.fork("solver"),
            population: root.fork("population"),
            root,
        }
    }

    fn independent_solver(&self, i: usize) -> RandomStream {
        self.root.fork_indexed("solver-perturbed", i as u64)
    }
}

/// Draws the trial's datasets and runs the unperturbed algorithm.
pub fn run_base(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    cfg: &SolverConfig,
    m1: usize,
    m2: usize,
    streams: &mut TrialStreams,
) -> Result<(Dataset, Dataset, TrajectoryRecord)> {
    let d_val = population.draw_outer(m1, &mut streams.data);
    let d_train = population.draw_inner(m2, &mut streams.data);
    let base = solvers::run(problem, &d_val, &d_train, cfg, &mut streams.solver.clone())?;
    Ok((d_val, d_train, base))
}

/// One trial: base run plus one coupled run per replaced index.
pub fn run_trial(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    cfg: &SolverConfig,
    proto: &StabilityProtocol,
    m1: usize,
    m2: usize,
    base_stream: &RandomStream,
    r: usize,
) -> Result<TrialOutcome> {
    let mut streams = TrialStreams::new(base_stream, r);
    let (d_val, d_train, base) = run_base(problem, population, cfg, m1, m2, &mut streams)?;
    let replacements = population.draw_outer(m1, &mut streams.data);
    let indices = streams.perturb.choose_distinct(m1, proto.perturb_count(m1));

    let mut quiet = cfg.clone();
    quiet.record_risk = false;
    quiet.checkpoint_every = 0;
    let distances = indices
        .par_iter()
        .map(|&i| -> Result<(usize, f64)> {
            let sample = if proto.identical_replacement {
                d_val[i].clone()
            } else {
                replacements[i].clone()
            };
            let neighbour = d_val.replace(i, sample)?;
            let mut solver = match proto.coupling {
                Coupling::Shared => streams.solver.clone(),
                Coupling::Independent => streams.independent_solver(i),
            };
            let out = solvers::run(problem, &neighbour, &d_train, &quiet, &mut solver)
                .map_err(|e| e.context(format!("trial {r}, replaced index {i}")))?;
            Ok((i, joint_norm(&base.final_pair, &out.final_pair)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialOutcome {
        trial: r,
        d_val,
        d_train,
        base,
        distances,
    })
}

/// Element-wise mean of equally long paths.
pub(crate) fn mean_path<'a>(paths: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc: Vec<Moments> = Vec::new();
    for p in paths {
        if acc.is_empty() {
            acc = vec![Moments::new(); p.len()];
        }
        acc.iter_mut().zip(p).for_each(|(m, v)| m.push(*v));
    }
    acc.iter().map(|m| m.mean()).collect()
}

/// Aggregates finished trials into a report (fixed trial order).
pub fn summarize(outcomes: &[TrialOutcome], m1: usize, m2: usize, n_perturb: usize) -> StabilityReport {
    let mut l1 = Moments::new();
    let mut l2 = Moments::new();
    let mut per_index = Vec::new();
    let mut sup = 0.0f64;
    for o in outcomes {
        let a: Moments = o.distances.iter().map(|(_, d)| *d).collect();
        let b: Moments = o.distances.iter().map(|(_, d)| d * d).collect();
        l1.push(a.mean());
        l2.push(b.mean());
        for &(index, distance) in &o.distances {
            sup = sup.max(distance);
            per_index.push(IndexDistance {
                trial: o.trial,
                index,
                distance,
            });
        }
    }
    StabilityReport {
        beta_l1: l1.estimate(),
        beta_sq_l2: l2.estimate(),
        per_index,
        sup_distance: sup,
        trials: outcomes.len(),
        n_perturb,
        m1,
        m2,
        mean_risk_path: mean_path(outcomes.iter().map(|o| o.base.risk_path.as_slice())),
    }
}

/// Runs every trial; results are ordered by trial index.
pub fn run_trials(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    cfg: &SolverConfig,
    proto: &StabilityProtocol,
    m1: usize,
    m2: usize,
    stream: &RandomStream,
) -> Result<Vec<TrialOutcome>> {
    proto.validate(m1)?;
    if m2 < 1 {
        return Err(Error::invalid("m2", "training set must be nonempty"));
    }
    (0..proto.trials)
        .into_par_iter()
        .map(|r| {
            run_trial(problem, population, cfg, proto, m1, m2, stream, r)
                .map_err(|e| match e {
                    Error::Context { .. } => e,
                    other => other.context(format!("trial {r}")),
                })
        })
        .collect()
}

pub fn estimate_stability(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    cfg: &SolverConfig,
    proto: &StabilityProtocol,
    m1: usize,
    m2: usize,
    stream: &RandomStream,
) -> Result<StabilityReport> {
    let outcomes = run_trials(problem, population, cfg, proto, m1, m2, stream)?;
    Ok(summarize(&outcomes, m1, m2, proto.perturb_count(m1)))
}

/// One `(K, T)` grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationPoint {
    pub k: usize,
    pub t: usize,
}

/// One stability estimate per grid point. Every point reuses `stream`, so
/// the grid is evaluated with common random numbers.
pub fn stability_vs_iterations(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    base_cfg: &SolverConfig,
    proto: &StabilityProtocol,
    grid: &[IterationPoint],
    m1: usize,
    m2: usize,
    stream: &RandomStream,
) -> Result<Vec<(IterationPoint, StabilityReport)>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "need at least one grid point"));
    }
    grid.iter()
        .map(|&point| {
            let mut cfg = base_cfg.clone();
            cfg.k = point.k;
            cfg.t = point.t;
            let report = estimate_stability(problem, population, &cfg, proto, m1, m2, stream)
                .map_err(|e| e.context(format!("grid point K={}, T={}", point.k, point.t)))?;
            Ok((point, report))
        })
        .collect()
}
