use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{empirical_outer_risk, population_outer_risk, BilevelProblem, Population};
use crate::rng::RandomStream;
use crate::solvers::SolverConfig;
use crate::stability::{run_base, TrialOutcome, TrialStreams};
use crate::stats::{Estimate, Moments};
use crate::types::{Dataset, ParameterPair};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialGap {
    pub empirical: f64,
    pub population: f64,
    /// Monte-Carlo error of `population`; zero with an exact oracle.
    pub population_std_error: f64,
}

impl TrialGap {
    pub fn gap(&self) -> f64 {
        self.population - self.empirical
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub empirical_risk: Estimate,
    pub population_risk: Estimate,
    /// `population_risk.value − empirical_risk.value`; the error combines the
    /// spread of per-trial gaps with the Monte-Carlo error of each trial.
    pub gap: Estimate,
    pub n_trials: usize,
    pub per_trial: Vec<TrialGap>,
}

impl GapReport {
    pub fn from_trials(per_trial: Vec<TrialGap>) -> Self {
        let emp: Moments = per_trial.iter().map(|t| t.empirical).collect();
        let pop: Moments = per_trial.iter().map(|t| t.population).collect();
        let gaps: Moments = per_trial.iter().map(|t| t.gap()).collect();
        let n = per_trial.len() as f64;
        let mc_var = per_trial
            .iter()
            .map(|t| t.population_std_error * t.population_std_error)
            .sum::<f64>()
            / (n * n);
        let empirical_risk = emp.estimate();
        let population_risk = Estimate {
            value: pop.mean(),
            std_error: (pop.std_error().powi(2) + mc_var).sqrt(),
        };
        GapReport {
            gap: Estimate {
                value: population_risk.value - empirical_risk.value,
                std_error: (gaps.std_error().powi(2) + mc_var).sqrt(),
            },
            empirical_risk,
            population_risk,
            n_trials: per_trial.len(),
            per_trial,
        }
    }

    /// Plug-in `E[R^p]` over trials with `p = 2α/(1+α)`.
    pub fn population_power_term(&self, alpha: f64) -> f64 {
        let p = 2.0 * alpha / (1.0 + alpha);
        let m: Moments = self.per_trial.iter().map(|t| t.population.max(0.0).powf(p)).collect();
        m.mean()
    }
}

/// Empirical and population risk of one output.
pub fn trial_gap(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    d_val: &Dataset,
    w: &ParameterPair,
    n_mc: usize,
    stream: &mut RandomStream,
) -> Result<TrialGap> {
    let empirical = empirical_outer_risk(problem, d_val, w)?;
    let pop = population_outer_risk(problem, population, w, n_mc, stream)?;
    Ok(TrialGap {
        empirical,
        population: pop.value,
        population_std_error: pop.std_error,
    })
}

/// Gap of trials already run by the stability estimator, so both share the
/// same base runs. `stream` must be the stream the trials were run with.
pub fn gap_from_outcomes(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    outcomes: &[TrialOutcome],
    n_mc: usize,
    stream: &RandomStream,
) -> Result<GapReport> {
    if outcomes.is_empty() {
        return Err(Error::invalid("n_trials", "need at least one trial"));
    }
    let per_trial = outcomes
        .par_iter()
        .map(|o| {
            let mut s = TrialStreams::new(stream, o.trial).population;
            trial_gap(problem, population, &o.d_val, &o.base.final_pair, n_mc, &mut s)
                .map_err(|e| e.context(format!("trial {}", o.trial)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GapReport::from_trials(per_trial))
}

pub fn estimate_gap(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    cfg: &SolverConfig,
    m1: usize,
    m2: usize,
    n_trials: usize,
    n_mc: usize,
    stream: &RandomStream,
) -> Result<GapReport> {
    if n_trials < 1 {
        return Err(Error::invalid("n_trials", "need at least one trial"));
    }
    let per_trial = (0..n_trials)
        .into_par_iter()
        .map(|r| {
            let mut streams = TrialStreams::new(stream, r);
            let (d_val, _, base) = run_base(problem, population, cfg, m1, m2, &mut streams)
                .map_err(|e| e.context(format!("trial {r}")))?;
            trial_gap(problem, population, &d_val, &base.final_pair, n_mc, &mut streams.population)
                .map_err(|e| e.context(format!("trial {r}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GapReport::from_trials(per_trial))
}
