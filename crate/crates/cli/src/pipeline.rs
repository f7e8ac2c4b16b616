//! The `run` and `validate` pipelines.
//!
//! Streams: the problem is built from `root.fork("problem")` and every grid
//! point reuses `root.fork("experiment")`, so neighbouring grid points share
//! their datasets and index sequences.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use bilevel_stability::analysis::{
    beta_theorem2, beta_theorem3, bound_theorem1_l1, bound_theorem1_l2, gap_from_outcomes, BoundInputs,
    BoundRecord, GapReport, StabilityNorm,
};
use bilevel_stability::problems::{BilevelProblem, ProblemInstance, Regime};
use bilevel_stability::solvers::{scsc_stepsize_window, Algorithm, SolverConfig, StepSchedule};
use bilevel_stability::stability::{run_base, run_trials, summarize, StabilityReport, TrialOutcome, TrialStreams};
use bilevel_stability::stats::Moments;
use bilevel_stability::{Error, RandomStream};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, ExperimentConfig, GridPoint, LoadedConfig};

/// Column set of `results.csv`, in order.
pub const COLUMNS: &[&str] = &[
    "grid_index",
    "trial",
    "problem",
    "algorithm",
    "m1",
    "m2",
    "k",
    "t",
    "beta_l1",
    "beta_l1_se",
    "beta_sq_l2",
    "beta_sq_l2_se",
    "trial_beta_l1",
    "trial_beta_sq_l2",
    "empirical_risk",
    "population_risk",
    "population_risk_se",
    "gap",
    "gap_se",
    "trial_gap",
    "gen_bound_l1",
    "gen_bound_l1_se",
    "gen_bound_l2",
    "beta_bound_l1",
    "beta_bound_l2",
    "error",
    "wall_time_ms",
];

/// Columns that vary between identical runs.
pub const TIMING_COLUMNS: &[&str] = &["wall_time_ms"];

fn core_to_config(loaded: &LoadedConfig, err: &Error, fallback: &str) -> ConfigError {
    let mut e = err;
    let mut prefix = Vec::new();
    while let Error::Context { context, source } = e {
        prefix.push(context.clone());
        e = source;
    }
    let key = match e {
        Error::InvalidParameter { name, .. } => name.to_string(),
        Error::DimensionMismatch { what, .. } => what.split('.').next().unwrap_or(what).to_string(),
        _ => fallback.to_string(),
    };
    let message = match e {
        Error::InfeasibleWindow { .. } => format!("{err} (SSGD strongly convex step-size window)"),
        _ => err.to_string(),
    };
    let mut anchored = loaded.error_at(&key, message.clone());
    if anchored.line.is_none() {
        for k in prefix.iter().map(String::as_str).chain([fallback, "solver", "problem"]) {
            anchored = loaded.error_at(k, message.clone());
            if anchored.line.is_some() {
                break;
            }
        }
    }
    anchored
}

fn build_problem(config: &ExperimentConfig) -> bilevel_stability::Result<ProblemInstance> {
    let root = RandomStream::new(config.seed);
    config.problem.build(&mut root.fork("problem"))
}

fn point_config(base: &SolverConfig, p: &GridPoint) -> SolverConfig {
    let mut cfg = base.clone();
    cfg.k = p.k;
    cfg.t = p.t;
    cfg
}

/// Checks everything that can be checked without running a solver and
/// returns the built problem together with a human-readable summary.
pub fn validate(loaded: &LoadedConfig) -> Result<(ProblemInstance, String), ConfigError> {
    let config = &loaded.config;
    let instance = build_problem(config).map_err(|e| core_to_config(loaded, &e, "problem"))?;
    let problem = instance.problem.as_ref();
    let c = problem.constants();
    let mut out = String::new();
    let (d1, d2) = problem.dims();
    let _ = writeln!(
        out,
        "problem: {} (d1 = {d1}, d2 = {d2}, regime {}, region radius {})",
        problem.name(),
        problem.regime(),
        problem.region_radius()
    );
    let _ = writeln!(
        out,
        "constants: L_f = {}, L_g = {}, ell_f = {}, ell_g = {}, mu_f = {}, mu_g = {}",
        c.lip_f, c.lip_g, c.smooth_f, c.smooth_g, c.mu_f, c.mu_g
    );

    if problem.regime() == Regime::StronglyConvex && config.solver.algorithm == Algorithm::Ssgd {
        let uses_window = matches!(config.solver.schedules(problem), (StepSchedule::ScscWindow { .. }, _) | (_, StepSchedule::ScscWindow { .. }));
        match scsc_stepsize_window(c.mu_f, c.mu_g, c.smooth_f, c.smooth_g) {
            Ok(w) => {
                let _ = writeln!(out, "step-size window: [{}, {}]", w.lo, w.hi);
            }
            Err(e) if uses_window || config.bounds.c.is_none() => {
                return Err(core_to_config(loaded, &e, "schedule_x"));
            }
            Err(e) => {
                let _ = writeln!(out, "warning: {e}; explicit schedules and C are used");
            }
        }
    }

    let (sx, sy) = config.solver.schedules(problem);
    let _ = writeln!(out, "schedule_x: {sx:?}");
    let _ = writeln!(out, "schedule_y: {sy:?}");
    let mut seen = Vec::new();
    for p in config.grid() {
        if seen.contains(&(p.k, p.t)) {
            continue;
        }
        seen.push((p.k, p.t));
        let cfg = point_config(&config.solver, &p);
        cfg.validate(problem).map_err(|e| core_to_config(loaded, &e, "solver"))?;
        if p.k > 0 {
            let (x, y) = cfg.resolve_steps(problem).map_err(|e| core_to_config(loaded, &e, "solver"))?;
            let _ = writeln!(
                out,
                "K = {}, T = {}: eta_x(0) = {}, eta_y(0, 0) = {} ({x:?}, {y:?})",
                p.k,
                p.t,
                x.at(0, 0),
                y.at(0, 0)
            );
        }
    }
    let proto = &config.stability.protocol;
    for &m1 in &config.sweep.m1 {
        proto.validate(m1).map_err(|e| core_to_config(loaded, &e, "stability"))?;
    }
    let _ = writeln!(
        out,
        "stability: {} trials, coupling {:?}, n_perturb {}",
        proto.trials,
        proto.coupling,
        match proto.n_perturb {
            Some(n) => n.to_string(),
            None => "min(m1, 16)".to_string(),
        }
    );
    let _ = writeln!(out, "grid points: {}", config.grid().len());
    Ok((instance, out))
}

/// One `results.csv` row before formatting.
#[derive(Clone, Debug, Default)]
pub struct Row {
    pub grid_index: usize,
    pub trial: usize,
    pub problem: String,
    pub algorithm: String,
    pub point: Option<GridPoint>,
    pub beta_l1: Option<f64>,
    pub beta_l1_se: Option<f64>,
    pub beta_sq_l2: Option<f64>,
    pub beta_sq_l2_se: Option<f64>,
    pub trial_beta_l1: Option<f64>,
    pub trial_beta_sq_l2: Option<f64>,
    pub empirical_risk: Option<f64>,
    pub population_risk: Option<f64>,
    pub population_risk_se: Option<f64>,
    pub gap: Option<f64>,
    pub gap_se: Option<f64>,
    pub trial_gap: Option<f64>,
    pub gen_bound_l1: Option<f64>,
    pub gen_bound_l1_se: Option<f64>,
    pub gen_bound_l2: Option<f64>,
    pub beta_bound_l1: Option<f64>,
    pub beta_bound_l2: Option<f64>,
    pub errors: Vec<String>,
    pub wall_time_ms: u128,
}

/// 17 significant digits; empty for absent or non-finite values.
fn num(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.16e}"),
        _ => String::new(),
    }
}

impl Row {
    fn record(&self) -> Vec<String> {
        let p = self.point.unwrap_or(GridPoint { m1: 0, m2: 0, k: 0, t: 0 });
        let mut errors = self.errors.clone();
        let numeric = [
            ("beta_l1", self.beta_l1),
            ("beta_l1_se", self.beta_l1_se),
            ("beta_sq_l2", self.beta_sq_l2),
            ("beta_sq_l2_se", self.beta_sq_l2_se),
            ("trial_beta_l1", self.trial_beta_l1),
            ("trial_beta_sq_l2", self.trial_beta_sq_l2),
            ("empirical_risk", self.empirical_risk),
            ("population_risk", self.population_risk),
            ("population_risk_se", self.population_risk_se),
            ("gap", self.gap),
            ("gap_se", self.gap_se),
            ("trial_gap", self.trial_gap),
            ("gen_bound_l1", self.gen_bound_l1),
            ("gen_bound_l1_se", self.gen_bound_l1_se),
            ("gen_bound_l2", self.gen_bound_l2),
            ("beta_bound_l1", self.beta_bound_l1),
            ("beta_bound_l2", self.beta_bound_l2),
        ];
        for (name, v) in numeric {
            if let Some(v) = v {
                if !v.is_finite() {
                    errors.push(format!("{name}: non-finite value {v}"));
                }
            }
        }
        let mut rec = vec![
            self.grid_index.to_string(),
            self.trial.to_string(),
            self.problem.clone(),
            self.algorithm.clone(),
            p.m1.to_string(),
            p.m2.to_string(),
            p.k.to_string(),
            p.t.to_string(),
        ];
        rec.extend(numeric.iter().map(|(_, v)| num(*v)));
        rec.push(errors.join("; "));
        rec.push(self.wall_time_ms.to_string());
        rec
    }
}

/// Everything computed at one grid point.
#[derive(Serialize)]
struct PointSummary {
    grid_index: usize,
    point: GridPoint,
    stability: Option<StabilityReport>,
    gap: Option<GapReport>,
    bounds: Vec<BoundRecord>,
    errors: Vec<String>,
}

pub struct RunOutput {
    pub rows: Vec<Row>,
    pub manifest: Value,
    pub stability: Value,
}

fn mean_path(outcomes: &[TrialOutcome]) -> Vec<f64> {
    let len = outcomes.first().map_or(0, |o| o.base.risk_path.len());
    (0..len)
        .map(|j| outcomes.iter().map(|o| o.base.risk_path[j]).collect::<Moments>().mean())
        .collect()
}

fn base_outcomes(
    instance: &ProblemInstance,
    cfg: &SolverConfig,
    p: &GridPoint,
    trials: usize,
    stream: &RandomStream,
) -> bilevel_stability::Result<Vec<TrialOutcome>> {
    use rayon::prelude::*;
    (0..trials)
        .into_par_iter()
        .map(|r| {
            let mut streams = TrialStreams::new(stream, r);
            let (d_val, d_train, base) =
                run_base(instance.problem.as_ref(), instance.population.as_ref(), cfg, p.m1, p.m2, &mut streams)
                    .map_err(|e| e.context(format!("trial {r}")))?;
            Ok(TrialOutcome {
                trial: r,
                d_val,
                d_train,
                base,
                distances: Vec::new(),
            })
        })
        .collect()
}

fn short_error(e: &Error) -> String {
    match e {
        Error::Overflow { .. } => "overflow".to_string(),
        Error::InfeasibleWindow { .. } => "infeasible window".to_string(),
        other => other.to_string(),
    }
}

/// Theoretical stability bounds at one grid point.
fn beta_bounds(
    config: &ExperimentConfig,
    problem: &dyn BilevelProblem,
    p: &GridPoint,
    risk_path: &[f64],
    records: &mut Vec<BoundRecord>,
    errors: &mut Vec<String>,
) -> (Option<f64>, Option<f64>) {
    let regime = problem.regime();
    let (name, eval): (&str, fn(Regime, StabilityNorm, &BoundInputs) -> bilevel_stability::Result<f64>) =
        match (config.solver.algorithm, regime) {
            (Algorithm::Ssgd, Regime::Nonconvex) => {
                errors.push("beta_bound: not available for SSGD in the nc-nc regime".into());
                return (None, None);
            }
            (Algorithm::Ssgd, _) => ("ssgd", beta_theorem2),
            (Algorithm::Tsgd, _) => ("tsgd", beta_theorem3),
            (Algorithm::Ud, _) => {
                errors.push("beta_bound: not available for UD".into());
                return (None, None);
            }
        };
    if risk_path.len() != p.k || p.k == 0 {
        errors.push("beta_bound: needs a recorded risk path with K >= 1".into());
        return (None, None);
    }
    let mut inputs = BoundInputs::new(problem.constants().clone(), risk_path.to_vec(), p.t, p.m1);
    inputs.free = config.bounds.free;
    inputs.c = config.bounds.c;
    inputs.c_1 = config.bounds.c_1;
    inputs.gamma = config.bounds.gamma;
    let mut eval_norm = |norm: StabilityNorm| match eval(regime, norm, &inputs) {
        Ok(v) => {
            records.push(BoundRecord::new(name, regime, norm, &inputs, v));
            Some(v)
        }
        Err(e) => {
            errors.push(format!("beta_bound_{}: {}", norm.as_str(), short_error(&e)));
            None
        }
    };
    let l1 = eval_norm(StabilityNorm::L1);
    let l2 = eval_norm(StabilityNorm::L2);
    (l1, l2)
}

fn run_point(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
    grid_index: usize,
    p: &GridPoint,
    stream: &RandomStream,
) -> (Vec<Row>, PointSummary) {
    let start = Instant::now();
    let problem = instance.problem.as_ref();
    let population = instance.population.as_ref();
    let cfg = point_config(&config.solver, p);
    let proto = &config.stability.protocol;
    let template = Row {
        grid_index,
        problem: problem.name().to_string(),
        algorithm: cfg.algorithm.to_string(),
        point: Some(*p),
        ..Row::default()
    };
    let mut summary = PointSummary {
        grid_index,
        point: *p,
        stability: None,
        gap: None,
        bounds: Vec::new(),
        errors: Vec::new(),
    };

    let outcomes = if config.stability.enabled {
        run_trials(problem, population, &cfg, proto, p.m1, p.m2, stream)
    } else {
        base_outcomes(instance, &cfg, p, proto.trials, stream)
    };
    let outcomes = match outcomes {
        Ok(o) => o,
        Err(e) => {
            let msg = format!("run: {e}");
            summary.errors.push(msg.clone());
            let ms = start.elapsed().as_millis();
            let rows = (0..proto.trials)
                .map(|trial| Row {
                    trial,
                    errors: vec![msg.clone()],
                    wall_time_ms: ms,
                    ..template.clone()
                })
                .collect();
            return (rows, summary);
        }
    };

    let mut errors = Vec::new();
    let stab = if config.stability.enabled {
        Some(summarize(&outcomes, p.m1, p.m2, proto.perturb_count(p.m1)))
    } else {
        errors.push("stability: disabled".to_string());
        None
    };
    let gap = if config.gap.enabled {
        match gap_from_outcomes(problem, population, &outcomes, config.gap.n_mc, stream) {
            Ok(g) => Some(g),
            Err(e) => {
                errors.push(format!("gap: {e}"));
                None
            }
        }
    } else {
        errors.push("gap: disabled".to_string());
        None
    };

    let c = problem.constants();
    let (gen_l1, gen_l1_se, gen_l2) = match &stab {
        Some(s) => {
            let l1 = bound_theorem1_l1(c.lip_f, s.beta_l1.value).ok();
            let l1_se = Some(c.lip_f * s.beta_l1.std_error);
            let l2 = match &gap {
                Some(g) => match bound_theorem1_l2(c.smooth_f, s.beta_sq_l2.value, g.empirical_risk.value, config.bounds.gamma) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        errors.push(format!("gen_bound_l2: {e}"));
                        None
                    }
                },
                None => None,
            };
            (l1, l1_se, l2)
        }
        None => (None, None, None),
    };

    let risk_path = mean_path(&outcomes);
    let (bb_l1, bb_l2) = beta_bounds(config, problem, p, &risk_path, &mut summary.bounds, &mut errors);

    let ms = start.elapsed().as_millis();
    let rows = outcomes
        .iter()
        .map(|o| {
            let (tb1, tb2) = if config.stability.enabled && !o.distances.is_empty() {
                let a: Moments = o.distances.iter().map(|(_, d)| *d).collect();
                let b: Moments = o.distances.iter().map(|(_, d)| d * d).collect();
                (Some(a.mean()), Some(b.mean()))
            } else {
                (None, None)
            };
            let tg = gap.as_ref().map(|g| g.per_trial[o.trial].gap());
            Row {
                trial: o.trial,
                beta_l1: stab.as_ref().map(|s| s.beta_l1.value),
                beta_l1_se: stab.as_ref().map(|s| s.beta_l1.std_error),
                beta_sq_l2: stab.as_ref().map(|s| s.beta_sq_l2.value),
                beta_sq_l2_se: stab.as_ref().map(|s| s.beta_sq_l2.std_error),
                trial_beta_l1: tb1,
                trial_beta_sq_l2: tb2,
                empirical_risk: gap.as_ref().map(|g| g.empirical_risk.value),
                population_risk: gap.as_ref().map(|g| g.population_risk.value),
                population_risk_se: gap.as_ref().map(|g| g.population_risk.std_error),
                gap: gap.as_ref().map(|g| g.gap.value),
                gap_se: gap.as_ref().map(|g| g.gap.std_error),
                trial_gap: tg,
                gen_bound_l1: gen_l1,
                gen_bound_l1_se: gen_l1_se,
                gen_bound_l2: gen_l2,
                beta_bound_l1: bb_l1,
                beta_bound_l2: bb_l2,
                errors: errors.clone(),
                wall_time_ms: ms,
                ..template.clone()
            }
        })
        .collect();
    summary.stability = stab;
    summary.gap = gap;
    summary.errors = errors;
    (rows, summary)
}

fn manifest(config: &ExperimentConfig, instance: &ProblemInstance) -> Value {
    let problem = instance.problem.as_ref();
    let mut resolved = config.clone();
    let (sx, sy) = config.solver.schedules(problem);
    resolved.solver.schedule_x = Some(sx);
    resolved.solver.schedule_y = Some(sy);
    if resolved.sweep.k.is_none() {
        resolved.sweep.k = Some(vec![config.solver.k]);
    }
    if resolved.sweep.t.is_none() {
        resolved.sweep.t = Some(vec![config.solver.t]);
    }
    let proto = &config.stability.protocol;
    let n_perturb: Vec<Value> = config
        .sweep
        .m1
        .iter()
        .map(|&m1| json!({ "m1": m1, "n_perturb": proto.perturb_count(m1), "subsampled": proto.perturb_count(m1) < m1 }))
        .collect();
    let (d1, d2) = problem.dims();
    json!({
        "versions": {
            "bsl": env!("CARGO_PKG_VERSION"),
            "bilevel_stability": bilevel_stability::VERSION,
        },
        "seed": config.seed,
        "streams": {
            "problem": "root.fork(\"problem\")",
            "experiment": "root.fork(\"experiment\"), shared by every grid point",
        },
        "config": resolved,
        "problem": {
            "name": problem.name(),
            "d1": d1,
            "d2": d2,
            "regime": problem.regime(),
            "region_radius": problem.region_radius(),
            "constants": problem.constants(),
        },
        "stability": {
            "coupling": proto.coupling,
            "which": proto.which,
            "identical_replacement": proto.identical_replacement,
            "n_perturb_policy": if proto.n_perturb.is_some() { "explicit" } else { "default: min(m1, 16) uniformly chosen indices" },
            "n_perturb": n_perturb,
        },
        "bounds": {
            "free_constants": config.bounds.free,
            "c": config.bounds.c.map_or(json!("window upper end"), |v| json!(v)),
            "c_1": config.bounds.c_1.map_or(json!("window upper end"), |v| json!(v)),
            "gamma_policy": config.bounds.gamma.map_or(json!("minimizing"), |v| json!(v)),
            "risk_path": "trial mean of the empirical outer risk after each outer update",
        },
        "columns": COLUMNS,
        "grid": config.grid(),
    })
}

/// Runs every grid point in order.
pub fn run(config: &ExperimentConfig, instance: &ProblemInstance) -> RunOutput {
    let root = RandomStream::new(config.seed);
    let stream = root.fork("experiment");
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (i, p) in config.grid().iter().enumerate() {
        let (r, s) = run_point(config, instance, i, p, &stream);
        rows.extend(r);
        points.push(s);
    }
    RunOutput {
        rows,
        manifest: manifest(config, instance),
        stability: serde_json::to_value(&points).unwrap_or(Value::Null),
    }
}

pub fn write_results(path: &Path, rows: &[Row]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, v: &Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_carry_seventeen_digits() {
        assert_eq!(num(Some(0.1)), "1.0000000000000001e-1");
        assert_eq!(num(Some(f64::NAN)), "");
        assert_eq!(num(None), "");
    }

    #[test]
    fn non_finite_cells_are_tagged() {
        let row = Row {
            beta_l1: Some(f64::INFINITY),
            ..Row::default()
        };
        let rec = row.record();
        assert_eq!(rec.len(), COLUMNS.len());
        assert!(rec[COLUMNS.len() - 2].contains("beta_l1"));
    }
}
