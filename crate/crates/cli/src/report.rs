//! Summaries of a finished run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use bilevel_stability::stats::log_log_slope;
use serde::Deserialize;

use crate::config::ReportBlock;

#[derive(Clone, Debug, Deserialize)]
pub struct ResultRow {
    pub grid_index: usize,
    #[serde(default)]
    pub trial: usize,
    #[serde(default)]
    pub algorithm: String,
    pub m1: usize,
    pub m2: usize,
    pub k: usize,
    pub t: usize,
    pub beta_l1: Option<f64>,
    #[serde(default)]
    pub beta_l1_se: Option<f64>,
    #[serde(default)]
    pub beta_sq_l2: Option<f64>,
    #[serde(default)]
    pub beta_sq_l2_se: Option<f64>,
    #[serde(default)]
    pub empirical_risk: Option<f64>,
    #[serde(default)]
    pub population_risk: Option<f64>,
    #[serde(default)]
    pub gap: Option<f64>,
    #[serde(default)]
    pub gap_se: Option<f64>,
    #[serde(default)]
    pub gen_bound_l1: Option<f64>,
    #[serde(default)]
    pub gen_bound_l1_se: Option<f64>,
    #[serde(default)]
    pub gen_bound_l2: Option<f64>,
    #[serde(default)]
    pub beta_bound_l1: Option<f64>,
    #[serde(default)]
    pub beta_bound_l2: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

pub fn read_results(path: &Path) -> anyhow::Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let rows = reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{}: corrupt data row {}", path.display(), i + 1)))
        .collect::<anyhow::Result<Vec<ResultRow>>>()?;
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(rows)
}

/// Per-grid aggregates are repeated on every trial row; keep the first row of
/// each grid point.
pub fn grid_points(rows: &[ResultRow]) -> Vec<&ResultRow> {
    let mut seen = BTreeMap::new();
    for r in rows {
        seen.entry(r.grid_index).or_insert(r);
    }
    seen.into_values().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slope {
    /// Values of the other grid coordinates held fixed.
    pub fixed: String,
    pub slope: f64,
    pub points: usize,
}

fn slopes(
    points: &[&ResultRow],
    key: impl Fn(&ResultRow) -> (String, f64),
) -> Vec<Slope> {
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        if let Some(b) = p.beta_l1.filter(|b| *b > 0.0) {
            let (fixed, x) = key(p);
            groups.entry(fixed).or_default().push((x, b));
        }
    }
    groups
        .into_iter()
        .filter_map(|(fixed, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts.dedup_by(|a, b| a.0 == b.0);
            if pts.len() < 2 {
                return None;
            }
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            log_log_slope(&xs, &ys).map(|slope| Slope {
                fixed,
                slope,
                points: pts.len(),
            })
        })
        .collect()
}

/// Slopes of `ln β_l1` against `ln m1`, one per `(m2, K, T)` group.
pub fn slopes_vs_m1(points: &[&ResultRow]) -> Vec<Slope> {
    slopes(points, |r| (format!("m2={} K={} T={}", r.m2, r.k, r.t), r.m1 as f64))
}

/// Slopes of `ln β_l1` against `ln K`, one per `(m1, m2, T)` group.
pub fn slopes_vs_k(points: &[&ResultRow]) -> Vec<Slope> {
    slopes(points, |r| (format!("m1={} m2={} T={}", r.m1, r.m2, r.t), r.k as f64))
}

/// Grid points with both a gap and an l1 generalization bound, and whether
/// `|gap| ≤ bound + sigmas · combined standard error` holds at each.
pub fn gap_checks(points: &[&ResultRow], sigmas: f64) -> Vec<(usize, bool)> {
    points
        .iter()
        .filter_map(|p| {
            let gap = p.gap?;
            let bound = p.gen_bound_l1?;
            let se = (p.gap_se.unwrap_or(0.0).powi(2) + p.gen_bound_l1_se.unwrap_or(0.0).powi(2)).sqrt();
            Some((p.grid_index, gap.abs() <= bound + sigmas * se))
        })
        .collect()
}

pub fn summarize(rows: &[ResultRow], tol: &ReportBlock) -> String {
    let points = grid_points(rows);
    let mut out = String::new();
    let tagged = rows.iter().filter(|r| r.error.as_deref().is_some_and(|e| !e.is_empty())).count();
    let _ = writeln!(
        out,
        "{} rows, {} grid points, {} rows with error tags",
        rows.len(),
        points.len(),
        tagged
    );
    let _ = writeln!(
        out,
        "{:>5} {:>6} {:>6} {:>6} {:>4} {:>5} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "grid", "m1", "m2", "K", "T", "alg", "beta_l1", "beta_sq_l2", "gap", "gen_bound", "beta_bound"
    );
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
    for p in &points {
        let _ = writeln!(
            out,
            "{:>5} {:>6} {:>6} {:>6} {:>4} {:>5} {:>12} {:>12} {:>12} {:>12} {:>12}",
            p.grid_index,
            p.m1,
            p.m2,
            p.k,
            p.t,
            p.algorithm,
            cell(p.beta_l1),
            cell(p.beta_sq_l2),
            cell(p.gap),
            cell(p.gen_bound_l1),
            cell(p.beta_bound_l1)
        );
    }

    for s in slopes_vs_m1(&points) {
        let ok = (tol.slope_lo..=tol.slope_hi).contains(&s.slope);
        let _ = writeln!(
            out,
            "slope of beta_l1 vs m1 ({}, {} points): {:.4} [{} in [{}, {}]]",
            s.fixed,
            s.points,
            s.slope,
            if ok { "PASS" } else { "FAIL" },
            tol.slope_lo,
            tol.slope_hi
        );
    }
    for s in slopes_vs_k(&points) {
        let _ = writeln!(out, "slope of beta_l1 vs K ({}, {} points): {:.4}", s.fixed, s.points, s.slope);
    }

    let checks = gap_checks(&points, tol.sigmas);
    if checks.is_empty() {
        let _ = writeln!(out, "gap-vs-bound check: SKIPPED (no grid point has both a gap and a bound)");
    } else {
        let failed: Vec<usize> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        if failed.is_empty() {
            let _ = writeln!(out, "gap-vs-bound check: PASS ({} grid points)", checks.len());
        } else {
            let _ = writeln!(out, "gap-vs-bound check: FAIL (grid points {failed:?})");
        }
    }
    out
}

/// Plot-ready table: one row per grid point and metric.
pub fn write_long(path: &Path, rows: &[ResultRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["grid_index", "algorithm", "m1", "m2", "k", "t", "metric", "value", "std_error"])?;
    for p in grid_points(rows) {
        let metrics = [
            ("beta_l1", p.beta_l1, p.beta_l1_se),
            ("beta_sq_l2", p.beta_sq_l2, p.beta_sq_l2_se),
            ("empirical_risk", p.empirical_risk, None),
            ("population_risk", p.population_risk, None),
            ("gap", p.gap, p.gap_se),
            ("gen_bound_l1", p.gen_bound_l1, p.gen_bound_l1_se),
            ("gen_bound_l2", p.gen_bound_l2, None),
            ("beta_bound_l1", p.beta_bound_l1, None),
            ("beta_bound_l2", p.beta_bound_l2, None),
        ];
        for (name, v, se) in metrics {
            if let Some(v) = v {
                w.write_record([
                    p.grid_index.to_string(),
                    p.algorithm.clone(),
                    p.m1.to_string(),
                    p.m2.to_string(),
                    p.k.to_string(),
                    p.t.to_string(),
                    name.to_string(),
                    format!("{v:.16e}"),
                    se.map_or(String::new(), |s| format!("{s:.16e}")),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Tolerances from `manifest.json` when present, defaults otherwise.
pub fn tolerances(dir: &Path) -> anyhow::Result<ReportBlock> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Ok(ReportBlock::default());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{}: corrupt manifest", path.display()))?;
    match v.pointer("/config/report") {
        Some(r) => serde_json::from_value(r.clone()).with_context(|| format!("{}: corrupt report block", path.display())),
        None => Ok(ReportBlock::default()),
    }
}
