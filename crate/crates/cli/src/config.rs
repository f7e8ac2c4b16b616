//! Experiment configuration file.
//!
//! A TOML document with a required top-level `seed` and the blocks
//! `[problem]`, `[solver]`, `[stability]`, `[gap]`, `[sweep]`, `[bounds]`,
//! `[report]` and `[output]`. Only `seed`, `[problem]` and `[solver]` are
//! mandatory.

use std::path::{Path, PathBuf};

use bilevel_stability::analysis::FreeConstants;
use bilevel_stability::problems::ProblemSpec;
use bilevel_stability::solvers::SolverConfig;
use bilevel_stability::stability::StabilityProtocol;
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}

fn default_m() -> Vec<usize> {
    vec![100]
}

fn default_n_mc() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityBlock {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(flatten)]
    pub protocol: StabilityProtocol,
}

impl Default for StabilityBlock {
    fn default() -> Self {
        Self {
            enabled: true,
            protocol: StabilityProtocol::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapBlock {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Fresh outer samples per population-risk estimate.
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
}

impl Default for GapBlock {
    fn default() -> Self {
        Self {
            enabled: true,
            n_mc: default_n_mc(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default = "default_m")]
    pub m1: Vec<usize>,
    #[serde(default = "default_m")]
    pub m2: Vec<usize>,
    /// Defaults to `[solver.k]`.
    #[serde(default)]
    pub k: Option<Vec<usize>>,
    /// Defaults to `[solver.t]`.
    #[serde(default)]
    pub t: Option<Vec<usize>>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            m1: default_m(),
            m2: default_m(),
            k: None,
            t: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsBlock {
    #[serde(flatten)]
    pub free: FreeConstants,
    /// Overrides the SSGD window constant `C`.
    #[serde(default)]
    pub c: Option<f64>,
    /// Overrides the TSGD window constant `C_1`.
    #[serde(default)]
    pub c_1: Option<f64>,
    /// `None` uses the minimizing trade-off in the l2 generalization bound.
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn default_slope_lo() -> f64 {
    -1.3
}

fn default_slope_hi() -> f64 {
    -0.7
}

fn default_sigmas() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportBlock {
    /// Accepted range for the fitted slope of `ln β` against `ln m1`.
    #[serde(default = "default_slope_lo")]
    pub slope_lo: f64,
    #[serde(default = "default_slope_hi")]
    pub slope_hi: f64,
    /// Standard errors of slack allowed in the gap-versus-bound check.
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
}

impl Default for ReportBlock {
    fn default() -> Self {
        Self {
            slope_lo: default_slope_lo(),
            slope_hi: default_slope_hi(),
            sigmas: default_sigmas(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Also write the plot-ready long-format table.
    #[serde(default)]
    pub long_format: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            long_format: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub problem: ProblemSpec,
    pub solver: SolverConfig,
    #[serde(default)]
    pub stability: StabilityBlock,
    #[serde(default)]
    pub gap: GapBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub bounds: BoundsBlock,
    #[serde(default)]
    pub report: ReportBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// A configuration problem, optionally anchored to a line of the file.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.path.display(), line, self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of the first `key =` assignment or `[key]` header.
pub fn locate(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        let assigns = l
            .strip_prefix(key)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false);
        assigns || l.starts_with(&format!("[{key}]"))
    })
    .map(|i| i + 1)
}

pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub config: ExperimentConfig,
}

impl LoadedConfig {
    /// Error anchored at the first line mentioning `key`.
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            line: locate(&self.text, key),
            message: message.into(),
        }
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: None,
        message: format!("cannot read config: {e}"),
    })?;
    parse(path, text)
}

pub fn parse(path: &Path, text: String) -> Result<LoadedConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
        ConfigError {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })?;
    let loaded = LoadedConfig {
        path: path.to_path_buf(),
        text,
        config,
    };
    check_grids(&loaded)?;
    Ok(loaded)
}

fn check_grids(loaded: &LoadedConfig) -> Result<(), ConfigError> {
    let sweep = &loaded.config.sweep;
    let grids: [(&str, Option<&Vec<usize>>); 4] = [
        ("m1", Some(&sweep.m1)),
        ("m2", Some(&sweep.m2)),
        ("k", sweep.k.as_ref()),
        ("t", sweep.t.as_ref()),
    ];
    for (name, grid) in grids {
        if let Some(g) = grid {
            if g.is_empty() {
                return Err(loaded.error_at(name, format!("sweep grid `{name}` is empty")));
            }
        }
    }
    if sweep.m1.contains(&0) {
        return Err(loaded.error_at("m1", "validation set size must be at least 1"));
    }
    if sweep.m2.contains(&0) {
        return Err(loaded.error_at("m2", "training set size must be at least 1"));
    }
    if loaded.config.gap.n_mc < 2 {
        return Err(loaded.error_at("n_mc", "need at least 2 Monte-Carlo samples"));
    }
    if loaded.config.stability.protocol.trials < 1 {
        return Err(loaded.error_at("trials", "need at least one trial"));
    }
    Ok(())
}

/// One point of the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GridPoint {
    pub m1: usize,
    pub m2: usize,
    pub k: usize,
    pub t: usize,
}

impl ExperimentConfig {
    /// Grid points in row-major order over `(m1, m2, k, t)`.
    pub fn grid(&self) -> Vec<GridPoint> {
        let ks = self.sweep.k.clone().unwrap_or_else(|| vec![self.solver.k]);
        let ts = self.sweep.t.clone().unwrap_or_else(|| vec![self.solver.t]);
        let mut out = Vec::new();
        for &m1 in &self.sweep.m1 {
            for &m2 in &self.sweep.m2 {
                for &k in &ks {
                    for &t in &ts {
                        out.push(GridPoint { m1, m2, k, t });
                    }
                }
            }
        }
        out
    }
}
