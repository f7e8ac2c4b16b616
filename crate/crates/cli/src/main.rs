//! `bsl`: configuration-driven bilevel stability experiments.
//!
//! ```text
//! bsl run <config> [--out DIR] [--workers N] [--seed-override U64]
//! bsl validate <config>
//! bsl report <dir> [--long]
//! ```
//!
//! Exit codes: 0 on success, 2 for configuration errors, 1 for runtime
//! failures. `BSL_OUT_DIR` overrides the configured output directory;
//! `--out` overrides both.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use bsl::{config, pipeline, report};
use clap::{Parser, Subcommand};

/// Environment variable overriding the output directory.
const OUT_DIR_ENV: &str = "BSL_OUT_DIR";

#[derive(Parser)]
#[command(name = "bsl", version, about = "Bilevel stability and generalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and write results.csv, manifest.json and stability.json.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Replace the configured seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Check a configuration and print the resolved defaults.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Summarize a results directory.
    Report {
        dir: PathBuf,
        /// Also write long.csv, one row per grid point and metric.
        #[arg(long)]
        long: bool,
    },
}

enum Failure {
    Config(config::ConfigError),
    Runtime(anyhow::Error),
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load(path: &Path, seed_override: Option<u64>) -> Result<config::LoadedConfig, config::ConfigError> {
    let mut loaded = config::load(path)?;
    if let Some(seed) = seed_override {
        loaded.config.seed = seed;
    }
    Ok(loaded)
}

fn cmd_validate(path: &Path, seed_override: Option<u64>) -> Result<(), Failure> {
    let loaded = load(path, seed_override)?;
    let (_, summary) = pipeline::validate(&loaded)?;
    print!("{summary}");
    println!("config OK");
    Ok(())
}

fn cmd_run(path: &Path, out: Option<PathBuf>, workers: Option<usize>, seed_override: Option<u64>) -> Result<(), Failure> {
    let loaded = load(path, seed_override)?;
    let (instance, _) = pipeline::validate(&loaded)?;
    if let Some(n) = workers {
        if n < 1 {
            return Err(Failure::Runtime(anyhow::anyhow!("--workers must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start the worker pool")?;
    }
    let dir = out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| loaded.config.output.dir.clone());
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;

    let start = Instant::now();
    let output = pipeline::run(&loaded.config, &instance);
    pipeline::write_results(&dir.join("results.csv"), &output.rows).context("writing results.csv")?;
    pipeline::write_json(&dir.join("manifest.json"), &output.manifest).context("writing manifest.json")?;
    pipeline::write_json(&dir.join("stability.json"), &output.stability).context("writing stability.json")?;
    if loaded.config.output.long_format {
        let rows = report::read_results(&dir.join("results.csv"))?;
        report::write_long(&dir.join("long.csv"), &rows).context("writing long.csv")?;
    }
    let tagged = output
        .rows
        .iter()
        .filter(|r| r.errors.iter().any(|e| e.starts_with("run:")))
        .count();
    eprintln!(
        "{} rows written to {} in {:.1} s",
        output.rows.len(),
        dir.display(),
        start.elapsed().as_secs_f64()
    );
    if tagged > 0 {
        eprintln!("warning: {tagged} rows carry a failed run; see the error column");
    }
    Ok(())
}

fn cmd_report(dir: &Path, long: bool) -> Result<(), Failure> {
    let rows = report::read_results(&dir.join("results.csv"))?;
    let tol = report::tolerances(dir)?;
    print!("{}", report::summarize(&rows, &tol));
    if long {
        let path = dir.join("long.csv");
        report::write_long(&path, &rows).with_context(|| format!("writing {}", path.display()))?;
        println!("long-format table written to {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            workers,
            seed_override,
        } => cmd_run(&config, out, workers, seed_override),
        Command::Validate { config, seed_override } => cmd_validate(&config, seed_override),
        Command::Report { dir, long } => cmd_report(&dir, long),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
