//! `saa`: run, validate, replay and score allocation runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use saa_core::json;
use saa_core::market::parse_returns_csv;
use saa_core::pipeline::{self, FeedbackThresholds, LoadedConfig, RunOptions, FEEDBACK_SCHEMA};
use saa_core::regime::{self, DimensionWeights};
use saa_core::{Execution, Result, SaaError};

#[derive(Parser)]
#[command(name = "saa", version, about = "Deterministic strategic asset allocation pipeline")]
struct Cli {
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all stages and write the artifact tree.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's as-of date (YYYY-MM-DD).
        #[arg(long)]
        as_of: Option<NaiveDate>,
        /// Overrides both the assignment and the resampling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config and the data files it references.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-run a recorded run and compare artifact digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Replay directory; defaults to `<run>.replay` beside the run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score past runs against realized returns and propose config changes.
    Feedback {
        /// A run directory, or a directory of run directories.
        #[arg(long)]
        runs: PathBuf,
        /// Realized monthly returns in the wide `date,<slug>,...` format.
        #[arg(long)]
        realized: PathBuf,
        /// Realized macro indicators, for regime accuracy.
        #[arg(long)]
        indicators: Option<PathBuf>,
        /// Config supplying thresholds, window and macro settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn run(config: &Path, as_of: Option<NaiveDate>, seed: Option<u64>, out: &Path, exec: Execution) -> Result<i32> {
    let cfg = LoadedConfig::load(config)?;
    let manifest = pipeline::run_pipeline(&cfg, out, RunOptions { as_of, seed, exec })?;
    for s in &manifest.stages {
        match &s.error {
            Some(e) => eprintln!("{:<12} {:?}: {e}", s.name, s.status),
            None => eprintln!("{:<12} {:?} ({} artifacts)", s.name, s.status, s.digests.len()),
        }
    }
    println!(
        "{:?}: {}",
        manifest.outcome,
        out.join(pipeline::MANIFEST_FILE).display()
    );
    Ok(manifest.outcome.exit_code())
}

fn validate(config: &Path) -> Result<i32> {
    let cfg = LoadedConfig::load(config)?;
    cfg.validate()?;
    println!(
        "{} is valid ({} assets, as of {})",
        config.display(),
        cfg.config.universe.len(),
        cfg.config.as_of
    );
    Ok(0)
}

fn replay(manifest: &Path, out: Option<&Path>, exec: Execution) -> Result<i32> {
    let report = pipeline::replay(manifest, out, exec)?;
    if report.mismatches.is_empty() {
        println!("identical: {}", report.replay_dir.display());
        Ok(0)
    } else {
        for m in &report.mismatches {
            eprintln!("differs: {m}");
        }
        println!(
            "{} artifacts differ: {}",
            report.mismatches.len(),
            report.replay_dir.display()
        );
        Ok(1)
    }
}

fn feedback(runs: &Path, realized: &Path, indicators: Option<&Path>, config: Option<&Path>, out: &Path) -> Result<i32> {
    let cfg = config.map(LoadedConfig::load).transpose()?;
    let thresholds = cfg
        .as_ref()
        .map_or_else(FeedbackThresholds::default, |c| c.config.feedback);
    let past = pipeline::load_past_runs(runs)?;
    if past.is_empty() {
        return Err(SaaError::Config(format!("no run manifests under {}", runs.display())));
    }
    let file = fs::File::open(realized).map_err(|e| SaaError::io(realized, e))?;
    let series = parse_returns_csv(file, &realized.display().to_string())?;
    let labels = match indicators {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| SaaError::io(p, e))?;
            let rows = regime::parse_indicators_csv(f, &p.display().to_string())?;
            let (t, w) = match &cfg {
                Some(c) => (c.config.macro_.thresholds.clone(), c.config.macro_.weights),
                None => (regime::default_thresholds(), DimensionWeights::default()),
            };
            Some(regime::label_history(&rows, &t, &w)?)
        }
        None => None,
    };
    let record = pipeline::compute_feedback(&past, &series, labels.as_deref(), thresholds.window_months);
    let log = pipeline::emit_change_log(&record, &thresholds)?;
    json::write_artifact(&out.join("feedback.json"), &record)?;
    json::write_artifact(&out.join("change_log.json"), &log)?;
    println!(
        "{FEEDBACK_SCHEMA}: {} runs, {} recommendations -> {}",
        record.runs.len(),
        log.recommendations.len(),
        out.display()
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = exec(cli.sequential);
    let result = match &cli.command {
        Command::Run {
            config,
            as_of,
            seed,
            out,
        } => run(config, *as_of, *seed, out, exec),
        Command::Validate { config } => validate(config),
        Command::Replay { manifest, out } => replay(manifest, out.as_deref(), exec),
        Command::Feedback {
            runs,
            realized,
            indicators,
            config,
            out,
        } => feedback(runs, realized, indicators.as_deref(), config.as_deref(), out),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
