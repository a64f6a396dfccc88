//! `phonescore`: validate corpora, generate synthetic data, score with GOP or
//! a trained head, cross-validate, and evaluate.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
//! Failures print one JSON line on stderr.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

/// Input or configuration the user has to fix (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn parse_json_str<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "phonescore", version, about = "Phone-level pronunciation scoring")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON run configuration for the subcommand
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed; overrides the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory for outputs and run.json
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus manifest and every file it references
    Validate { manifest: Option<PathBuf> },
    /// Generate a synthetic corpus (config: synthesis spec)
    Synth {
        #[arg(long, value_parser = parse_json_str::<phonescore::SynthKind>)]
        kind: Option<phonescore::SynthKind>,
        #[arg(long)]
        separation: Option<f64>,
    },
    /// Score every labeled segment with the GOP baseline
    Gop {
        manifest: Option<PathBuf>,
        #[arg(long, value_parser = parse_json_str::<config::Subset>)]
        subset: Option<config::Subset>,
        #[arg(long)]
        floor: Option<f64>,
    },
    /// Fine-tune a scoring head
    Train {
        manifest: Option<PathBuf>,
        #[command(flatten)]
        opts: TrainFlags,
    },
    /// Score a corpus with a trained head
    Score {
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_json_str::<config::Subset>)]
        subset: Option<config::Subset>,
        #[arg(long, value_parser = parse_json_str::<phonescore::Aggregation>)]
        aggregation: Option<phonescore::Aggregation>,
    },
    /// Speaker-grouped cross-validation with per-checkpoint pooled metrics
    Crossval {
        manifest: Option<PathBuf>,
        #[command(flatten)]
        opts: TrainFlags,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Per-phone AUC, MinCost and ActCost report from score CSVs
    Evaluate {
        /// Scores to evaluate
        #[arg(long = "eval")]
        eval_scores: Option<PathBuf>,
        /// Scores used to calibrate ActCost thresholds
        #[arg(long = "dev")]
        dev_scores: Option<PathBuf>,
        #[arg(long)]
        phones: Option<PathBuf>,
        #[arg(long)]
        min_minority: Option<usize>,
        /// Divide costs by the best trivial-system cost
        #[arg(long)]
        normalize_cost: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long, value_parser = parse_json_str::<config::Subset>)]
    pub subset: Option<config::Subset>,
    #[arg(long, value_parser = parse_json_str::<phonescore::Stage>)]
    pub stage: Option<phonescore::Stage>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_parser = parse_json_str::<phonescore::Weighting>)]
    pub weighting: Option<phonescore::Weighting>,
    #[arg(long)]
    pub min_minority: Option<usize>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 1;
    }
    match err.downcast_ref::<phonescore::Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn report_error(kind: &str, code: u8, message: &str) {
    let line = serde_json::json!({ "error": kind, "exit_code": code, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            report_error("usage", 1, msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let kind = if code == 1 { "validation" } else { "runtime" };
            report_error(kind, code, &format!("{e:#}"));
            ExitCode::from(code)
        }
    }
}
