//! `fairpost` command-line tool.
//!
//! Every subcommand prints a JSON summary on stdout (and to `--summary` when
//! given), including on failure. Exit codes: 0 ok, 2 user or data error,
//! 3 numeric or solver failure.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "fairpost", version, about = "Fair classification by linear post-processing")]
struct Cli {
    /// Also write the JSON summary to this file.
    #[arg(long, global = true)]
    summary: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a plugin logistic model.
    Fit(FitArgs),
    /// Fit the post-processor and write its parameter file.
    Postprocess(PostprocessArgs),
    /// Risk and fairness violation of a parameter file on a score bundle.
    Evaluate(EvaluateArgs),
    /// Fit and evaluate over a list of fairness tolerances.
    Sweep(SweepArgs),
    /// Write a synthetic score bundle.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Y,
    A,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CalibrateArg {
    None,
    Platt,
    Isotonic,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, value_enum)]
    pub target: TargetArg,
    /// Output model file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Where the score bundle comes from.
#[derive(Args, Clone)]
pub struct BundleArgs {
    /// CSV with risk and group-score columns.
    #[arg(long, conflicts_with_all = ["model", "data"])]
    pub scores: Option<PathBuf>,
    /// Model file whose predictions give the risks (target y or joint).
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    /// Model file predicting the attribute, for attribute-blind groups.
    #[arg(long, requires = "model")]
    pub attr_model: Option<PathBuf>,
    /// Raw data for `--model`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column schema. Optional with `--scores`: columns `r_*`, `g_*` and `w`
    /// are then picked up by name.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// `sp`, `eopp`, `meopp`, `eo`, or a custom criterion JSON file.
    #[arg(long, default_value = "sp")]
    pub criterion: String,
    /// Groups from observed attributes.
    #[arg(long, overrides_with = "blind")]
    pub aware: bool,
    /// Groups from predicted attributes.
    #[arg(long, overrides_with = "aware")]
    pub blind: bool,
    #[arg(long, value_enum, default_value_t = CalibrateArg::None)]
    pub calibrate: CalibrateArg,
    /// Share of `--data` rows held out to fit the calibration maps.
    #[arg(long, default_value_t = 0.5)]
    pub calibration_fraction: f64,
}

#[derive(Args)]
pub struct PostprocessArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Noise scale; defaults to 1e-4 times the mean largest risk.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Remove zero-mass groups from their constraints instead of failing.
    #[arg(long)]
    pub drop_empty: bool,
    /// Output parameter file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// CSV of true group scores, one column per group.
    #[arg(long)]
    pub truth_groups: Option<PathBuf>,
    /// CSV of true risks, one column per class.
    #[arg(long)]
    pub truth_risks: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "max,rms")]
    pub metrics: Vec<Metric>,
    /// Noise draws per sample; 0 is exact when the parameters have no noise.
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Max,
    Rms,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepModeArg {
    /// Optimal policy on the fit sample.
    Tabular,
    /// The fitted classifier's predictions.
    Classifier,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.2,0.1,0.05,0.02,0.01")]
    pub alphas: Vec<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SweepModeArg::Tabular)]
    pub mode: SweepModeArg,
    /// Evaluation bundle for classifier mode; defaults to the fit bundle.
    #[arg(long)]
    pub eval_scores: Option<PathBuf>,
    #[arg(long)]
    pub truth_groups: Option<PathBuf>,
    #[arg(long)]
    pub truth_risks: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Tightness,
    Random,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub groups: usize,
    /// One-hot group rows instead of soft scores.
    #[arg(long)]
    pub one_hot: bool,
    #[arg(long)]
    pub random_weights: bool,
    /// Output prefix for `<out>.csv`, `<out>.schema.json` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed subcommand: exit code, message and any extra summary fields.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub details: Value,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
            details: Value::Null,
        }
    }
}

impl From<fairpost::Error> for Failure {
    fn from(e: fairpost::Error) -> Self {
        Failure {
            code: if e.is_user_error() { 2 } else { 3 },
            message: e.to_string(),
            details: Value::Null,
        }
    }
}

pub type Outcome = Result<Value, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("FAIRPOST_LOG", "warn")).init();
    let cli = Cli::parse();
    let (name, outcome) = match &cli.command {
        Command::Fit(a) => ("fit", commands::fit(a)),
        Command::Postprocess(a) => ("postprocess", commands::postprocess(a)),
        Command::Evaluate(a) => ("evaluate", commands::evaluate(a)),
        Command::Sweep(a) => ("sweep", commands::sweep(a)),
        Command::Synth(a) => ("synth", commands::synth(a)),
    };
    let (mut summary, code) = match outcome {
        Ok(mut v) => {
            v["status"] = json!("ok");
            (v, 0)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            let mut v = match f.details {
                Value::Object(_) => f.details,
                _ => json!({}),
            };
            v["status"] = json!("error");
            v["error"] = json!(f.message);
            v["exit_code"] = json!(f.code);
            (v, f.code)
        }
    };
    summary["command"] = json!(name);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    println!("{text}");
    if let Some(path) = &cli.summary {
        if let Err(e) = std::fs::write(path, format!("{text}\n")) {
            eprintln!("error: cannot write summary {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code)
}
