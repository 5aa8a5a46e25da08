//! `fafpca`: simulate, fit, predict, evaluate and replicate from the command line.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use config::Dim;

/// Failure reported as a single JSON line on stderr.
#[derive(Debug)]
pub struct CliError {
    kind: String,
    message: String,
}

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.into(),
            message: message.into(),
        }
    }

    /// A required option that neither the flags nor the config file supplied.
    pub fn missing(command: &str, option: &str) -> Self {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        cmd.build();
        let usage = cmd
            .find_subcommand_mut(command)
            .map(|c| c.render_usage().to_string())
            .unwrap_or_default();
        CliError::new(
            "usage",
            format!("missing required option --{option}; {}", usage.replace('\n', " ")),
        )
    }

    fn exit_code(&self) -> u8 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }
}

impl From<fafpca::FafpcaError> for CliError {
    fn from(e: fafpca::FafpcaError) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = serde_json::json!({ "error": self.kind, "message": self.message });
        write!(f, "{line}")
    }
}

#[derive(Parser)]
#[command(name = "fafpca", version, about = "Factor-guided functional PCA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset (and its truth for scenario 2).
    Simulate(SimulateArgs),
    /// Fit a model to a long-format CSV.
    Fit(FitArgs),
    /// Reconstruct every observation of a dataset with a saved model.
    Predict(PredictArgs),
    /// Prediction error on a test set, plus estimation errors when the truth is known.
    Evaluate(EvaluateArgs),
    /// Monte-Carlo replicates of a simulation scenario.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaCaseArg {
    Identity,
    Equicorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenArg {
    Trig,
    Spline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignArg {
    Uniform,
    Grid,
}

/// Generator settings shared by `simulate` and `replicate`.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScenarioArgs {
    /// Scenario 1 (misspecified, no factor structure) or 2 (factor model).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub scenario: Option<u8>,
    /// Subjects [default: 100].
    #[arg(long)]
    pub n: Option<usize>,
    /// Variables [default: 100].
    #[arg(long)]
    pub p: Option<usize>,
    /// Factors, scenario 2 only [default: 5].
    #[arg(long)]
    pub q: Option<usize>,
    /// Eigenfunctions per factor [default: 2].
    #[arg(long = "K")]
    #[serde(rename = "K")]
    pub k: Option<usize>,
    /// Observation times per subject [default: 20].
    #[arg(long)]
    pub ni: Option<usize>,
    /// Error covariance of scenario 1 [default: identity].
    #[arg(long, value_enum)]
    pub sigma_case: Option<SigmaCaseArg>,
    /// Noise standard deviation of scenario 2 [default: 1].
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Eigenfunction family of scenario 2 [default: trig].
    #[arg(long, value_enum)]
    pub eigen: Option<EigenArg>,
    /// Interior knots of the spline eigenfunction family [default: 4].
    #[arg(long)]
    pub eigen_knots: Option<usize>,
    /// Observation times of scenario 2 [default: uniform].
    #[arg(long, value_enum)]
    pub design: Option<DesignArg>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub scenario: ScenarioArgs,
    /// Seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// `test` draws a hold-out sample sharing the training loadings and eigenfunctions
    /// of the same seed [default: train].
    #[arg(long, value_enum)]
    pub role: Option<RoleArg>,
    /// Dataset CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Truth JSON for scenario 2 [default: next to --out].
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

/// Estimation settings shared by `fit` and `replicate`.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct EstimatorArgs {
    /// Spline degree [default: 3].
    #[arg(long)]
    pub degree: Option<usize>,
    /// Interior knots [default: ceil(n^(1/3)) clamped to 4..=30].
    #[arg(long)]
    pub knots: Option<usize>,
    /// Ridge added to each subject's basis Gram matrix [default: 1e-6 * tau_n].
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Quadrature intervals [default: 1024].
    #[arg(long)]
    pub n_quad: Option<usize>,
    /// Explained-variance threshold for automatic selection [default: 0.95].
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Long-format CSV `subject,time,var,value`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Factors, or `auto`.
    #[arg(long)]
    pub q: Option<Dim>,
    /// Eigenfunctions per factor, or `auto`.
    #[arg(long = "K")]
    #[serde(rename = "K")]
    pub k: Option<Dim>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    /// Raw time interval mapped onto [0, 1], as `lo,hi` [default: observed range].
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub time_domain: Option<Vec<f64>>,
    /// Model JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// CSV `subject,time,var,value_hat` to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Held-out long-format CSV.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Truth JSON written by `simulate` for the training data.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Metrics CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReplicateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    /// Replicates.
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub r: Option<usize>,
    /// Replicate r uses seed base_seed + r [default: 0].
    #[arg(long)]
    pub base_seed: Option<u64>,
    /// Worker threads [default: FAFPCA_THREADS, else all cores].
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Record wall-clock fit time (the metrics file is then not byte-reproducible).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub timing: Option<bool>,
    /// Output directory for metrics.csv, manifest.json and config.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Replicate(a) => commands::replicate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
