//! `laglm` command-line interface.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 for
//! runtime failures.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<laglm::Error> for CliError {
    fn from(e: laglm::Error) -> Self {
        match e {
            laglm::Error::Config(_) | laglm::Error::UnknownStrategy { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "laglm", version, about = "Probabilistic forecasting with a lag-feature transformer")]
pub struct Cli {
    /// Worker threads for parallel sections (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Preset name (table4-optimal, desk-small) or path to a TOML file.
    #[arg(long, default_value = "table4-optimal")]
    pub config: String,
    /// Accept hyperparameters outside the published search grid.
    #[arg(long)]
    pub allow_off_grid: bool,
    /// Overrides `train.max_epochs`.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Corpus manifest (.toml) or a single JSON-lines file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Required for JSON-lines files.
    #[arg(long)]
    pub prediction_length: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain a fresh model on a corpus.
    Pretrain {
        /// Corpus manifest (.toml) or a single JSON-lines file.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        prediction_length: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Continue training a checkpoint on one dataset.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        /// Keep only the last K% of every series (20, 40, 60, 80 or 100).
        #[arg(long)]
        few_shot_percent: Option<u32>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Score test-split forecasts with CRPS.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Number of evaluation seeds (seed, seed+1, ...).
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Report raw mean CRPS instead of CRPS divided by mean |y|.
        #[arg(long)]
        unscaled: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Forecast past the end of every series.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.25,0.5,0.75,0.95")]
        quantiles: Vec<f64>,
        /// Also store every sample path.
        #[arg(long)]
        include_samples: bool,
        /// Write one SVG per series.
        #[arg(long)]
        plot: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Per-dataset features and their principal components.
    AnalyzeDiversity {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        prediction_length: Option<usize>,
        #[arg(long, default_value = "core12")]
        feature_set: String,
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[arg(long)]
        plot: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a broken scaling law to two columns of a CSV file.
    FitScalingLaw {
        /// For example a training log written by `pretrain`.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "epoch")]
        x_column: String,
        #[arg(long, default_value = "val_nll_mean")]
        y_column: String,
        #[arg(long)]
        plot: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Write the bundled synthetic corpora and their manifests.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
