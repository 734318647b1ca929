//! `paee`: synthetic data generation, training, LOSO evaluation, sweeps and
//! prediction for the hybrid energy-expenditure model.
//!
//! Settings resolve in this order, later winning: built-in defaults, the
//! `--config` file, then flags. Every flag can also be supplied through an
//! environment variable named `PAEE_` plus the upper-cased key
//! (`PAEE_SEED=3`, `PAEE_GRU_HIDDEN=8,16,8`).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "paee",
    version,
    about = "Energy-expenditure estimation from wrist and ankle accelerometry"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// `key = value` configuration file
    #[arg(long, global = true, env = "PAEE_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, fold selection, initialization and shuffling
    #[arg(long, global = true, env = "PAEE_SEED", value_name = "N")]
    pub seed: Option<String>,
    /// Worker threads for fold-level parallelism
    #[arg(long, global = true, env = "PAEE_WORKERS", value_name = "N")]
    pub workers: Option<String>,
    /// Output directory
    #[arg(long, global = true, env = "PAEE_OUT", value_name = "DIR")]
    pub out: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset in the on-disk CSV layout
    Synth(SynthArgs),
    /// Train one model on a dataset (validation pair held out)
    Train(TrainArgs),
    /// Evaluate a saved model per subject, or run LOSO when no model is given
    Eval(EvalArgs),
    /// LOSO over a grid of sequence configurations and model variants
    Sweep(SweepArgs),
    /// Predict EEm for one recording with a saved model
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of subjects (at least 4)
    #[arg(long, env = "PAEE_SUBJECTS", value_name = "N")]
    pub subjects: Option<String>,
    /// Recording length per subject in seconds
    #[arg(long, env = "PAEE_DURATION_SEC", value_name = "SEC")]
    pub duration_sec: Option<String>,
    /// Share of subjects without outdoor data
    #[arg(long, env = "PAEE_INDOOR_ONLY_FRACTION", value_name = "F")]
    pub indoor_only_fraction: Option<String>,
    /// EEm smoothing time constant in seconds
    #[arg(long, env = "PAEE_LAG_TAU", value_name = "SEC")]
    pub lag_tau: Option<String>,
    /// Per-breath EEm noise in kcal/min
    #[arg(long, env = "PAEE_NOISE_SD", value_name = "KCAL")]
    pub noise_sd: Option<String>,
}

/// Dataset, sequence layout, architecture and optimizer settings.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Dataset root directory
    #[arg(long, env = "PAEE_DATA", value_name = "DIR")]
    pub data: Option<String>,
    /// Model variants: GA, GA_ID, GA_AC, GA_ID_AC (comma-separated)
    #[arg(long, env = "PAEE_VARIANT", value_name = "LIST")]
    pub variant: Option<String>,
    /// Aggregation functions: mean, sd, iqr, pd (comma-separated)
    #[arg(long, env = "PAEE_AGG", value_name = "LIST")]
    pub agg: Option<String>,
    /// Sequence sizes (comma-separated)
    #[arg(long, env = "PAEE_SEQ_SIZE", value_name = "LIST")]
    pub seq_size: Option<String>,
    /// Look-back windows in seconds (comma-separated)
    #[arg(long, env = "PAEE_WINDOW_SEC", value_name = "LIST")]
    pub window_sec: Option<String>,
    /// Activity-class channel encoding: ordinal or onehot
    #[arg(long, env = "PAEE_LABEL_ENCODING", value_name = "ENC")]
    pub label_encoding: Option<String>,
    /// Widths of the three GRU layers
    #[arg(long, env = "PAEE_GRU_HIDDEN", value_name = "A,B,C")]
    pub gru_hidden: Option<String>,
    /// Width of the static-feature layer
    #[arg(long, env = "PAEE_STATIC_HIDDEN", value_name = "N")]
    pub static_hidden: Option<String>,
    /// Widths of the two hidden head layers
    #[arg(long, env = "PAEE_HEAD_HIDDEN", value_name = "A,B")]
    pub head_hidden: Option<String>,
    /// Dropout rate after each GRU layer
    #[arg(long, env = "PAEE_DROPOUT", value_name = "P")]
    pub dropout: Option<String>,
    /// Training epochs
    #[arg(long, env = "PAEE_EPOCHS", value_name = "N")]
    pub epochs: Option<String>,
    /// Minibatch size
    #[arg(long, env = "PAEE_BATCH_SIZE", value_name = "N")]
    pub batch_size: Option<String>,
    /// Adam learning rate
    #[arg(long, env = "PAEE_LR", value_name = "LR")]
    pub lr: Option<String>,
    /// Adam first-moment decay
    #[arg(long, env = "PAEE_BETA1", value_name = "B")]
    pub beta1: Option<String>,
    /// Adam second-moment decay
    #[arg(long, env = "PAEE_BETA2", value_name = "B")]
    pub beta2: Option<String>,
    /// Adam epsilon
    #[arg(long, env = "PAEE_EPS", value_name = "EPS")]
    pub eps: Option<String>,
    /// Early-stop patience in epochs, or `none`
    #[arg(long, env = "PAEE_EARLY_STOP", value_name = "N")]
    pub early_stop: Option<String>,
    /// Examples per forward/backward pass (memory bound only)
    #[arg(long, env = "PAEE_MICRO_BATCH", value_name = "N")]
    pub micro_batch: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model_args: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model_args: ModelArgs,
    /// Saved model to evaluate on every subject instead of running LOSO
    #[arg(long, env = "PAEE_MODEL", value_name = "PATH")]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model_args: ModelArgs,
    /// Use the reference grid: sequence sizes 4,10,50,160,240,360,480 x
    /// windows 60,120,240,480 s
    #[arg(long, env = "PAEE_PAPER_GRID")]
    pub paper_grid: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Saved model
    #[arg(long, env = "PAEE_MODEL", value_name = "PATH")]
    pub model: Option<String>,
    /// Subject directory (accel_wrist.csv, accel_ankle.csv, ...)
    #[arg(long, env = "PAEE_RECORDING", value_name = "DIR")]
    pub recording: Option<String>,
    /// Output resolution in seconds, or `breath`
    #[arg(long, env = "PAEE_WINDOW", value_name = "SEC")]
    pub window: Option<String>,
}

impl ModelArgs {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("data", &self.data),
            ("variant", &self.variant),
            ("agg", &self.agg),
            ("seq_size", &self.seq_size),
            ("window_sec", &self.window_sec),
            ("label_encoding", &self.label_encoding),
            ("gru_hidden", &self.gru_hidden),
            ("static_hidden", &self.static_hidden),
            ("head_hidden", &self.head_hidden),
            ("dropout", &self.dropout),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("eps", &self.eps),
            ("early_stop", &self.early_stop),
            ("micro_batch", &self.micro_batch),
        ]
    }
}

impl Cli {
    /// Flag values that were given, as configuration keys.
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let g = &self.global;
        let mut pairs: Vec<(&'static str, &Option<String>)> =
            vec![("seed", &g.seed), ("workers", &g.workers), ("out", &g.out)];
        let mut flags = Vec::new();
        match &self.command {
            Command::Synth(a) => pairs.extend([
                ("subjects", &a.subjects),
                ("duration_sec", &a.duration_sec),
                ("indoor_only_fraction", &a.indoor_only_fraction),
                ("lag_tau", &a.lag_tau),
                ("noise_sd", &a.noise_sd),
            ]),
            Command::Train(a) => pairs.extend(a.model_args.pairs()),
            Command::Eval(a) => {
                pairs.extend(a.model_args.pairs());
                pairs.push(("model", &a.model));
            }
            Command::Sweep(a) => {
                pairs.extend(a.model_args.pairs());
                if a.paper_grid {
                    flags.push(("paper_grid", "true".to_string()));
                }
            }
            Command::Predict(a) => pairs.extend([
                ("model", &a.model),
                ("recording", &a.recording),
                ("window", &a.window),
            ]),
        }
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v.clone())))
            .chain(flags)
            .collect()
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.global.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.overrides() {
            cfg.set(key, &value)
                .map_err(|e| e.context(format!("--{}", key.replace('_', "-"))))?;
        }
        Ok(cfg)
    }
}

/// Parses nothing; runs an already parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    log::info!("resolved configuration:\n{cfg}");
    match &cli.command {
        Command::Synth(_) => commands::synth(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Eval(_) => commands::eval(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
        Command::Predict(_) => commands::predict(&cfg),
    }
}
