//! `pst` command line: synthetic data, DE extraction, training, evaluation
//! and the two ablation tables.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::EvalSplit;
use config::{parse_override, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "pst", version, about = "PST-Attention 3D-CNN for EEG emotion recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key = value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, splitting, initialization and training
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one config key (repeatable), e.g. --set train.epochs=50
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset
    Generate {
        #[command(flatten)]
        common: Common,
        /// Emit raw multichannel recordings instead of DE features
        #[arg(long)]
        raw: bool,
        /// Noise standard deviation
        #[arg(long)]
        sigma: Option<f64>,
        /// Output dataset file
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a raw dataset (or a CSV of precomputed DE values) into feature samples
    Extract {
        #[command(flatten)]
        common: Common,
        /// Raw dataset file, or a .csv of DE values
        #[arg(long)]
        input: PathBuf,
        /// Electrode layout file
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Slice length in seconds
        #[arg(long)]
        slice_length: Option<f64>,
        /// Output dataset file
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a feature dataset; writes checkpoint, metrics and config
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Attention branches: any of p, s, t, or none
        #[arg(long)]
        attention: Option<String>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a checkpoint on one or more datasets
    Evaluate {
        /// Directory written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file (repeatable)
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// all, train or test (using the checkpoint's split settings)
        #[arg(long, default_value = "all")]
        split: EvalSplit,
        /// Also write the report to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attention ablation: plain 3D-CNN, each single branch, and all three
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Representation ablation: three 3-D collapses against the 4-D input
    ReprAblate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Common {
    fn resolve(&self, extra: Vec<(&str, Option<String>)>) -> Result<RunConfig> {
        let mut overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        overrides.extend(extra.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

/// Runs one parsed command and returns its report.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate { common, raw, sigma, out } => {
            let cfg = common.resolve(vec![("synthetic.sigma", opt(&sigma))])?;
            commands::cmd_generate(&cfg, raw, &out)
        }
        Command::Extract {
            common,
            input,
            layout,
            slice_length,
            out,
        } => {
            let layout = layout.map(|p| p.display().to_string());
            let cfg = common.resolve(vec![("layout", layout), ("raw.slice_length", opt(&slice_length))])?;
            commands::cmd_extract(&cfg, &input, &out)
        }
        Command::Train {
            common,
            data,
            lr,
            epochs,
            attention,
            out,
        } => {
            let cfg = common.resolve(vec![
                ("train.lr", opt(&lr)),
                ("train.epochs", opt(&epochs)),
                ("model.attention", attention),
            ])?;
            Ok(commands::cmd_train(&cfg, &data, &out)?.report)
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out,
        } => {
            let (_, report) = commands::cmd_evaluate(&checkpoint, &data, split)?;
            if let Some(path) = out {
                std::fs::write(&path, format!("{report}\n")).with_context(|| format!("{}", path.display()))?;
            }
            Ok(report)
        }
        Command::Ablate { common, data, out } => {
            let cfg = common.resolve(vec![])?;
            Ok(commands::cmd_ablate(&cfg, &data, &out)?.1)
        }
        Command::ReprAblate { common, data, out } => {
            let cfg = common.resolve(vec![])?;
            Ok(commands::cmd_repr_ablate(&cfg, &data, &out)?.1)
        }
    }
}

/// One-line rendering of an error chain. Causes already spelled out by
/// the message above them are skipped.
pub fn error_line(e: &anyhow::Error) -> String {
    let mut line = String::from("error");
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.ends_with(&msg) {
            line.push_str(": ");
            line.push_str(&msg);
        }
        prev = msg;
    }
    line.replace('\n', " ")
}
