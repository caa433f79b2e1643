//! `bmdr`: channel generation, BMDR dataset generation, CNN training and
//! prediction, error reporting, and coded-transmission experiments.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data/file error,
//! 3 numeric failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::Profile;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrClass {
    Usage,
    Data,
    Numeric,
}

pub struct AppError {
    pub class: ErrClass,
    pub err: anyhow::Error,
}

pub type CmdResult = Result<(), AppError>;

pub fn usage<E: Into<anyhow::Error>>(e: E) -> AppError {
    AppError { class: ErrClass::Usage, err: e.into() }
}

pub fn data<E: Into<anyhow::Error>>(e: E) -> AppError {
    AppError { class: ErrClass::Data, err: e.into() }
}

pub fn numeric<E: Into<anyhow::Error>>(e: E) -> AppError {
    AppError { class: ErrClass::Numeric, err: e.into() }
}

#[derive(Parser)]
#[command(name = "bmdr", version, about = "Bit-metric decoding rate toolkit for MU-MIMO detectors")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override (replays are byte-identical for a fixed config+seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Size profile: desk (CI-scale) or paper.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Worker threads (all cores when absent).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a condition-number-stratified channel set.
    GenChannels {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled feature dataset for a detector.
    GenDataset {
        #[arg(long)]
        channels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Detector spec override, e.g. lmmse or kbest:K=32.
        #[arg(long)]
        detector: Option<String>,
        /// Also export the records as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the prediction model on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write per-epoch losses as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        /// User whose labels to train on (default from config).
        #[arg(long)]
        user: Option<usize>,
    },
    /// Predict labels for a dataset with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        user: Option<usize>,
    },
    /// Percentile table of the normalized absolute prediction error.
    Percentiles {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use |error| instead of |error|/label.
        #[arg(long)]
        absolute: bool,
    },
    /// Percentiles of the sequence-averaged prediction error.
    SeqErrors {
        #[arg(long)]
        input: PathBuf,
        /// Window lengths, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 50, 100])]
        n_seq: Vec<usize>,
        #[arg(long, default_value_t = 20_000)]
        n_draws: usize,
        /// Output prefix; one CSV per window length.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Codeword-error-rate sweep paired with set-BMDR.
    Cer {
        #[arg(long)]
        channels: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        detector: Option<String>,
    },
    /// Pre-compute SNR-to-BMDR lookup tables.
    SnrTable {
        #[arg(long)]
        out_dir: PathBuf,
        /// Constellation orders (bits/symbol); the system's by default.
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
    },
    /// Run the independent reference-check suite.
    Oracles {
        /// Substring filter on oracle names.
        #[arg(long)]
        filter: Option<String>,
        /// Write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CmdResult {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(usage)?;
    }
    let profile = match &cli.profile {
        Some(s) => Some(s.parse::<Profile>().map_err(usage)?),
        None => None,
    };
    let cfg = config::load(cli.config.as_deref(), cli.seed, profile).map_err(usage)?;

    match &cli.cmd {
        Cmd::GenChannels { out } => commands::gen_channels(&cfg, out),
        Cmd::GenDataset { channels, out, detector, csv } => {
            commands::gen_dataset(&cfg, channels, out, detector.as_deref(), csv.as_deref())
        }
        Cmd::Train { dataset, out, history, user } => {
            commands::train_cmd(&cfg, dataset, out, history.as_deref(), *user)
        }
        Cmd::Predict { model, dataset, out, user } => {
            commands::predict_cmd(&cfg, model, dataset, out, *user)
        }
        Cmd::Percentiles { input, out, absolute } => {
            commands::percentiles_cmd(&cfg, input, out, *absolute)
        }
        Cmd::SeqErrors { input, n_seq, n_draws, out_prefix } => {
            commands::seq_errors_cmd(&cfg, input, n_seq, *n_draws, out_prefix)
        }
        Cmd::Cer { channels, out_dir, detector } => {
            commands::cer_cmd(&cfg, channels, out_dir, detector.as_deref())
        }
        Cmd::SnrTable { out_dir, m } => commands::snr_table_cmd(&cfg, out_dir, m.clone()),
        Cmd::Oracles { filter, out } => {
            commands::oracles_cmd(filter.as_deref(), out.as_deref(), &cfg.config_hash)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; usage problems exit with 1.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError { class, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(match class {
                ErrClass::Usage => 1,
                ErrClass::Data => 2,
                ErrClass::Numeric => 3,
            })
        }
    }
}
