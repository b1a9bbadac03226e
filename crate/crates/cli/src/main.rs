//! `protomatch` command-line interface.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Training-free few-shot object detection by prototype matching.
#[derive(Debug, Parser)]
#[command(name = "protomatch", version, about, after_help = exit::TAXONOMY)]
struct Cli {
    /// TOML run config; missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a prototype store from a support embedding archive.
    BuildPrototypes {
        #[arg(long, value_name = "ARCHIVE")]
        supports: PathBuf,
        #[arg(long, value_name = "STORE")]
        out: PathBuf,
        /// Onboard the archive's classes into an existing store instead of starting fresh.
        #[arg(long, value_name = "STORE")]
        append: Option<PathBuf>,
    },
    /// Filter raw proposals by area, generator scores and NMS; write the retained indices.
    FilterProposals {
        #[arg(long, value_name = "JSONL")]
        proposals: PathBuf,
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
    },
    /// Run filtering, matching and class-wise NMS; write BOP results.
    Detect {
        #[arg(long, value_name = "JSONL")]
        proposals: PathBuf,
        #[arg(long, value_name = "ARCHIVE")]
        embeddings: PathBuf,
        #[arg(long, value_name = "STORE")]
        store: PathBuf,
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
        /// Overrides `tau` from the config.
        #[arg(long)]
        tau: Option<f64>,
        /// Overrides `classwise_nms_iou` from the config.
        #[arg(long = "classwise-nms")]
        classwise_nms: Option<f64>,
        /// Write per-image matching time instead of -1 (output is then not reproducible).
        #[arg(long)]
        record_time: bool,
        #[command(flatten)]
        parallel: Parallelism,
    },
    /// Compute AP over IoU 0.50:0.05:0.95 against local ground truth.
    Evaluate {
        #[arg(long, value_name = "JSON")]
        results: PathBuf,
        #[arg(long, value_name = "JSON")]
        gt: PathBuf,
        /// Report destination (JSON).
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
        /// Also write per-class, per-threshold AP as CSV.
        #[arg(long, value_name = "CSV")]
        csv: Option<PathBuf>,
        #[command(flatten)]
        parallel: Parallelism,
    },
    /// Write the pairwise cosine similarity of all prototypes as CSV.
    PrototypeSimilarity {
        #[arg(long, value_name = "STORE")]
        store: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Check files against their format; exits 7 if any violation is found.
    Validate {
        #[arg(required = true, value_name = "FILE")]
        paths: Vec<PathBuf>,
        /// Print reports as JSON lines.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct Parallelism {
    /// Worker threads; defaults to the number of available cores. Output does not depend on it.
    #[arg(long, value_name = "N")]
    parallelism: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PROTOMATCH_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
