//! `msquid` — turn packet payloads into Hilbert-curve byte-class images and
//! classify them as benign or malicious.
//!
//! Exit codes: 0 success, 2 input/usage error, 3 guard violation.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "msquid",
    version,
    about = "Malware traffic analysis via binary visualisation and a small CNN"
)]
pub struct Cli {
    /// Seed for every random choice a subcommand makes.
    #[arg(long, global = true, env = "MSQUID_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Hilbert curve order; images are 2^order cells per side.
    #[arg(long, global = true, default_value_t = 6)]
    pub order: u32,

    /// Malicious-probability decision threshold (inclusive).
    #[arg(long, global = true, default_value_t = 0.5)]
    pub threshold: f64,

    /// Suppress progress chatter on stderr.
    #[arg(long, global = true, default_value_t = false)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a capture or raw byte file into PNG images plus histogram CSV.
    Visualize {
        /// Input file: .pcap captures are payload-extracted, anything else
        /// is treated as raw bytes.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Pixels per image cell.
        #[arg(long, default_value_t = 1)]
        scale: u32,
        /// Also write each chunk as a hex text file.
        #[arg(long, default_value_t = false)]
        hex_dump: bool,
    },
    /// Generate synthetic labeled traffic chunks from a shipped profile.
    Synth {
        /// Profile name: benign, nullheavy, ddos, or whiteheavy.
        #[arg(long)]
        profile: String,
        #[arg(long)]
        count: usize,
        /// Label override; must agree with the profile's family.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Manifest file to append sample records to.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 4096)]
        chunk_len: usize,
    },
    /// Train a classifier on a labeled manifest and persist it.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.01)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV (default: <out>.loss.csv).
        #[arg(long)]
        loss_trace: Option<PathBuf>,
    },
    /// Evaluate a model against a labeled manifest and report A,P,R,F1.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Also write the CSV report to a file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Print an aligned table instead of CSV.
        #[arg(long, default_value_t = false)]
        pretty: bool,
    },
    /// Replay a capture through the detection pipeline, emitting verdicts.
    Detect {
        /// Input pcap file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Replay speed multiplier (1.0 = recorded timing).
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Write verdict JSON Lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        queue_capacity: usize,
        #[arg(long)]
        workers: Option<usize>,
        /// Quarantine directory for malformed chunks (default: drop after
        /// counting).
        #[arg(long)]
        reject_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.order < 1 || cli.order > 12 {
        eprintln!("error: --order must lie in 1..=12");
        return ExitCode::from(2);
    }
    if !(cli.threshold > 0.0 && cli.threshold < 1.0) {
        eprintln!("error: --threshold must lie strictly between 0 and 1");
        return ExitCode::from(2);
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
