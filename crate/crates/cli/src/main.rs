mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Robust image-in-image hiding: train, embed, attack, extract, evaluate.
#[derive(Debug, Parser)]
#[command(name = "robusthide", version, about)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Random seed; drawn and printed when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for every file a command writes.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out_dir: PathBuf,

    /// Refuse to resize non-square inputs.
    #[arg(long, global = true)]
    pub strict: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan an image directory and write a split manifest.
    Ingest {
        src: PathBuf,
        #[arg(long, default_value_t = 256)]
        side: usize,
        /// Train, validation and test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        split: String,
        /// Manifest path; defaults to `<out-dir>/manifest.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train a bundle; needs --config.
    Train {
        /// Dataset manifest from `ingest`.
        #[arg(long, conflicts_with = "synthetic")]
        manifest: Option<PathBuf>,
        /// Train on this many generated images instead of a manifest.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Continue from `<out-dir>/latest.ckpt`.
        #[arg(long)]
        resume: bool,
        /// Configuration override, e.g. `--set weights.gamma=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Hide secret images in a cover.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        cover: PathBuf,
        #[arg(required = true)]
        secrets: Vec<PathBuf>,
    },
    /// Recover secrets, cover estimate and residual from an attacked image.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        attacked: PathBuf,
    },
    /// Apply one attack to an image.
    Attack {
        input: PathBuf,
        #[arg(long)]
        op: String,
        /// Attack parameter, e.g. `--param qf=70`.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        /// Fill image for `crop`; mid-grey when omitted.
        #[arg(long)]
        cover: Option<PathBuf>,
        /// Output file; defaults to `<out-dir>/attacked.png` (`.jpg` for real-jpeg).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the evaluation battery.
    Eval {
        /// One per secret count for a multi-secret table.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated attacks, e.g. `none,real-jpeg:70,blur:5:1.0`.
        #[arg(long)]
        attacks: Option<String>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value = "test")]
        split: String,
        /// Groups drawn in the residual grid.
        #[arg(long, default_value_t = 4)]
        grid_rows: usize,
    },
    /// Compare analytic and finite-difference attack gradients.
    Gradcheck {
        /// Op name, or `all`.
        #[arg(long, default_value = "all")]
        op: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 16)]
        side: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
