//! Command-line entry point. All logic lives in the library; this binary
//! only parses arguments and maps errors to exit codes (0 success, 2 config
//! error, 3 data error, 4 numeric failure, 1 otherwise).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use avssl::cli::{self, CliError};
use avssl::config::RawConfig;

#[derive(Parser)]
#[command(name = "avssl", about = "Audiovisual contrastive pre-training at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set run.epochs=10 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and evaluation datasets.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Self-supervised pre-training; writes checkpoint and metrics log.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Continue from the existing checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train the linear probe on frozen encoder features.
    Probe {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate with uniform clips and deterministic crops.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Run an ablation grid (one pretrain→probe→eval chain per cell).
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Parallel cells as isolated processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Apply the configured pipeline to one clip and log every drawn
    /// parameter set.
    AugmentPreview {
        #[command(flatten)]
        common: Common,
        /// Index of the source video within the dataset.
        #[arg(long, default_value_t = 0)]
        video: usize,
        /// Clip start frame.
        #[arg(long, default_value_t = 0)]
        start_frame: usize,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { common } => {
            let cfg = cli::load_config(&common.config, &common.overrides)?;
            cli::cmd_gen_data(&cfg)
        }
        Command::Pretrain { common, resume } => {
            let cfg = cli::load_config(&common.config, &common.overrides)?;
            cli::cmd_pretrain(&cfg, resume).map(|_| ())
        }
        Command::Probe { common } => {
            let cfg = cli::load_config(&common.config, &common.overrides)?;
            cli::cmd_probe(&cfg).map(|_| ())
        }
        Command::Eval { common } => {
            let cfg = cli::load_config(&common.config, &common.overrides)?;
            cli::cmd_eval(&cfg).map(|_| ())
        }
        Command::Ablate { common, jobs } => {
            let mut raw = RawConfig::load(&common.config)?;
            for o in &common.overrides {
                raw.set_override(o)?;
            }
            cli::cmd_ablate(&raw, &common.config, jobs).map(|_| ())
        }
        Command::AugmentPreview {
            common,
            video,
            start_frame,
        } => {
            let cfg = cli::load_config(&common.config, &common.overrides)?;
            cli::cmd_augment_preview(&cfg, video, start_frame)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
