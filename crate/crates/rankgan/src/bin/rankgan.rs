//! Command-line experiment runner.
//!
//! ```text
//! rankgan run <config.json>... [--jobs N] [--seed S] [--out DIR]
//! rankgan fig2 <config.json> [--seed S] [--out DIR]
//! rankgan complete <config.json> --stage I --mask KIND [--seed S] [--out DIR]
//! rankgan verify-checkpoint <path.ckpt>
//! ```
//!
//! Log verbosity comes from `RANKGAN_LOG` ({quiet, info, debug}).

use clap::{Args, Parser, Subcommand};
use rankgan::data::MaskKind;
use rankgan::runner::{self, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rankgan", version, about = "Stage-wise ranking GAN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOverrides {
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiment configs (any kind).
    Run {
        /// Paths to JSON experiment configs.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Independent configs to run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Train the four score-curve critics and tabulate their scores.
    Fig2 {
        config: PathBuf,
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Complete masked test images with a checkpointed stage.
    Complete {
        config: PathBuf,
        /// Stage whose generator/critic pair is used.
        #[arg(long)]
        stage: Option<usize>,
        /// Mask kind (center-small, center-large, periocular-small,
        /// periocular-large).
        #[arg(long)]
        mask: Option<MaskKind>,
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Check that a checkpoint file loads and round-trips byte-exactly.
    VerifyCheckpoint { path: PathBuf },
}

fn main() -> ExitCode {
    runner::init_logging();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            configs,
            jobs,
            common,
        } => runner::execute_many(
            &configs,
            jobs,
            &Overrides {
                seed: common.seed,
                out: common.out,
                ..Default::default()
            },
        ),
        Command::Fig2 { config, common } => runner::execute_config(
            &config,
            &Overrides {
                seed: common.seed,
                out: common.out,
                expect_kind: Some(rankgan::config::ExperimentKind::Fig2Scores),
                ..Default::default()
            },
        ),
        Command::Complete {
            config,
            stage,
            mask,
            common,
        } => runner::execute_config(
            &config,
            &Overrides {
                seed: common.seed,
                out: common.out,
                stage,
                mask,
                expect_kind: Some(rankgan::config::ExperimentKind::Completion),
            },
        ),
        Command::VerifyCheckpoint { path } => runner::execute_verify(&path),
    };
    ExitCode::from(code as u8)
}
