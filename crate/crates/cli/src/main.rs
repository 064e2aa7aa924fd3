//! `expseg`: pseudo-label generation from extreme points, one stage per subcommand.
//!
//! Exit status: 0 on success, 2 for input errors (including bad usage),
//! 3 for numerical failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "expseg", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration, `key = value` lines or a previous run.json.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Derive extreme-point annotations from a directory of PGM masks.
    ExtractPoints {
        #[arg(long)]
        masks: PathBuf,
        /// Image name recorded in each annotation.
        #[arg(long, default_value = "image.ppm")]
        image: String,
    },
    /// Balance a similarity matrix and symmetrize it into a transition matrix.
    BuildTpm {
        #[arg(long)]
        sim: PathBuf,
    },
    /// Propagate a transition matrix and score the seeds of one object.
    Propagate {
        #[arg(long)]
        tpm: PathBuf,
        #[arg(long, conflicts_with = "absorbing")]
        alpha: Option<u32>,
        #[arg(long, requires = "beta")]
        absorbing: bool,
        #[arg(long, requires = "absorbing")]
        beta: Option<f64>,
        #[arg(long, required = true)]
        ann: PathBuf,
        /// Annotation object id; defaults to the first record.
        #[arg(long)]
        object: Option<u64>,
    },
    /// Threshold scores into pseudo point labels and sparse targets.
    Retrieve {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, required = true)]
        ann: PathBuf,
    },
    /// Mean-field CRF refinement of a mask (EXPM or PGM) on an image.
    Refine {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Full per-object pipeline on a scene directory, with the tightness baseline.
    PseudoMask {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Score pseudo masks and labels against a scene's ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also score the baseline masks under `<pred>/baseline`.
        #[arg(long)]
        baseline: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli.common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
