//! Argument parsing and exit codes: 0 on success, 2 for invalid
//! configuration or arguments, 3 when training diverged, 1 otherwise.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use swae_core::data::Split;

use crate::commands::{
    cmd_classifier, cmd_data, cmd_eval, cmd_interpolate, cmd_manipulate, cmd_reconstruct, cmd_sample, cmd_train,
    CmdResult, EvalArgs, InterpolateArgs, ManipulateArgs, TrainArgs, DEFAULT_LAMBDA_H,
};

#[derive(Debug, Parser)]
#[command(name = "swae", version, about = "Stacked Wasserstein autoencoders at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: output.dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many outer steps in total.
        #[arg(long)]
        steps: Option<u64>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw samples from one head.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        head: usize,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inputs and their stage-I reconstructions.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file (default: the validation split of the run).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decoded straight-line path between two inputs.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        idx1: usize,
        #[arg(long, default_value_t = 1)]
        idx2: usize,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        /// Interpolate in this head's prior space.
        #[arg(long)]
        head: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shift codes along an attribute direction.
    Manipulate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// thickness, slant, class<k> or mode<k>.
        #[arg(long)]
        attr: String,
        #[arg(long = "lambda-h", value_delimiter = ',', allow_hyphen_values = true)]
        lambda_h: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-head MSE, FID, ICP and coverage report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reference dataset file (default: the test split of the run).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Generated samples per head.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint trained with lambda = 0.
        #[arg(long)]
        ablation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the glyph classifier used by glyph metrics.
    Classifier {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export one split of a configured corpus.
    Data {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn execute(command: Command) -> CmdResult<()> {
    match command {
        Command::Train { config, out, seed, steps, checkpoint } => {
            let outcome = cmd_train(&TrainArgs { config, out, seed, steps, resume: checkpoint })?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "trained {} steps over {} epochs ({:?}); outputs in {}",
                outcome.steps,
                outcome.epochs,
                outcome.stop,
                outcome.out_dir.display()
            );
        }
        Command::Sample { checkpoint, head, n, seed, out } => cmd_sample(&checkpoint, head, n, seed, &out)?,
        Command::Reconstruct { checkpoint, data, n, out } => cmd_reconstruct(&checkpoint, data.as_deref(), n, &out)?,
        Command::Interpolate { checkpoint, data, idx1, idx2, steps, head, out } => cmd_interpolate(&InterpolateArgs {
            checkpoint: &checkpoint,
            data: data.as_deref(),
            idx1,
            idx2,
            steps,
            head,
            out: &out,
        })?,
        Command::Manipulate { checkpoint, attr, lambda_h, n, data, out } => {
            let lambdas = if lambda_h.is_empty() { DEFAULT_LAMBDA_H.to_vec() } else { lambda_h };
            cmd_manipulate(&ManipulateArgs {
                checkpoint: &checkpoint,
                data: data.as_deref(),
                attr: &attr,
                lambdas: &lambdas,
                n,
                out: &out,
            })?;
        }
        Command::Eval { checkpoint, data, classifier, n, seed, ablation, out } => {
            let rows = cmd_eval(&EvalArgs {
                checkpoint: &checkpoint,
                data: data.as_deref(),
                classifier: classifier.as_deref(),
                n,
                seed,
                ablation: ablation.as_deref(),
                out: &out,
            })?;
            for r in rows {
                println!(
                    "head {}: mse {:.6} fid {:.6} icp {:.4} modes {} hq {:.3}",
                    r.head, r.mse, r.fid, r.icp, r.modes_hit, r.hq_fraction
                );
            }
        }
        Command::Classifier { n, seed, out } => {
            let acc = cmd_classifier(n, seed, &out)?;
            println!("classifier accuracy {acc:.4}; saved to {}", out.display());
        }
        Command::Data { config, split, out } => {
            let n = cmd_data(&config, split.into(), &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
