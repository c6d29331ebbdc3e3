//! `ssd-lab`: run forwards, check dualities, extract representations,
//! reproduce counterexamples and count operations from the command line.
//!
//! Exit codes: 0 pass, 1 property failure, 2 input error, 3 precondition
//! not met.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssd_core::bench::Path as BenchPath;
use ssd_core::DEFAULT_EPS;

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "ssd-lab", version, about = "State-space duality laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Relative tolerance for rank and span decisions.
    #[arg(long, global = true, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ForwardPath {
    Recurrence,
    Ssd,
    Materialized,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DualMode {
    ScalarIdentity,
    FullRank,
    Representability,
    Construct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Counterexample {
    Softmax,
    NonDualizable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    /// Diagonal SSM with independent per-mode gains.
    Ssm,
    /// Diagonal SSM with one gain per step shared by all modes.
    ScalarSsm,
    /// Input sequence `X`.
    Sequence,
    /// Dense lower-triangular matrix.
    Matrix,
    /// General SSS representation with dense transitions.
    Sss,
    /// Matrix materialized from a random general SSS representation.
    SssMatrix,
    /// 1-SS mask gains.
    Mask,
    /// Masked-attention factors `(p, Q, K)`.
    Factors,
    /// The identity plus a one in the bottom-left corner.
    Corner,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply a diagonal SSM to a sequence.
    Forward {
        #[arg(long)]
        ssm: PathBuf,
        /// Input sequence (JSON or .csv).
        #[arg(long)]
        x: PathBuf,
        #[arg(long, value_enum, default_value_t = ForwardPath::Ssd)]
        path: ForwardPath,
    },
    /// Check or construct a masked-attention dual.
    CheckDual {
        #[arg(long, value_enum)]
        mode: DualMode,
        #[arg(long)]
        ssm: Option<PathBuf>,
        /// Lower-triangular matrix (JSON or .csv).
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Dual width.
        #[arg(long = "n")]
        width: Option<usize>,
        /// Re-materialization tolerance (relative Frobenius).
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Also write the factors here.
        #[arg(long)]
        factors_out: Option<PathBuf>,
    },
    /// Recover a general SSS representation of a matrix.
    Extract {
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Use the kernel of this SSM as the matrix.
        #[arg(long)]
        ssm: Option<PathBuf>,
        #[arg(long = "n")]
        width: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Reproduce a counterexample.
    Counterexample {
        #[arg(value_enum)]
        which: Counterexample,
        #[arg(long = "t")]
        steps: usize,
        #[arg(long = "n", default_value_t = 2)]
        width: usize,
    },
    /// Count operations over a grid, or compare parallel and sequential SSD.
    Bench {
        #[arg(long, default_value = "ssd")]
        path: BenchPath,
        /// Grid such as `T=64,128,256;N=1,2,4;d=2`.
        #[arg(long, default_value = "T=64,128,256,512")]
        grid: String,
        /// Also write the per-point CSV table here.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Run the parallel probe with this many workers instead.
        #[arg(long)]
        probe_workers: Option<usize>,
        #[arg(long = "t", default_value_t = 256)]
        steps: usize,
        #[arg(long = "n", default_value_t = 4)]
        modes: usize,
        #[arg(long = "d", default_value_t = 2)]
        channels: usize,
        /// Record wall times (makes output run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Generate a random instance.
    Gen {
        #[arg(value_enum)]
        kind: GenKind,
        #[arg(long = "t")]
        steps: usize,
        #[arg(long = "n", default_value_t = 1)]
        modes: usize,
        #[arg(long = "d", default_value_t = 1)]
        channels: usize,
        /// Gain magnitude range.
        #[arg(long, default_value_t = 0.5)]
        gain_lo: f64,
        #[arg(long, default_value_t = 2.0)]
        gain_hi: f64,
        /// Draw only positive gains.
        #[arg(long)]
        positive: bool,
        /// Probability that a mask gain after the first is zero.
        #[arg(long, default_value_t = 0.0)]
        zero_prob: f64,
    },
}

/// A command outcome other than success.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn property(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ssd-lab: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
