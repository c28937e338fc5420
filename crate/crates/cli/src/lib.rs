//! `hclt` command-line front end.
//!
//! Exit codes: 0 ok, 1 malformed input or estimation failure, 2 condition
//! failed, 3 condition indeterminate, 4 runtime budget exceeded.

pub mod commands;
pub mod oracle;
pub mod output;
pub mod spec;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hclt_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_MALFORMED: i32 = 1;
pub const EXIT_CONDITION_FAIL: i32 = 2;
pub const EXIT_INDETERMINATE: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

pub const OUT_ENV: &str = "HCLT_OUT";
pub const DEFAULT_OUT: &str = "hclt-out";

#[derive(Debug, Parser)]
#[command(name = "hclt", version, about = "Limit theorems for subordinated Hilbert space-valued Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the summability condition of the model.
    Check(CommonArgs),
    /// Hermite rank of the operator.
    Rank(CommonArgs),
    /// Replicated partial sums against the Gaussian limit.
    Clt(CommonArgs),
    /// Covariance structure of the partial sum process on a time grid.
    Continuous(CommonArgs),
    /// Quantitative approximation bounds.
    Bounds(CommonArgs),
    /// Brute-force reference values for the fast kernels.
    Oracle(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Run experiments even when the condition does not pass.
    #[arg(long)]
    pub force: bool,
    /// Output root; defaults to the spec's output.dir, then $HCLT_OUT.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Outcome of a command: exit code and the run directory, if one was made.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: i32,
    pub dir: Option<PathBuf>,
}

impl Outcome {
    pub fn new(code: i32, dir: PathBuf) -> Self {
        Self { code, dir: Some(dir) }
    }
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::ConditionFailed(_) => EXIT_CONDITION_FAIL,
        Error::ConditionIndeterminate(_) => EXIT_INDETERMINATE,
        _ => EXIT_MALFORMED,
    }
}

pub fn run() -> i32 {
    run_with_args(std::env::args_os())
}

pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_MALFORMED } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, common) = match &cli.command {
        Command::Check(a) => ("check", a),
        Command::Rank(a) => ("rank", a),
        Command::Clt(a) => ("clt", a),
        Command::Continuous(a) => ("continuous", a),
        Command::Bounds(a) => ("bounds", a),
        Command::Oracle(a) => ("oracle", a),
    };
    let started = Instant::now();
    let work = || commands::dispatch(name, common, started);
    let result = match common.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(work),
            Err(e) => Err(Error::InvalidArgument(format!("thread pool: {e}"))),
        },
        None => work(),
    };
    match result {
        Ok(outcome) => {
            if let Some(dir) = &outcome.dir {
                let threads = common.threads.unwrap_or_else(rayon::current_num_threads);
                if let Err(e) = commands::write_run_info(dir, name, started, threads, outcome.code) {
                    eprintln!("hclt: {e}");
                    return EXIT_MALFORMED;
                }
                eprintln!("hclt: wrote {}", dir.display());
            }
            outcome.code
        }
        Err(e) => {
            eprintln!("hclt {name}: {e}");
            exit_code_for(&e)
        }
    }
}
