//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 configuration error,
//! 3 numerical abort.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::Error;
use crate::exec::Exec;

use super::config::{parse_config_with, Experiment};
use super::{default_out_dir, run};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "onsigma", version, about = "Monte Carlo for the stochastically quantized O(N) sigma model on the 2-torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-mode variance of the stationary free field and Wick centering.
    GffCheck(RunArgs),
    /// Single trajectory with energy diagnostics and optional snapshots.
    Simulate(RunArgs),
    /// Stationary spectrum of the observable O₁ for each N.
    Spectrum(RunArgs),
    /// Running mean of O₂ for each N.
    O2(RunArgs),
    /// H¹ size of the remainder Y against N.
    Scaling(RunArgs),
    /// Relaxation of the mean-field remainder.
    Meanfield(RunArgs),
    /// Shared-noise distance between the N-component and mean-field systems.
    Coupling(RunArgs),
    /// Dyson–Schwinger residual against N.
    DsCheck(RunArgs),
    /// Cross-component decorrelation against N.
    Chaos(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory [default: $ONSIGMA_OUT/<experiment> or out/<experiment>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, value_name = "INT")]
    threads: Option<usize>,
    /// Dotted-path override, e.g. dynamics.dt=0.002 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Command {
    fn split(self) -> (Experiment, RunArgs) {
        match self {
            Command::GffCheck(a) => (Experiment::GffCheck, a),
            Command::Simulate(a) => (Experiment::Simulate, a),
            Command::Spectrum(a) => (Experiment::Spectrum, a),
            Command::O2(a) => (Experiment::O2, a),
            Command::Scaling(a) => (Experiment::Scaling, a),
            Command::Meanfield(a) => (Experiment::Meanfield, a),
            Command::Coupling(a) => (Experiment::Coupling, a),
            Command::DsCheck(a) => (Experiment::DsCheck, a),
            Command::Chaos(a) => (Experiment::Chaos, a),
        }
    }
}

fn config_error(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}\n");
    eprintln!("{}", Cli::command().render_usage());
    EXIT_CONFIG
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (experiment, args) = cli.command.split();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => return config_error(format!("cannot read config {}: {e}", args.config.display())),
    };
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = match parse_config_with(&text, &overrides) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(e) = config.experiment.filter(|&e| e != experiment) {
        eprintln!("note: config names experiment `{e}`, running `{experiment}`");
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output.dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| default_out_dir(experiment));
    let go = || run(&config, experiment, &out, Exec::Parallel);
    let result = match with_threads(args.threads, go) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    match result {
        Ok(record) => {
            println!("{experiment}: wrote {} files to {}", record.files.len() + 1, out.display());
            EXIT_OK
        }
        Err(e @ Error::NonFinite { .. }) => {
            eprintln!("numerical abort: {e}\nabort record: {}", out.join("metadata.toml").display());
            EXIT_NUMERICAL
        }
        Err(e @ (Error::InvalidParameter { .. } | Error::Config(_))) => config_error(e),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

#[cfg(feature = "parallel")]
fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, String> {
    match threads {
        None => Ok(f()),
        Some(0) => Err("--threads must be ≥ 1".into()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| e.to_string()),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, String> {
    match threads {
        Some(0) => Err("--threads must be ≥ 1".into()),
        _ => Ok(f()),
    }
}
