//! Configuration, experiment dispatch, output files and the command line.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use toml::Table;

use crate::dynamics::RunStats;
use crate::error::{Error, Result};
use crate::exec::Exec;

pub use config::{parse_config, parse_config_with, Experiment, RunConfig};
pub use experiments::Context;
pub use output::{Csv, FieldSnapshot, FileEntry, OutputDir};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ONSIGMA_OUT";

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub code_version: String,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stability {
    pub stable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort: Option<String>,
}

/// Contents of `metadata.toml`.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run: RunInfo,
    pub stability: Stability,
    pub timings: Table,
    pub results: Table,
    pub config: RunConfig,
    pub trajectories: Vec<RunStats>,
    pub files: Vec<FileEntry>,
}

impl RunRecord {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run record serializes")
    }
}

pub fn thread_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Output directory used when none is given: `$ONSIGMA_OUT/<experiment>`,
/// else `out/<experiment>`.
pub fn default_out_dir(experiment: Experiment) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from);
    root.join(experiment.name())
}

/// Runs one experiment and writes its files plus `metadata.toml` into
/// `out`. A numerical abort still writes `metadata.toml` (with
/// `stability.stable = false` and the abort message) before returning the
/// error.
pub fn run(config: &RunConfig, experiment: Experiment, out: &Path, exec: Exec) -> Result<RunRecord> {
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let start = Instant::now();
    let config = &RunConfig {
        experiment: Some(experiment),
        ..config.clone()
    };
    let mut dir = OutputDir::create(out)?;
    let mut ctx = Context::new(config, &mut dir, exec);
    let outcome = experiments::run_experiment(&mut ctx, experiment);
    let Context {
        results,
        timings,
        stats,
        ..
    } = ctx;
    if let Err(e) = &outcome {
        if !e.is_numerical() {
            return Err(outcome.unwrap_err());
        }
    }
    let record = RunRecord {
        run: RunInfo {
            experiment: experiment.name().to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix,
            wall_seconds: start.elapsed().as_secs_f64(),
            threads: thread_count(),
        },
        stability: Stability {
            stable: outcome.is_ok() && stats.iter().all(|s| s.stable),
            abort: outcome.as_ref().err().map(Error::to_string),
        },
        timings,
        results,
        config: config.clone(),
        trajectories: stats,
        files: dir.files.clone(),
    };
    let meta = out.join("metadata.toml");
    std::fs::write(&meta, record.to_toml()).map_err(|e| output::io_err(&meta, e))?;
    outcome.map(|()| record)
}
