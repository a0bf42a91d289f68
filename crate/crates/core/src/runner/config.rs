//! Run configuration: TOML text, dotted overrides, defaults and validation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{InitialCondition, Scheme, SimParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::meanfield::{Flavor, MeanFieldParams};
use crate::observables::ProductRule;
use crate::spectral::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GffCheck,
    Simulate,
    Spectrum,
    O2,
    Scaling,
    Meanfield,
    Coupling,
    DsCheck,
    Chaos,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::GffCheck,
        Experiment::Simulate,
        Experiment::Spectrum,
        Experiment::O2,
        Experiment::Scaling,
        Experiment::Meanfield,
        Experiment::Coupling,
        Experiment::DsCheck,
        Experiment::Chaos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::GffCheck => "gff-check",
            Experiment::Simulate => "simulate",
            Experiment::Spectrum => "spectrum",
            Experiment::O2 => "o2",
            Experiment::Scaling => "scaling",
            Experiment::Meanfield => "meanfield",
            Experiment::Coupling => "coupling",
            Experiment::DsCheck => "ds-check",
            Experiment::Chaos => "chaos",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::param("experiment", format!("unknown experiment `{s}`")))
    }
}

/// A single component count or a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Components {
    One(i64),
    Many(Vec<i64>),
}

impl Default for Components {
    fn default() -> Self {
        Components::One(1)
    }
}

impl Components {
    pub fn values(&self) -> Vec<i64> {
        match self {
            Components::One(n) => vec![*n],
            Components::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Modes per direction `M` (even).
    pub modes: i64,
    /// Mass `m`.
    pub mass: f64,
    #[serde(default)]
    pub project_zero_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// `N`, or a list of `N` for sweeps.
    #[serde(default)]
    pub components: Components,
    #[serde(default = "one")]
    pub coupling: f64,
    /// Defaults to `4·10⁻³/m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub dealias: bool,
    /// Defaults to `10/m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_burn: Option<f64>,
    #[serde(default = "hundred")]
    pub t_sample: f64,
    #[serde(default = "tenth")]
    pub thin: f64,
    #[serde(default = "one_u")]
    pub replicas: i64,
    /// Amplitude of the GFF perturbation in `Y(0)`.
    #[serde(default)]
    pub init_amplitude: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            components: Components::default(),
            coupling: 1.0,
            dt: None,
            scheme: Scheme::Split,
            dealias: false,
            t_burn: None,
            t_sample: 100.0,
            thin: 0.1,
            replicas: 1,
            init_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFieldConfig {
    /// `M_ens`.
    #[serde(default = "sixty_four")]
    pub ensemble: i64,
    #[serde(default)]
    pub estimator: Flavor,
    /// Observation times of the coupled runs.
    #[serde(default = "unit_times")]
    pub times: Vec<f64>,
    /// Span, sampling interval and fit start of the relaxation curve.
    #[serde(default = "two")]
    pub t_end: f64,
    #[serde(default = "tenth")]
    pub every: f64,
    #[serde(default = "quarter")]
    pub fit_from: f64,
    #[serde(default = "one")]
    pub init_amplitude: f64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        Self {
            ensemble: 64,
            estimator: Flavor::Plain,
            times: unit_times(),
            t_end: 2.0,
            every: 0.1,
            fit_from: 0.25,
            init_amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesConfig {
    /// Batch length in time units; defaults to `5/m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_time: Option<f64>,
    #[serde(default = "yes")]
    pub control_variate: bool,
    #[serde(default)]
    pub product_rule: ProductRule,
    /// Number of shells reported in summaries.
    #[serde(default = "five")]
    pub shells: i64,
    /// Samples for the GFF check.
    #[serde(default = "twenty_thousand")]
    pub samples: i64,
}

impl Default for ObservablesConfig {
    fn default() -> Self {
        Self {
            batch_time: None,
            control_variate: true,
            product_rule: ProductRule::AliasFree,
            shells: 5,
            samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Write a field snapshot every this many time units (simulate only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub meanfield: MeanFieldConfig,
    #[serde(default)]
    pub observables: ObservablesConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> f64 {
    1.0
}
fn one_u() -> i64 {
    1
}
fn two() -> f64 {
    2.0
}
fn tenth() -> f64 {
    0.1
}
fn quarter() -> f64 {
    0.25
}
fn hundred() -> f64 {
    100.0
}
fn five() -> i64 {
    5
}
fn sixty_four() -> i64 {
    64
}
fn twenty_thousand() -> i64 {
    20_000
}
fn unit_times() -> Vec<f64> {
    vec![1.0]
}
fn yes() -> bool {
    true
}

fn toml_error(text: &str, err: toml::de::Error) -> Error {
    let msg = err.message().to_string();
    if msg.contains("duplicate key") {
        if let Some(span) = err.span() {
            let key = text[span]
                .trim()
                .trim_start_matches('[')
                .trim_end_matches(']')
                .split(['=', '\n'])
                .next()
                .unwrap_or("")
                .trim()
                .to_string();
            return Error::Config(format!("duplicate key `{key}`"));
        }
    }
    Error::Config(err.to_string().trim_end().to_string())
}

/// Parses `key=value` with a dotted key; the value is read as a TOML value,
/// falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key `{path}` is malformed")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parses, applies overrides, fills defaults and validates.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().trim_end().to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

impl RunConfig {
    /// A config with every default filled for the given grid and `N`.
    pub fn minimal(modes: usize, mass: f64, components: usize) -> Self {
        Self {
            experiment: None,
            seed: 0,
            grid: GridConfig {
                modes: modes as i64,
                mass,
                project_zero_mode: false,
            },
            dynamics: DynamicsConfig {
                components: Components::One(components as i64),
                ..DynamicsConfig::default()
            },
            meanfield: MeanFieldConfig::default(),
            observables: ObservablesConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::param("seed", "seed must be below 2^63 (TOML integers are signed)"));
        }
        let g = &self.grid;
        if g.modes < 2 || g.modes % 2 != 0 {
            return Err(Error::param("grid.modes", format!("M must be even and at least 2 (got {})", g.modes)));
        }
        if !(g.mass >= 0.0) || !g.mass.is_finite() {
            return Err(Error::param("grid.mass", "m must be finite and ≥ 0"));
        }
        if g.mass == 0.0 && !g.project_zero_mode {
            return Err(Error::param("grid.mass", "m = 0 requires project_zero_mode = true"));
        }
        let d = &self.dynamics;
        let ns = d.components.values();
        if ns.is_empty() {
            return Err(Error::param("dynamics.components", "the N list is empty"));
        }
        if ns.iter().any(|&n| n < 1) {
            return Err(Error::param("dynamics.components", "N must be ≥ 1"));
        }
        if !(d.coupling >= 0.0) || !d.coupling.is_finite() {
            return Err(Error::param("dynamics.coupling", "λ must be finite and ≥ 0"));
        }
        if let Some(dt) = d.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::param("dynamics.dt", format!("dt must be > 0 (got {dt})")));
            }
        }
        if d.t_burn.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::param("dynamics.t_burn", "T_burn must be ≥ 0"));
        }
        if !(d.t_sample >= 0.0) {
            return Err(Error::param("dynamics.t_sample", "T_sample must be ≥ 0"));
        }
        if !(d.thin > 0.0) {
            return Err(Error::param("dynamics.thin", "thinning interval must be > 0"));
        }
        if d.replicas < 1 {
            return Err(Error::param("dynamics.replicas", "replicas must be ≥ 1"));
        }
        if !d.init_amplitude.is_finite() {
            return Err(Error::param("dynamics.init_amplitude", "must be finite"));
        }
        let mf = &self.meanfield;
        if mf.ensemble < 2 {
            return Err(Error::param("meanfield.ensemble", "M_ens must be ≥ 2"));
        }
        if mf.times.iter().any(|t| !(*t >= 0.0)) || mf.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("meanfield.times", "times must be ≥ 0 and increasing"));
        }
        if !(mf.t_end > 0.0) || !(mf.every > 0.0) || !(mf.fit_from >= 0.0) || mf.fit_from >= mf.t_end {
            return Err(Error::param("meanfield.t_end", "need t_end > fit_from ≥ 0 and every > 0"));
        }
        let o = &self.observables;
        if o.batch_time.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::param("observables.batch_time", "batch length must be > 0"));
        }
        if o.shells < 1 {
            return Err(Error::param("observables.shells", "need at least one shell"));
        }
        if o.samples < 2 {
            return Err(Error::param("observables.samples", "need at least two samples"));
        }
        if self.output.snapshot_every.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::param("output.snapshot_every", "must be > 0"));
        }
        Ok(())
    }

    /// Canonical TOML text of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_toml`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::new(
            self.grid.modes as usize,
            self.grid.mass,
            self.grid.project_zero_mode,
        )?))
    }

    /// Rate used for the mass-scaled defaults.
    pub fn mass_scale(&self) -> f64 {
        if self.grid.mass > 0.0 {
            self.grid.mass
        } else {
            1.0
        }
    }

    pub fn dt(&self) -> f64 {
        self.dynamics.dt.unwrap_or(1e-3 * 4.0 / self.mass_scale())
    }

    pub fn t_burn(&self) -> f64 {
        self.dynamics.t_burn.unwrap_or(10.0 / self.mass_scale())
    }

    pub fn components(&self) -> Vec<usize> {
        self.dynamics.components.values().into_iter().map(|n| n as usize).collect()
    }

    /// Batch length in snapshots (at least one).
    pub fn batch_len(&self) -> usize {
        let t = self.observables.batch_time.unwrap_or(5.0 / self.mass_scale());
        ((t / self.dynamics.thin).round() as usize).max(1)
    }

    pub fn sim_params(&self, components: usize, exec: Exec) -> Result<SimParams> {
        let mut p = SimParams::new(self.grid()?, components);
        p.coupling = self.dynamics.coupling;
        p.dt = self.dt();
        p.t_burn = self.t_burn();
        p.t_sample = self.dynamics.t_sample;
        p.thin = self.dynamics.thin;
        p.scheme = self.dynamics.scheme;
        p.dealias = self.dynamics.dealias;
        p.master_seed = self.seed;
        p.init = InitialCondition {
            stationary_z: true,
            y_amplitude: self.dynamics.init_amplitude,
        };
        p.exec = exec;
        p.validate()?;
        Ok(p)
    }

    pub fn meanfield_params(&self, exec: Exec) -> Result<MeanFieldParams> {
        let mut p = MeanFieldParams::new(self.grid()?, self.meanfield.ensemble as usize);
        p.flavor = self.meanfield.estimator;
        p.coupling = self.dynamics.coupling;
        p.dt = self.dt();
        p.master_seed = self.seed;
        p.x_amplitude = self.meanfield.init_amplitude;
        p.exec = exec;
        p.validate()?;
        Ok(p)
    }
}
