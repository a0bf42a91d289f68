//! Time integration of the N-component system.
//!
//! Two equivalent formulations are supported:
//!
//! * [`Scheme::Direct`] evolves `Φ_i` with the counterterm drift
//!   `-(λ/N)(Σ_j Φ_j² - (N+2)a) Φ_i`, noise entering through the exact OU
//!   update of each mode.
//! * [`Scheme::Split`] evolves `Z_i` by the exact OU update and the
//!   remainder `Y_i` with the Wick-expanded drift.
//!
//! Both use exponential Euler (ETD1) for the nonlinear drift:
//! `Ŷ ← e^{-λ_k dt} Ŷ + λ_k^{-1}(1 - e^{-λ_k dt}) F̂`. Products are taken
//! pointwise on the collocation grid, so without dealiasing the scheme is
//! an exact gradient Langevin dynamics of a lattice action.

use std::cell::OnceCell;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::noise::{derive_stream, sample_gff, Propagator, Purpose, RngStream, StreamKey};
use crate::spectral::{Grid, SpectralField, SpectralTransform, Workspace};
use crate::wick::{wick_constant, wick_constant_retained, WickTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Direct,
    #[default]
    #[serde(rename = "ddd")]
    Split,
}

/// Initial state of `Z` (stationary GFF or zero) and of the remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition {
    pub stationary_z: bool,
    /// `Y_i(0) = amplitude · η_i` with `η_i` an independent GFF draw.
    pub y_amplitude: f64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self {
            stationary_z: true,
            y_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimParams {
    pub grid: Arc<Grid>,
    pub components: usize,
    pub coupling: f64,
    pub dt: f64,
    pub t_burn: f64,
    pub t_sample: f64,
    /// Time between observed snapshots.
    pub thin: f64,
    pub scheme: Scheme,
    pub dealias: bool,
    pub master_seed: u64,
    pub replica: usize,
    /// Set to false to switch the white noise off (deterministic flow).
    pub noise: bool,
    pub init: InitialCondition,
    pub exec: Exec,
}

impl SimParams {
    /// Defaults: `λ = 1`, split scheme, `dt = 4·10⁻³/m`, burn-in `10/m`,
    /// snapshots every 0.1 time units.
    pub fn new(grid: Arc<Grid>, components: usize) -> Self {
        let m = if grid.mass() > 0.0 { grid.mass() } else { 1.0 };
        Self {
            grid,
            components,
            coupling: 1.0,
            dt: 1e-3 * 4.0 / m,
            t_burn: 10.0 / m,
            t_sample: 0.0,
            thin: 0.1,
            scheme: Scheme::Split,
            dealias: false,
            master_seed: 0,
            replica: 0,
            noise: true,
            init: InitialCondition::default(),
            exec: Exec::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components < 1 {
            return Err(Error::param("dynamics.components", "N must be ≥ 1"));
        }
        if !(self.coupling >= 0.0) || !self.coupling.is_finite() {
            return Err(Error::param("dynamics.coupling", "λ must be finite and ≥ 0"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::param("dynamics.dt", "dt must be > 0"));
        }
        if !(self.t_burn >= 0.0) || !(self.t_sample >= 0.0) {
            return Err(Error::param("dynamics.t_burn", "time spans must be ≥ 0"));
        }
        if !(self.thin > 0.0) {
            return Err(Error::param("dynamics.thin", "thinning interval must be > 0"));
        }
        Ok(())
    }

    pub fn steps_for(&self, span: f64) -> u64 {
        (span / self.dt).round() as u64
    }

    pub fn thin_steps(&self) -> u64 {
        self.steps_for(self.thin).max(1)
    }
}

#[derive(Debug, Clone)]
struct Component {
    /// `Ẑ_i` (split) or `Φ̂_i` (direct).
    linear: SpectralField,
    /// `Ŷ_i` (split); stays zero in direct mode.
    remainder: SpectralField,
    stream: RngStream,
    linear_real: Vec<f64>,
    remainder_real: Vec<f64>,
    drift: Vec<f64>,
    drift_hat: Vec<Complex64>,
    masked_a: Vec<Complex64>,
    masked_b: Vec<Complex64>,
    ws: Workspace,
}

/// Shared pointwise aggregates of the split drift, reduced in ascending
/// component order.
#[derive(Debug, Clone)]
struct Aggregates {
    /// `Σ_j Y_j²` (split) or `Σ_j Φ_j²` (direct).
    yy: Vec<f64>,
    /// `Σ_j Y_j Z_j`.
    yz: Vec<f64>,
    /// `Σ_j :Z_j²:`.
    zz: Vec<f64>,
}

/// Real-space view of the state at one instant.
#[derive(Debug, Clone)]
pub struct RealState {
    pub phi: Vec<Vec<f64>>,
    pub z: Option<Vec<Vec<f64>>>,
    pub y: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ComponentSystem {
    grid: Arc<Grid>,
    transform: SpectralTransform,
    propagator: Propagator,
    scheme: Scheme,
    coupling: f64,
    wick: WickTable,
    retain: Option<Vec<bool>>,
    noise: bool,
    exec: Exec,
    time: f64,
    steps: u64,
    last_max_abs: f64,
    comps: Vec<Component>,
    agg: Aggregates,
}

impl ComponentSystem {
    pub fn new(params: &SimParams) -> Result<Self> {
        params.validate()?;
        let grid = params.grid.clone();
        let transform = SpectralTransform::new(&grid);
        let propagator = Propagator::new(&grid, params.dt)?;
        let retain = params
            .dealias
            .then(|| (0..grid.len()).map(|i| grid.retained_by_two_thirds(i)).collect::<Vec<_>>());
        let a = match &retain {
            Some(mask) => wick_constant_retained(&grid, |i| mask[i]),
            None => wick_constant(&grid),
        };
        let n = params.components;
        let len = grid.len();
        let zero = Complex64::new(0.0, 0.0);
        let comps = (0..n)
            .map(|i| {
                let key = |p| StreamKey::new(params.master_seed, p, i, params.replica);
                let z0 = if params.init.stationary_z {
                    sample_gff(&grid, &mut derive_stream(key(Purpose::ZInit)))
                } else {
                    SpectralField::zeros(&grid)
                };
                let mut y0 = SpectralField::zeros(&grid);
                if params.init.y_amplitude != 0.0 {
                    let eta = sample_gff(&grid, &mut derive_stream(key(Purpose::YInit)));
                    for (y, e) in y0.coeffs_mut().iter_mut().zip(eta.coeffs()) {
                        *y = e * params.init.y_amplitude;
                    }
                }
                let (linear, remainder) = match params.scheme {
                    Scheme::Split => (z0, y0),
                    Scheme::Direct => {
                        let mut phi = z0;
                        for (p, y) in phi.coeffs_mut().iter_mut().zip(y0.coeffs()) {
                            *p += y;
                        }
                        (phi, SpectralField::zeros(&grid))
                    }
                };
                Component {
                    linear,
                    remainder,
                    stream: derive_stream(key(Purpose::ZNoise)),
                    linear_real: vec![0.0; len],
                    remainder_real: vec![0.0; len],
                    drift: vec![0.0; len],
                    drift_hat: vec![zero; len],
                    masked_a: vec![zero; len],
                    masked_b: vec![zero; len],
                    ws: transform.workspace(),
                }
            })
            .collect();
        Ok(Self {
            transform,
            propagator,
            scheme: params.scheme,
            coupling: params.coupling,
            wick: WickTable::with_constant(a, n),
            retain,
            noise: params.noise,
            exec: params.exec,
            time: 0.0,
            steps: 0,
            last_max_abs: 0.0,
            comps,
            agg: Aggregates {
                yy: vec![0.0; len],
                yz: vec![0.0; len],
                zz: vec![0.0; len],
            },
            grid,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn transform(&self) -> &SpectralTransform {
        &self.transform
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn components(&self) -> usize {
        self.comps.len()
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn wick(&self) -> &WickTable {
        &self.wick
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.propagator.dt()
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    /// `Ẑ_i` in split mode.
    pub fn z_hat(&self, i: usize) -> Option<&SpectralField> {
        (self.scheme == Scheme::Split).then(|| &self.comps[i].linear)
    }

    /// `Ŷ_i` in split mode.
    pub fn y_hat(&self, i: usize) -> Option<&SpectralField> {
        (self.scheme == Scheme::Split).then(|| &self.comps[i].remainder)
    }

    /// `Φ̂_i` (`Ẑ_i + Ŷ_i` in split mode).
    pub fn phi_hat(&self, i: usize) -> SpectralField {
        let c = &self.comps[i];
        match self.scheme {
            Scheme::Direct => c.linear.clone(),
            Scheme::Split => {
                let mut out = c.linear.clone();
                for (o, y) in out.coeffs_mut().iter_mut().zip(c.remainder.coeffs()) {
                    *o += y;
                }
                out
            }
        }
    }

    /// Applies an orthogonal rotation `Φ_i ← Σ_j R_ij Φ_j` (row-major `N×N`)
    /// to every field of the state.
    pub fn rotate_components(&mut self, rotation: &[f64]) -> Result<()> {
        let n = self.comps.len();
        if rotation.len() != n * n {
            return Err(Error::param("rotation", format!("expected {n}×{n} matrix")));
        }
        let rotate = |fields: Vec<&SpectralField>| -> Vec<Vec<Complex64>> {
            (0..n)
                .map(|i| {
                    let mut out = vec![Complex64::new(0.0, 0.0); fields[0].len()];
                    for (j, f) in fields.iter().enumerate() {
                        let r = rotation[i * n + j];
                        for (o, c) in out.iter_mut().zip(f.coeffs()) {
                            *o += c * r;
                        }
                    }
                    out
                })
                .collect()
        };
        let lin = rotate(self.comps.iter().map(|c| &c.linear).collect());
        let rem = rotate(self.comps.iter().map(|c| &c.remainder).collect());
        for ((c, l), r) in self.comps.iter_mut().zip(lin).zip(rem) {
            c.linear.coeffs_mut().copy_from_slice(&l);
            c.remainder.coeffs_mut().copy_from_slice(&r);
        }
        Ok(())
    }

    /// Real-space fields (`Φ`, and `Z`, `Y` in split mode).
    pub fn real_state(&self) -> RealState {
        let tr = &self.transform;
        let len = self.grid.len();
        match self.scheme {
            Scheme::Direct => {
                let phi = self.exec.map(&self.comps, |_, c| {
                    let mut ws = tr.workspace();
                    let mut out = vec![0.0; len];
                    tr.inverse_into(c.linear.coeffs(), &mut out, &mut ws);
                    out
                });
                RealState {
                    phi,
                    z: None,
                    y: None,
                }
            }
            Scheme::Split => {
                let pairs = self.exec.map(&self.comps, |_, c| {
                    let mut ws = tr.workspace();
                    let mut z = vec![0.0; len];
                    let mut y = vec![0.0; len];
                    tr.inverse_pair_into(c.linear.coeffs(), c.remainder.coeffs(), &mut z, &mut y, &mut ws);
                    (z, y)
                });
                let phi = pairs
                    .iter()
                    .map(|(z, y)| z.iter().zip(y).map(|(a, b)| a + b).collect())
                    .collect();
                let (z, y) = pairs.into_iter().unzip();
                RealState {
                    phi,
                    z: Some(z),
                    y: Some(y),
                }
            }
        }
    }

    fn masked<'a>(
        retain: &Option<Vec<bool>>,
        src: &'a [Complex64],
        dst: &'a mut [Complex64],
    ) -> &'a [Complex64] {
        match retain {
            None => src,
            Some(mask) => {
                for ((d, s), &keep) in dst.iter_mut().zip(src).zip(mask) {
                    *d = if keep { *s } else { Complex64::new(0.0, 0.0) };
                }
                dst
            }
        }
    }

    /// Fills each component's real-space buffers from its spectral state.
    fn to_real(&mut self) {
        let tr = &self.transform;
        let retain = &self.retain;
        let scheme = self.scheme;
        self.exec.for_each_mut(&mut self.comps, |_, c| {
            let c = &mut *c;
            match scheme {
                Scheme::Direct => {
                    let src = Self::masked(retain, c.linear.coeffs(), &mut c.masked_a);
                    tr.inverse_into(src, &mut c.linear_real, &mut c.ws);
                }
                Scheme::Split => {
                    let a = Self::masked(retain, c.linear.coeffs(), &mut c.masked_a);
                    let b = Self::masked(retain, c.remainder.coeffs(), &mut c.masked_b);
                    tr.inverse_pair_into(a, b, &mut c.linear_real, &mut c.remainder_real, &mut c.ws);
                }
            }
        });
    }

    fn reduce_aggregates(&mut self) {
        let a = self.wick.a;
        let agg = &mut self.agg;
        agg.yy.iter_mut().for_each(|v| *v = 0.0);
        agg.yz.iter_mut().for_each(|v| *v = 0.0);
        agg.zz.iter_mut().for_each(|v| *v = 0.0);
        let mut max_abs = 0.0_f64;
        for c in &self.comps {
            match self.scheme {
                Scheme::Direct => {
                    for (p, &v) in agg.yy.iter_mut().zip(&c.linear_real) {
                        *p += v * v;
                        max_abs = max_abs.max(v.abs());
                    }
                }
                Scheme::Split => {
                    for (x, (&z, &y)) in c.linear_real.iter().zip(&c.remainder_real).enumerate() {
                        agg.yy[x] += y * y;
                        agg.yz[x] += y * z;
                        agg.zz[x] += z * z - a;
                        max_abs = max_abs.max((z + y).abs());
                    }
                }
            }
        }
        self.last_max_abs = max_abs;
    }

    /// Drift of every component evaluated at the current state (real space).
    pub fn drift_real(&mut self) -> Vec<Vec<f64>> {
        self.to_real();
        self.reduce_aggregates();
        let (n, a, lam) = (self.comps.len(), self.wick.a, self.coupling);
        let agg = &self.agg;
        let scheme = self.scheme;
        self.exec.for_each_mut(&mut self.comps, |_, c| {
            fill_drift(scheme, c, agg, n, a, lam)
        });
        self.comps.iter().map(|c| c.drift.clone()).collect()
    }

    /// One ETD1 step of size `dt`.
    pub fn step(&mut self) -> Result<()> {
        self.to_real();
        self.reduce_aggregates();
        let (n, a, lam) = (self.comps.len(), self.wick.a, self.coupling);
        let agg = &self.agg;
        let scheme = self.scheme;
        let noise = self.noise;
        let tr = &self.transform;
        let prop = &self.propagator;
        let grid = &*self.grid;
        let retain = &self.retain;
        self.exec.for_each_mut(&mut self.comps, |_, c| {
            fill_drift(scheme, c, agg, n, a, lam);
            tr.forward_into(&c.drift, &mut c.drift_hat, &mut c.ws);
            if let Some(mask) = retain {
                for (f, &keep) in c.drift_hat.iter_mut().zip(mask) {
                    if !keep {
                        *f = Complex64::new(0.0, 0.0);
                    }
                }
            }
            match scheme {
                Scheme::Direct => {
                    prop.etd_update(c.linear.coeffs_mut(), &c.drift_hat);
                    if noise {
                        crate::noise::add_hermitian_noise(
                            grid,
                            c.linear.coeffs_mut(),
                            &prop.noise_sd,
                            &mut c.stream,
                        );
                    }
                }
                Scheme::Split => {
                    prop.etd_update(c.remainder.coeffs_mut(), &c.drift_hat);
                    if noise {
                        prop.ou_update(grid, c.linear.coeffs_mut(), &mut c.stream);
                    } else {
                        for (z, d) in c.linear.coeffs_mut().iter_mut().zip(&prop.decay) {
                            *z *= *d;
                        }
                    }
                }
            }
        });
        self.steps += 1;
        self.time = self.steps as f64 * prop.dt();
        let finite = self
            .comps
            .iter()
            .all(|c| c.linear.is_finite() && c.remainder.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                time: self.time,
                max_abs: self.last_max_abs,
            });
        }
        Ok(())
    }

    pub fn advance(&mut self, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Pointwise drift of one component from the shared aggregates.
fn fill_drift(scheme: Scheme, c: &mut Component, agg: &Aggregates, n: usize, a: f64, lam: f64) {
    let nf = n as f64;
    let scale = -lam / nf;
    match scheme {
        Scheme::Direct => {
            let shift = (nf + 2.0) * a;
            for ((d, &phi), &p) in c.drift.iter_mut().zip(&c.linear_real).zip(&agg.yy) {
                *d = scale * (p - shift) * phi;
            }
        }
        Scheme::Split => {
            for x in 0..c.drift.len() {
                let (z, y) = (c.linear_real[x], c.remainder_real[x]);
                let (syy, syz, szz) = (agg.yy[x], agg.yz[x], agg.zz[x]);
                // Σ_j Y_j²Y_i + Y_j²Z_i + 2Y_jY_iZ_j
                let smooth = syy * y + syy * z + 2.0 * syz * y;
                // Σ_j 2Y_j:Z_iZ_j: + :Z_j²:Y_i + :Z_iZ_j²:
                let rough = 2.0 * (syz * z - a * y) + szz * y + z * (szz - 2.0 * a);
                c.drift[x] = scale * (smooth + rough);
            }
        }
    }
}

/// Split-mode drift `F_i` computed from real-space `Y`, `Z` with shared
/// aggregates (`O(N M²)`).
pub fn drift_ddd(y: &[Vec<f64>], z: &[Vec<f64>], a: f64, coupling: f64) -> Vec<Vec<f64>> {
    let n = y.len();
    let len = y.first().map_or(0, |f| f.len());
    let mut agg = Aggregates {
        yy: vec![0.0; len],
        yz: vec![0.0; len],
        zz: vec![0.0; len],
    };
    for (yi, zi) in y.iter().zip(z) {
        for x in 0..len {
            agg.yy[x] += yi[x] * yi[x];
            agg.yz[x] += yi[x] * zi[x];
            agg.zz[x] += zi[x] * zi[x] - a;
        }
    }
    let nf = n as f64;
    (0..n)
        .map(|i| {
            (0..len)
                .map(|x| {
                    let (zz, yy) = (z[i][x], y[i][x]);
                    let smooth = agg.yy[x] * (yy + zz) + 2.0 * agg.yz[x] * yy;
                    let rough = 2.0 * (agg.yz[x] * zz - a * yy)
                        + agg.zz[x] * yy
                        + zz * (agg.zz[x] - 2.0 * a);
                    -coupling / nf * (smooth + rough)
                })
                .collect()
        })
        .collect()
}

/// A thinned snapshot handed to observers.
pub struct Snapshot<'a> {
    pub time: f64,
    pub index: u64,
    pub system: &'a ComponentSystem,
    real: OnceCell<RealState>,
}

impl<'a> Snapshot<'a> {
    pub fn new(system: &'a ComponentSystem, index: u64) -> Self {
        Self {
            time: system.time(),
            index,
            system,
            real: OnceCell::new(),
        }
    }

    pub fn real(&self) -> &RealState {
        self.real.get_or_init(|| self.system.real_state())
    }
}

pub trait Observer {
    fn observe(&mut self, snapshot: &Snapshot<'_>) -> Result<()>;
}

impl<T: Observer + ?Sized> Observer for &mut T {
    fn observe(&mut self, snapshot: &Snapshot<'_>) -> Result<()> {
        (**self).observe(snapshot)
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn observe(&mut self, snapshot: &Snapshot<'_>) -> Result<()> {
        self.0.observe(snapshot)?;
        self.1.observe(snapshot)
    }
}

impl<O: Observer> Observer for Vec<O> {
    fn observe(&mut self, snapshot: &Snapshot<'_>) -> Result<()> {
        self.iter_mut().try_for_each(|o| o.observe(snapshot))
    }
}

/// Metadata of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub master_seed: u64,
    pub replica: usize,
    pub burn_steps: u64,
    pub sample_steps: u64,
    pub observations: u64,
    pub final_time: f64,
    pub wall_seconds: f64,
    pub stable: bool,
}

/// Burn-in followed by a sampling phase with observer callbacks on every
/// thinned snapshot.
pub fn simulate(params: &SimParams, observer: &mut dyn Observer) -> Result<RunStats> {
    let mut system = ComponentSystem::new(params)?;
    simulate_system(&mut system, params, observer)
}

pub fn simulate_system(
    system: &mut ComponentSystem,
    params: &SimParams,
    observer: &mut dyn Observer,
) -> Result<RunStats> {
    let start = Instant::now();
    let burn_steps = params.steps_for(params.t_burn);
    let sample_steps = params.steps_for(params.t_sample);
    let thin = params.thin_steps();
    system.advance(burn_steps)?;
    let mut observations = 0;
    let mut done = 0;
    while done + thin <= sample_steps {
        system.advance(thin)?;
        done += thin;
        observer.observe(&Snapshot::new(system, observations))?;
        observations += 1;
    }
    system.advance(sample_steps - done)?;
    Ok(RunStats {
        master_seed: params.master_seed,
        replica: params.replica,
        burn_steps,
        sample_steps,
        observations,
        final_time: system.time(),
        wall_seconds: start.elapsed().as_secs_f64(),
        stable: true,
    })
}

/// Runs `replicas` independent trajectories (replica indices `0..replicas`)
/// and returns their observers in replica order.
pub fn simulate_replicas<O, F>(
    params: &SimParams,
    replicas: usize,
    make_observer: F,
) -> Result<Vec<(O, RunStats)>>
where
    O: Observer + Send,
    F: Fn(usize) -> O + Sync + Send,
{
    let outer = if replicas > 1 { params.exec } else { Exec::Sequential };
    let results = outer.map_range(replicas, |r| {
        let mut p = params.clone();
        p.replica = r;
        if replicas > 1 {
            p.exec = Exec::Sequential;
        }
        let mut obs = make_observer(r);
        simulate(&p, &mut obs).map(|stats| (obs, stats))
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, scheme: Scheme) -> SimParams {
        let grid = Arc::new(Grid::new(8, 1.0, false).unwrap());
        let mut p = SimParams::new(grid, n);
        p.scheme = scheme;
        p.dt = 0.01;
        p.exec = Exec::Sequential;
        p
    }

    /// Literal double loop over `j` of the six Wick-expanded terms.
    fn drift_oracle(y: &[Vec<f64>], z: &[Vec<f64>], a: f64, lam: f64) -> Vec<Vec<f64>> {
        let n = y.len();
        let len = y[0].len();
        let mut out = vec![vec![0.0; len]; n];
        for i in 0..n {
            for x in 0..len {
                let mut s = 0.0;
                for j in 0..n {
                    let (yi, yj, zi, zj) = (y[i][x], y[j][x], z[i][x], z[j][x]);
                    let zizj = if i == j { zi * zi - a } else { zi * zj };
                    let zj2 = zj * zj - a;
                    let zizj2 = if i == j {
                        zi * zi * zi - 3.0 * a * zi
                    } else {
                        zi * zj * zj - a * zi
                    };
                    s += yj * yj * yi + yj * yj * zi + 2.0 * yj * yi * zj
                        + 2.0 * yj * zizj
                        + zj2 * yi
                        + zizj2;
                }
                out[i][x] = -lam / n as f64 * s;
            }
        }
        out
    }

    #[test]
    fn drift_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, len, a) = (6, 16, 0.21);
        let mut field = |s: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..len).map(|_| s * rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let y = field(0.3);
        let z = field(1.0);
        let fast = drift_ddd(&y, &z, a, 1.3);
        let slow = drift_oracle(&y, &z, a, 1.3);
        for i in 0..n {
            for x in 0..len {
                let scale = slow[i][x].abs().max(1e-3);
                assert!((fast[i][x] - slow[i][x]).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn drift_edge_cases() {
        let zeros = vec![vec![0.0; 4]; 3];
        for row in drift_ddd(&zeros, &zeros, 0.0, 1.0) {
            assert!(row.iter().all(|&v| v == 0.0));
        }
        let y = vec![vec![0.7; 4]];
        let z = vec![vec![0.0; 4]];
        let f = drift_ddd(&y, &z, 0.0, 2.0);
        assert!((f[0][0] + 2.0 * 0.7_f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn system_drift_agrees_with_free_function() {
        let mut p = params(4, Scheme::Split);
        p.init.y_amplitude = 0.5;
        let mut sys = ComponentSystem::new(&p).unwrap();
        let real = sys.real_state();
        let expect = drift_ddd(real.y.as_ref().unwrap(), real.z.as_ref().unwrap(), sys.wick().a, 1.0);
        let got = sys.drift_real();
        for (e, g) in expect.iter().zip(&got) {
            for (a, b) in e.iter().zip(g) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silent_zero_state_stays_zero() {
        for scheme in [Scheme::Direct, Scheme::Split] {
            let mut p = params(3, scheme);
            p.noise = false;
            p.init.stationary_z = false;
            let mut sys = ComponentSystem::new(&p).unwrap();
            sys.advance(20).unwrap();
            for i in 0..3 {
                assert!(sys.phi_hat(i).coeffs().iter().all(|c| c.norm() == 0.0));
            }
        }
    }

    #[test]
    fn schemes_track_each_other() {
        let mut pd = params(4, Scheme::Direct);
        let mut ps = params(4, Scheme::Split);
        pd.init.y_amplitude = 0.3;
        ps.init.y_amplitude = 0.3;
        let mut d = ComponentSystem::new(&pd).unwrap();
        let mut s = ComponentSystem::new(&ps).unwrap();
        d.advance(100).unwrap();
        s.advance(100).unwrap();
        for i in 0..4 {
            let (a, b) = (d.phi_hat(i), s.phi_hat(i));
            let diff: f64 = a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| (x - y).norm()).sum();
            assert!(diff < 1e-9 * a.max_abs(), "component {i}: {diff}");
        }
    }

    #[test]
    fn nan_is_reported() {
        let mut p = params(2, Scheme::Direct);
        p.coupling = 1e12;
        p.dt = 10.0;
        p.init.y_amplitude = 10.0;
        let mut sys = ComponentSystem::new(&p).unwrap();
        let err = sys.advance(200).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn empty_sampling_phase() {
        struct Count(u64);
        impl Observer for Count {
            fn observe(&mut self, _: &Snapshot<'_>) -> Result<()> {
                self.0 += 1;
                Ok(())
            }
        }
        let mut p = params(2, Scheme::Split);
        p.t_burn = 0.05;
        p.t_sample = 0.0;
        let mut c = Count(0);
        let stats = simulate(&p, &mut c).unwrap();
        assert_eq!(stats.observations, 0);
        assert_eq!(c.0, 0);
        p.t_sample = 1.0;
        let stats = simulate(&p, &mut c).unwrap();
        assert_eq!(stats.observations, 10);
    }

    #[test]
    fn invalid_params() {
        let mut p = params(1, Scheme::Split);
        p.components = 0;
        assert!(p.validate().unwrap_err().to_string().contains("N must be ≥ 1"));
        let mut p = params(1, Scheme::Split);
        p.dt = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rotation_preserves_total_power() {
        let p = params(3, Scheme::Split);
        let mut sys = ComponentSystem::new(&p).unwrap();
        let before = sys.real_state();
        let (c, s) = (0.6, 0.8);
        let rot = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
        sys.rotate_components(&rot).unwrap();
        let after = sys.real_state();
        for x in 0..before.phi[0].len() {
            let p0: f64 = before.phi.iter().map(|f| f[x] * f[x]).sum();
            let p1: f64 = after.phi.iter().map(|f| f[x] * f[x]).sum();
            assert!((p0 - p1).abs() < 1e-12);
        }
    }
}
