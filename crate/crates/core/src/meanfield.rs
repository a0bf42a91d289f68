//! Particle approximation of the mean-field equation
//!
//! ```text
//!     (∂_t - Δ + m) Ψ = -λ E[Ψ² - Z²] Ψ + ξ,      Ψ = Z + X,
//! ```
//!
//! with the law replaced by an ensemble of `M_ens` copies. With `Z`
//! stationary, `E[Ψ² - Z²] = E[X²] + 2E[XZ]`, estimated pointwise as `μ`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ComponentSystem, SimParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::noise::{derive_stream, sample_gff, Propagator, Purpose, RngStream, StreamKey};
use crate::spectral::{sobolev_norm_sq, Grid, SpectralField, SpectralTransform, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Flavor {
    #[default]
    Plain,
    LeaveOneOut,
}

#[derive(Debug, Clone)]
pub struct MeanFieldParams {
    pub grid: Arc<Grid>,
    pub copies: usize,
    pub flavor: Flavor,
    pub coupling: f64,
    pub dt: f64,
    pub master_seed: u64,
    pub replica: usize,
    /// `X^(m)(0) = amplitude · η^(m)` with `η^(m)` an independent GFF draw.
    pub x_amplitude: f64,
    /// Draw copy `m` from the same streams as component `m` of a
    /// [`ComponentSystem`] with equal seed and replica.
    pub shared_streams: bool,
    pub exec: Exec,
}

impl MeanFieldParams {
    pub fn new(grid: Arc<Grid>, copies: usize) -> Self {
        let m = if grid.mass() > 0.0 { grid.mass() } else { 1.0 };
        Self {
            grid,
            copies,
            flavor: Flavor::Plain,
            coupling: 1.0,
            dt: 1e-3 * 4.0 / m,
            master_seed: 0,
            replica: 0,
            x_amplitude: 0.0,
            shared_streams: true,
            exec: Exec::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.copies < 2 {
            return Err(Error::param("meanfield.ensemble", "M_ens must be ≥ 2"));
        }
        if !(self.dt >= 0.0) || !self.dt.is_finite() {
            return Err(Error::param("meanfield.dt", "dt must be ≥ 0"));
        }
        if !(self.coupling >= 0.0) || !self.coupling.is_finite() {
            return Err(Error::param("meanfield.coupling", "λ must be finite and ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Copy {
    z: SpectralField,
    x: SpectralField,
    stream: RngStream,
    zr: Vec<f64>,
    xr: Vec<f64>,
    /// `X² + 2XZ` at the current state.
    term: Vec<f64>,
    drift: Vec<f64>,
    drift_hat: Vec<Complex64>,
    ws: Workspace,
}

#[derive(Debug, Clone)]
pub struct MeanFieldEnsemble {
    grid: Arc<Grid>,
    transform: SpectralTransform,
    propagator: Propagator,
    flavor: Flavor,
    coupling: f64,
    exec: Exec,
    time: f64,
    step_count: u64,
    copies: Vec<Copy>,
    mu: Vec<f64>,
}

impl MeanFieldEnsemble {
    pub fn new(params: &MeanFieldParams) -> Result<Self> {
        params.validate()?;
        let grid = params.grid.clone();
        let transform = SpectralTransform::new(&grid);
        let (init_p, noise_p) = if params.shared_streams {
            (Purpose::ZInit, Purpose::ZNoise)
        } else {
            (Purpose::MeanFieldInit, Purpose::MeanField)
        };
        let len = grid.len();
        let copies = (0..params.copies)
            .map(|m| {
                let key = |p| StreamKey::new(params.master_seed, p, m, params.replica);
                let z = sample_gff(&grid, &mut derive_stream(key(init_p)));
                let mut x = SpectralField::zeros(&grid);
                if params.x_amplitude != 0.0 {
                    let eta = sample_gff(&grid, &mut derive_stream(key(Purpose::YInit)));
                    for (v, e) in x.coeffs_mut().iter_mut().zip(eta.coeffs()) {
                        *v = e * params.x_amplitude;
                    }
                }
                Copy {
                    z,
                    x,
                    stream: derive_stream(key(noise_p)),
                    zr: vec![0.0; len],
                    xr: vec![0.0; len],
                    term: vec![0.0; len],
                    drift: vec![0.0; len],
                    drift_hat: vec![Complex64::new(0.0, 0.0); len],
                    ws: transform.workspace(),
                }
            })
            .collect();
        Ok(Self {
            propagator: Propagator::new(&grid, params.dt)?,
            transform,
            flavor: params.flavor,
            coupling: params.coupling,
            exec: params.exec,
            time: 0.0,
            step_count: 0,
            copies,
            mu: vec![0.0; len],
            grid,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.copies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.copies.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn z_hat(&self, m: usize) -> &SpectralField {
        &self.copies[m].z
    }

    pub fn x_hat(&self, m: usize) -> &SpectralField {
        &self.copies[m].x
    }

    /// `Ψ̂^(m) = Ẑ^(m) + X̂^(m)`.
    pub fn psi_hat(&self, m: usize) -> SpectralField {
        let c = &self.copies[m];
        let mut out = c.z.clone();
        for (o, x) in out.coeffs_mut().iter_mut().zip(c.x.coeffs()) {
            *o += x;
        }
        out
    }

    /// `μ` as of the last refresh.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Mean of `‖X^(m)‖²_{L²}` over the ensemble.
    pub fn mean_x_norm_sq(&self) -> f64 {
        let s: f64 = self
            .copies
            .iter()
            .map(|c| sobolev_norm_sq(&self.grid, &c.x, 0.0))
            .sum();
        s / self.copies.len() as f64
    }

    fn refresh_terms(&mut self) {
        let tr = &self.transform;
        self.exec.for_each_mut(&mut self.copies, |_, c| {
            let c = &mut *c;
            // separate transforms keep X ≡ 0 exactly zero in real space
            tr.inverse_into(c.z.coeffs(), &mut c.zr, &mut c.ws);
            tr.inverse_into(c.x.coeffs(), &mut c.xr, &mut c.ws);
            for ((t, &x), &z) in c.term.iter_mut().zip(&c.xr).zip(&c.zr) {
                *t = x * x + 2.0 * x * z;
            }
        });
        let terms: Vec<&[f64]> = self.copies.iter().map(|c| c.term.as_slice()).collect();
        self.mu = ordered_mean(&terms);
    }

    /// Recomputes and returns the plain estimate `μ`.
    pub fn estimate_mu(&mut self) -> &[f64] {
        self.refresh_terms();
        &self.mu
    }

    /// Per-copy leave-one-out estimates `μ^(−m)`.
    pub fn estimate_mu_loo(&mut self) -> Vec<Vec<f64>> {
        self.refresh_terms();
        let n = self.copies.len() as f64;
        self.copies
            .iter()
            .map(|c| {
                self.mu
                    .iter()
                    .zip(&c.term)
                    .map(|(&mu, &t)| (mu * n - t) / (n - 1.0))
                    .collect()
            })
            .collect()
    }

    /// One step: `μ` refreshed, then `X` by ETD1 with drift `-λ μ (X + Z)`
    /// and `Z` by the exact OU update.
    pub fn step(&mut self) -> Result<()> {
        self.refresh_terms();
        let n = self.copies.len() as f64;
        let lam = self.coupling;
        let mu = &self.mu;
        let loo = self.flavor == Flavor::LeaveOneOut;
        let tr = &self.transform;
        let prop = &self.propagator;
        let grid = &*self.grid;
        self.exec.for_each_mut(&mut self.copies, |_, c| {
            let c = &mut *c;
            for x in 0..c.drift.len() {
                let m = if loo {
                    (mu[x] * n - c.term[x]) / (n - 1.0)
                } else {
                    mu[x]
                };
                c.drift[x] = -lam * m * (c.xr[x] + c.zr[x]);
            }
            tr.forward_into(&c.drift, &mut c.drift_hat, &mut c.ws);
            prop.etd_update(c.x.coeffs_mut(), &c.drift_hat);
            prop.ou_update(grid, c.z.coeffs_mut(), &mut c.stream);
        });
        self.step_count += 1;
        self.time = self.step_count as f64 * prop.dt();
        if !self.copies.iter().all(|c| c.x.is_finite() && c.z.is_finite()) {
            let max_abs = self
                .copies
                .iter()
                .flat_map(|c| c.xr.iter().zip(&c.zr).map(|(x, z)| (x + z).abs()))
                .fold(0.0, f64::max);
            return Err(Error::NonFinite {
                time: self.time,
                max_abs,
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

    /// Reorders the copies (`order[new] = old`); used to check exchangeability.
    pub fn permute(&mut self, order: &[usize]) {
        let old = std::mem::take(&mut self.copies);
        self.copies = order.iter().map(|&i| old[i].clone()).collect();
    }
}

/// Pointwise mean over rows, summing each point's values in sorted order so
/// the result does not depend on row order.
fn ordered_mean(rows: &[&[f64]]) -> Vec<f64> {
    let len = rows.first().map_or(0, |r| r.len());
    let mut column = vec![0.0; rows.len()];
    (0..len)
        .map(|x| {
            for (c, r) in column.iter_mut().zip(rows) {
                *c = r[x];
            }
            column.sort_unstable_by(f64::total_cmp);
            column.iter().sum::<f64>() / rows.len() as f64
        })
        .collect()
}

/// `E‖X(t)‖²` sampled every `every` time units up to `t_end`.
pub fn relaxation_curve(params: &MeanFieldParams, t_end: f64, every: f64) -> Result<Vec<(f64, f64)>> {
    let mut ens = MeanFieldEnsemble::new(params)?;
    let per = ((every / params.dt).round() as u64).max(1);
    let total = (t_end / params.dt).round() as u64;
    let mut out = vec![(0.0, ens.mean_x_norm_sq())];
    let mut done = 0;
    while done + per <= total {
        ens.advance(per)?;
        done += per;
        out.push((ens.time(), ens.mean_x_norm_sq()));
    }
    Ok(out)
}

/// Gap norms of one coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrajectory {
    pub times: Vec<f64>,
    /// `gaps[t][i] = ‖Φ_i(t) − Ψ_i(t)‖²_{L²}` for `i < N`.
    pub gaps: Vec<Vec<f64>>,
}

impl CoupledTrajectory {
    pub fn mean_gap(&self, t: usize) -> f64 {
        let g = &self.gaps[t];
        g.iter().sum::<f64>() / g.len() as f64
    }
}

/// Evolves the N-component system and a mean-field ensemble in lockstep.
///
/// Copy `i < N` of the ensemble shares its `Z` streams and initial
/// perturbation with component `i`, so `Φ_i − Ψ_i = Y_i − X_i`. Both systems
/// start from `Z` stationary and `Y_i(0) = X_i(0)`.
pub fn run_coupled_pair(
    sim: &SimParams,
    mf: &MeanFieldParams,
    times: &[f64],
) -> Result<CoupledTrajectory> {
    sim.validate()?;
    mf.validate()?;
    let mismatch = |field: &'static str, reason: &str| Err(Error::param(field, reason.to_string()));
    let (g, h) = (&sim.grid, &mf.grid);
    if g.modes() != h.modes() || g.mass() != h.mass() || g.projects_zero_mode() != h.projects_zero_mode() {
        return mismatch("meanfield.grid", "grids of the coupled systems differ");
    }
    if sim.dt != mf.dt {
        return mismatch("meanfield.dt", "coupled systems need the same dt");
    }
    if sim.coupling != mf.coupling {
        return mismatch("meanfield.coupling", "coupled systems need the same λ");
    }
    if sim.master_seed != mf.master_seed || sim.replica != mf.replica || !mf.shared_streams {
        return mismatch("meanfield.streams", "coupled systems must share noise streams");
    }
    if mf.copies < sim.components {
        return mismatch("meanfield.ensemble", "M_ens must be ≥ N for a coupled run");
    }
    if !sim.noise || !sim.init.stationary_z || sim.init.y_amplitude != mf.x_amplitude {
        return mismatch("dynamics.init", "coupled systems need identical initial data");
    }
    let mut phi = ComponentSystem::new(sim)?;
    let mut psi = MeanFieldEnsemble::new(mf)?;
    let grid = sim.grid.clone();
    let n = sim.components;
    let mut out = CoupledTrajectory {
        times: Vec::new(),
        gaps: Vec::new(),
    };
    let mut step = 0u64;
    for &t in times {
        let target = (t / sim.dt).round() as u64;
        if target < step {
            return mismatch("times", "observation times must be increasing");
        }
        while step < target {
            phi.step()?;
            psi.step()?;
            step += 1;
        }
        let gaps = (0..n)
            .map(|i| {
                let mut v = phi.phi_hat(i);
                for (a, b) in v.coeffs_mut().iter_mut().zip(psi.psi_hat(i).coeffs()) {
                    *a -= b;
                }
                sobolev_norm_sq(&grid, &v, 0.0)
            })
            .collect();
        out.times.push(phi.time());
        out.gaps.push(gaps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::RealField;

    fn params(copies: usize) -> MeanFieldParams {
        let grid = Arc::new(Grid::new(8, 4.0, false).unwrap());
        let mut p = MeanFieldParams::new(grid, copies);
        p.exec = Exec::Sequential;
        p.dt = 0.005;
        p
    }

    fn set_constant(ens: &mut MeanFieldEnsemble, m: usize, x: f64, z: f64) {
        let grid = ens.grid.clone();
        let tr = SpectralTransform::new(&grid);
        ens.copies[m].x = tr.forward(&RealField::constant(&grid, x)).unwrap();
        ens.copies[m].z = tr.forward(&RealField::constant(&grid, z)).unwrap();
    }

    #[test]
    fn two_copy_example() {
        let mut ens = MeanFieldEnsemble::new(&params(2)).unwrap();
        set_constant(&mut ens, 0, 1.0, 0.0);
        set_constant(&mut ens, 1, 3.0, 0.0);
        let mu = ens.estimate_mu().to_vec();
        assert!(mu.iter().all(|&v| (v - 5.0).abs() < 1e-12));
        let loo = ens.estimate_mu_loo();
        assert!(loo[0].iter().all(|&v| (v - 9.0).abs() < 1e-12));
        assert!(loo[1].iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_remainder_stays_zero() {
        let mut ens = MeanFieldEnsemble::new(&params(4)).unwrap();
        assert!(ens.estimate_mu().iter().all(|&v| v == 0.0));
        ens.advance(50).unwrap();
        for m in 0..4 {
            assert!(ens.x_hat(m).coeffs().iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn zero_dt_is_identity() {
        let mut p = params(3);
        p.dt = 0.0;
        p.x_amplitude = 0.5;
        let mut ens = MeanFieldEnsemble::new(&p).unwrap();
        let before: Vec<_> = (0..3).map(|m| ens.psi_hat(m)).collect();
        ens.advance(5).unwrap();
        for (m, b) in before.iter().enumerate() {
            assert_eq!(ens.psi_hat(m).coeffs(), b.coeffs());
        }
    }

    #[test]
    fn plain_mu_is_permutation_invariant() {
        let mut p = params(9);
        p.x_amplitude = 0.7;
        let mut ens = MeanFieldEnsemble::new(&p).unwrap();
        let mu = ens.estimate_mu().to_vec();
        ens.permute(&[4, 2, 8, 0, 7, 1, 3, 6, 5]);
        assert_eq!(ens.estimate_mu(), mu.as_slice());
    }

    #[test]
    fn too_small_ensemble() {
        assert!(MeanFieldEnsemble::new(&params(1)).is_err());
    }

    #[test]
    fn remainder_relaxes() {
        let mut p = params(16);
        p.x_amplitude = 1.0;
        let curve = relaxation_curve(&p, 1.0, 0.25).unwrap();
        assert!(curve.last().unwrap().1 < 0.1 * curve[0].1);
    }
}
