//! Replayable random streams, Gaussian free field sampling, and the exact
//! per-mode Ornstein–Uhlenbeck update of the linear solution `Z`.
//!
//! # Stream derivation (scheme version 1)
//!
//! A [`StreamKey`] is hashed as
//!
//! ```text
//!     SHA-256( "onsigma/stream/v1" ‖ seed:u64le ‖ purpose:u8 ‖ component:u64le ‖ replica:u64le )
//! ```
//!
//! and the 32-byte digest seeds a ChaCha8 generator. Normal variates come
//! from `rand_distr::StandardNormal`. A stream depends only on its key, so
//! results do not depend on thread count or scheduling.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spectral::{Grid, SpectralField, VOLUME};

pub const STREAM_SCHEME_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Space-time white noise driving `Z_i` (or `Φ_i` in direct mode).
    ZNoise,
    /// Stationary initial condition of `Z_i`.
    ZInit,
    /// Initial perturbation of the remainder.
    YInit,
    /// Noise of auxiliary mean-field ensemble copies.
    MeanField,
    /// Initial state of auxiliary mean-field ensemble copies.
    MeanFieldInit,
    /// Independent draws for calibration experiments.
    Sampling,
    /// Random rotations used by symmetry checks.
    Rotation,
}

impl Purpose {
    fn tag(self) -> u8 {
        match self {
            Purpose::ZNoise => 1,
            Purpose::ZInit => 2,
            Purpose::YInit => 3,
            Purpose::MeanField => 4,
            Purpose::MeanFieldInit => 5,
            Purpose::Sampling => 6,
            Purpose::Rotation => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub component: u64,
    pub replica: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(master_seed: u64, purpose: Purpose, component: usize, replica: usize) -> Self {
        Self {
            master_seed,
            component: component as u64,
            replica: replica as u64,
            purpose,
        }
    }

    fn seed_bytes(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"onsigma/stream/v1");
        h.update(self.master_seed.to_le_bytes());
        h.update([self.purpose.tag()]);
        h.update(self.component.to_le_bytes());
        h.update(self.replica.to_le_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        seed
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

pub fn derive_stream(key: StreamKey) -> RngStream {
    RngStream {
        rng: ChaCha8Rng::from_seed(key.seed_bytes()),
    }
}

/// Adds Hermitian-paired complex Gaussian noise with `E|η_k|² = sd_k²`.
///
/// Modes are visited in ascending storage order. A self-conjugate mode
/// (`k ≡ -k mod M`) gets one real variate; every other pair gets two,
/// drawn when the lower index of the pair is visited.
pub(crate) fn add_hermitian_noise(
    grid: &Grid,
    coeffs: &mut [Complex64],
    sd: &[f64],
    stream: &mut RngStream,
) {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for idx in 0..coeffs.len() {
        let partner = grid.conj_index(idx);
        if partner < idx || sd[idx] == 0.0 {
            continue;
        }
        if partner == idx {
            coeffs[idx].re += sd[idx] * stream.normal();
        } else {
            let re = stream.normal();
            let im = stream.normal();
            let eta = Complex64::new(re, im) * (sd[idx] * inv_sqrt2);
            coeffs[idx] += eta;
            coeffs[partner] += eta.conj();
        }
    }
}

/// A draw from the truncated Gaussian free field `N(0, ½(m-Δ)^{-1})`:
/// `E|Ẑ(k)|² = (2π)² Ĉ(k)`, independent across Hermitian pairs.
pub fn sample_gff(grid: &Grid, stream: &mut RngStream) -> SpectralField {
    let sd: Vec<f64> = grid
        .chat_table()
        .iter()
        .map(|c| (VOLUME * c).sqrt())
        .collect();
    let mut field = SpectralField::zeros(grid);
    add_hermitian_noise(grid, field.coeffs_mut(), &sd, stream);
    field
}

/// Per-mode exponential integrator tables for one step size.
#[derive(Debug, Clone)]
pub struct Propagator {
    dt: f64,
    /// `e^{-λ_k dt}`.
    pub decay: Vec<f64>,
    /// `sqrt((2π)² Ĉ(k) (1 - e^{-2λ_k dt}))`.
    pub noise_sd: Vec<f64>,
    /// `(1 - e^{-λ_k dt}) / λ_k`, the exponential-Euler weight of the drift.
    pub drift_weight: Vec<f64>,
}

impl Propagator {
    pub fn new(grid: &Grid, dt: f64) -> Result<Self> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", format!("time step must be ≥ 0 (got {dt})")));
        }
        let n = grid.len();
        let mut decay = vec![0.0; n];
        let mut noise_sd = vec![0.0; n];
        let mut drift_weight = vec![0.0; n];
        for idx in 0..n {
            if !grid.is_active(idx) {
                continue;
            }
            let lam = grid.dispersion(idx);
            let e = (-lam * dt).exp();
            decay[idx] = e;
            // 1 - e^{-2x} and (1 - e^{-x})/λ via expm1 to keep small dt accurate
            noise_sd[idx] = (VOLUME * grid.chat_at(idx) * -(-2.0 * lam * dt).exp_m1()).sqrt();
            drift_weight[idx] = if lam > 0.0 {
                -(-lam * dt).exp_m1() / lam
            } else {
                dt
            };
        }
        Ok(Self {
            dt,
            decay,
            noise_sd,
            drift_weight,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `Ẑ ← e^{-λ dt} Ẑ + η`.
    pub fn ou_update(&self, grid: &Grid, coeffs: &mut [Complex64], stream: &mut RngStream) {
        for (c, d) in coeffs.iter_mut().zip(&self.decay) {
            *c *= *d;
        }
        add_hermitian_noise(grid, coeffs, &self.noise_sd, stream);
    }

    /// `Ŷ ← e^{-λ dt} Ŷ + w(λ) F̂`.
    pub fn etd_update(&self, coeffs: &mut [Complex64], drift: &[Complex64]) {
        for ((c, f), (d, w)) in coeffs
            .iter_mut()
            .zip(drift)
            .zip(self.decay.iter().zip(&self.drift_weight))
        {
            *c = *c * *d + *f * *w;
        }
    }
}

/// The linear solution `Z` of `(∂_t - Δ + m) Z = ξ` advanced exactly per mode.
#[derive(Debug, Clone)]
pub struct OuState {
    pub z: SpectralField,
    pub time: f64,
    propagator: Option<Propagator>,
}

impl OuState {
    pub fn new(z: SpectralField) -> Self {
        Self {
            z,
            time: 0.0,
            propagator: None,
        }
    }

    pub fn stationary(grid: &Grid, stream: &mut RngStream) -> Self {
        Self::new(sample_gff(grid, stream))
    }
}

/// Exact OU step; the propagator is cached and rebuilt only when `dt` changes.
pub fn ou_step(grid: &Grid, state: &mut OuState, dt: f64, stream: &mut RngStream) -> Result<()> {
    if !(dt >= 0.0) {
        return Err(Error::param("dt", format!("time step must be ≥ 0 (got {dt})")));
    }
    if dt == 0.0 {
        return Ok(());
    }
    let stale = state.propagator.as_ref().is_none_or(|p| p.dt() != dt);
    if stale {
        state.propagator = Some(Propagator::new(grid, dt)?);
    }
    let prop = state.propagator.as_ref().expect("propagator cached above");
    prop.ou_update(grid, state.z.coeffs_mut(), stream);
    state.time += dt;
    Ok(())
}
