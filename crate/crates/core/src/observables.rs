//! O(N)-invariant observables, their spectra, the large-N predictions and
//! run diagnostics.
//!
//! `O₁ = N^{-1/2} Σ_i :Φ_i²:` and `O₂ = N^{-1} :(Σ_i Φ_i²)²:`, Wick ordered
//! with respect to the lattice constant `a`. With `P = Σ_i Φ_i²`,
//!
//! ```text
//!     O₁ = N^{-1/2} (P - N a),     O₂ = N^{-1} (P² - 2(N+2) a P + N(N+2) a²).
//! ```

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Observer, Snapshot};
use crate::error::{Error, Result};
use crate::spectral::{
    chat_sq, chat_sq_periodic, convolve, sobolev_norm_sq, Grid, RealField, SpectralField,
    SpectralTransform, Wavevector, Workspace, VOLUME,
};
use crate::stats::{jackknife, mean_and_stderr, BatchMeans, Estimate, VecBatchMeans};
use crate::wick::wick_constant_retained;

fn check_lengths(y: &[RealField], z: &[RealField]) -> Result<()> {
    if y.len() != z.len() || y.is_empty() {
        return Err(Error::param(
            "fields",
            format!("need equal nonzero counts of Y and Z (got {} and {})", y.len(), z.len()),
        ));
    }
    for (a, b) in y.iter().zip(z) {
        a.check_same_grid(b)?;
        y[0].check_same_grid(a)?;
    }
    Ok(())
}

/// `P = Σ_i Φ_i²` pointwise, summed in ascending component order.
pub fn total_power(phi: &[Vec<f64>]) -> Vec<f64> {
    let mut p = vec![0.0; phi.first().map_or(0, |f| f.len())];
    for f in phi {
        for (s, v) in p.iter_mut().zip(f) {
            *s += v * v;
        }
    }
    p
}

/// `N^{-1/2} (Σ_i Φ_i² - N a)` from real-space components.
pub fn o1_from_phi(phi: &[Vec<f64>], a: f64) -> Vec<f64> {
    let n = phi.len() as f64;
    let scale = n.sqrt().recip();
    total_power(phi)
        .into_iter()
        .map(|p| (p - n * a) * scale)
        .collect()
}

/// Spatial mean of `O₂` from real-space components.
pub fn o2_from_phi(phi: &[Vec<f64>], a: f64) -> f64 {
    let n = phi.len() as f64;
    let p = total_power(phi);
    let sum: f64 = p
        .iter()
        .map(|&p| p * p - 2.0 * (n + 2.0) * a * p + n * (n + 2.0) * a * a)
        .sum();
    sum / (n * p.len() as f64)
}

fn phi_of(y: &[RealField], z: &[RealField]) -> Vec<Vec<f64>> {
    y.iter()
        .zip(z)
        .map(|(y, z)| y.values().iter().zip(z.values()).map(|(a, b)| a + b).collect())
        .collect()
}

/// `N^{-1/2} Σ_i (Y_i² + 2 Y_i Z_i + Z_i² - a)` pointwise.
pub fn o1_field(y: &[RealField], z: &[RealField], a: f64) -> Result<RealField> {
    check_lengths(y, z)?;
    Ok(RealField::from_parts(y[0].modes(), o1_from_phi(&phi_of(y, z), a)))
}

/// Spatial average of `O₂ = N^{-1} :(Σ_i (Y_i + Z_i)²)²:`.
pub fn o2_mean(y: &[RealField], z: &[RealField], a: f64) -> Result<f64> {
    check_lengths(y, z)?;
    Ok(o2_from_phi(&phi_of(y, z), a))
}

/// How products of fields are turned into Fourier coefficients on `Λ*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProductRule {
    /// Exact truncated convolution (zero padding to a `2M` grid). The free
    /// spectrum is then `2 (C²)^` with `(C²)^` summed over admissible pairs.
    #[default]
    AliasFree,
    /// Pointwise product on the collocation grid, the product the dynamics
    /// uses. The free spectrum is the aliased `2 (C²)^`.
    Grid,
}

/// Fourier coefficients `Ô₁(k)`, `k ∈ Λ*`, from the component spectra.
#[derive(Debug, Clone)]
pub struct O1Transform {
    grid: Arc<Grid>,
    rule: ProductRule,
    coarse: SpectralTransform,
    coarse_ws: Workspace,
    fine: SpectralTransform,
    fine_ws: Workspace,
    fine_index: Vec<usize>,
    /// Wick constant used for the product: `a` on the grid, or the sum over
    /// modes whose negative lies in `Λ*` for the truncated product.
    wick: f64,
    real: Vec<f64>,
    power: Vec<f64>,
    pad: Vec<Complex64>,
    field: Vec<Complex64>,
    acc: Vec<Complex64>,
    out: Vec<Complex64>,
}

impl O1Transform {
    pub fn new(grid: &Arc<Grid>, a: f64, rule: ProductRule) -> Self {
        let fine_grid = Grid::new(2 * grid.modes(), 1.0, false).expect("doubled grid is valid");
        let fine = SpectralTransform::new(&fine_grid);
        let coarse = SpectralTransform::new(grid);
        let fine_index = (0..grid.len())
            .map(|i| fine_grid.wrapped_index(grid.wavevector(i)))
            .collect();
        let wick = match rule {
            ProductRule::Grid => a,
            ProductRule::AliasFree => {
                wick_constant_retained(grid, |i| grid.index_of(grid.wavevector(i).neg()).is_some())
            }
        };
        let zero = Complex64::new(0.0, 0.0);
        Self {
            coarse_ws: coarse.workspace(),
            fine_ws: fine.workspace(),
            coarse,
            fine,
            fine_index,
            wick,
            real: vec![0.0; grid.len()],
            power: vec![0.0; grid.len()],
            pad: vec![zero; fine_grid.len()],
            field: vec![zero; fine_grid.len()],
            acc: vec![zero; fine_grid.len()],
            out: vec![zero; grid.len()],
            grid: grid.clone(),
            rule,
        }
    }

    pub fn rule(&self) -> ProductRule {
        self.rule
    }

    /// `Ô₁` in storage order of `Λ*`.
    pub fn compute(&mut self, fields: &[&SpectralField]) -> &[Complex64] {
        let n = fields.len() as f64;
        let scale = n.sqrt().recip();
        match self.rule {
            ProductRule::Grid => {
                self.power.iter_mut().for_each(|p| *p = 0.0);
                for f in fields {
                    self.coarse.inverse_into(f.coeffs(), &mut self.real, &mut self.coarse_ws);
                    for (p, v) in self.power.iter_mut().zip(&self.real) {
                        *p += v * v;
                    }
                }
                for p in self.power.iter_mut() {
                    *p = (*p - n * self.wick) * scale;
                }
                self.coarse.forward_into(&self.power, &mut self.out, &mut self.coarse_ws);
            }
            ProductRule::AliasFree => {
                let zero = Complex64::new(0.0, 0.0);
                self.acc.iter_mut().for_each(|c| *c = zero);
                for f in fields {
                    self.pad.iter_mut().for_each(|c| *c = zero);
                    for (&fi, c) in self.fine_index.iter().zip(f.coeffs()) {
                        self.pad[fi] = *c;
                    }
                    self.fine.inverse_complex_into(&self.pad, &mut self.field, &mut self.fine_ws);
                    for (s, v) in self.acc.iter_mut().zip(&self.field) {
                        *s += v * v;
                    }
                }
                self.fine.forward_complex_into(&self.acc, &mut self.pad, &mut self.fine_ws);
                for (o, &fi) in self.out.iter_mut().zip(&self.fine_index) {
                    *o = self.pad[fi];
                }
                let zero_mode = self.grid.wrapped_index(Wavevector::new(0, 0));
                self.out[zero_mode] -= VOLUME * n * self.wick;
                for o in self.out.iter_mut() {
                    *o *= scale;
                }
            }
        }
        &self.out
    }
}

/// `(|f̂(k)|² + |f̂(-k)|²) / (2 (2π)²)`: a periodogram that is exactly even.
fn symmetric_periodogram(grid: &Grid, coeffs: &[Complex64], out: &mut [f64]) {
    for (idx, o) in out.iter_mut().enumerate() {
        let j = grid.conj_index(idx);
        *o += (coeffs[idx].norm_sqr() + coeffs[j].norm_sqr()) * 0.5 / VOLUME;
    }
}

/// Periodogram estimates of `Ĝ_N(k)` and `Ĉ_N(k)`.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    pub grid: Arc<Grid>,
    pub components: usize,
    pub coupling: f64,
    pub rule: ProductRule,
    ghat: VecBatchMeans,
    chat_n: VecBatchMeans,
    /// Batches of `(|Ô₁|² - |Ô₁^Z|²)/(2π)²`.
    cv: Option<VecBatchMeans>,
    /// Batches of `N^{-1} Σ_i (|Φ̂_i|² - |Ẑ_i|²)/(2π)²`.
    chat_cv: Option<VecBatchMeans>,
    snapshots: u64,
    scratch: Vec<f64>,
}

impl SpectrumEstimate {
    pub fn new(
        grid: &Arc<Grid>,
        components: usize,
        coupling: f64,
        rule: ProductRule,
        batch_len: usize,
        control_variate: bool,
    ) -> Self {
        let len = grid.len();
        Self {
            grid: grid.clone(),
            components,
            coupling,
            rule,
            ghat: VecBatchMeans::new(len, batch_len),
            chat_n: VecBatchMeans::new(len, batch_len),
            cv: control_variate.then(|| VecBatchMeans::new(len, batch_len)),
            chat_cv: control_variate.then(|| VecBatchMeans::new(len, batch_len)),
            snapshots: 0,
            scratch: vec![0.0; len],
        }
    }

    pub fn snapshots(&self) -> u64 {
        self.snapshots
    }

    pub fn batches(&self) -> usize {
        self.ghat.batches()
    }

    /// Adds one snapshot: `|Ô₁(k)|²/(2π)²` and `N^{-1} Σ_i |Φ̂_i(k)|²/(2π)²`,
    /// plus the control-variate differences when the linear parts
    /// `(Ô₁^Z, Ẑ_i)` are given.
    pub fn accumulate(
        &mut self,
        o1: &[Complex64],
        phi: &[&SpectralField],
        linear: Option<(&[Complex64], &[&SpectralField])>,
    ) -> Result<()> {
        let len = self.grid.len();
        if o1.len() != len {
            return Err(Error::GridMismatch {
                expected: len,
                found: o1.len(),
            });
        }
        let grid = &*self.grid;
        self.ghat.push_with(|s| symmetric_periodogram(grid, o1, s));
        let inv_n = 1.0 / phi.len().max(1) as f64;
        self.chat_n.push_with(|s| {
            for f in phi {
                for (idx, c) in f.coeffs().iter().enumerate() {
                    let j = grid.conj_index(idx);
                    s[idx] += (c.norm_sqr() + f.coeffs()[j].norm_sqr()) * 0.5 / VOLUME * inv_n;
                }
            }
        });
        if let (Some(cv), Some(chat_cv), Some((z, zs))) = (self.cv.as_mut(), self.chat_cv.as_mut(), linear) {
            let tmp = &mut self.scratch;
            tmp.iter_mut().for_each(|v| *v = 0.0);
            symmetric_periodogram(grid, o1, tmp);
            for (idx, t) in tmp.iter_mut().enumerate() {
                let j = grid.conj_index(idx);
                *t -= (z[idx].norm_sqr() + z[j].norm_sqr()) * 0.5 / VOLUME;
            }
            cv.push(tmp);
            chat_cv.push_with(|s| {
                for (f, zf) in phi.iter().zip(zs) {
                    let (c, d) = (f.coeffs(), zf.coeffs());
                    for idx in 0..s.len() {
                        let j = grid.conj_index(idx);
                        let diff = c[idx].norm_sqr() + c[j].norm_sqr() - d[idx].norm_sqr() - d[j].norm_sqr();
                        s[idx] += diff * 0.5 / VOLUME * inv_n;
                    }
                }
            });
        }
        self.snapshots += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &SpectrumEstimate) {
        self.ghat.merge(&other.ghat);
        self.chat_n.merge(&other.chat_n);
        if let (Some(a), Some(b)) = (self.cv.as_mut(), other.cv.as_ref()) {
            a.merge(b);
        }
        if let (Some(a), Some(b)) = (self.chat_cv.as_mut(), other.chat_cv.as_ref()) {
            a.merge(b);
        }
        self.snapshots += other.snapshots;
    }

    pub fn ghat(&self) -> Vec<Estimate> {
        self.ghat.estimates()
    }

    pub fn chat_n(&self) -> Vec<Estimate> {
        self.chat_n.estimates()
    }

    /// The free spectrum the estimator converges to at `λ = 0` under this
    /// estimate's product rule.
    pub fn free_baseline(&self) -> Vec<f64> {
        let b = match self.rule {
            ProductRule::AliasFree => chat_sq(&self.grid),
            ProductRule::Grid => chat_sq_periodic(&self.grid),
        };
        b.into_iter().map(|v| 2.0 * v).collect()
    }

    /// Control-variate estimate `2(C²)^ + E[|Ô₁|² - |Ô₁^Z|²]/(2π)²`.
    pub fn ghat_cv(&self) -> Option<Vec<Estimate>> {
        let cv = self.cv.as_ref()?;
        let base = self.free_baseline();
        Some(
            cv.estimates()
                .into_iter()
                .zip(base)
                .map(|(e, b)| Estimate {
                    mean: e.mean + b,
                    ..e
                })
                .collect(),
        )
    }

    /// Control-variate estimate `Ĉ(k) + E[N^{-1} Σ_i (|Φ̂_i|² - |Ẑ_i|²)]/(2π)²`.
    pub fn chat_n_cv(&self) -> Option<Vec<Estimate>> {
        let cv = self.chat_cv.as_ref()?;
        Some(
            cv.estimates()
                .into_iter()
                .zip(self.grid.chat_table())
                .map(|(e, c)| Estimate {
                    mean: e.mean + c,
                    ..e
                })
                .collect(),
        )
    }

    pub fn has_control_variate(&self) -> bool {
        self.cv.is_some()
    }

    /// Per-batch `(Ĝ_N, Ĉ_N)` vectors, control-variate corrected when
    /// available.
    pub fn paired_batches(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        match (&self.cv, &self.chat_cv) {
            (Some(g), Some(c)) => {
                let base = self.free_baseline();
                g.batch_means()
                    .iter()
                    .zip(c.batch_means())
                    .map(|(g, c)| {
                        let g = g.iter().zip(&base).map(|(a, b)| a + b).collect();
                        let c = c.iter().zip(self.grid.chat_table()).map(|(a, b)| a + b).collect();
                        (g, c)
                    })
                    .collect()
            }
            _ => self
                .ghat
                .batch_means()
                .iter()
                .cloned()
                .zip(self.chat_n.batch_means().iter().cloned())
                .collect(),
        }
    }

    /// Batch-level average over a set of modes (e.g. a shell), so that error
    /// bars account for correlations between the modes.
    pub fn ghat_over(&self, modes: &[usize]) -> Estimate {
        average_over(&self.ghat, modes, 0.0)
    }

    pub fn ghat_cv_over(&self, modes: &[usize]) -> Option<Estimate> {
        let base = self.free_baseline();
        let offset = modes.iter().map(|&i| base[i]).sum::<f64>() / modes.len() as f64;
        self.cv.as_ref().map(|cv| average_over(cv, modes, offset))
    }

    pub fn chat_n_over(&self, modes: &[usize]) -> Estimate {
        average_over(&self.chat_n, modes, 0.0)
    }

    pub fn ghat_batches(&self) -> &[Vec<f64>] {
        self.ghat.batch_means()
    }

    pub fn chat_n_batches(&self) -> &[Vec<f64>] {
        self.chat_n.batch_means()
    }
}

fn average_over(vbm: &VecBatchMeans, modes: &[usize], offset: f64) -> Estimate {
    let vals: Vec<f64> = vbm
        .batch_means()
        .iter()
        .map(|b| modes.iter().map(|&i| b[i]).sum::<f64>() / modes.len() as f64 + offset)
        .collect();
    mean_and_stderr(&vals)
}

/// Feeds thinned snapshots into a [`SpectrumEstimate`].
#[derive(Debug, Clone)]
pub struct SpectrumObserver {
    pub estimate: SpectrumEstimate,
    o1: O1Transform,
}

impl SpectrumObserver {
    pub fn new(estimate: SpectrumEstimate, a: f64) -> Self {
        let o1 = O1Transform::new(&estimate.grid, a, estimate.rule);
        Self { estimate, o1 }
    }
}

impl Observer for SpectrumObserver {
    fn observe(&mut self, snap: &Snapshot<'_>) -> Result<()> {
        let sys = snap.system;
        let n = sys.components();
        let phi: Vec<SpectralField> = (0..n).map(|i| sys.phi_hat(i)).collect();
        let refs: Vec<&SpectralField> = phi.iter().collect();
        let o1 = self.o1.compute(&refs).to_vec();
        if !self.estimate.has_control_variate() {
            return self.estimate.accumulate(&o1, &refs, None);
        }
        let z: Vec<&SpectralField> = (0..n)
            .map(|i| sys.z_hat(i))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Config("the control-variate spectrum needs the ddd scheme".into()))?;
        let o1_z = self.o1.compute(&z).to_vec();
        self.estimate.accumulate(&o1, &refs, Some((&o1_z, &z)))
    }
}

/// Running estimates of `E O₂` and of the control-variate form
/// `E[O₂ - O₂^Z]` (valid because `E O₂^Z = 0` exactly).
#[derive(Debug, Clone)]
pub struct O2Observer {
    pub plain: BatchMeans,
    pub cv: BatchMeans,
    sum: f64,
    count: u64,
    /// `(t, O₂, running mean)` per snapshot.
    pub trace: Vec<(f64, f64, f64)>,
}

impl O2Observer {
    pub fn new(batch_len: usize) -> Self {
        Self {
            plain: BatchMeans::new(batch_len),
            cv: BatchMeans::new(batch_len),
            sum: 0.0,
            count: 0,
            trace: Vec::new(),
        }
    }

    pub fn running_mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    pub fn merge(&mut self, other: &O2Observer) {
        self.plain.merge(&other.plain);
        self.cv.merge(&other.cv);
        self.sum += other.sum;
        self.count += other.count;
    }
}

impl Observer for O2Observer {
    fn observe(&mut self, snap: &Snapshot<'_>) -> Result<()> {
        let real = snap.real();
        let a = snap.system.wick().a;
        let o2 = o2_from_phi(&real.phi, a);
        self.plain.push(o2);
        if let Some(z) = &real.z {
            self.cv.push(o2 - o2_from_phi(z, a));
        }
        self.sum += o2;
        self.count += 1;
        self.trace.push((snap.time, o2, self.running_mean()));
        Ok(())
    }
}

/// `2 (C²)^(k)` over `Λ*`.
pub fn theory_free(grid: &Grid) -> Vec<f64> {
    chat_sq(grid).into_iter().map(|b| 2.0 * b).collect()
}

/// `2B / (1 + 2B)` for `B = (C²)^(k)`.
pub fn limit_from_chat_sq(b: f64) -> f64 {
    2.0 * b / (1.0 + 2.0 * b)
}

/// Large-N spectrum `2(C²)^/(1 + 2(C²)^)` over `Λ*`.
pub fn theory_limit_spectrum(grid: &Grid) -> Vec<f64> {
    chat_sq(grid).into_iter().map(limit_from_chat_sq).collect()
}

/// Predicted deficit `free − limit = 2B · 2B/(1 + 2B)`.
pub fn predicted_deficit(b: f64) -> f64 {
    2.0 * b * limit_from_chat_sq(b)
}

/// Large-N value of `E O₂`: `-4 (2π)^{-2} Σ_{k∈Λ*} B(k)² / (1 + 2B(k))`.
///
/// The `(2π)^{-2}` is the Parseval factor of the `[0, 2π)²` torus, fixed by
/// matching the first-order expansion `E O₂ = -4 (N+2)/N ∫C⁴ + O(λ²)`.
pub fn theory_o2_limit(grid: &Grid) -> f64 {
    o2_limit_from_chat_sq(&chat_sq(grid))
}

pub fn o2_limit_from_chat_sq(b: &[f64]) -> f64 {
    -4.0 * b.iter().map(|b| b * b / (1.0 + 2.0 * b)).sum::<f64>() / VOLUME
}

/// Dyson–Schwinger residual
/// `(½ + ((N+2)/N) B(k)) Ĝ_N(k) - (2π)^{-2} Σ_{k₁} Ĉ(k₁) Ĉ_N(k - k₁)`.
///
/// `periodic` selects aliased sums (`B` and the convolution taken mod `M`),
/// which is the form satisfied exactly by grid products.
pub fn ds_residual(
    grid: &Grid,
    ghat: &[f64],
    chat_n: &[f64],
    components: usize,
    periodic: bool,
) -> Result<Vec<f64>> {
    if ghat.len() != grid.len() || chat_n.len() != grid.len() {
        return Err(Error::param("ds_residual", "Ĝ_N and Ĉ_N must cover Λ*"));
    }
    let b = if periodic {
        chat_sq_periodic(grid)
    } else {
        chat_sq(grid)
    };
    let cc = convolve(grid, grid.chat_table(), chat_n, periodic);
    let n = components as f64;
    Ok((0..grid.len())
        .map(|k| (0.5 + (n + 2.0) / n * b[k]) * ghat[k] - cc[k])
        .collect())
}

/// Residual with batch-level error bars: each batch's `Ĝ_N`, `Ĉ_N` means
/// (control-variate corrected when recorded) give one residual vector.
pub fn ds_residual_batches(
    grid: &Grid,
    estimate: &SpectrumEstimate,
    periodic: bool,
    modes: &[usize],
) -> Result<Vec<Estimate>> {
    let pairs = estimate.paired_batches();
    if pairs.is_empty() {
        return Err(Error::EmptySample("ds residual"));
    }
    let per_batch: Vec<Vec<f64>> = pairs
        .iter()
        .map(|(g, c)| ds_residual(grid, g, c, estimate.components, periodic))
        .collect::<Result<_>>()?;
    Ok(modes
        .iter()
        .map(|&k| mean_and_stderr(&per_batch.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect())
}

/// The coercive quantities `(1/N) Σ ‖Y_j‖²`, `(1/N) Σ ‖∇Y_j‖²` and
/// `‖(1/N) Σ Y_j²‖²`, all in `L²(T²)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyTerms {
    pub l2: f64,
    pub grad: f64,
    pub square: f64,
}

pub fn energy_diagnostics(grid: &Grid, y: &[RealField]) -> Result<EnergyTerms> {
    if y.is_empty() {
        return Err(Error::EmptySample("energy diagnostics"));
    }
    let tr = SpectralTransform::new(grid);
    let hats: Vec<SpectralField> = y.iter().map(|f| tr.forward(f)).collect::<Result<_>>()?;
    let real: Vec<&[f64]> = y.iter().map(|f| f.values()).collect();
    Ok(energy_from_parts(grid, &hats.iter().collect::<Vec<_>>(), &real))
}

fn energy_from_parts(grid: &Grid, hats: &[&SpectralField], real: &[&[f64]]) -> EnergyTerms {
    let n = hats.len() as f64;
    let l2 = hats.iter().map(|f| sobolev_norm_sq(grid, f, 0.0)).sum::<f64>() / n;
    let grad = hats
        .iter()
        .map(|f| crate::spectral::gradient_norm_sq(grid, f))
        .sum::<f64>()
        / n;
    let mut sq = vec![0.0; grid.len()];
    for f in real {
        for (s, v) in sq.iter_mut().zip(f.iter()) {
            *s += v * v;
        }
    }
    sq.iter_mut().for_each(|s| *s /= n);
    EnergyTerms {
        l2,
        grad,
        square: crate::spectral::l2_norm_sq_real(grid, &sq),
    }
}

/// One row of the diagnostics time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub energy: EnergyTerms,
    /// `(1/N) Σ_j ‖Y_j‖²_{H¹}`.
    pub h1: f64,
    pub o2: f64,
    pub o2_running_mean: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DiagnosticsRecord {
    pub rows: Vec<DiagnosticsRow>,
    o2_sum: f64,
}

impl DiagnosticsRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Running maximum of each energy term at the end of the record divided
    /// by its running maximum at `t_ref` (maxima taken from the first row).
    pub fn running_max_ratio(&self, t_ref: f64) -> Option<[f64; 3]> {
        if self.rows.last()?.t < t_ref - 1e-9 {
            return None;
        }
        let terms = |r: &DiagnosticsRow| [r.energy.l2, r.energy.grad, r.energy.square];
        let mut early = [0.0_f64; 3];
        let mut all = [0.0_f64; 3];
        for row in &self.rows {
            for (k, v) in terms(row).into_iter().enumerate() {
                all[k] = all[k].max(v);
                if row.t <= t_ref + 1e-9 {
                    early[k] = early[k].max(v);
                }
            }
        }
        Some([all[0] / early[0], all[1] / early[1], all[2] / early[2]])
    }
}

impl Observer for DiagnosticsRecord {
    fn observe(&mut self, snap: &Snapshot<'_>) -> Result<()> {
        let sys = snap.system;
        let grid = sys.grid();
        let real = snap.real();
        let y_real = real
            .y
            .as_ref()
            .ok_or_else(|| Error::Config("diagnostics need the ddd scheme".into()))?;
        let hats: Vec<&SpectralField> = (0..sys.components())
            .map(|i| sys.y_hat(i).expect("ddd scheme"))
            .collect();
        let slices: Vec<&[f64]> = y_real.iter().map(|v| v.as_slice()).collect();
        let energy = energy_from_parts(grid, &hats, &slices);
        let h1 = energy.l2 + energy.grad;
        let o2 = o2_from_phi(&real.phi, sys.wick().a);
        self.o2_sum += o2;
        let o2_running_mean = self.o2_sum / (self.rows.len() + 1) as f64;
        self.rows.push(DiagnosticsRow {
            t: snap.time,
            energy,
            h1,
            o2,
            o2_running_mean,
        });
        Ok(())
    }
}

/// Stationary average of `(1/N) Σ_j ‖Y_j‖²_{H¹}`.
#[derive(Debug, Clone)]
pub struct H1GapObserver {
    pub components: usize,
    pub batches: BatchMeans,
}

impl H1GapObserver {
    pub fn new(components: usize, batch_len: usize) -> Self {
        Self {
            components,
            batches: BatchMeans::new(batch_len),
        }
    }

    pub fn merge(&mut self, other: &H1GapObserver) {
        self.batches.merge(&other.batches);
    }

    /// `(N, estimate)`.
    pub fn h1_gap(&self) -> Result<(usize, Estimate)> {
        if self.batches.batch_means().is_empty() {
            return Err(Error::EmptySample("H¹ gap"));
        }
        Ok((self.components, self.batches.estimate()))
    }
}

impl Observer for H1GapObserver {
    fn observe(&mut self, snap: &Snapshot<'_>) -> Result<()> {
        let sys = snap.system;
        let n = sys.components();
        let mut total = 0.0;
        for i in 0..n {
            let y = sys
                .y_hat(i)
                .ok_or_else(|| Error::Config("the H¹ gap needs the ddd scheme".into()))?;
            total += sobolev_norm_sq(sys.grid(), y, 1.0);
        }
        self.batches.push(total / n as f64);
        Ok(())
    }
}

/// Cross-component correlations of the projections `u_i = ⟨Φ_i, φ⟩`.
///
/// Under `Φ_1 → −Φ_1` the linear correlation of `u_1`, `u_2` vanishes for
/// every `N`, so factorization is measured on the squares: the pooled
/// correlation of `u_i²` and `u_j²` over all pairs `i ≠ j`.
///
/// When the split state is available the same moments of the `Z`
/// projections are recorded too; the `Z_i` are independent, so their
/// cross-covariance has mean exactly zero and serves as a control variate.
#[derive(Debug, Clone)]
pub struct ChaosObserver {
    test_fn: Vec<f64>,
    weight: f64,
    components: usize,
    /// Per snapshot: `mean u²`, `mean u⁴`, `mean_{i≠j} u_i² u_j²`, `u_1 u_2`,
    /// `u_1²`, `u_2²`, then `mean z²`, `mean_{i≠j} z_i² z_j²` for the `Z`
    /// projections (zero when absent).
    pub batches: VecBatchMeans,
    with_z: bool,
}

impl ChaosObserver {
    pub fn new(grid: &Grid, test_fn: &RealField, components: usize, batch_len: usize) -> Result<Self> {
        if components < 2 {
            return Err(Error::param("dynamics.components", "the chaos metric needs N ≥ 2"));
        }
        if test_fn.values().iter().all(|&v| v == 0.0) {
            return Err(Error::param("chaos.test_function", "test function must be nonzero"));
        }
        if test_fn.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                found: test_fn.len(),
            });
        }
        let h = grid.spacing();
        Ok(Self {
            test_fn: test_fn.values().to_vec(),
            weight: h * h,
            components,
            batches: VecBatchMeans::new(8, batch_len),
            with_z: false,
        })
    }

    pub fn projections(&self, phi: &[Vec<f64>]) -> Vec<f64> {
        phi.iter()
            .map(|f| f.iter().zip(&self.test_fn).map(|(a, b)| a * b).sum::<f64>() * self.weight)
            .collect()
    }

    pub fn push_projections(&mut self, u: &[f64]) {
        self.push_row(u, None);
    }

    /// Pushes `Φ` projections together with the matching `Z` projections.
    pub fn push_split_projections(&mut self, u: &[f64], z: &[f64]) {
        self.with_z = true;
        self.push_row(u, Some(z));
    }

    fn push_row(&mut self, u: &[f64], z: Option<&[f64]>) {
        let n = u.len() as f64;
        let moments = |v: &[f64]| {
            let s1: f64 = v.iter().map(|x| x * x).sum();
            let s2: f64 = v.iter().map(|x| x.powi(4)).sum();
            (s1, s2)
        };
        let (s1, s2) = moments(u);
        let (z1, z2) = z.map_or((0.0, 0.0), moments);
        let row = [
            s1 / n,
            s2 / n,
            (s1 * s1 - s2) / (n * (n - 1.0)),
            u[0] * u[1],
            u[0] * u[0],
            u[1] * u[1],
            z1 / n,
            (z1 * z1 - z2) / (n * (n - 1.0)),
        ];
        self.batches.push(&row);
    }

    pub fn merge(&mut self, other: &ChaosObserver) {
        self.batches.merge(&other.batches);
        self.with_z |= other.with_z;
    }

    /// Pooled `corr(u_i², u_j²)`, `i ≠ j`.
    pub fn squared_correlation(&self) -> Estimate {
        jackknife(self.batches.batch_means(), |m| {
            let var = m[1] - m[0] * m[0];
            (m[2] - m[0] * m[0]) / var
        })
    }

    /// Pooled `corr(u_i², u_j²)` with the `Z` cross-covariance subtracted;
    /// `None` unless `Z` projections were recorded.
    pub fn squared_correlation_cv(&self) -> Option<Estimate> {
        self.with_z.then(|| {
            jackknife(self.batches.batch_means(), |m| {
                let var = m[1] - m[0] * m[0];
                ((m[2] - m[0] * m[0]) - (m[7] - m[6] * m[6])) / var
            })
        })
    }

    /// `corr(⟨Φ_1, φ⟩, ⟨Φ_2, φ⟩)` (centered by symmetry).
    pub fn linear_correlation(&self) -> Estimate {
        jackknife(self.batches.batch_means(), |m| m[3] / (m[4] * m[5]).sqrt())
    }

    pub fn components(&self) -> usize {
        self.components
    }
}

impl Observer for ChaosObserver {
    fn observe(&mut self, snap: &Snapshot<'_>) -> Result<()> {
        let real = snap.real();
        let u = self.projections(&real.phi);
        match &real.z {
            Some(z) => {
                let zu = self.projections(z);
                self.push_split_projections(&u, &zu);
            }
            None => self.push_projections(&u),
        }
        Ok(())
    }
}

/// `chaos_metric` over a set of stationary samples of `Φ` (each sample is
/// the list of `N` real-space components).
pub fn chaos_metric(grid: &Grid, samples: &[Vec<Vec<f64>>], test_fn: &RealField) -> Result<Estimate> {
    let n = samples.first().map_or(0, |s| s.len());
    let mut obs = ChaosObserver::new(grid, test_fn, n, 1)?;
    for s in samples {
        let u = obs.projections(s);
        obs.push_projections(&u);
    }
    Ok(obs.squared_correlation())
}
