use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::{Grid, RealField, SpectralField};
use super::VOLUME;
use crate::error::{Error, Result};

/// Scratch buffers for one worker. Fields own their data; a workspace is
/// reused across calls to avoid per-step allocation.
#[derive(Debug, Clone)]
pub struct Workspace {
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

/// Discrete realization of the continuum Fourier pair on the collocation grid.
///
/// With `h = 2π/M` and `DFT` the unnormalized 2D transform,
///
/// ```text
///     f̂(k) = h² · DFT[f](k),            f(x_j) = (2π)^{-2} · IDFT[f̂](j)
/// ```
///
/// so that `Σ_j |f(x_j)|² h² = (2π)^{-2} Σ_k |f̂(k)|²` holds exactly
/// (discrete Parseval).
#[derive(Clone)]
pub struct SpectralTransform {
    modes: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl std::fmt::Debug for SpectralTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralTransform")
            .field("modes", &self.modes)
            .finish()
    }
}

impl SpectralTransform {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.modes());
        let inverse = planner.plan_fft_inverse(grid.modes());
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            modes: grid.modes(),
            forward,
            inverse,
            scratch_len,
        }
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            buf: vec![Complex64::new(0.0, 0.0); self.modes * self.modes],
            scratch: vec![Complex64::new(0.0, 0.0); self.scratch_len],
        }
    }

    fn len(&self) -> usize {
        self.modes * self.modes
    }

    fn transpose(&self, buf: &mut [Complex64]) {
        let m = self.modes;
        for r in 0..m {
            for c in r + 1..m {
                buf.swap(r * m + c, c * m + r);
            }
        }
    }

    fn dft_2d(&self, plan: &dyn Fft<f64>, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        plan.process_with_scratch(buf, scratch);
        self.transpose(buf);
        plan.process_with_scratch(buf, scratch);
        self.transpose(buf);
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::GridMismatch {
                expected: self.len(),
                found: n,
            });
        }
        Ok(())
    }

    /// Forward transform of real collocation values into `out`.
    pub fn forward_into(&self, values: &[f64], out: &mut [Complex64], ws: &mut Workspace) {
        debug_assert_eq!(values.len(), self.len());
        let h = 2.0 * std::f64::consts::PI / self.modes as f64;
        for (o, &v) in out.iter_mut().zip(values) {
            *o = Complex64::new(v, 0.0);
        }
        self.dft_2d(self.forward.as_ref(), out, &mut ws.scratch);
        let scale = h * h;
        for o in out.iter_mut() {
            *o *= scale;
        }
    }

    /// Forward transform of complex collocation values (no symmetry assumed).
    pub fn forward_complex_into(&self, values: &[Complex64], out: &mut [Complex64], ws: &mut Workspace) {
        let h = 2.0 * std::f64::consts::PI / self.modes as f64;
        out.copy_from_slice(values);
        self.dft_2d(self.forward.as_ref(), out, &mut ws.scratch);
        let scale = h * h;
        for o in out.iter_mut() {
            *o *= scale;
        }
    }

    /// Inverse transform of an arbitrary spectrum into complex values.
    pub fn inverse_complex_into(&self, coeffs: &[Complex64], out: &mut [Complex64], ws: &mut Workspace) {
        out.copy_from_slice(coeffs);
        self.dft_2d(self.inverse.as_ref(), out, &mut ws.scratch);
        for o in out.iter_mut() {
            *o /= VOLUME;
        }
    }

    /// Inverse transform of one Hermitian spectrum; writes the real part.
    pub fn inverse_into(&self, coeffs: &[Complex64], out: &mut [f64], ws: &mut Workspace) {
        debug_assert_eq!(coeffs.len(), self.len());
        ws.buf.copy_from_slice(coeffs);
        self.dft_2d(self.inverse.as_ref(), &mut ws.buf, &mut ws.scratch);
        for (o, c) in out.iter_mut().zip(&ws.buf) {
            *o = c.re / VOLUME;
        }
    }

    /// Inverse transform of two Hermitian spectra with a single complex FFT:
    /// `IDFT[a + i b] = IDFT[a] + i IDFT[b]` with both images real.
    pub fn inverse_pair_into(
        &self,
        a: &[Complex64],
        b: &[Complex64],
        out_a: &mut [f64],
        out_b: &mut [f64],
        ws: &mut Workspace,
    ) {
        let i = Complex64::new(0.0, 1.0);
        for ((dst, &x), &y) in ws.buf.iter_mut().zip(a).zip(b) {
            *dst = x + i * y;
        }
        self.dft_2d(self.inverse.as_ref(), &mut ws.buf, &mut ws.scratch);
        for ((oa, ob), c) in out_a.iter_mut().zip(out_b.iter_mut()).zip(&ws.buf) {
            *oa = c.re / VOLUME;
            *ob = c.im / VOLUME;
        }
    }

    pub fn forward(&self, field: &RealField) -> Result<SpectralField> {
        self.check(field.len())?;
        let mut ws = self.workspace();
        let mut out = vec![Complex64::new(0.0, 0.0); self.len()];
        self.forward_into(field.values(), &mut out, &mut ws);
        Ok(SpectralField::from_raw(self.modes, out))
    }

    pub fn inverse(&self, field: &SpectralField) -> Result<RealField> {
        Ok(self.inverse_with_imag(field)?.0)
    }

    /// Inverse transform that also reports `max|Im| / max|Re|` of the image,
    /// which is round-off sized for Hermitian input.
    pub fn inverse_with_imag(&self, field: &SpectralField) -> Result<(RealField, f64)> {
        self.check(field.len())?;
        let mut ws = self.workspace();
        ws.buf.copy_from_slice(field.coeffs());
        self.dft_2d(self.inverse.as_ref(), &mut ws.buf, &mut ws.scratch);
        let re: Vec<f64> = ws.buf.iter().map(|c| c.re / VOLUME).collect();
        let max_re = re.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let max_im = ws.buf.iter().fold(0.0_f64, |a, c| a.max((c.im / VOLUME).abs()));
        let ratio = if max_re > 0.0 { max_im / max_re } else { max_im };
        Ok((RealField::from_raw(self.modes, re), ratio))
    }
}

impl RealField {
    pub(crate) fn from_raw(modes: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), modes * modes);
        RealField::from_parts(modes, values)
    }
}

impl SpectralField {
    pub(crate) fn from_raw(modes: usize, coeffs: Vec<Complex64>) -> Self {
        debug_assert_eq!(coeffs.len(), modes * modes);
        SpectralField::from_parts(modes, coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Wavevector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(grid: &Grid, seed: u64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealField::from_fn(grid, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_has_only_zero_mode() {
        let grid = Grid::new(8, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&grid);
        let f = tr.forward(&RealField::constant(&grid, 1.5)).unwrap();
        assert!((f.coeffs()[0].re - VOLUME * 1.5).abs() < 1e-12);
        for c in &f.coeffs()[1..] {
            assert!(c.norm() < 1e-12);
        }
    }

    #[test]
    fn cosine_coefficients() {
        let grid = Grid::new(8, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&grid);
        let m = grid.modes() as f64;
        let f = RealField::from_fn(&grid, |j1, _| (2.0 * PI * j1 as f64 / m).cos());
        let fh = tr.forward(&f).unwrap();
        let plus = grid.index_of(Wavevector::new(1, 0)).unwrap();
        let minus = grid.index_of(Wavevector::new(-1, 0)).unwrap();
        for (idx, c) in fh.coeffs().iter().enumerate() {
            let expect = if idx == plus || idx == minus {
                VOLUME / 2.0
            } else {
                0.0
            };
            assert!((c - Complex64::new(expect, 0.0)).norm() < 1e-12, "{idx}");
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        let grid = Grid::new(16, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&grid);
        for seed in 0..4 {
            let f = random_field(&grid, seed);
            let fh = tr.forward(&f).unwrap();
            assert!(fh.hermitian_defect(&grid) < 1e-13);
            let (back, imag) = tr.inverse_with_imag(&fh).unwrap();
            assert!(imag < 1e-12);
            let scale = f.values().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            for (a, b) in f.values().iter().zip(back.values()) {
                assert!((a - b).abs() <= 1e-12 * scale);
            }
            let h = grid.spacing();
            let real_side: f64 = f.values().iter().map(|v| v * v).sum::<f64>() * h * h;
            let spec_side: f64 =
                fh.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>() / VOLUME;
            assert!((real_side - spec_side).abs() < 1e-10 * real_side);
        }
    }

    #[test]
    fn pair_inverse_matches_single() {
        let grid = Grid::new(8, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&grid);
        let a = tr.forward(&random_field(&grid, 10)).unwrap();
        let b = tr.forward(&random_field(&grid, 11)).unwrap();
        let mut ws = tr.workspace();
        let mut ra = vec![0.0; grid.len()];
        let mut rb = vec![0.0; grid.len()];
        tr.inverse_pair_into(a.coeffs(), b.coeffs(), &mut ra, &mut rb, &mut ws);
        let sa = tr.inverse(&a).unwrap();
        let sb = tr.inverse(&b).unwrap();
        for i in 0..grid.len() {
            assert!((ra[i] - sa.values()[i]).abs() < 1e-12);
            assert!((rb[i] - sb.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_grid_is_an_error() {
        let g8 = Grid::new(8, 1.0, false).unwrap();
        let g4 = Grid::new(4, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&g8);
        assert!(matches!(
            tr.forward(&RealField::zeros(&g4)),
            Err(Error::GridMismatch { .. })
        ));
    }
}
