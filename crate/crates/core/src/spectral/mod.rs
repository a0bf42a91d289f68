//! Torus discretization, Fourier conventions, and covariance algebra.
//!
//! The torus is `[0, 2π)²`, sampled at the `M × M` collocation points
//! `x_j = 2π j / M`. Spectral coefficients follow the continuum pair
//!
//! ```text
//!     f̂(k) = ∫ f(x) e^{-ik·x} dx,        f(x) = (2π)^{-2} Σ_k f̂(k) e^{ik·x}
//! ```
//!
//! restricted to the mode set `Λ* = {-M/2, …, M/2-1}²`. Coefficients are
//! stored in FFT order, so index `a1 * M + a2` holds the wavevector
//! `(k1, k2)` with `k = a` for `a < M/2` and `k = a - M` otherwise.

mod covariance;
mod grid;
mod transform;

pub use covariance::{chat_sq, chat_sq_periodic, convolve, CovarianceTable};
pub use grid::{Grid, RealField, SpectralField, Wavevector};
pub use transform::{SpectralTransform, Workspace};

/// `(2π)²`, the torus volume.
pub const VOLUME: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;

/// `(2π)^{-2} Σ_k (1 + |k|²)^s |f̂(k)|²`. With `s = 0` this is `‖f‖²_{L²(T²)}`.
pub fn sobolev_norm_sq(grid: &Grid, field: &SpectralField, s: f64) -> f64 {
    debug_assert_eq!(field.len(), grid.len());
    let sum: f64 = field
        .coeffs()
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let weight = if s == 0.0 {
                1.0
            } else {
                (1.0 + grid.wavevector(idx).norm_sq() as f64).powf(s)
            };
            weight * c.norm_sqr()
        })
        .sum();
    sum / VOLUME
}

/// `‖∇f‖²_{L²} = (2π)^{-2} Σ_k |k|² |f̂(k)|²`.
pub fn gradient_norm_sq(grid: &Grid, field: &SpectralField) -> f64 {
    let sum: f64 = field
        .coeffs()
        .iter()
        .enumerate()
        .map(|(idx, c)| grid.wavevector(idx).norm_sq() as f64 * c.norm_sqr())
        .sum();
    sum / VOLUME
}

/// `∫ f² dx` evaluated on the collocation points (exact for band-limited `f`).
pub fn l2_norm_sq_real(grid: &Grid, values: &[f64]) -> f64 {
    let h = grid.spacing();
    values.iter().map(|v| v * v).sum::<f64>() * h * h
}

/// Spatial mean of collocation values.
pub fn spatial_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn cos_x1(grid: &Grid) -> RealField {
        let m = grid.modes();
        RealField::from_fn(grid, |j1, _| (2.0 * PI * j1 as f64 / m as f64).cos())
    }

    #[test]
    fn sobolev_of_constant() {
        let grid = Grid::new(8, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&grid);
        let f = tr.forward(&RealField::constant(&grid, 3.0)).unwrap();
        let v = sobolev_norm_sq(&grid, &f, 0.0);
        assert!((v - VOLUME * 9.0).abs() < 1e-10 * v);
    }

    #[test]
    fn sobolev_of_cosine() {
        let grid = Grid::new(16, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&grid);
        let f = tr.forward(&cos_x1(&grid)).unwrap();
        // ∫cos² over the torus is (2π)²/2 = 2π²; the H¹ multiplier at |k|=1 doubles it.
        assert!((sobolev_norm_sq(&grid, &f, 0.0) - 2.0 * PI * PI).abs() < 1e-10);
        assert!((sobolev_norm_sq(&grid, &f, 1.0) - 4.0 * PI * PI).abs() < 1e-10);
        assert!((gradient_norm_sq(&grid, &f) - 2.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn l2_real_matches_spectral() {
        let grid = Grid::new(8, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&grid);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
        let i = grid.index_of(Wavevector::new(1, 2)).unwrap();
        coeffs[i] = Complex64::new(2.0, -1.0);
        coeffs[grid.conj_index(i)] = Complex64::new(2.0, 1.0);
        let f = SpectralField::from_coeffs(&grid, coeffs).unwrap();
        let real = tr.inverse(&f).unwrap();
        let a = l2_norm_sq_real(&grid, real.values());
        let b = sobolev_norm_sq(&grid, &f, 0.0);
        assert!((a - b).abs() < 1e-12 * b);
    }
}
