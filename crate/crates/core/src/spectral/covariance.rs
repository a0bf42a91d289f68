use super::grid::Grid;
use super::VOLUME;

/// `Ĉ` and `(C²)^` tabulated over `Λ*` in storage order.
#[derive(Debug, Clone)]
pub struct CovarianceTable {
    pub chat: Vec<f64>,
    pub chat_sq: Vec<f64>,
}

impl CovarianceTable {
    pub fn new(grid: &Grid) -> Self {
        Self {
            chat: grid.chat_table().to_vec(),
            chat_sq: chat_sq(grid),
        }
    }
}

/// Fourier coefficients of the product of two real even fields given by
/// their coefficient tables: `(2π)^{-2} Σ_{k₁} f(k₁) g(k - k₁)`.
///
/// With `periodic = false` only pairs with `k - k₁ ∈ Λ*` contribute (the
/// exact product of Galerkin-truncated fields). With `periodic = true`,
/// `k - k₁` is reduced mod `M`, which is what a pointwise product on the
/// collocation grid produces.
pub fn convolve(grid: &Grid, f: &[f64], g: &[f64], periodic: bool) -> Vec<f64> {
    let n = grid.len();
    let mut out = vec![0.0; n];
    for (idx, slot) in out.iter_mut().enumerate() {
        let k = grid.wavevector(idx);
        let mut acc = 0.0;
        for (i1, &f1) in f.iter().enumerate() {
            if f1 == 0.0 {
                continue;
            }
            let diff = k.sub(grid.wavevector(i1));
            let partner = if periodic {
                Some(grid.wrapped_index(diff))
            } else {
                grid.index_of(diff)
            };
            if let Some(i2) = partner {
                acc += f1 * g[i2];
            }
        }
        *slot = acc / VOLUME;
    }
    out
}

/// `(C²)^(k) = (2π)^{-2} Σ_{k₁, k-k₁ ∈ Λ*} Ĉ(k₁) Ĉ(k - k₁)`.
pub fn chat_sq(grid: &Grid) -> Vec<f64> {
    convolve(grid, grid.chat_table(), grid.chat_table(), false)
}

/// The aliased counterpart of [`chat_sq`]: the exact spectrum of `C²` when
/// the square is taken pointwise on the collocation grid.
pub fn chat_sq_periodic(grid: &Grid) -> Vec<f64> {
    convolve(grid, grid.chat_table(), grid.chat_table(), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Wavevector;

    #[test]
    fn single_mode_value() {
        // M = 2 is the smallest grid; restrict the table to the zero mode by
        // zeroing everything else to emulate Λ* = {(0,0)}.
        let grid = Grid::new(2, 1.0, false).unwrap();
        let mut only_zero = vec![0.0; grid.len()];
        only_zero[0] = 0.5;
        let c2 = convolve(&grid, &only_zero, &only_zero, false);
        assert!((c2[0] - 0.25 / VOLUME).abs() < 1e-15);
        assert!((c2[0] - 6.3326e-3).abs() < 1e-6);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        for periodic in [false, true] {
            let grid = Grid::new(12, 0.7, false).unwrap();
            let c2 = convolve(&grid, grid.chat_table(), grid.chat_table(), periodic);
            for idx in 0..grid.len() {
                assert!(c2[idx] >= 0.0);
                let k = grid.wavevector(idx);
                let swapped = grid.index_of(Wavevector::new(k.k2, k.k1)).unwrap();
                assert!((c2[idx] - c2[swapped]).abs() <= 1e-13 * c2[idx]);
                // Λ* is not symmetric at the Nyquist edge, so only the
                // aliased sum is exactly even
                if periodic {
                    let j = grid.wrapped_index(k.neg());
                    assert!((c2[idx] - c2[j]).abs() <= 1e-13 * c2[idx]);
                }
            }
        }
    }

    #[test]
    fn periodic_exceeds_truncated_by_aliased_pairs() {
        let grid = Grid::new(8, 1.0, false).unwrap();
        let t = chat_sq(&grid);
        let p = chat_sq_periodic(&grid);
        let zero = grid.index_of(Wavevector::new(0, 0)).unwrap();
        assert!(p[zero] > t[zero]);
        assert!((p[zero] - t[zero]) / t[zero] < 0.02);
    }
}
