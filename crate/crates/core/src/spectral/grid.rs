use num_complex::Complex64;

use crate::error::{Error, Result};

/// An integer wavevector `k ∈ Z²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Wavevector {
    pub k1: i64,
    pub k2: i64,
}

impl Wavevector {
    pub const fn new(k1: i64, k2: i64) -> Self {
        Self { k1, k2 }
    }

    pub const fn norm_sq(self) -> i64 {
        self.k1 * self.k1 + self.k2 * self.k2
    }

    pub const fn neg(self) -> Self {
        Self::new(-self.k1, -self.k2)
    }

    pub const fn sub(self, other: Self) -> Self {
        Self::new(self.k1 - other.k1, self.k2 - other.k2)
    }
}

/// Galerkin truncation of the torus: `M` modes per axis and the
/// dispersion `λ_k = m + |k|²`.
#[derive(Debug, Clone)]
pub struct Grid {
    modes: usize,
    mass: f64,
    project_zero_mode: bool,
    dispersion: Vec<f64>,
    chat: Vec<f64>,
    conj: Vec<usize>,
}

impl Grid {
    pub fn new(modes: usize, mass: f64, project_zero_mode: bool) -> Result<Self> {
        if modes < 2 || modes % 2 != 0 {
            return Err(Error::param(
                "grid.modes",
                format!("M must be even and at least 2 (got {modes})"),
            ));
        }
        if !mass.is_finite() || mass < 0.0 {
            return Err(Error::param("grid.mass", format!("m must be ≥ 0 (got {mass})")));
        }
        if mass == 0.0 && !project_zero_mode {
            return Err(Error::param(
                "grid.mass",
                "m = 0 requires zero-mode projection",
            ));
        }
        let len = modes * modes;
        let mut grid = Grid {
            modes,
            mass,
            project_zero_mode,
            dispersion: vec![0.0; len],
            chat: vec![0.0; len],
            conj: vec![0; len],
        };
        for idx in 0..len {
            let k = grid.wavevector(idx);
            let lam = mass + k.norm_sq() as f64;
            grid.dispersion[idx] = lam;
            grid.chat[idx] = if idx == 0 && project_zero_mode {
                0.0
            } else {
                0.5 / lam
            };
            let (a1, a2) = (idx / modes, idx % modes);
            grid.conj[idx] = ((modes - a1) % modes) * modes + (modes - a2) % modes;
        }
        Ok(grid)
    }

    /// Modes per axis, `M`.
    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Number of retained modes (and collocation points), `M²`.
    pub fn len(&self) -> usize {
        self.modes * self.modes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn projects_zero_mode(&self) -> bool {
        self.project_zero_mode
    }

    /// Collocation spacing `h = 2π / M`.
    pub fn spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.modes as f64
    }

    pub fn wavevector(&self, idx: usize) -> Wavevector {
        let half = self.modes / 2;
        let signed = |a: usize| {
            if a < half {
                a as i64
            } else {
                a as i64 - self.modes as i64
            }
        };
        Wavevector::new(signed(idx / self.modes), signed(idx % self.modes))
    }

    /// Storage index of `k`, or `None` if `k ∉ Λ*`.
    pub fn index_of(&self, k: Wavevector) -> Option<usize> {
        let half = self.modes as i64 / 2;
        let slot = |c: i64| {
            if (-half..half).contains(&c) {
                Some(c.rem_euclid(self.modes as i64) as usize)
            } else {
                None
            }
        };
        Some(slot(k.k1)? * self.modes + slot(k.k2)?)
    }

    /// Storage index of `k` reduced modulo `M` (the aliased partner on the grid).
    pub fn wrapped_index(&self, k: Wavevector) -> usize {
        let m = self.modes as i64;
        (k.k1.rem_euclid(m) * m + k.k2.rem_euclid(m)) as usize
    }

    /// Index of the Hermitian partner `-k (mod M)`.
    pub fn conj_index(&self, idx: usize) -> usize {
        self.conj[idx]
    }

    /// `λ_k = m + |k|²`.
    pub fn dispersion(&self, idx: usize) -> f64 {
        self.dispersion[idx]
    }

    pub fn dispersions(&self) -> &[f64] {
        &self.dispersion
    }

    /// Whether mode `idx` carries dynamics (false only for a projected zero mode).
    pub fn is_active(&self, idx: usize) -> bool {
        !(idx == 0 && self.project_zero_mode)
    }

    /// `Ĉ(k) = 1 / (2(m + |k|²))`, zero for a projected zero mode.
    pub fn chat(&self, k: Wavevector) -> Result<f64> {
        let idx = self
            .index_of(k)
            .ok_or(Error::ModeOutOfRange(k.k1, k.k2))?;
        Ok(self.chat[idx])
    }

    pub fn chat_at(&self, idx: usize) -> f64 {
        self.chat[idx]
    }

    pub fn chat_table(&self) -> &[f64] {
        &self.chat
    }

    /// 2/3-rule retention: `max(|k1|, |k2|) ≤ M/3`.
    pub fn retained_by_two_thirds(&self, idx: usize) -> bool {
        let k = self.wavevector(idx);
        let cut = self.modes as i64 / 3;
        k.k1.abs() <= cut && k.k2.abs() <= cut
    }

    /// Indices grouped by `|k|²`, ascending; each group sorted by index.
    pub fn shells(&self) -> Vec<(i64, Vec<usize>)> {
        let mut shells: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
        for idx in 0..self.len() {
            if self.is_active(idx) {
                shells
                    .entry(self.wavevector(idx).norm_sq())
                    .or_default()
                    .push(idx);
            }
        }
        shells.into_iter().collect()
    }
}

/// Real values at the collocation points, row-major in `(j1, j2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    modes: usize,
    values: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            modes: grid.modes(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            modes: grid.modes(),
            values: vec![c; grid.len()],
        }
    }

    /// Builds a field from `f(j1, j2)` at `x = (2π j1/M, 2π j2/M)`.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let m = grid.modes();
        let values = (0..m * m).map(|i| f(i / m, i % m)).collect();
        Self { modes: m, values }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            modes: grid.modes(),
            values,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn from_parts(modes: usize, values: Vec<f64>) -> Self {
        Self { modes, values }
    }

    pub fn check_same_grid(&self, other: &RealField) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::GridMismatch {
                expected: self.values.len(),
                found: other.values.len(),
            });
        }
        Ok(())
    }
}

/// Spectral coefficients over `Λ*`, stored in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    modes: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            modes: grid.modes(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_coeffs(grid: &Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                found: coeffs.len(),
            });
        }
        Ok(Self {
            modes: grid.modes(),
            coeffs,
        })
    }

    pub(crate) fn from_parts(modes: usize, coeffs: Vec<Complex64>) -> Self {
        Self { modes, coeffs }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Largest `|c(-k) - conj(c(k))|` relative to the largest coefficient.
    pub fn hermitian_defect(&self, grid: &Grid) -> f64 {
        let scale = self
            .coeffs
            .iter()
            .map(|c| c.norm())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let worst = (0..self.coeffs.len())
            .map(|i| (self.coeffs[grid.conj_index(i)] - self.coeffs[i].conj()).norm())
            .fold(0.0_f64, f64::max);
        worst / scale
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_grid() {
        let g = Grid::new(2, 1.0, false).unwrap();
        assert_eq!(g.len(), 4);
        let ks: Vec<_> = (0..4).map(|i| g.wavevector(i)).collect();
        for k1 in [-1, 0] {
            for k2 in [-1, 0] {
                assert!(ks.contains(&Wavevector::new(k1, k2)));
            }
        }
        assert_eq!(g.dispersion(g.index_of(Wavevector::new(0, 0)).unwrap()), 1.0);
        assert_eq!(g.dispersion(g.index_of(Wavevector::new(-1, -1)).unwrap()), 3.0);
    }

    #[test]
    fn dispersion_value() {
        let g = Grid::new(4, 4.0, false).unwrap();
        assert_eq!(g.dispersion(g.index_of(Wavevector::new(1, 1)).unwrap()), 6.0);
    }

    #[test]
    fn odd_modes_rejected() {
        let err = Grid::new(3, 1.0, false).unwrap_err();
        assert!(err.to_string().contains("M must be even"), "{err}");
    }

    #[test]
    fn massless_needs_projection() {
        assert!(Grid::new(8, 0.0, false).is_err());
        let g = Grid::new(8, 0.0, true).unwrap();
        assert_eq!(g.chat_at(0), 0.0);
        assert!(!g.is_active(0));
    }

    #[test]
    fn chat_values() {
        let g = Grid::new(8, 1.0, false).unwrap();
        assert_eq!(g.chat(Wavevector::new(0, 0)).unwrap(), 0.5);
        assert_eq!(g.chat(Wavevector::new(1, 0)).unwrap(), 0.25);
        let g4 = Grid::new(8, 4.0, false).unwrap();
        assert!((g4.chat(Wavevector::new(2, 2)).unwrap() - 1.0 / 24.0).abs() < 1e-15);
        assert!(matches!(
            g.chat(Wavevector::new(4, 0)),
            Err(Error::ModeOutOfRange(4, 0))
        ));
    }

    #[test]
    fn index_roundtrip_and_symmetry() {
        let g = Grid::new(16, 2.5, false).unwrap();
        for idx in 0..g.len() {
            let k = g.wavevector(idx);
            assert_eq!(g.index_of(k), Some(idx));
            if let Some(j) = g.index_of(k.neg()) {
                assert_eq!(g.dispersion(j), g.dispersion(idx));
                assert_eq!(g.conj_index(idx), j);
            }
            assert!(g.dispersion(idx) >= g.mass());
            assert_eq!(g.conj_index(g.conj_index(idx)), idx);
        }
    }
}
