//! Lattice Wick calculus.
//!
//! The Wick constant `a = E[Z(x)²] = (2π)^{-2} Σ_{k∈Λ*} Ĉ(k)` is a closed-form
//! mode sum; it grows like `ln M / (4π)` as the cutoff is removed.

use crate::error::{Error, Result};
use crate::spectral::{Grid, RealField, VOLUME};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WickTable {
    /// `a = E[Z(x)²]` for the truncated stationary field.
    pub a: f64,
    pub components: usize,
}

impl WickTable {
    pub fn new(grid: &Grid, components: usize) -> Self {
        Self {
            a: wick_constant(grid),
            components,
        }
    }

    pub fn with_constant(a: f64, components: usize) -> Self {
        Self { a, components }
    }

    /// Mass counterterm coefficient `(N + 2) a` of the direct dynamics.
    pub fn counterterm(&self) -> f64 {
        (self.components as f64 + 2.0) * self.a
    }
}

pub fn wick_constant(grid: &Grid) -> f64 {
    grid.chat_table().iter().sum::<f64>() / VOLUME
}

/// Wick constant of the field restricted to the modes accepted by `keep`.
pub fn wick_constant_retained(grid: &Grid, keep: impl Fn(usize) -> bool) -> f64 {
    (0..grid.len())
        .filter(|&i| keep(i))
        .map(|i| grid.chat_at(i))
        .sum::<f64>()
        / VOLUME
}

fn zip_map(
    zi: &RealField,
    zj: &RealField,
    f: impl Fn(f64, f64) -> f64,
) -> Result<RealField> {
    zi.check_same_grid(zj)?;
    let values = zi
        .values()
        .iter()
        .zip(zj.values())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Ok(RealField::from_parts(zi.modes(), values))
}

/// `:Z_i Z_j:`, i.e. `Z_i² - a` when `same` and the plain product otherwise.
pub fn wick_pair(zi: &RealField, zj: &RealField, same: bool, a: f64) -> Result<RealField> {
    if same {
        zip_map(zi, zj, |x, _| x * x - a)
    } else {
        zip_map(zi, zj, |x, y| x * y)
    }
}

/// `:Z_i Z_j²:`, i.e. `Z³ - 3aZ` when `same`, else `Z_i Z_j² - a Z_i`.
pub fn wick_cubic(zi: &RealField, zj: &RealField, same: bool, a: f64) -> Result<RealField> {
    if same {
        zip_map(zi, zj, |x, _| x * x * x - 3.0 * a * x)
    } else {
        zip_map(zi, zj, |x, y| x * y * y - a * x)
    }
}

/// `:Z_i² Z_j²:`, i.e. `Z⁴ - 6aZ² + 3a²` when `same`, else `(Z_i² - a)(Z_j² - a)`.
pub fn wick_quartic(zi: &RealField, zj: &RealField, same: bool, a: f64) -> Result<RealField> {
    if same {
        zip_map(zi, zj, |x, _| {
            let x2 = x * x;
            x2 * x2 - 6.0 * a * x2 + 3.0 * a * a
        })
    } else {
        zip_map(zi, zj, |x, y| (x * x - a) * (y * y - a))
    }
}

/// `-(λ/N)(Σ_j Φ_j² - (N+2)a) Φ_i` for every component.
pub fn counterterm_drift(phi: &[RealField], a: f64, coupling: f64) -> Result<Vec<RealField>> {
    let first = phi
        .first()
        .ok_or(Error::param("phi", "at least one component is required"))?;
    for f in phi {
        first.check_same_grid(f)?;
    }
    let n = phi.len() as f64;
    let mut power = vec![0.0; first.len()];
    for f in phi {
        for (p, v) in power.iter_mut().zip(f.values()) {
            *p += v * v;
        }
    }
    let shift = (n + 2.0) * a;
    Ok(phi
        .iter()
        .map(|f| {
            let values = f
                .values()
                .iter()
                .zip(&power)
                .map(|(v, p)| -(coupling / n) * (p - shift) * v)
                .collect();
            RealField::from_parts(f.modes(), values)
        })
        .collect())
}
