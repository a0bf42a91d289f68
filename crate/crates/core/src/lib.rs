//! Pseudo-spectral Monte Carlo for the stochastically quantized O(N) linear
//! sigma model on the two-dimensional torus.
//!
//! The crate integrates the Wick-renormalized Langevin system
//!
//! ```text
//!     (∂_t - Δ + m) Φ_i = -(λ/N) Σ_j :Φ_j² Φ_i: + ξ_i,     i = 1..N
//! ```
//!
//! either directly or through the split `Φ_i = Z_i + Y_i` with `Z_i` the
//! stationary Ornstein–Uhlenbeck solution, solves the associated mean-field
//! equation with an interacting particle ensemble, and measures O(N)-invariant
//! observables against their large-N predictions.

pub mod dynamics;
pub mod error;
pub mod exec;
pub mod meanfield;
pub mod noise;
pub mod observables;
pub mod runner;
pub mod spectral;
pub mod stats;
pub mod wick;

pub use error::{Error, Result};
pub use exec::Exec;
