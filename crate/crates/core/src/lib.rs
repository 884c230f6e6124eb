//! Time-local (time-convolutionless) master equations for driven boson
//! systems coupled to structured boson environments, the driven-qubit
//! transcription of those equations, and a pseudomode Lindblad reference
//! solver that exposes where the transcription breaks down.
//!
//! The pipeline runs bottom-up:
//!
//! 1. [`spectral`] turns spectral densities into dissipation and noise
//!    kernels `F(τ)`, `G(τ)`.
//! 2. [`volterra`] solves the Green's-function integro-differential
//!    equation `V' = -iΔV - ∫F(t-t')V(t')dt'`.
//! 3. [`coeffs`] extracts the time-local coefficients `γ(t)`, `ξ(t)`,
//!    `W(t)` and `λ(t)`.
//! 4. [`evolve`] integrates the boson and qubit master equations.
//! 5. [`reference`] integrates the qubit + damped-oscillator model.
//! 6. [`analysis`] compares them against closed forms and each other.
//!
//! All rates and frequencies are in units of a reference rate (normally the
//! coupling strength `Γ`), times in units of its inverse.

pub mod analysis;
pub mod banded;
pub mod coeffs;
pub mod evolve;
pub mod interp;
pub mod ode;
pub mod presets;
pub mod quadrature;
pub mod reference;
pub mod spectral;
pub mod volterra;

mod error;

pub use error::Error;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Complex scalar used throughout.
pub type C64 = Complex64;
/// Dense complex matrix.
pub type CMatrix = DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = DVector<C64>;

pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Formats a float with 17 significant digits, the precision every CSV
/// emitted by this crate uses.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_hermitian_eigenvalue(m: &CMatrix) -> f64 {
    // Entries far below the largest one underflow inside the eigensolver.
    let floor = 1e-60 * max_abs(m);
    let h = hermitian_part(m).map(|z| if z.norm() < floor { C64::new(0.0, 0.0) } else { z });
    h.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, &x| acc.min(x))
}
