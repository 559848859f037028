//! Simulation of adiabatic edge-state pumping in the off-diagonal
//! Aubry-André-Harper chain.
//!
//! The crate builds the chain Hamiltonian ([`model`]), diagonalizes it with
//! an in-crate QL solver ([`spectra`]), propagates states with
//! Crank-Nicolson along a θ sweep ([`propagate`]), and evaluates
//! occupations, non-adiabaticity and localization lengths
//! ([`diagnostics`]). A two-level Landau-Zener-Stückelberg model lives in
//! [`lzs`]; sweeps, figure recipes and file output live in [`harness`].

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod lzs;
pub mod model;
pub mod propagate;
pub mod spectra;
pub mod tridiag;

pub use error::{Error, Result};
