//! Many-body spectroscopy on simulated noisy analog quantum simulators.
//!
//! The crate is organized around the experimental pipeline:
//!
//! - [`operators`] — Pauli algebra, model Hamiltonians, noise models and
//!   exact diagonalization.
//! - [`lindblad`] — the Liouvillian superoperator, noisy time evolution
//!   (`stepper` and `spectral` backends) and perturbation-theory oracles.
//! - [`spectral`] — damped-mode retrieval from time series: matrix pencil,
//!   DFT peaks, amplitude fitting and least-squares refinement.
//! - [`mitigation`] — Hamiltonian reshaping, Hamiltonian rescaling and a
//!   Richardson-extrapolation baseline.
//! - [`complexity`] — closed-form sample-complexity estimates.
//! - [`experiment`] — config ingestion, seeded pair sampling, parallel
//!   sweeps and CSV/JSON persistence.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` guards reject NaN too

extern crate blas_src;

pub mod complexity;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod lindblad;
pub mod mitigation;
pub mod operators;
pub mod spectral;
pub mod testing;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMatrix = ndarray::Array2<C64>;
/// Dense complex vector.
pub type CVector = ndarray::Array1<C64>;
