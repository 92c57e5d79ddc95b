//! Quantum Fisher information (QFI) for parameterized density matrices.
//!
//! The QFI of a family `θ ↦ ρ_θ` bounds the variance of any unbiased estimator
//! of `θ` through the quantum Cramér–Rao inequality. This crate computes it by
//! three independent pathways and cross-checks them:
//!
//! - **SLD pathway** ([`engine::qfi_sld`]): the defining expression
//!   `F = tr(ρ L²)` with `L` the symmetric logarithmic derivative solving
//!   `∂ρ = (Lρ + ρL)/2`.
//! - **Support pathway** ([`engine::qfi_support`]): an eigendecomposition form
//!   that only touches the eigenpairs with nonzero eigenvalue, so a rank-`s`
//!   state embedded in an `N`-dimensional space costs `O(sN²)` instead of
//!   `O(N³)`.
//! - **Matrix-trace pathway** ([`matrix_repr::qfi_matrix_form`]): trace
//!   formulas over the transfer matrix `P_ij = |⟨ψ_i|∂ψ_j⟩|²` and the
//!   harmonic-mean coefficient matrices, with qubit closed forms and a
//!   superselection-block decomposition.
//!
//! Every pathway also splits the QFI into a classical contribution (from
//! eigenvalue motion) and a quantum contribution (from eigenvector motion and
//! inter-eigenstate coupling). For unitary families the convex-roof machinery
//! in [`ensemble`] constructs the variance-minimizing pure-state ensemble and
//! verifies the optimality condition for the eigen-ensemble.
//!
//! All operations are pure functions of their inputs; values are immutable
//! after construction and safe to share across threads.

#![forbid(unsafe_code)]

mod error;

pub mod engine;
pub mod ensemble;
pub mod family;
pub mod fock;
pub mod hermitian;
pub mod json;
pub mod matrix_repr;
pub mod sampling;

pub use error::{Error, Result};
pub use hermitian::{C64, CMatrix, CVector};
