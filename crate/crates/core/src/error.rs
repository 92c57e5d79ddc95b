use thiserror::Error;

/// Errors for QFI computations. Tolerance violations report both the measured
/// deviation and the tolerance that was applied.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("not Hermitian: max |A_ij - conj(A_ji)| = {deviation:e} exceeds {tolerance:e} (relative to max-abs entry)")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("trace is not 1: got {trace} (tolerance {tolerance:e})")]
    TraceNotOne { trace: f64, tolerance: f64 },

    #[error("not positive semidefinite: min eigenvalue {min_eigenvalue:e} below -{tolerance:e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64, tolerance: f64 },

    #[error("eigensolver failed to converge on a {dim}x{dim} matrix")]
    EigensolverFailure { dim: usize },

    #[error("step too large: theta = {theta} with h = {step} leaves the declared domain [{lo}, {hi}]")]
    StepTooLarge { theta: f64, step: f64, lo: f64, hi: f64 },

    #[error("family evaluation failed: {0}")]
    EvaluationFailure(String),

    #[error("degenerate eigenvalue pair ({i}, {j}) with gap {gap:e} and no derivative alignment")]
    DegenerateGap { i: usize, j: usize, gap: f64 },

    #[error("support dimension changed across the stencil: {minus} at theta-h, {center} at theta, {plus} at theta+h")]
    SupportDimensionChanged {
        minus: usize,
        center: usize,
        plus: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("incomplete derivative bundle: missing {missing}")]
    IncompleteBundle { missing: &'static str },

    #[error("state vector not normalized: norm = {norm} (tolerance {tolerance:e})")]
    NotNormalized { norm: f64, tolerance: f64 },

    #[error("qubit operation on a {dim}-dimensional state")]
    NotQubit { dim: usize },

    #[error("singular determinant: det = {det:e} with a nonzero eigenvalue derivative")]
    SingularDeterminant { det: f64 },

    #[error("block weights sum to {sum}, expected 1 (tolerance {tolerance:e})")]
    WeightMismatch { sum: f64, tolerance: f64 },

    #[error("inconsistent block dimensions: {0}")]
    InconsistentBlockDims(String),

    #[error("every ensemble member weight fell below {threshold:e}")]
    DegenerateWeight { threshold: f64 },

    #[error("ensemble size {size} is smaller than the support dimension {support_dim}")]
    InvalidSize { size: usize, support_dim: usize },

    #[error("operation requires a unitary parametrization, got {kind}")]
    UnsupportedParametrization { kind: &'static str },

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("truncation too small: amplitude {escaped:e} escapes the Fock cutoff")]
    TruncationTooSmall { escaped: f64 },

    #[error("invalid spectral data: {0}")]
    InvalidSpectralData(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
