use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("symplectic drift {residual:.3e} exceeds tolerance {tol:.3e} at t = {t}")]
    SymplecticDrift { residual: f64, tol: f64, t: f64 },

    #[error("conservation drift of {quantity} is {drift:.3e} (tolerance {tol:.3e}) at t = {t}")]
    ConservationDrift {
        quantity: String,
        drift: f64,
        tol: f64,
        t: f64,
    },

    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,

    #[error("covariance violates the uncertainty relation (min eigenvalue {min_eigenvalue:.3e})")]
    UncertaintyViolation { min_eigenvalue: f64 },

    #[error("polynomial degree {degree} exceeds the cap {cap}")]
    DegreeCap { degree: u32, cap: u32 },

    #[error("Hamiltonian expectation has imaginary residue {residue:.3e}")]
    NonRealHamiltonian { residue: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("time {t} is outside the trajectory range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("equilibrium state is not stationary (defect {defect:.3e})")]
    NotStationary { defect: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported number of modes n = {n} (single-mode only)")]
    UnsupportedDim { n: usize },

    #[error("unsupported covariance: {0}")]
    UnsupportedCovariance(String),

    #[error("Fock truncation at d = {dim} not converged (change {change:.3e})")]
    TruncationError { dim: usize, change: f64 },

    #[error("operator is not Hermitian (residual {residual:.3e})")]
    NonHermitian { residual: f64 },
}
