//! Phase-space quantum dynamics under the self-consistent quadratic
//! approximation (SCQA).
//!
//! A Hamiltonian is given as a polynomial Weyl symbol. Gaussian states are
//! propagated by a quadratic Hamiltonian whose coefficients are the Gaussian
//! (Wick) averages of the Hessian and gradient of the full symbol, which keeps
//! the state Gaussian at every time. On top of the propagator the crate
//! provides conservation-law diagnostics, stationary states, arbitrary-order
//! nonlinear response functions and an exact truncated-Fock reference used to
//! validate all of the above.
//!
//! Phase-space vectors are always ordered momenta first,
//! `q = (p_1, …, p_n, x_1, …, x_n)`.

pub mod error;
pub mod linalg;
pub mod oracle;
pub mod phasespace;
pub mod response;
pub mod scqa;
pub mod weyl;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
