//! Canonical-vector conventions, symplectic linear algebra and Gaussian states.
//!
//! Every vector and matrix is stored in the momenta-first ordering
//! `(p_1, …, p_n, x_1, …, x_n)`, for which the canonical commutator reads
//! `[q_a, q_b] = -iħ J_ab` with `J = [[0, I], [-I, 0]]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::linalg::{hermitian_eigen, max_abs, to_complex, RMat, RVec};
use crate::{Error, Result, C64};

/// Default tolerance for `‖ΛᵀJΛ − J‖`.
pub const DEFAULT_SYMPLECTIC_TOL: f64 = 1e-8;

/// Tolerance on the smallest eigenvalue of `M + (iħ/2)Jᵀ`.
const UNCERTAINTY_TOL: f64 = 1e-10;

/// Number of modes `n`; phase space has dimension `2n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseDim(usize);

impl PhaseDim {
    pub fn new(modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidArgument(
                "number of modes must be at least 1".into(),
            ));
        }
        Ok(PhaseDim(modes))
    }

    /// Infer the mode count from a phase-space length `2n`.
    pub fn from_len(len: usize) -> Result<Self> {
        if len == 0 || len % 2 != 0 {
            return Err(Error::DimensionMismatch {
                expected: 2 * (len / 2).max(1),
                found: len,
            });
        }
        Ok(PhaseDim(len / 2))
    }

    pub fn modes(self) -> usize {
        self.0
    }

    /// Phase-space dimension `2n`.
    pub fn len(self) -> usize {
        2 * self.0
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// Index of `p_i` in the canonical vector.
    pub fn p(self, mode: usize) -> usize {
        mode
    }

    /// Index of `x_i` in the canonical vector.
    pub fn x(self, mode: usize) -> usize {
        self.0 + mode
    }
}

/// The standard symplectic matrix `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm {
    dim: PhaseDim,
    j: RMat,
}

impl SymplecticForm {
    pub fn dim(&self) -> PhaseDim {
        self.dim
    }

    pub fn matrix(&self) -> &RMat {
        &self.j
    }

    /// `σ(a, b) = bᵀ J a`.
    pub fn sigma(&self, a: &RVec, b: &RVec) -> f64 {
        b.dot(&(&self.j * a))
    }
}

pub fn standard_j(dim: PhaseDim) -> SymplecticForm {
    let n = dim.modes();
    let mut j = RMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    SymplecticForm { dim, j }
}

pub(crate) fn j_matrix(size: usize) -> RMat {
    standard_j(PhaseDim(size / 2)).j
}

/// `max |LᵀJL − J|` over all entries.
pub fn symplectic_check(l: &RMat) -> Result<f64> {
    if l.nrows() != l.ncols() {
        return Err(Error::DimensionMismatch {
            expected: l.nrows(),
            found: l.ncols(),
        });
    }
    if l.nrows() == 0 || l.nrows() % 2 != 0 {
        return Err(Error::DimensionMismatch {
            expected: l.nrows() + 1,
            found: l.nrows(),
        });
    }
    let j = j_matrix(l.nrows());
    Ok(max_abs(&(l.transpose() * &j * l - &j)))
}

/// `JΛᵀJᵀ` without any drift check; equals `Λ⁻¹` whenever `Λ` is symplectic.
pub(crate) fn symplectic_inverse_unchecked(l: &RMat) -> RMat {
    let j = j_matrix(l.nrows());
    &j * l.transpose() * j.transpose()
}

/// Integral of motion `q_t = Λ q + Δ` of a quadratic evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticPropagator {
    pub lambda: RMat,
    pub delta: RVec,
    pub t: f64,
}

impl SymplecticPropagator {
    pub fn new(lambda: RMat, delta: RVec, t: f64) -> Result<Self> {
        if lambda.nrows() != lambda.ncols() || lambda.nrows() != delta.len() {
            return Err(Error::DimensionMismatch {
                expected: lambda.nrows(),
                found: delta.len(),
            });
        }
        PhaseDim::from_len(delta.len())?;
        Ok(SymplecticPropagator { lambda, delta, t })
    }

    /// `(E, 0)` at `t = 0`.
    pub fn identity(dim: PhaseDim) -> Self {
        SymplecticPropagator {
            lambda: RMat::identity(dim.len(), dim.len()),
            delta: RVec::zeros(dim.len()),
            t: 0.0,
        }
    }

    pub fn dim(&self) -> PhaseDim {
        PhaseDim(self.delta.len() / 2)
    }

    pub fn symplectic_residual(&self) -> f64 {
        symplectic_check(&self.lambda).unwrap_or(f64::INFINITY)
    }

    pub fn inverse(&self) -> Result<RMat> {
        symplectic_inverse(self, DEFAULT_SYMPLECTIC_TOL)
    }
}

/// `Λ⁻¹ = JΛᵀJᵀ`, refusing propagators that drifted off the symplectic group.
pub fn symplectic_inverse(prop: &SymplecticPropagator, tol: f64) -> Result<RMat> {
    let residual = symplectic_check(&prop.lambda)?;
    if !(residual <= tol) {
        return Err(Error::SymplecticDrift {
            residual,
            tol,
            t: prop.t,
        });
    }
    Ok(symplectic_inverse_unchecked(&prop.lambda))
}

/// Gaussian state: mean `⟨q⟩`, symmetric covariance `M` and `ħ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: RVec,
    cov: RMat,
    hbar: f64,
}

impl GaussianState {
    /// Validates symmetry and the uncertainty relation `M + (iħ/2)Jᵀ ≥ 0`.
    pub fn new(mean: RVec, cov: RMat, hbar: f64) -> Result<Self> {
        let dim = PhaseDim::from_len(mean.len())?;
        if cov.nrows() != dim.len() || cov.ncols() != dim.len() {
            return Err(Error::DimensionMismatch {
                expected: dim.len(),
                found: cov.nrows(),
            });
        }
        if !(hbar > 0.0) || !hbar.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "hbar must be positive, got {hbar}"
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite state parameter".into()));
        }
        let scale = max_abs(&cov).max(1.0);
        if max_abs(&(&cov - cov.transpose())) > 1e-12 * scale {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let min_eigenvalue = uncertainty_min_eigenvalue(&cov, hbar);
        if min_eigenvalue < -UNCERTAINTY_TOL * scale {
            return Err(Error::UncertaintyViolation { min_eigenvalue });
        }
        Ok(GaussianState { mean, cov, hbar })
    }

    /// Unvalidated constructor for internally propagated states.
    pub(crate) fn from_parts(mean: RVec, cov: RMat, hbar: f64) -> Self {
        GaussianState { mean, cov, hbar }
    }

    /// Coherent state: `M = (ħ/2)E` around `mean`.
    pub fn coherent(mean: RVec, hbar: f64) -> Result<Self> {
        let size = mean.len();
        Self::new(mean, RMat::identity(size, size) * (0.5 * hbar), hbar)
    }

    pub fn vacuum(dim: PhaseDim, hbar: f64) -> Self {
        Self::coherent(RVec::zeros(dim.len()), hbar).expect("vacuum is a valid state")
    }

    /// Thermal-like state `M = νE` with `ν ≥ ħ/2`.
    pub fn thermal(dim: PhaseDim, nu: f64, hbar: f64) -> Result<Self> {
        Self::new(
            RVec::zeros(dim.len()),
            RMat::identity(dim.len(), dim.len()) * nu,
            hbar,
        )
    }

    /// Single-mode squeezed vacuum `M = (ħ/2) diag(e^{2r}, e^{-2r})`.
    pub fn squeezed_vacuum(r: f64, hbar: f64) -> Self {
        let cov = RMat::from_diagonal(&RVec::from_vec(vec![
            0.5 * hbar * (2.0 * r).exp(),
            0.5 * hbar * (-2.0 * r).exp(),
        ]));
        Self::new(RVec::zeros(2), cov, hbar).expect("squeezed vacuum is a valid state")
    }

    pub fn dim(&self) -> PhaseDim {
        PhaseDim(self.mean.len() / 2)
    }

    pub fn mean(&self) -> &RVec {
        &self.mean
    }

    pub fn cov(&self) -> &RMat {
        &self.cov
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// Same mean and covariance, different `ħ`.
    pub fn with_hbar(&self, hbar: f64) -> Result<Self> {
        Self::new(self.mean.clone(), self.cov.clone(), hbar)
    }

    pub fn with_mean(&self, mean: RVec) -> Result<Self> {
        Self::new(mean, self.cov.clone(), self.hbar)
    }

    /// `Σ_0 = M + (iħ/2)Jᵀ`.
    pub fn sigma0(&self) -> crate::linalg::CMat {
        let j = j_matrix(self.mean.len());
        let hbar = self.hbar;
        to_complex(&self.cov) + j.transpose().map(|v| C64::new(0.0, 0.5 * hbar * v))
    }

    /// Smallest eigenvalue of the Hermitian matrix `M + (iħ/2)Jᵀ`.
    pub fn uncertainty_min_eigenvalue(&self) -> f64 {
        uncertainty_min_eigenvalue(&self.cov, self.hbar)
    }
}

fn uncertainty_min_eigenvalue(cov: &RMat, hbar: f64) -> f64 {
    let j = j_matrix(cov.nrows());
    let h = to_complex(cov) + j.transpose().map(|v| C64::new(0.0, 0.5 * hbar * v));
    let (values, _) = hermitian_eigen(&h);
    values[0]
}

/// Gaussian Wigner function `det(2πM)^{-1/2} exp(-½ δᵀM⁻¹δ)`.
pub fn wigner_eval(state: &GaussianState, z: &RVec) -> Result<f64> {
    if z.len() != state.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: state.mean.len(),
            found: z.len(),
        });
    }
    let chol = state
        .cov
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance)?;
    let det = chol.determinant();
    if !(det > 0.0) {
        return Err(Error::SingularCovariance);
    }
    let delta = z - &state.mean;
    let solved = chol.solve(&delta);
    let quad = delta.dot(&solved);
    let size = z.len() as i32;
    let norm = ((2.0 * PI).powi(size) * det).sqrt();
    Ok((-0.5 * quad).exp() / norm)
}

/// `W(z, t) = W_0(Λz + Δ)`.
pub fn evolve_wigner_point(
    state0: &GaussianState,
    prop: &SymplecticPropagator,
    z: &RVec,
) -> Result<f64> {
    if z.len() != prop.delta.len() {
        return Err(Error::DimensionMismatch {
            expected: prop.delta.len(),
            found: z.len(),
        });
    }
    let moved = &prop.lambda * z + &prop.delta;
    wigner_eval(state0, &moved)
}

/// `⟨q⟩_t = Λ⁻¹(⟨q⟩_0 − Δ)`.
pub fn mean_evolve(prop: &SymplecticPropagator, mean0: &RVec) -> Result<RVec> {
    let inv = prop.inverse()?;
    Ok(inv * (mean0 - &prop.delta))
}

/// `M_t = Λ⁻¹ M_0 (Λ⁻¹)ᵀ`.
pub fn cov_evolve(prop: &SymplecticPropagator, cov0: &RMat) -> Result<RMat> {
    let inv = prop.inverse()?;
    Ok(&inv * cov0 * inv.transpose())
}

/// Gaussian state at the propagator's time.
pub fn state_evolve(prop: &SymplecticPropagator, state0: &GaussianState) -> Result<GaussianState> {
    let inv = prop.inverse()?;
    let mean = &inv * (&state0.mean - &prop.delta);
    let cov = &inv * &state0.cov * inv.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianState {
        mean,
        cov,
        hbar: state0.hbar,
    })
}

/// Heisenberg canonical vector `q_H = Λ⁻¹q − Λ⁻¹Δ`, returned as `(Λ⁻¹, −Λ⁻¹Δ)`.
pub fn heisenberg_q(prop: &SymplecticPropagator) -> Result<(RMat, RVec)> {
    let inv = prop.inverse()?;
    let shift = -(&inv * &prop.delta);
    Ok((inv, shift))
}
