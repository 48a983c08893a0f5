//! Exact single-mode reference on a truncated Fock basis.
//!
//! Symbols are quantized in Weyl order, states are built from their
//! Gaussian parameters, and dynamics uses the exact unitary of the
//! truncated Hamiltonian. Everything here is brute force; it exists to
//! check the phase-space machinery, not to be fast.

use serde::Serialize;

use crate::linalg::{hermitian_eigen, hermitian_residual, max_abs_c, CMat, RMat, RVec};
use crate::phasespace::{GaussianState, PhaseDim};
use crate::weyl::PolySymbol;
use crate::{Error, Result, C64};

/// Tail mass beyond the requested dimension that a state may lose.
pub const TAIL_TOL: f64 = 1e-10;
/// Allowed change of a response value when the dimension is doubled.
pub const CONVERGENCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    pub matrix: CMat,
    pub hbar: f64,
}

impl FockOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn hermitian_residual(&self) -> f64 {
        hermitian_residual(&self.matrix)
    }

    /// Leading `d × d` block.
    pub fn truncate(&self, d: usize) -> FockOperator {
        FockOperator {
            matrix: self.matrix.view((0, 0), (d, d)).into_owned(),
            hbar: self.hbar,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    pub rho: CMat,
}

impl FockState {
    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    /// Occupation probabilities `⟨k|ρ|k⟩`.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.rho[(k, k)].re).collect()
    }
}

/// Annihilation operator `a` with `⟨k|a|k+1⟩ = √(k+1)`.
pub fn annihilation(d: usize) -> CMat {
    let mut a = CMat::zeros(d, d);
    for k in 0..d.saturating_sub(1) {
        a[(k, k + 1)] = C64::new(((k + 1) as f64).sqrt(), 0.0);
    }
    a
}

/// `x = √(ħ/2)(a + a†)`.
pub fn position(d: usize, hbar: f64) -> CMat {
    let a = annihilation(d);
    (&a + a.adjoint()) * C64::new((0.5 * hbar).sqrt(), 0.0)
}

/// `p = i√(ħ/2)(a† − a)`.
pub fn momentum(d: usize, hbar: f64) -> CMat {
    let a = annihilation(d);
    (a.adjoint() - &a) * C64::new(0.0, (0.5 * hbar).sqrt())
}

fn single_mode(dim: PhaseDim) -> Result<()> {
    if dim.modes() != 1 {
        return Err(Error::UnsupportedDim { n: dim.modes() });
    }
    Ok(())
}

/// Weyl-ordered operator of a single-mode symbol, using
/// `W(z·m) = ½(Q·W(m) + W(m)·Q)`. The products are formed in a basis
/// enlarged by the symbol degree, so the returned `d × d` block is exact.
pub fn weyl_quantize(a: &PolySymbol, d: usize, hbar: f64) -> Result<FockOperator> {
    single_mode(a.dim())?;
    if d == 0 {
        return Err(Error::InvalidArgument(
            "Fock dimension must be positive".into(),
        ));
    }
    if !(hbar > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "hbar must be positive, got {hbar}"
        )));
    }
    let work = d + a.degree() as usize + 1;
    let q = [momentum(work, hbar), position(work, hbar)];
    let mut total = CMat::zeros(work, work);
    for (idx, c) in a.terms() {
        let mut w = CMat::identity(work, work);
        for (var, &e) in idx.as_slice().iter().enumerate() {
            for _ in 0..e {
                w = (&q[var] * &w + &w * &q[var]) * C64::new(0.5, 0.0);
            }
        }
        total += w * *c;
    }
    Ok(FockOperator {
        matrix: total.view((0, 0), (d, d)).into_owned(),
        hbar,
    })
}

/// `exp(−i G/ħ)` for a Hermitian `G`.
fn unitary(g: &CMat, hbar: f64) -> CMat {
    crate::linalg::unitary_from_hermitian(g, 1.0 / hbar)
}

/// Density matrix of a single-mode Gaussian state.
///
/// The state is built as `U_D U_R U_S ρ_ν U_S† U_R† U_D†`: a thermal state of
/// symplectic eigenvalue `ν = √det M`, squeezed, rotated into the
/// eigenbasis of `M`, then displaced to the mean. The construction runs in
/// dimension `2d + 20` and fails if more than [`TAIL_TOL`] of the trace lies
/// beyond `d`.
pub fn gaussian_to_fock(state: &GaussianState, d: usize) -> Result<FockState> {
    single_mode(state.dim())?;
    if d == 0 {
        return Err(Error::InvalidArgument(
            "Fock dimension must be positive".into(),
        ));
    }
    let hbar = state.hbar();
    let work = 2 * d + 20;
    let dim = state.dim();

    let eig = state.cov().clone().symmetric_eigen();
    let (hi, lo) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let (m1, m2) = (eig.eigenvalues[hi], eig.eigenvalues[lo]);
    if !(m2 > 0.0) {
        return Err(Error::UnsupportedCovariance(format!(
            "covariance eigenvalue {m2} is not positive"
        )));
    }
    let mut rot = RMat::zeros(2, 2);
    rot.set_column(0, &eig.eigenvectors.column(hi));
    rot.set_column(1, &eig.eigenvectors.column(lo));
    if rot.determinant() < 0.0 {
        let flipped = -rot.column(1);
        rot.set_column(1, &flipped);
    }
    let nu = (m1 * m2).sqrt();
    let r = 0.5 * (m1 / nu).ln();
    let theta = rot[(0, 1)].atan2(rot[(0, 0)]);

    // thermal weights n̄^k / (n̄ + 1)^{k+1}
    let nbar = (nu / hbar - 0.5).max(0.0);
    let mut rho = CMat::zeros(work, work);
    for k in 0..work {
        let w = if nbar == 0.0 {
            if k == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            (k as f64 * (nbar / (nbar + 1.0)).ln()).exp() / (nbar + 1.0)
        };
        rho[(k, k)] = C64::new(w, 0.0);
    }

    // generators ½qᵀKq and (Jm)ᵀq, with U = exp(−iG/ħ)
    let squeeze = PolySymbol::from_real_terms(dim, &[(&[1, 1], -r)])?;
    let rotate =
        PolySymbol::from_real_terms(dim, &[(&[2, 0], -0.5 * theta), (&[0, 2], -0.5 * theta)])?;
    let m = state.mean();
    let shift = PolySymbol::from_real_terms(dim, &[(&[1, 0], m[1]), (&[0, 1], -m[0])])?;
    for g in [&squeeze, &rotate, &shift] {
        if g.is_zero() {
            continue;
        }
        let u = unitary(&weyl_quantize(g, work, hbar)?.matrix, hbar);
        rho = &u * rho * u.adjoint();
    }

    let kept = rho.view((0, 0), (d, d)).into_owned();
    let tail = 1.0 - kept.trace().re;
    if tail > TAIL_TOL {
        return Err(Error::TruncationError {
            dim: d,
            change: tail,
        });
    }
    Ok(FockState {
        rho: (&kept + kept.adjoint()) * C64::new(0.5, 0.0),
    })
}

/// `tr(ρA)`.
pub fn oracle_expect(a: &FockOperator, rho: &FockState) -> Result<C64> {
    if a.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: a.dim(),
        });
    }
    Ok((&rho.rho * &a.matrix).trace())
}

/// Diagonalized Hamiltonian, reused for many times.
#[derive(Debug, Clone)]
pub struct Evolver {
    energies: RVec,
    vectors: CMat,
    hbar: f64,
}

impl Evolver {
    pub fn new(h: &FockOperator) -> Result<Self> {
        let scale = max_abs_c(&h.matrix).max(1.0);
        let residual = h.hermitian_residual();
        if residual > 1e-10 * scale {
            return Err(Error::NonHermitian { residual });
        }
        let herm = (&h.matrix + h.matrix.adjoint()) * C64::new(0.5, 0.0);
        let (energies, vectors) = hermitian_eigen(&herm);
        Ok(Evolver {
            energies,
            vectors,
            hbar: h.hbar,
        })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// `U(t) = exp(−iHt/ħ)`.
    pub fn unitary(&self, t: f64) -> CMat {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= C64::from_polar(1.0, -self.energies[j] * t / self.hbar);
        }
        scaled * self.vectors.adjoint()
    }

    /// `ρ_t = U ρ U†`.
    pub fn evolve(&self, rho: &FockState, t: f64) -> FockState {
        let u = self.unitary(t);
        FockState {
            rho: &u * &rho.rho * u.adjoint(),
        }
    }

    /// `A(t) = U† A U`.
    pub fn heisenberg(&self, a: &FockOperator, t: f64) -> FockOperator {
        let u = self.unitary(t);
        FockOperator {
            matrix: u.adjoint() * &a.matrix * &u,
            hbar: a.hbar,
        }
    }
}

pub fn oracle_evolve(h: &FockOperator, rho: &FockState, t: f64) -> Result<FockState> {
    if h.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: h.dim(),
        });
    }
    Ok(Evolver::new(h)?.evolve(rho, t))
}

/// `tr(ρ_0 [[…[V(τ_1), V(τ_2)]…], V(τ_{N+1})])` with `V(τ) = U†(τ) V U(τ)`.
pub fn oracle_response_s(
    h: &FockOperator,
    rho0: &FockState,
    v: &FockOperator,
    times: &[f64],
) -> Result<C64> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("no waiting times given".into()));
    }
    if h.dim() != rho0.dim() || v.dim() != rho0.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho0.dim(),
            found: h.dim().max(v.dim()),
        });
    }
    let evolver = Evolver::new(h)?;
    let mut nested = evolver.heisenberg(v, times[0]).matrix;
    for &t in &times[1..] {
        let vt = evolver.heisenberg(v, t).matrix;
        nested = &nested * &vt - &vt * &nested;
    }
    Ok((&rho0.rho * nested).trace())
}

/// Ordered product `tr(ρ_0 V(τ_1) ⋯ V(τ_m))`.
pub fn oracle_correlation(
    h: &FockOperator,
    rho0: &FockState,
    v: &FockOperator,
    times: &[f64],
) -> Result<C64> {
    let evolver = Evolver::new(h)?;
    let mut product = rho0.rho.clone();
    for &t in times {
        product = product * evolver.heisenberg(v, t).matrix;
    }
    Ok(product.trace())
}

/// Single-mode problem given by symbols, quantized on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleProblem {
    pub hamiltonian: PolySymbol,
    pub state: GaussianState,
    pub interaction: PolySymbol,
}

impl OracleProblem {
    pub fn build(&self, d: usize) -> Result<(FockOperator, FockState, FockOperator)> {
        let hbar = self.state.hbar();
        Ok((
            weyl_quantize(&self.hamiltonian, d, hbar)?,
            gaussian_to_fock(&self.state, d)?,
            weyl_quantize(&self.interaction, d, hbar)?,
        ))
    }

    pub fn response_s(&self, d: usize, times: &[f64]) -> Result<C64> {
        let (h, rho, v) = self.build(d)?;
        oracle_response_s(&h, &rho, &v, times)
    }

    /// Response at dimension `d`, refused if dimension `2d` changes it by
    /// more than [`CONVERGENCE_TOL`].
    pub fn response_s_converged(&self, d: usize, times: &[f64]) -> Result<C64> {
        let coarse = self.response_s(d, times)?;
        let fine = self.response_s(2 * d, times)?;
        let change = (fine - coarse).norm();
        if change > CONVERGENCE_TOL {
            return Err(Error::TruncationError { dim: d, change });
        }
        Ok(fine)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    pub dims: Vec<usize>,
    pub values: Vec<C64>,
    /// `|value(d_i) − value(d_{i−1})|`, one shorter than `values`.
    pub differences: Vec<f64>,
    pub tol: f64,
    pub converged: bool,
}

/// Evaluates `build` on increasing dimensions; converged when the last
/// successive difference is within `tol`.
pub fn truncation_study<F>(build: F, dims: &[usize], tol: f64) -> Result<TruncationReport>
where
    F: Fn(usize) -> Result<C64>,
{
    if dims.len() < 2 || dims.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "need at least two increasing dimensions".into(),
        ));
    }
    let values = dims.iter().map(|&d| build(d)).collect::<Result<Vec<_>>>()?;
    let differences: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let last = differences[differences.len() - 1];
    Ok(TruncationReport {
        dims: dims.to_vec(),
        values,
        differences,
        tol,
        converged: last.is_finite() && last <= tol,
    })
}

/// Mean and symmetrized covariance of `(p, x)` in a Fock state.
pub fn oracle_moments(rho: &FockState, hbar: f64) -> Result<(RVec, RMat)> {
    let d = rho.dim();
    let dim = PhaseDim::new(1)?;
    let expect = |e: &[u32]| -> Result<f64> {
        let op = weyl_quantize(&PolySymbol::monomial(dim, e, 1.0)?, d, hbar)?;
        Ok(oracle_expect(&op, rho)?.re)
    };
    let mean = RVec::from_vec(vec![expect(&[1, 0])?, expect(&[0, 1])?]);
    let pp = expect(&[2, 0])? - mean[0] * mean[0];
    let xx = expect(&[0, 2])? - mean[1] * mean[1];
    let px = expect(&[1, 1])? - mean[0] * mean[1];
    Ok((mean, RMat::from_row_slice(2, 2, &[pp, px, px, xx])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> PhaseDim {
        PhaseDim::new(1).unwrap()
    }

    fn harmonic() -> PolySymbol {
        PolySymbol::from_real_terms(one(), &[(&[2, 0], 0.5), (&[0, 2], 0.5)]).unwrap()
    }

    #[test]
    fn position_matrix_elements() {
        let x = weyl_quantize(&PolySymbol::x(one(), 0), 4, 1.0).unwrap();
        for k in 0..3 {
            let expected = ((k + 1) as f64 / 2.0).sqrt();
            assert!((x.matrix[(k, k + 1)].re - expected).abs() < 1e-15);
            assert!((x.matrix[(k + 1, k)].re - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_monomial_is_symmetrized() {
        let d = 8;
        let px =
            weyl_quantize(&PolySymbol::monomial(one(), &[1, 1], 1.0).unwrap(), d, 1.0).unwrap();
        let big = 12;
        let (p, x) = (momentum(big, 1.0), position(big, 1.0));
        let sym = (&p * &x + &x * &p) * C64::new(0.5, 0.0);
        assert!(max_abs_c(&(px.matrix - sym.view((0, 0), (d, d)))) < 1e-14);
    }

    #[test]
    fn canonical_commutator_on_interior() {
        let d = 12;
        let p = weyl_quantize(&PolySymbol::p(one(), 0), d, 0.7)
            .unwrap()
            .matrix;
        let x = weyl_quantize(&PolySymbol::x(one(), 0), d, 0.7)
            .unwrap()
            .matrix;
        let c = &p * &x - &x * &p;
        let interior = d - d.div_ceil(4);
        let expected = CMat::identity(interior, interior) * C64::new(0.0, -0.7);
        assert!(max_abs_c(&(c.view((0, 0), (interior, interior)) - expected)) < 1e-13);
    }

    #[test]
    fn vacuum_is_ground_state() {
        let rho = gaussian_to_fock(&GaussianState::vacuum(one(), 1.0), 6).unwrap();
        assert!((rho.rho[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!(rho.populations()[1..].iter().all(|p| p.abs() < 1e-12));
    }

    #[test]
    fn coherent_state_is_poisson() {
        let s = GaussianState::coherent(RVec::from_vec(vec![0.0, 1.0]), 1.0).unwrap();
        let rho = gaussian_to_fock(&s, 30).unwrap();
        let lambda: f64 = 0.5;
        let mut fact = 1.0;
        for (k, p) in rho.populations().iter().enumerate().take(12) {
            if k > 0 {
                fact *= k as f64;
            }
            let expected = (-lambda).exp() * lambda.powi(k as i32) / fact;
            assert!((p - expected).abs() < 1e-10, "k = {k}: {p} vs {expected}");
        }
    }

    #[test]
    fn thermal_state_is_geometric() {
        let s = GaussianState::thermal(one(), 1.0, 1.0).unwrap();
        let rho = gaussian_to_fock(&s, 80).unwrap();
        let nbar: f64 = 0.5;
        for (k, p) in rho.populations().iter().enumerate().take(20) {
            let expected = nbar.powi(k as i32) / (nbar + 1.0).powi(k as i32 + 1);
            assert!((p - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn general_gaussian_moments() {
        let cov = RMat::from_row_slice(2, 2, &[0.9, 0.25, 0.25, 0.6]);
        let s = GaussianState::new(RVec::from_vec(vec![0.3, -0.5]), cov.clone(), 1.0).unwrap();
        let rho = gaussian_to_fock(&s, 50).unwrap();
        let (mean, m) = oracle_moments(&rho, 1.0).unwrap();
        assert!((&mean - s.mean()).amax() < 1e-10);
        assert!(crate::linalg::max_abs(&(m - cov)) < 1e-10);
    }

    #[test]
    fn truncation_detected() {
        let s = GaussianState::coherent(RVec::from_vec(vec![0.0, 4.0]), 1.0).unwrap();
        assert!(matches!(
            gaussian_to_fock(&s, 5),
            Err(Error::TruncationError { .. })
        ));
    }

    #[test]
    fn two_modes_unsupported() {
        let two = PhaseDim::new(2).unwrap();
        assert!(matches!(
            weyl_quantize(&PolySymbol::x(two, 0), 4, 1.0),
            Err(Error::UnsupportedDim { n: 2 })
        ));
    }

    #[test]
    fn harmonic_coherent_mean_oscillates() {
        let d = 40;
        let s = GaussianState::coherent(RVec::from_vec(vec![0.4, 1.1]), 1.0).unwrap();
        let rho = gaussian_to_fock(&s, d).unwrap();
        let h = weyl_quantize(&harmonic(), d, 1.0).unwrap();
        let x = weyl_quantize(&PolySymbol::x(one(), 0), d, 1.0).unwrap();
        let ev = Evolver::new(&h).unwrap();
        for t in [0.0, 0.5, 2.0] {
            let rt = ev.evolve(&rho, t);
            let got = oracle_expect(&x, &rt).unwrap().re;
            assert!((got - (1.1 * t.cos() + 0.4 * t.sin())).abs() < 1e-8);
            assert!((rt.trace().re - rho.trace().re).abs() < 1e-10);
        }
        let u = ev.unitary(1.3);
        assert!(max_abs_c(&(u.adjoint() * &u - CMat::identity(d, d))) < 1e-10);
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut h = weyl_quantize(&harmonic(), 4, 1.0).unwrap();
        h.matrix[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(Evolver::new(&h), Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn vacuum_commutator_response() {
        let problem = OracleProblem {
            hamiltonian: harmonic(),
            state: GaussianState::vacuum(one(), 1.0),
            interaction: PolySymbol::x(one(), 0),
        };
        let t = 0.8;
        let s = problem.response_s_converged(20, &[t, 0.0]).unwrap();
        assert!((s - C64::new(0.0, -t.sin())).norm() < 1e-8);
        assert!(problem.response_s(20, &[t, t]).unwrap().norm() < 1e-12);
    }

    #[test]
    fn study_flags_divergence() {
        let report =
            truncation_study(|d| Ok(C64::new((d as f64).exp(), 0.0)), &[5, 10, 20], 1e-8).unwrap();
        assert!(!report.converged);
        let report = truncation_study(|_| Ok(C64::new(1.0, 0.0)), &[5, 10], 1e-8).unwrap();
        assert!(report.converged);
    }
}
