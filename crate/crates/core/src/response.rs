//! Nonlinear response functions over a stationary Gaussian state.
//!
//! The response function of order `N` is the expectation of the nested
//! commutator `[[…[V(τ_1), V(τ_2)]…], V(τ_{N+1})]`. It is expanded into
//! `2^N` ordered products, each evaluated as a Gaussian n-point function of
//! Heisenberg operators propagated by the self-consistent quadratic flow.
//! During the waiting times the coefficients are frozen at their stationary
//! values, so every propagator is a single matrix exponential.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{expm, max_abs, to_complex, to_complex_vec, CMat, RMat, RVec};
use crate::phasespace::{
    j_matrix, symplectic_inverse, GaussianState, SymplecticPropagator, DEFAULT_SYMPLECTIC_TOL,
};
use crate::scqa::{integrate, sc_coefficients, stationarity_defect, IntegratorOptions};
use crate::weyl::{char_function, GradedSymbol, Poly, PolySymbol};
use crate::{Error, Result, C64};

/// Largest stationarity defect accepted for the equilibrium state.
pub const STATIONARITY_TOL: f64 = 1e-8;

/// One ordered product of the nested-commutator expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PermutationTerm {
    /// One-based time indices, leftmost factor first.
    pub sigma: Vec<usize>,
    pub sign: i32,
    /// Position of `1` in `sigma` (one-based).
    pub k: usize,
}

/// All `2^N` permutations with `σ(1) > … > σ(k) = 1 < … < σ(N+1)`, sorted by
/// `k` and then lexicographically.
pub fn permutation_terms(order: usize) -> Result<Vec<PermutationTerm>> {
    if order == 0 {
        return Err(Error::InvalidArgument(
            "response order must be at least 1".into(),
        ));
    }
    if order > 20 {
        return Err(Error::InvalidArgument(format!(
            "response order {order} is too large"
        )));
    }
    let mut out = Vec::with_capacity(1 << order);
    for mask in 0u32..(1 << order) {
        // bit i set: element i + 2 sits to the left of 1
        let mut left: Vec<usize> = (0..order)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| i + 2)
            .collect();
        let right: Vec<usize> = (0..order)
            .filter(|i| mask >> i & 1 == 0)
            .map(|i| i + 2)
            .collect();
        left.reverse();
        let k = left.len() + 1;
        let mut sigma = left;
        sigma.push(1);
        sigma.extend(right);
        out.push(PermutationTerm {
            sigma,
            sign: if k % 2 == 1 { 1 } else { -1 },
            k,
        });
    }
    out.sort_by(|a, b| a.k.cmp(&b.k).then_with(|| a.sigma.cmp(&b.sigma)));
    Ok(out)
}

/// Propagators `(Λ_j, Δ_j)` for each waiting time.
#[derive(Debug, Clone, PartialEq)]
pub struct WaitingTimePropagators {
    pub times: Vec<f64>,
    pub props: Vec<SymplecticPropagator>,
}

fn check_descending(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("no waiting times given".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("non-finite waiting time".into()));
    }
    if times.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(
            "waiting times must be non-increasing".into(),
        ));
    }
    Ok(())
}

fn require_stationary(h: &PolySymbol, eq: &GaussianState) -> Result<()> {
    let defect = stationarity_defect(h, eq)?;
    if !(defect <= STATIONARITY_TOL) {
        return Err(Error::NotStationary { defect });
    }
    Ok(())
}

/// Generator `[[JB̄, JC̄], [0, 0]]` of the frozen flow in augmented form.
#[derive(Debug, Clone)]
struct FrozenFlow {
    generator: RMat,
    size: usize,
}

impl FrozenFlow {
    fn new(h: &PolySymbol, eq: &GaussianState) -> Result<Self> {
        let coeffs = sc_coefficients(h, eq)?;
        let size = eq.dim().len();
        let j = j_matrix(size);
        let mut generator = RMat::zeros(size + 1, size + 1);
        generator
            .view_mut((0, 0), (size, size))
            .copy_from(&(&j * &coeffs.b));
        generator
            .view_mut((0, size), (size, 1))
            .copy_from(&(&j * &coeffs.c));
        Ok(FrozenFlow { generator, size })
    }

    fn propagator(&self, t: f64) -> SymplecticPropagator {
        let y = expm(&(&self.generator * t));
        SymplecticPropagator {
            lambda: y.view((0, 0), (self.size, self.size)).into_owned(),
            delta: y
                .view((0, self.size), (self.size, 1))
                .column(0)
                .into_owned(),
            t,
        }
    }
}

/// Frozen-coefficient propagators `Λ_j = exp(τ_j J B̄)` with `Δ_j` from the
/// same augmented matrix exponential.
pub fn waiting_propagators(
    h: &PolySymbol,
    eq: &GaussianState,
    times: &[f64],
) -> Result<WaitingTimePropagators> {
    check_descending(times)?;
    require_stationary(h, eq)?;
    let flow = FrozenFlow::new(h, eq)?;
    Ok(WaitingTimePropagators {
        times: times.to_vec(),
        props: times.iter().map(|&t| flow.propagator(t)).collect(),
    })
}

/// Same propagators obtained by integrating the full SCQA equations.
pub fn waiting_propagators_integrated(
    h: &PolySymbol,
    eq: &GaussianState,
    times: &[f64],
    options: &IntegratorOptions,
) -> Result<WaitingTimePropagators> {
    check_descending(times)?;
    require_stationary(h, eq)?;
    if times[times.len() - 1] < 0.0 {
        return Err(Error::InvalidArgument(
            "integrated propagators need times ≥ 0".into(),
        ));
    }
    let t_max = times[0];
    let props = if t_max > 0.0 {
        let traj = integrate(h, eq, t_max, options)?;
        times
            .iter()
            .map(|&t| traj.propagator_at(t))
            .collect::<Result<Vec<_>>>()?
    } else {
        times
            .iter()
            .map(|_| SymplecticPropagator::identity(eq.dim()))
            .collect()
    };
    Ok(WaitingTimePropagators {
        times: times.to_vec(),
        props,
    })
}

/// `Σ_jk = Λ_j⁻¹ Σ_0 (Λ_k⁻¹)ᵀ` for all pairs of waiting times.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaBlocks {
    pub sigma0: CMat,
    blocks: Vec<Vec<CMat>>,
}

impl SigmaBlocks {
    /// Zero-based block `(j, k)`.
    pub fn get(&self, j: usize, k: usize) -> &CMat {
        &self.blocks[j][k]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

pub fn sigma_blocks(props: &WaitingTimePropagators, state0: &GaussianState) -> Result<SigmaBlocks> {
    let sigma0 = state0.sigma0();
    let inv: Vec<CMat> = props
        .props
        .iter()
        .map(|p| symplectic_inverse(p, DEFAULT_SYMPLECTIC_TOL).map(|m| to_complex(&m)))
        .collect::<Result<_>>()?;
    let blocks = inv
        .iter()
        .map(|lj| inv.iter().map(|lk| lj * &sigma0 * lk.transpose()).collect())
        .collect();
    Ok(SigmaBlocks { sigma0, blocks })
}

/// Interaction operator coupling the system to the field.
#[derive(Debug, Clone, PartialEq)]
pub enum Interaction {
    /// Real polynomial symbol, possibly ħ-graded.
    Polynomial(GradedSymbol),
    /// `V_j = exp(a_jᵀq)`, one vector per waiting time.
    Exponential(Vec<RVec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRequest {
    pub order: usize,
    /// `τ_1 ≥ τ_2 ≥ … ≥ τ_{N+1}`.
    pub times: Vec<f64>,
    pub interaction: Interaction,
    pub equilibrium: GaussianState,
    pub hamiltonian: PolySymbol,
}

/// Per-time data needed by the Gaussian n-point formulas.
#[derive(Debug, Clone)]
struct TimeSlot {
    prop: SymplecticPropagator,
    inv: RMat,
    mean: RVec,
    /// `𝒱(⟨q⟩_j + δ)` as a polynomial in `δ`.
    shifted: Option<Poly>,
}

/// Frozen-flow response evaluator for a fixed Hamiltonian, equilibrium and
/// interaction; only the times change between evaluations.
#[derive(Debug, Clone)]
pub struct ResponseEngine {
    order: usize,
    equilibrium: GaussianState,
    interaction: Interaction,
    potential: Option<PolySymbol>,
    flow: FrozenFlow,
}

impl ResponseEngine {
    pub fn new(
        hamiltonian: &PolySymbol,
        equilibrium: &GaussianState,
        interaction: &Interaction,
        order: usize,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "response order must be at least 1".into(),
            ));
        }
        if hamiltonian.dim() != equilibrium.dim() {
            return Err(Error::DimensionMismatch {
                expected: hamiltonian.dim().len(),
                found: equilibrium.dim().len(),
            });
        }
        let potential = match interaction {
            Interaction::Polynomial(v) => {
                if v.dim() != equilibrium.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: equilibrium.dim().len(),
                        found: v.dim().len(),
                    });
                }
                if v.grades().values().any(|g| !g.is_real()) {
                    return Err(Error::InvalidArgument(
                        "interaction symbol must have real coefficients".into(),
                    ));
                }
                Some(v.semiclassical_eval(equilibrium.hbar()))
            }
            Interaction::Exponential(a) => {
                if a.len() != order + 1 {
                    return Err(Error::DimensionMismatch {
                        expected: order + 1,
                        found: a.len(),
                    });
                }
                if let Some(bad) = a.iter().find(|v| v.len() != equilibrium.dim().len()) {
                    return Err(Error::DimensionMismatch {
                        expected: equilibrium.dim().len(),
                        found: bad.len(),
                    });
                }
                None
            }
        };
        require_stationary(hamiltonian, equilibrium)?;
        Ok(ResponseEngine {
            order,
            equilibrium: equilibrium.clone(),
            interaction: interaction.clone(),
            potential,
            flow: FrozenFlow::new(hamiltonian, equilibrium)?,
        })
    }

    pub fn from_request(req: &ResponseRequest) -> Result<Self> {
        Self::new(
            &req.hamiltonian,
            &req.equilibrium,
            &req.interaction,
            req.order,
        )
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn equilibrium(&self) -> &GaussianState {
        &self.equilibrium
    }

    pub fn propagator(&self, t: f64) -> SymplecticPropagator {
        self.flow.propagator(t)
    }

    fn slot(&self, t: f64) -> Result<TimeSlot> {
        let prop = self.flow.propagator(t);
        let inv = symplectic_inverse(&prop, DEFAULT_SYMPLECTIC_TOL)?;
        let mean = &inv * (self.equilibrium.mean() - &prop.delta);
        let shifted = self
            .potential
            .as_ref()
            .map(|v| v.poly().shift_real(mean.as_slice()));
        Ok(TimeSlot {
            prop,
            inv,
            mean,
            shifted,
        })
    }

    fn check_times(&self, times: &[f64]) -> Result<()> {
        if times.len() != self.order + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.order + 1,
                found: times.len(),
            });
        }
        check_descending(times)
    }

    /// `S(τ_1, …, τ_{N+1})`: signed sum over [`permutation_terms`].
    pub fn response_s(&self, times: &[f64]) -> Result<C64> {
        self.check_times(times)?;
        let slots: Vec<TimeSlot> = times.iter().map(|&t| self.slot(t)).collect::<Result<_>>()?;
        self.s_from_slots(&slots.iter().collect::<Vec<_>>())
    }

    /// The ordered product for one permutation.
    pub fn response_r(&self, term: &PermutationTerm, times: &[f64]) -> Result<C64> {
        self.check_times(times)?;
        let slots: Vec<TimeSlot> = times.iter().map(|&t| self.slot(t)).collect::<Result<_>>()?;
        self.r_from_slots(term, &slots.iter().collect::<Vec<_>>())
    }

    fn s_from_slots(&self, slots: &[&TimeSlot]) -> Result<C64> {
        let mut total = C64::default();
        for term in permutation_terms(self.order)? {
            total += self.r_from_slots(&term, slots)? * term.sign as f64;
        }
        Ok(total)
    }

    fn r_from_slots(&self, term: &PermutationTerm, slots: &[&TimeSlot]) -> Result<C64> {
        let ordered: Vec<&TimeSlot> = term.sigma.iter().map(|&s| slots[s - 1]).collect();
        match &self.interaction {
            Interaction::Polynomial(_) => Ok(polynomial_product(&ordered, &self.equilibrium)),
            Interaction::Exponential(a) => {
                let a: Vec<&RVec> = term.sigma.iter().map(|&s| &a[s - 1]).collect();
                let (phase, chi) = exponential_parts(&a, &ordered, &self.equilibrium)?;
                Ok(phase.exp() * chi)
            }
        }
    }
}

/// `[exp(½∇ᵀ𝐀∇) ∏_j 𝒱(⟨q⟩_j + δ_j)]_{δ=0}` with the slots in product order.
fn polynomial_product(ordered: &[&TimeSlot], state0: &GaussianState) -> C64 {
    let size = state0.dim().len();
    let count = ordered.len();
    let total = size * count;
    let mut product = Poly::constant(total, C64::new(1.0, 0.0));
    for (p, slot) in ordered.iter().enumerate() {
        let v = slot.shifted.as_ref().expect("polynomial interaction");
        product = &product * &v.embed(total, p * size);
    }
    let sigma0 = state0.sigma0();
    let inv: Vec<CMat> = ordered.iter().map(|s| to_complex(&s.inv)).collect();
    let mut big = CMat::zeros(total, total);
    for j in 0..count {
        for k in j..count {
            let block = &inv[j] * &sigma0 * inv[k].transpose();
            big.view_mut((j * size, k * size), (size, size))
                .copy_from(&block);
            if k != j {
                big.view_mut((k * size, j * size), (size, size))
                    .copy_from(&block.transpose());
            }
        }
    }
    product.gaussian_contract(&big)
}

/// `(φ, χ)` with `R = e^φ χ` for `V_j = exp(a_jᵀq)` in product order.
fn exponential_parts(
    a: &[&RVec],
    ordered: &[&TimeSlot],
    state0: &GaussianState,
) -> Result<(C64, C64)> {
    let size = state0.dim().len();
    let j = j_matrix(size);
    let u: Vec<RVec> = a
        .iter()
        .zip(ordered)
        .map(|(a, s)| s.inv.transpose() * *a)
        .collect();
    let mut cross = 0.0;
    for p in 0..u.len() {
        for r in p + 1..u.len() {
            cross += u[p].dot(&(&j * &u[r]));
        }
    }
    let shift: f64 = a
        .iter()
        .zip(ordered)
        .map(|(a, s)| a.dot(&(&s.inv * &s.prop.delta)))
        .sum();
    let phase = C64::new(-shift, -0.5 * state0.hbar() * cross);
    let b = u.iter().fold(RVec::zeros(size), |acc, v| acc + v);
    let chi = char_function(state0, &to_complex_vec(&b))?;
    Ok((phase, chi))
}

fn slots_from_props(
    props: &WaitingTimePropagators,
    state0: &GaussianState,
) -> Result<Vec<TimeSlot>> {
    props
        .props
        .iter()
        .map(|p| {
            let inv = symplectic_inverse(p, DEFAULT_SYMPLECTIC_TOL)?;
            let mean = &inv * (state0.mean() - &p.delta);
            Ok(TimeSlot {
                prop: p.clone(),
                inv,
                mean,
                shifted: None,
            })
        })
        .collect()
}

/// Ordered product `⟨V(τ_{σ(1)}) ⋯ V(τ_{σ(N+1)})⟩` for a polynomial `V`,
/// built from precomputed propagators and Σ blocks.
pub fn gaussian_response_r(
    term: &PermutationTerm,
    v: &PolySymbol,
    state0: &GaussianState,
    props: &WaitingTimePropagators,
    blocks: &SigmaBlocks,
) -> Result<C64> {
    let count = props.props.len();
    if term.sigma.len() != count || blocks.len() != count {
        return Err(Error::DimensionMismatch {
            expected: count,
            found: term.sigma.len(),
        });
    }
    if v.dim() != state0.dim() {
        return Err(Error::DimensionMismatch {
            expected: state0.dim().len(),
            found: v.dim().len(),
        });
    }
    let size = state0.dim().len();
    let total = size * count;
    let slots = slots_from_props(props, state0)?;
    let mut product = Poly::constant(total, C64::new(1.0, 0.0));
    for (p, &s) in term.sigma.iter().enumerate() {
        let shifted = v.poly().shift_real(slots[s - 1].mean.as_slice());
        product = &product * &shifted.embed(total, p * size);
    }
    let mut big = CMat::zeros(total, total);
    for (p, &sj) in term.sigma.iter().enumerate() {
        for (r, &sk) in term.sigma.iter().enumerate().skip(p) {
            let block = blocks.get(sj - 1, sk - 1);
            big.view_mut((p * size, r * size), (size, size))
                .copy_from(block);
            if r != p {
                big.view_mut((r * size, p * size), (size, size))
                    .copy_from(&block.transpose());
            }
        }
    }
    Ok(product.gaussian_contract(&big))
}

fn exponential_inputs<'a>(
    a_list: &'a [RVec],
    props: &WaitingTimePropagators,
    state0: &GaussianState,
) -> Result<(Vec<&'a RVec>, Vec<TimeSlot>)> {
    if a_list.len() != props.props.len() {
        return Err(Error::DimensionMismatch {
            expected: props.props.len(),
            found: a_list.len(),
        });
    }
    if let Some(bad) = a_list.iter().find(|a| a.len() != state0.dim().len()) {
        return Err(Error::DimensionMismatch {
            expected: state0.dim().len(),
            found: bad.len(),
        });
    }
    Ok((a_list.iter().collect(), slots_from_props(props, state0)?))
}

/// `⟨∏_j exp(a_jᵀ q(τ_j))⟩` in list order, as `e^φ` times [`char_samples`].
pub fn exponential_response(
    a_list: &[RVec],
    state0: &GaussianState,
    props: &WaitingTimePropagators,
) -> Result<C64> {
    let (phase, chi) = exponential_phase_and_char(a_list, state0, props)?;
    Ok(phase.exp() * chi)
}

/// The phase `φ` and characteristic-function sample of the exponential
/// response. `φ = −(iħ/2) Σ_{j<k} u_jᵀ J u_k − Σ_j a_jᵀ Λ_j⁻¹ Δ_j` with
/// `u_j = (Λ_j⁻¹)ᵀ a_j`.
pub fn exponential_phase_and_char(
    a_list: &[RVec],
    state0: &GaussianState,
    props: &WaitingTimePropagators,
) -> Result<(C64, C64)> {
    let (a, slots) = exponential_inputs(a_list, props, state0)?;
    exponential_parts(&a, &slots.iter().collect::<Vec<_>>(), state0)
}

/// `χ(Σ_j (Λ_j⁻¹)ᵀ a_j) = ⟨exp(bᵀq)⟩` over the equilibrium state; the
/// exponential response with its phase removed.
pub fn char_samples(
    a_list: &[RVec],
    state0: &GaussianState,
    props: &WaitingTimePropagators,
) -> Result<C64> {
    Ok(exponential_phase_and_char(a_list, state0, props)?.1)
}

/// `S` for a full request, through the frozen-flow engine.
pub fn response_s(req: &ResponseRequest) -> Result<C64> {
    ResponseEngine::from_request(req)?.response_s(&req.times)
}

/// External field driving the polarization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldProfile {
    /// `E(t0 + k·dt) = values[k]`.
    Sampled { t0: f64, dt: f64, values: Vec<f64> },
    /// Delta pulses `area · δ(t − time)`, none earlier than `t0`.
    Impulsive { t0: f64, pulses: Vec<Pulse> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub time: f64,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polarization {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest imaginary part dropped from the values.
    pub max_imag: f64,
}

/// `P(t) = i^N ∫_{t0}^{t} dτ_2 ⋯ ∫_{t0}^{τ_N} dτ_{N+1} E(τ_2)⋯E(τ_{N+1}) S(t, τ_2, …)`.
///
/// Sampled fields use the composite trapezoid rule on each nested
/// integral, so `t_grid` must lie on the field grid. Impulsive fields give
/// a finite sum over non-increasing pulse sequences; a pulse at `t` or `t0`
/// counts in full, and a pulse taken `m` times carries `area^m / m!`.
pub fn polarization(
    engine: &ResponseEngine,
    field: &FieldProfile,
    t_grid: &[f64],
) -> Result<Polarization> {
    let values: Vec<C64> = match field {
        FieldProfile::Sampled { t0, dt, values } => {
            sampled_polarization(engine, *t0, *dt, values, t_grid)?
        }
        FieldProfile::Impulsive { t0, pulses } => {
            impulsive_polarization(engine, *t0, pulses, t_grid)?
        }
    };
    let phase = C64::new(0.0, 1.0).powu(engine.order() as u32);
    let scaled: Vec<C64> = values.iter().map(|v| v * phase).collect();
    Ok(Polarization {
        times: t_grid.to_vec(),
        values: scaled.iter().map(|v| v.re).collect(),
        max_imag: scaled.iter().fold(0.0, |acc, v| acc.max(v.im.abs())),
    })
}

fn sampled_polarization(
    engine: &ResponseEngine,
    t0: f64,
    dt: f64,
    field: &[f64],
    t_grid: &[f64],
) -> Result<Vec<C64>> {
    if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
        return Err(Error::GridMismatch(format!(
            "invalid field grid t0 = {t0}, dt = {dt}"
        )));
    }
    let indices = t_grid
        .iter()
        .map(|&t| {
            let k = ((t - t0) / dt).round();
            if k < 0.0
                || (t - t0 - k * dt).abs() > 1e-9 * dt.max(t.abs())
                || k as usize >= field.len()
            {
                return Err(Error::GridMismatch(format!(
                    "t = {t} is not a point of the field grid"
                )));
            }
            Ok(k as usize)
        })
        .collect::<Result<Vec<usize>>>()?;
    let top = indices.iter().copied().max().unwrap_or(0);
    let slots: Vec<TimeSlot> = (0..=top)
        .into_par_iter()
        .map(|k| engine.slot(t0 + k as f64 * dt))
        .collect::<Result<_>>()?;
    indices
        .par_iter()
        .map(|&k| {
            let mut chosen = vec![k];
            nested_trapezoid(engine, &slots, field, dt, &mut chosen)
        })
        .collect()
}

fn nested_trapezoid(
    engine: &ResponseEngine,
    slots: &[TimeSlot],
    field: &[f64],
    dt: f64,
    chosen: &mut Vec<usize>,
) -> Result<C64> {
    if chosen.len() == engine.order() + 1 {
        let refs: Vec<&TimeSlot> = chosen.iter().map(|&k| &slots[k]).collect();
        return engine.s_from_slots(&refs);
    }
    let upper = chosen[chosen.len() - 1];
    if upper == 0 {
        return Ok(C64::default());
    }
    let mut acc = C64::default();
    for k in 0..=upper {
        let weight = if k == 0 || k == upper { 0.5 * dt } else { dt };
        if field[k] == 0.0 {
            continue;
        }
        chosen.push(k);
        acc += nested_trapezoid(engine, slots, field, dt, chosen)? * (weight * field[k]);
        chosen.pop();
    }
    Ok(acc)
}

fn impulsive_polarization(
    engine: &ResponseEngine,
    t0: f64,
    pulses: &[Pulse],
    t_grid: &[f64],
) -> Result<Vec<C64>> {
    if let Some(p) = pulses
        .iter()
        .find(|p| !(p.time >= t0) || !p.time.is_finite())
    {
        return Err(Error::GridMismatch(format!(
            "pulse at {} precedes t0 = {t0}",
            p.time
        )));
    }
    if let Some(t) = t_grid.iter().find(|&&t| !(t >= t0)) {
        return Err(Error::GridMismatch(format!("t = {t} precedes t0 = {t0}")));
    }
    // merge pulses at equal times, latest first
    let mut merged: Vec<Pulse> = Vec::new();
    let mut sorted = pulses.to_vec();
    sorted.sort_by(|a, b| b.time.total_cmp(&a.time));
    for p in sorted {
        match merged.last_mut() {
            Some(last) if last.time == p.time => last.area += p.area,
            _ => merged.push(p),
        }
    }
    t_grid
        .par_iter()
        .map(|&t| {
            let active: Vec<Pulse> = merged.iter().copied().filter(|p| p.time <= t).collect();
            let slots: Vec<TimeSlot> = std::iter::once(t)
                .chain(active.iter().map(|p| p.time))
                .map(|s| engine.slot(s))
                .collect::<Result<_>>()?;
            let mut chosen = Vec::with_capacity(engine.order());
            pulse_sum(engine, &active, &slots, 0, &mut chosen)
        })
        .collect()
}

/// Sum over non-increasing pulse choices (indices into `active`, which is
/// sorted by decreasing time) starting from `first`.
fn pulse_sum(
    engine: &ResponseEngine,
    active: &[Pulse],
    slots: &[TimeSlot],
    first: usize,
    chosen: &mut Vec<usize>,
) -> Result<C64> {
    if chosen.len() == engine.order() {
        let mut weight = 1.0;
        let mut run = 1;
        for (i, &c) in chosen.iter().enumerate() {
            weight *= active[c].area;
            if i > 0 && chosen[i - 1] == c {
                run += 1;
                weight /= run as f64;
            } else {
                run = 1;
            }
        }
        let refs: Vec<&TimeSlot> = std::iter::once(&slots[0])
            .chain(chosen.iter().map(|&c| &slots[c + 1]))
            .collect();
        return Ok(engine.s_from_slots(&refs)? * weight);
    }
    let mut acc = C64::default();
    for c in first..active.len() {
        chosen.push(c);
        acc += pulse_sum(engine, active, slots, c, chosen)?;
        chosen.pop();
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitVerdict {
    Bounded,
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalLimitReport {
    pub hbars: Vec<f64>,
    pub values: Vec<C64>,
    /// Least-squares slope of `log|S|` against `log ħ`.
    pub fitted_power: f64,
    /// `round(fitted_power)`.
    pub leading_order: i32,
    /// Linear extrapolation of `S / ħ^leading_order` to `ħ = 0`.
    pub limit: C64,
    pub verdict: LimitVerdict,
}

/// Evaluates `S` along a decreasing sequence of `ħ`, keeping the
/// equilibrium mean and covariance fixed, and fits the leading power.
/// `S` is called bounded when the fitted power is not negative.
pub fn classical_limit_probe(
    req: &ResponseRequest,
    hbar_seq: &[f64],
) -> Result<ClassicalLimitReport> {
    if hbar_seq.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two values of hbar".into(),
        ));
    }
    if hbar_seq.iter().any(|h| !(*h > 0.0) || !h.is_finite())
        || hbar_seq.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidArgument(
            "hbar sequence must be positive and strictly decreasing".into(),
        ));
    }
    let values = hbar_seq
        .iter()
        .map(|&hbar| {
            let req = ResponseRequest {
                equilibrium: req.equilibrium.with_hbar(hbar)?,
                ..req.clone()
            };
            response_s(&req)
        })
        .collect::<Result<Vec<C64>>>()?;

    let points: Vec<(f64, f64)> = hbar_seq
        .iter()
        .zip(&values)
        .filter(|(_, v)| v.norm() > 0.0)
        .map(|(h, v)| (h.ln(), v.norm().ln()))
        .collect();
    let fitted_power = if points.len() < 2 {
        0.0
    } else {
        least_squares(&points).1
    };
    let leading_order = fitted_power.round() as i32;
    let scaled: Vec<(f64, C64)> = hbar_seq
        .iter()
        .zip(&values)
        .map(|(&h, v)| (h, v / h.powi(leading_order)))
        .collect();
    let re: Vec<(f64, f64)> = scaled.iter().map(|(h, v)| (*h, v.re)).collect();
    let im: Vec<(f64, f64)> = scaled.iter().map(|(h, v)| (*h, v.im)).collect();
    let limit = C64::new(least_squares(&re).0, least_squares(&im).0);
    let verdict = if fitted_power >= -1e-3 {
        LimitVerdict::Bounded
    } else {
        LimitVerdict::Divergent
    };
    Ok(ClassicalLimitReport {
        hbars: hbar_seq.to_vec(),
        values,
        fitted_power,
        leading_order,
        limit,
        verdict,
    })
}

/// `(intercept, slope)` of the least-squares line through `points`.
fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Largest deviation between two sets of propagators.
pub fn propagator_discrepancy(a: &WaitingTimePropagators, b: &WaitingTimePropagators) -> f64 {
    a.props
        .iter()
        .zip(&b.props)
        .map(|(x, y)| max_abs(&(&x.lambda - &y.lambda)).max((&x.delta - &y.delta).amax()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasespace::{standard_j, PhaseDim};
    use std::f64::consts::PI;

    fn one() -> PhaseDim {
        PhaseDim::new(1).unwrap()
    }

    fn harmonic() -> PolySymbol {
        PolySymbol::from_real_terms(one(), &[(&[2, 0], 0.5), (&[0, 2], 0.5)]).unwrap()
    }

    fn x_interaction() -> Interaction {
        Interaction::Polynomial(PolySymbol::x(one(), 0).into())
    }

    fn request(times: Vec<f64>, interaction: Interaction) -> ResponseRequest {
        ResponseRequest {
            order: times.len() - 1,
            times,
            interaction,
            equilibrium: GaussianState::vacuum(one(), 1.0),
            hamiltonian: harmonic(),
        }
    }

    #[test]
    fn permutations_small_orders() {
        let n1: Vec<(Vec<usize>, i32)> = permutation_terms(1)
            .unwrap()
            .into_iter()
            .map(|t| (t.sigma, t.sign))
            .collect();
        assert_eq!(n1, vec![(vec![1, 2], 1), (vec![2, 1], -1)]);
        let n2: Vec<(Vec<usize>, i32)> = permutation_terms(2)
            .unwrap()
            .into_iter()
            .map(|t| (t.sigma, t.sign))
            .collect();
        assert_eq!(
            n2,
            vec![
                (vec![1, 2, 3], 1),
                (vec![2, 1, 3], -1),
                (vec![3, 1, 2], -1),
                (vec![3, 2, 1], 1)
            ]
        );
        let n3 = permutation_terms(3).unwrap();
        let counts: Vec<usize> = (1..=4)
            .map(|k| n3.iter().filter(|t| t.k == k).count())
            .collect();
        assert_eq!(counts, vec![1, 3, 3, 1]);
        assert!(permutation_terms(0).is_err());
    }

    #[test]
    fn harmonic_waiting_propagator_is_rotation() {
        let vac = GaussianState::vacuum(one(), 1.0);
        let w = waiting_propagators(&harmonic(), &vac, &[PI / 2.0, 0.0]).unwrap();
        let j = standard_j(one()).matrix().clone();
        assert!(max_abs(&(&w.props[0].lambda - &j)) < 1e-14);
        assert!(max_abs(&(&w.props[1].lambda - RMat::identity(2, 2))) < 1e-15);
        assert_eq!(w.props[1].delta, RVec::zeros(2));
    }

    #[test]
    fn non_stationary_equilibrium_rejected() {
        let s = GaussianState::squeezed_vacuum(0.3, 1.0);
        assert!(matches!(
            waiting_propagators(&harmonic(), &s, &[1.0, 0.0]),
            Err(Error::NotStationary { .. })
        ));
        let moved = GaussianState::coherent(RVec::from_vec(vec![0.0, 1.0]), 1.0).unwrap();
        assert!(matches!(
            response_s(&ResponseRequest {
                equilibrium: moved,
                ..request(vec![1.0, 0.0], x_interaction())
            }),
            Err(Error::NotStationary { .. })
        ));
    }

    #[test]
    fn sigma_blocks_at_zero_time() {
        let vac = GaussianState::vacuum(one(), 1.0);
        let w = waiting_propagators(&harmonic(), &vac, &[0.0, 0.0, 0.0]).unwrap();
        let b = sigma_blocks(&w, &vac).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                assert_eq!(b.get(j, k), &vac.sigma0());
            }
        }
    }

    #[test]
    fn two_point_function_of_vacuum() {
        let t = 0.7;
        let engine = ResponseEngine::new(
            &harmonic(),
            &GaussianState::vacuum(one(), 1.0),
            &x_interaction(),
            1,
        )
        .unwrap();
        let terms = permutation_terms(1).unwrap();
        let r = engine.response_r(&terms[0], &[t, 0.0]).unwrap();
        assert!((r - C64::from_polar(0.5, -t)).norm() < 1e-14);
        let s = engine.response_s(&[t, 0.0]).unwrap();
        assert!((s - C64::new(0.0, -t.sin())).norm() < 1e-14);
    }

    #[test]
    fn constant_interaction() {
        let c = PolySymbol::constant(one(), C64::new(2.0, 0.0));
        let req = request(
            vec![1.0, 0.5, 0.0],
            Interaction::Polynomial(c.clone().into()),
        );
        assert_eq!(response_s(&req).unwrap(), C64::default());
        let w = waiting_propagators(&harmonic(), &req.equilibrium, &req.times).unwrap();
        let b = sigma_blocks(&w, &req.equilibrium).unwrap();
        let term = &permutation_terms(2).unwrap()[1];
        let r = gaussian_response_r(term, &c, &req.equilibrium, &w, &b).unwrap();
        assert!((r - C64::new(8.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn engine_matches_block_route() {
        let v = PolySymbol::from_real_terms(one(), &[(&[0, 2], 1.0), (&[1, 1], 0.3)]).unwrap();
        let times = [1.3, 0.4, 0.1];
        let req = request(times.to_vec(), Interaction::Polynomial(v.clone().into()));
        let engine = ResponseEngine::from_request(&req).unwrap();
        let w = waiting_propagators(&harmonic(), &req.equilibrium, &times).unwrap();
        let b = sigma_blocks(&w, &req.equilibrium).unwrap();
        for term in permutation_terms(2).unwrap() {
            let a = engine.response_r(&term, &times).unwrap();
            let c = gaussian_response_r(&term, &v, &req.equilibrium, &w, &b).unwrap();
            assert!((a - c).norm() < 1e-12);
        }
    }

    #[test]
    fn exponential_trivial_cases() {
        let vac = GaussianState::vacuum(one(), 1.0);
        let w = waiting_propagators(&harmonic(), &vac, &[0.5, 0.0]).unwrap();
        let zero = vec![RVec::zeros(2), RVec::zeros(2)];
        assert!((exponential_response(&zero, &vac, &w).unwrap() - 1.0).norm() < 1e-15);

        let w0 = waiting_propagators(&harmonic(), &vac, &[0.0]).unwrap();
        let a = RVec::from_vec(vec![0.2, -0.4]);
        let direct = char_function(&vac, &to_complex_vec(&a)).unwrap();
        let r = exponential_response(std::slice::from_ref(&a), &vac, &w0).unwrap();
        assert!((r - direct).norm() < 1e-15);
    }

    #[test]
    fn impulsive_single_pulse() {
        let engine = ResponseEngine::new(
            &harmonic(),
            &GaussianState::vacuum(one(), 1.0),
            &x_interaction(),
            1,
        )
        .unwrap();
        let field = FieldProfile::Impulsive {
            t0: 0.0,
            pulses: vec![Pulse {
                time: 0.0,
                area: 0.3,
            }],
        };
        let p = polarization(&engine, &field, &[0.5, 1.0]).unwrap();
        for (t, v) in p.times.iter().zip(&p.values) {
            let s = engine.response_s(&[*t, 0.0]).unwrap();
            assert!((v - (C64::new(0.0, 0.3) * s).re).abs() < 1e-15);
        }
        assert!(p.max_imag < 1e-15);
    }

    #[test]
    fn zero_field_and_grid_mismatch() {
        let engine = ResponseEngine::new(
            &harmonic(),
            &GaussianState::vacuum(one(), 1.0),
            &x_interaction(),
            1,
        )
        .unwrap();
        let field = FieldProfile::Sampled {
            t0: 0.0,
            dt: 0.1,
            values: vec![0.0; 11],
        };
        let p = polarization(&engine, &field, &[0.5, 1.0]).unwrap();
        assert_eq!(p.values, vec![0.0, 0.0]);
        assert!(matches!(
            polarization(&engine, &field, &[0.55]),
            Err(Error::GridMismatch(_))
        ));
        assert!(matches!(
            polarization(&engine, &field, &[1.1]),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn classical_probe_harmonic() {
        let t = 0.9;
        let req = request(vec![t, 0.0], x_interaction());
        let report = classical_limit_probe(&req, &[1.0, 0.5, 0.25, 0.125]).unwrap();
        assert!((report.fitted_power - 1.0).abs() < 1e-10);
        assert_eq!(report.leading_order, 1);
        assert!((report.limit - C64::new(0.0, -t.sin())).norm() < 1e-12);
        assert_eq!(report.verdict, LimitVerdict::Bounded);
    }
}
