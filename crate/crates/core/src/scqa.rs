//! Self-consistent quadratic propagation.
//!
//! The Hamiltonian is replaced at every instant by
//! `H_SC = ½ qᵀB q + qᵀC` with `B = ⟨∇²H⟩` and `C = ⟨∇H⟩ − B⟨q⟩`, the
//! averages being taken over the current Gaussian state. The integral of
//! motion `q_t = Λ q + Δ` then obeys
//!
//! ```text
//! dΛ/dt = Λ J B,   Λ(0) = E
//! dΔ/dt = Λ J C,   Δ(0) = 0
//! ```
//!
//! and the state is recovered through `⟨q⟩_t = Λ⁻¹(⟨q⟩_0 − Δ)` and
//! `M_t = Λ⁻¹ M_0 Λ⁻ᵀ`. The system is integrated with fixed-step classical
//! RK4; symplecticity and the conserved quantities are monitored at every
//! recorded sample and a drift above tolerance aborts the run.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::linalg::{max_abs, mirror_upper, CMat, RMat, RVec};
use crate::phasespace::{
    j_matrix, standard_j, symplectic_check, symplectic_inverse_unchecked, GaussianState,
    SymplecticForm, SymplecticPropagator,
};
use crate::weyl::{gradient, hessian, wick_expectation, PolySymbol, SymbolMatrix, SymbolVector};
use crate::{Error, Result, C64};

/// Imaginary parts of `⟨∇H⟩`, `⟨∇²H⟩` below this (relative) are dropped.
const IMAG_TOL: f64 = 1e-10;

/// How `⟨∇H⟩` and `⟨∇²H⟩` are closed over the Gaussian state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// Full Wick series `exp(½∇ᵀM∇)`; exact for polynomial symbols.
    #[default]
    Wick,
    /// Series truncated at order zero: derivatives evaluated at the mean
    /// (Gaussian wave-packet dynamics).
    WavePacket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub step: f64,
    pub symplectic_tol: f64,
    pub conservation_tol: f64,
    pub closure: Closure,
    /// Record a sample every this many steps (the final time is always kept).
    pub record_every: usize,
    /// Powers `m` of the monitored traces `tr((MJᵀ)^m)`.
    pub invariant_powers: Vec<u32>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            step: 1e-3,
            symplectic_tol: 1e-8,
            conservation_tol: 1e-6,
            closure: Closure::Wick,
            record_every: 1,
            invariant_powers: vec![2, 4],
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if !(self.symplectic_tol > 0.0) || !(self.conservation_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument(
                "record_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Coefficients of the self-consistent quadratic Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct ScCoefficients {
    /// `⟨∇²H⟩`, exactly symmetric.
    pub b: RMat,
    /// `⟨∇H⟩ − ⟨∇²H⟩⟨q⟩`.
    pub c: RVec,
    /// `⟨∇H⟩`.
    pub grad_mean: RVec,
}

/// Conserved quantities of a Gaussian covariance under any quadratic flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantsRecord {
    pub det_m: f64,
    /// `m → tr((MJᵀ)^m)`.
    pub traces: BTreeMap<u32, f64>,
    /// Coefficients of `det(M − μJ) = Σ_m D_m μ^m`, lowest power first.
    pub d_coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub propagator: SymplecticPropagator,
    pub mean: RVec,
    pub cov: RMat,
    pub energy: f64,
    pub invariants: InvariantsRecord,
    pub symplectic_residual: f64,
}

impl Sample {
    pub fn state(&self, hbar: f64) -> GaussianState {
        GaussianState::new(self.mean.clone(), self.cov.clone(), hbar)
            .expect("trajectory samples are valid Gaussian states")
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    hamiltonian: PolySymbol,
    initial: GaussianState,
    options: IntegratorOptions,
}

/// Maximum drifts along a trajectory, all relative to the initial sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub energy: f64,
    pub det_m: f64,
    pub traces: BTreeMap<u32, f64>,
    pub d_coeffs: f64,
    /// Largest `‖ΛᵀJΛ − J‖` (absolute).
    pub symplectic: f64,
}

impl ConservationReport {
    /// Largest relative drift among the conserved quantities.
    pub fn max_drift(&self) -> f64 {
        self.traces
            .values()
            .fold(self.energy.max(self.det_m).max(self.d_coeffs), |acc, v| {
                acc.max(*v)
            })
    }
}

/// Precomputed gradient and Hessian symbols of a Hamiltonian.
#[derive(Debug, Clone)]
pub struct ScqaModel {
    hamiltonian: PolySymbol,
    grad: SymbolVector,
    hess: SymbolMatrix,
    closure: Closure,
}

impl ScqaModel {
    pub fn new(hamiltonian: &PolySymbol, closure: Closure) -> Self {
        ScqaModel {
            hamiltonian: hamiltonian.clone(),
            grad: gradient(hamiltonian),
            hess: hessian(hamiltonian),
            closure,
        }
    }

    pub fn hamiltonian(&self) -> &PolySymbol {
        &self.hamiltonian
    }

    fn average(&self, symbol: &PolySymbol, state: &GaussianState) -> Result<f64> {
        let v = match self.closure {
            Closure::Wick => wick_expectation(symbol, state)?,
            Closure::WavePacket => symbol.eval(state.mean()),
        };
        real_part(v)
    }

    pub fn coefficients(&self, state: &GaussianState) -> Result<ScCoefficients> {
        if state.dim() != self.hamiltonian.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.hamiltonian.dim().len(),
                found: state.dim().len(),
            });
        }
        let size = state.dim().len();
        let mut b = RMat::zeros(size, size);
        for i in 0..size {
            for j in i..size {
                b[(i, j)] = self.average(self.hess.get(i, j), state)?;
            }
        }
        mirror_upper(&mut b);
        let mut grad_mean = RVec::zeros(size);
        for i in 0..size {
            grad_mean[i] = self.average(&self.grad.0[i], state)?;
        }
        let c = &grad_mean - &b * state.mean();
        Ok(ScCoefficients { b, c, grad_mean })
    }

    /// Right-hand side at `(Λ, Δ)`; `Λ⁻¹` is taken as `JΛᵀJᵀ`.
    fn rhs(&self, lambda: &RMat, delta: &RVec, initial: &GaussianState) -> Result<(RMat, RVec)> {
        let state = evolved_state(lambda, delta, initial);
        let coeffs = self.coefficients(&state)?;
        let j = j_matrix(lambda.nrows());
        let lj = lambda * j;
        Ok((&lj * &coeffs.b, &lj * &coeffs.c))
    }

    fn rk4_step(
        &self,
        lambda: &RMat,
        delta: &RVec,
        initial: &GaussianState,
        h: f64,
    ) -> Result<(RMat, RVec)> {
        let (k1l, k1d) = self.rhs(lambda, delta, initial)?;
        let (k2l, k2d) = self.rhs(
            &(lambda + &k1l * (0.5 * h)),
            &(delta + &k1d * (0.5 * h)),
            initial,
        )?;
        let (k3l, k3d) = self.rhs(
            &(lambda + &k2l * (0.5 * h)),
            &(delta + &k2d * (0.5 * h)),
            initial,
        )?;
        let (k4l, k4d) = self.rhs(&(lambda + &k3l * h), &(delta + &k3d * h), initial)?;
        let l = lambda + (k1l + k2l * 2.0 + k3l * 2.0 + k4l) * (h / 6.0);
        let d = delta + (k1d + k2d * 2.0 + k3d * 2.0 + k4d) * (h / 6.0);
        Ok((l, d))
    }
}

fn real_part(v: C64) -> Result<f64> {
    if v.im.abs() > IMAG_TOL * v.re.abs().max(1.0) {
        return Err(Error::NonRealHamiltonian {
            residue: v.im.abs(),
        });
    }
    Ok(v.re)
}

fn evolved_state(lambda: &RMat, delta: &RVec, initial: &GaussianState) -> GaussianState {
    let inv = symplectic_inverse_unchecked(lambda);
    let mean = &inv * (initial.mean() - delta);
    let cov = &inv * initial.cov() * inv.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    GaussianState::from_parts(mean, cov, initial.hbar())
}

/// `B = ⟨∇²H⟩`, `C = ⟨∇H⟩ − B⟨q⟩` by Wick closure.
pub fn sc_coefficients(h: &PolySymbol, state: &GaussianState) -> Result<ScCoefficients> {
    ScqaModel::new(h, Closure::Wick).coefficients(state)
}

/// `(dΛ/dt, dΔ/dt) = (ΛJB, ΛJC)` at the propagator `prop`.
pub fn scqa_rhs(
    h: &PolySymbol,
    prop: &SymplecticPropagator,
    initial: &GaussianState,
) -> Result<(RMat, RVec)> {
    let state = crate::phasespace::state_evolve(prop, initial)?;
    let coeffs = sc_coefficients(h, &state)?;
    let j = j_matrix(prop.lambda.nrows());
    let lj = &prop.lambda * j;
    Ok((&lj * &coeffs.b, &lj * &coeffs.c))
}

/// `⟨H⟩` over a Gaussian state.
pub fn energy(h: &PolySymbol, state: &GaussianState) -> Result<f64> {
    real_part(wick_expectation(h, state)?)
}

/// `tr((MJᵀ)^m)`.
pub fn trace_power(cov: &RMat, m: u32) -> f64 {
    let j = j_matrix(cov.nrows());
    let base = cov * j.transpose();
    let mut acc = RMat::identity(cov.nrows(), cov.nrows());
    for _ in 0..m {
        acc = &acc * &base;
    }
    acc.trace()
}

/// `det M`, `tr((MJᵀ)^m)` for `m` in `powers`, and the coefficients of
/// `det(M − μJ)` obtained by sampling `2n + 1` points on a circle.
pub fn universal_invariants(cov: &RMat, form: &SymplecticForm, powers: &[u32]) -> InvariantsRecord {
    let size = cov.nrows();
    let traces = powers.iter().map(|&m| (m, trace_power(cov, m))).collect();
    let k = size + 1;
    let radius = max_abs(cov).max(1.0);
    let mc = crate::linalg::to_complex(cov);
    let jc = crate::linalg::to_complex(form.matrix());
    let samples: Vec<C64> = (0..k)
        .map(|s| {
            let mu = C64::from_polar(radius, 2.0 * std::f64::consts::PI * s as f64 / k as f64);
            (&mc - &jc * mu).determinant()
        })
        .collect();
    let d_coeffs = (0..k)
        .map(|m| {
            let mut acc = C64::default();
            for (s, v) in samples.iter().enumerate() {
                let angle = -2.0 * std::f64::consts::PI * (s * m) as f64 / k as f64;
                acc += v * C64::from_polar(1.0, angle);
            }
            acc.re / (k as f64 * radius.powi(m as i32))
        })
        .collect();
    InvariantsRecord {
        det_m: cov.determinant(),
        traces,
        d_coeffs,
    }
}

fn relative_drift(value: f64, reference: f64, floor: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(floor)
}

/// Scalar conserved quantities use `|x − x₀| / |x₀|`. The coefficients of
/// `det(M − μJ)` are compared as a vector, `max_m |D_m − D_m⁰| / max_m |D_m⁰|`,
/// since the odd ones vanish identically.
fn drifts(sample: &Sample, first: &Sample) -> Vec<(String, f64)> {
    let mut out = vec![
        (
            "energy".to_string(),
            relative_drift(sample.energy, first.energy, 1e-300),
        ),
        (
            "detM".to_string(),
            relative_drift(sample.invariants.det_m, first.invariants.det_m, 1e-300),
        ),
    ];
    for (m, v) in &sample.invariants.traces {
        let v0 = first.invariants.traces[m];
        out.push((format!("L_{m}"), relative_drift(*v, v0, 1e-300)));
    }
    let scale = first
        .invariants
        .d_coeffs
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    let worst = sample
        .invariants
        .d_coeffs
        .iter()
        .zip(&first.invariants.d_coeffs)
        .map(|(v, v0)| (v - v0).abs())
        .fold(0.0, f64::max);
    out.push(("Dcoeffs".to_string(), worst / scale.max(1e-300)));
    out
}

fn make_sample(
    model: &ScqaModel,
    prop: SymplecticPropagator,
    initial: &GaussianState,
    options: &IntegratorOptions,
    form: &SymplecticForm,
) -> Result<Sample> {
    let state = evolved_state(&prop.lambda, &prop.delta, initial);
    let energy = energy(model.hamiltonian(), &state)?;
    let invariants = universal_invariants(state.cov(), form, &options.invariant_powers);
    let symplectic_residual = symplectic_check(&prop.lambda)?;
    Ok(Sample {
        t: prop.t,
        mean: state.mean().clone(),
        cov: state.cov().clone(),
        propagator: prop,
        energy,
        invariants,
        symplectic_residual,
    })
}

/// Integrates the SCQA equations from `Λ = E, Δ = 0` up to `t_end`.
pub fn integrate(
    h: &PolySymbol,
    state0: &GaussianState,
    t_end: f64,
    options: &IntegratorOptions,
) -> Result<Trajectory> {
    options.validate()?;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    if state0.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim().len(),
            found: state0.dim().len(),
        });
    }
    let model = ScqaModel::new(h, options.closure);
    let form = standard_j(state0.dim());
    let first = make_sample(
        &model,
        SymplecticPropagator::identity(state0.dim()),
        state0,
        options,
        &form,
    )?;
    let mut samples = vec![first];

    let steps = (t_end / options.step - 1e-9).ceil().max(1.0) as usize;
    let mut lambda = RMat::identity(state0.dim().len(), state0.dim().len());
    let mut delta = RVec::zeros(state0.dim().len());
    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * options.step;
        let t = if k == steps {
            t_end
        } else {
            k as f64 * options.step
        };
        let (l, d) = model.rk4_step(&lambda, &delta, state0, t - t_prev)?;
        lambda = l;
        delta = d;
        let residual = symplectic_check(&lambda)?;
        if !(residual <= options.symplectic_tol) {
            return Err(Error::SymplecticDrift {
                residual,
                tol: options.symplectic_tol,
                t,
            });
        }
        if k % options.record_every == 0 || k == steps {
            let prop = SymplecticPropagator {
                lambda: lambda.clone(),
                delta: delta.clone(),
                t,
            };
            let sample = make_sample(&model, prop, state0, options, &form)?;
            for (quantity, drift) in drifts(&sample, &samples[0]) {
                // the wave-packet closure does not conserve the Wick-averaged energy
                let exempt = quantity == "energy" && options.closure == Closure::WavePacket;
                if !exempt && !(drift <= options.conservation_tol) {
                    return Err(Error::ConservationDrift {
                        quantity,
                        drift,
                        tol: options.conservation_tol,
                        t,
                    });
                }
            }
            samples.push(sample);
        }
    }
    Ok(Trajectory {
        samples,
        hamiltonian: h.clone(),
        initial: state0.clone(),
        options: options.clone(),
    })
}

impl Trajectory {
    pub fn hamiltonian(&self) -> &PolySymbol {
        &self.hamiltonian
    }

    pub fn initial(&self) -> &GaussianState {
        &self.initial
    }

    pub fn options(&self) -> &IntegratorOptions {
        &self.options
    }

    pub fn t_start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn last(&self) -> &Sample {
        &self.samples[self.samples.len() - 1]
    }

    /// Propagator at an arbitrary time, integrated from the closest earlier
    /// sample with steps no larger than the trajectory's own.
    pub fn propagator_at(&self, t: f64) -> Result<SymplecticPropagator> {
        if !(t >= self.t_start() && t <= self.t_end()) {
            return Err(Error::OutOfRange {
                t,
                start: self.t_start(),
                end: self.t_end(),
            });
        }
        let idx = self.samples.partition_point(|s| s.t <= t).saturating_sub(1);
        let base = &self.samples[idx];
        let span = t - base.t;
        if span == 0.0 {
            return Ok(base.propagator.clone());
        }
        let model = ScqaModel::new(&self.hamiltonian, self.options.closure);
        let steps = (span / self.options.step).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let mut lambda = base.propagator.lambda.clone();
        let mut delta = base.propagator.delta.clone();
        for _ in 0..steps {
            let (l, d) = model.rk4_step(&lambda, &delta, &self.initial, h)?;
            lambda = l;
            delta = d;
        }
        Ok(SymplecticPropagator { lambda, delta, t })
    }

    pub fn state_at(&self, t: f64) -> Result<GaussianState> {
        let prop = self.propagator_at(t)?;
        crate::phasespace::state_evolve(&prop, &self.initial)
    }

    /// Writes the trajectory as CSV (header row, `,` separator).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let size = self.initial.dim().len();
        let mut header = vec!["t".to_string()];
        for i in 0..size {
            for j in 0..size {
                header.push(format!("lambda_{i}{j}"));
            }
        }
        header.extend((0..size).map(|i| format!("delta_{i}")));
        header.extend((0..size).map(|i| format!("mean_{i}")));
        for i in 0..size {
            for j in i..size {
                header.push(format!("cov_{i}{j}"));
            }
        }
        header.extend(
            ["energy", "detM", "L_2", "L_4", "symplectic_residual"]
                .iter()
                .map(|s| s.to_string()),
        );
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![fmt_f64(s.t)];
            for i in 0..size {
                for j in 0..size {
                    row.push(fmt_f64(s.propagator.lambda[(i, j)]));
                }
            }
            row.extend(s.propagator.delta.iter().map(|v| fmt_f64(*v)));
            row.extend(s.mean.iter().map(|v| fmt_f64(*v)));
            for i in 0..size {
                for j in i..size {
                    row.push(fmt_f64(s.cov[(i, j)]));
                }
            }
            let l2 = s
                .invariants
                .traces
                .get(&2)
                .copied()
                .unwrap_or_else(|| trace_power(&s.cov, 2));
            let l4 = s
                .invariants
                .traces
                .get(&4)
                .copied()
                .unwrap_or_else(|| trace_power(&s.cov, 4));
            for v in [s.energy, s.invariants.det_m, l2, l4, s.symplectic_residual] {
                row.push(fmt_f64(v));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Fixed 17-significant-digit scientific formatting; `-0` prints as `0`.
pub fn fmt_f64(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

/// Maximum drifts of energy, `det M`, traces and `det(M − μJ)` coefficients.
pub fn conservation_monitor(traj: &Trajectory) -> ConservationReport {
    let first = &traj.samples[0];
    let mut report = ConservationReport {
        energy: 0.0,
        det_m: 0.0,
        traces: first.invariants.traces.keys().map(|&m| (m, 0.0)).collect(),
        d_coeffs: 0.0,
        symplectic: 0.0,
    };
    for s in &traj.samples {
        for (name, drift) in drifts(s, first) {
            let slot = match name.as_str() {
                "energy" => &mut report.energy,
                "detM" => &mut report.det_m,
                "Dcoeffs" => &mut report.d_coeffs,
                other => {
                    let m: u32 = other[2..].parse().expect("trace label");
                    report.traces.get_mut(&m).expect("configured power")
                }
            };
            *slot = slot.max(drift);
        }
        report.symplectic = report.symplectic.max(s.symplectic_residual);
    }
    report
}

/// `⟨∇H⟩ᵀ J ⟨q⟩ − tr(J ⟨∇²H⟩ M)` by Wick closure.
pub fn stationary_residual(h: &PolySymbol, state: &GaussianState) -> Result<f64> {
    let coeffs = sc_coefficients(h, state)?;
    let j = j_matrix(state.dim().len());
    let lin = coeffs.grad_mean.dot(&(&j * state.mean()));
    let tr = (&j * &coeffs.b * state.cov()).trace();
    Ok(lin - tr)
}

/// Largest entry of the SCQA velocities `d⟨q⟩/dt = −J⟨∇H⟩` and
/// `dM/dt = MBJ − JBM`; zero exactly when the state is invariant.
pub fn stationarity_defect(h: &PolySymbol, state: &GaussianState) -> Result<f64> {
    let coeffs = sc_coefficients(h, state)?;
    Ok(velocity_defect(&coeffs, state))
}

fn velocity_defect(coeffs: &ScCoefficients, state: &GaussianState) -> f64 {
    let j = j_matrix(state.dim().len());
    let mean_rate = &j * &coeffs.grad_mean;
    let cov_rate = state.cov() * &coeffs.b * &j - &j * &coeffs.b * state.cov();
    mean_rate.amax().max(max_abs(&cov_rate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryOptions {
    pub damping: f64,
    /// Stop once an update changes no entry by more than this.
    pub tol: f64,
    pub max_iterations: usize,
    /// Required stationarity defect of the returned state.
    pub defect_tol: f64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions {
            damping: 0.5,
            tol: 1e-10,
            max_iterations: 10_000,
            defect_tol: 1e-8,
        }
    }
}

/// Damped fixed-point search for a stationary Gaussian.
///
/// Each iteration moves the covariance towards `s·B⁻¹`, where `B = ⟨∇²H⟩`
/// at the current state and `s` keeps `det M` unchanged (so the symplectic
/// spectrum of the starting covariance is preserved), and moves the mean by
/// a damped Newton step on `⟨∇H⟩ = 0`, whose Jacobian is again `B`. The
/// iteration always starts from `initial`.
pub fn stationary_solve(
    h: &PolySymbol,
    initial: &GaussianState,
    options: &StationaryOptions,
) -> Result<GaussianState> {
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "damping must be in (0, 1], got {}",
            options.damping
        )));
    }
    let size = initial.dim().len();
    let alpha = options.damping;
    let mut state = initial.clone();
    let mut last_change = f64::INFINITY;
    for iteration in 1..=options.max_iterations {
        let coeffs = sc_coefficients(h, &state)?;
        let chol = match coeffs.b.clone().cholesky() {
            Some(c) => c,
            None => {
                return Err(Error::NoConvergence {
                    iterations: iteration,
                    residual: f64::INFINITY,
                })
            }
        };
        let b_inv = chol.inverse();
        let det_ratio = state.cov().determinant() * coeffs.b.determinant();
        let s = det_ratio.powf(1.0 / size as f64);
        let target = b_inv.clone() * s;
        let cov = state.cov() * (1.0 - alpha) + target * alpha;
        let cov = (&cov + cov.transpose()) * 0.5;
        // the convex combination can only grow det M; undo that
        let cov = &cov * (state.cov().determinant() / cov.determinant()).powf(1.0 / size as f64);
        let mean = state.mean() - (b_inv * &coeffs.grad_mean) * alpha;
        last_change = max_abs(&(&cov - state.cov())).max((&mean - state.mean()).amax());
        state = GaussianState::new(mean, cov, state.hbar())?;
        if last_change < options.tol {
            let defect = stationarity_defect(h, &state)?;
            if defect < options.defect_tol {
                return Ok(state);
            }
            return Err(Error::NoConvergence {
                iterations: iteration,
                residual: defect,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: options.max_iterations,
        residual: last_change,
    })
}

/// `|d⟨A⟩/dt − [σ(⟨∇A⟩, ⟨∇H⟩) − tr(J⟨∇²H⟩M⟨∇²A⟩)]|` at time `t`, the
/// left-hand side by central differences of step `h_fd` along `traj`.
pub fn ehrenfest_residual(
    a: &PolySymbol,
    h: &PolySymbol,
    traj: &Trajectory,
    t: f64,
    h_fd: f64,
) -> Result<f64> {
    if !(h_fd > 0.0) {
        return Err(Error::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    for probe in [t - h_fd, t + h_fd] {
        if !(probe >= traj.t_start() && probe <= traj.t_end()) {
            return Err(Error::OutOfRange {
                t: probe,
                start: traj.t_start(),
                end: traj.t_end(),
            });
        }
    }
    let plus = wick_expectation(a, &traj.state_at(t + h_fd)?)?;
    let minus = wick_expectation(a, &traj.state_at(t - h_fd)?)?;
    let lhs = (plus - minus) / (2.0 * h_fd);

    let state = traj.state_at(t)?;
    let coeffs = sc_coefficients(h, &state)?;
    let size = state.dim().len();
    let j = crate::linalg::to_complex(&j_matrix(size));
    let grad_a = gradient(a);
    let hess_a = hessian(a);
    let mut ga = crate::linalg::CVec::zeros(size);
    let mut ha = CMat::zeros(size, size);
    for i in 0..size {
        ga[i] = wick_expectation(&grad_a.0[i], &state)?;
        for k in 0..size {
            ha[(i, k)] = wick_expectation(hess_a.get(i, k), &state)?;
        }
    }
    let gh = crate::linalg::to_complex_vec(&coeffs.grad_mean);
    let sigma = (gh.transpose() * &j * &ga)[(0, 0)];
    let bm = crate::linalg::to_complex(&(&coeffs.b * state.cov()));
    let tr = (&j * bm * ha).trace();
    Ok((lhs - (sigma - tr)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasespace::PhaseDim;

    fn one() -> PhaseDim {
        PhaseDim::new(1).unwrap()
    }

    fn harmonic() -> PolySymbol {
        PolySymbol::from_real_terms(one(), &[(&[2, 0], 0.5), (&[0, 2], 0.5)]).unwrap()
    }

    fn quartic(lambda: f64) -> PolySymbol {
        PolySymbol::from_real_terms(one(), &[(&[2, 0], 0.5), (&[0, 2], 0.5), (&[0, 4], lambda)])
            .unwrap()
    }

    #[test]
    fn harmonic_coefficients() {
        let cov = RMat::from_row_slice(2, 2, &[0.9, 0.2, 0.2, 0.6]);
        let s = GaussianState::new(RVec::from_vec(vec![0.4, -1.0]), cov, 1.0).unwrap();
        let c = sc_coefficients(&harmonic(), &s).unwrap();
        assert_eq!(c.b, RMat::identity(2, 2));
        assert!(c.c.amax() < 1e-15);
    }

    #[test]
    fn quartic_coefficients_at_vacuum() {
        let c = sc_coefficients(&quartic(0.1), &GaussianState::vacuum(one(), 1.0)).unwrap();
        assert!((c.b[(1, 1)] - 1.6).abs() < 1e-15);
        assert_eq!(c.b[(0, 0)], 1.0);
        assert_eq!(c.c, RVec::zeros(2));
    }

    #[test]
    fn linear_hamiltonian_coefficients() {
        let h = PolySymbol::x(one(), 0);
        let c = sc_coefficients(&h, &GaussianState::vacuum(one(), 1.0)).unwrap();
        assert_eq!(c.b, RMat::zeros(2, 2));
        assert_eq!(c.c, RVec::from_vec(vec![0.0, 1.0]));
    }

    #[test]
    fn non_real_hamiltonian_rejected() {
        let h = PolySymbol::x(one(), 0).scale(C64::new(0.0, 1.0));
        assert!(matches!(
            sc_coefficients(&h, &GaussianState::vacuum(one(), 1.0)),
            Err(Error::NonRealHamiltonian { .. })
        ));
    }

    #[test]
    fn rhs_examples() {
        let vac = GaussianState::vacuum(one(), 1.0);
        let id = SymplecticPropagator::identity(one());
        let j = standard_j(one()).matrix().clone();
        let (dl, dd) = scqa_rhs(&harmonic(), &id, &vac).unwrap();
        assert_eq!(dl, j);
        assert_eq!(dd, RVec::zeros(2));

        let (dl, _) = scqa_rhs(&quartic(0.1), &id, &vac).unwrap();
        let expected = &j * RMat::from_diagonal(&RVec::from_vec(vec![1.0, 1.6]));
        assert!(max_abs(&(dl - expected)) < 1e-15);
    }

    #[test]
    fn free_particle_generator_is_nilpotent() {
        let h = PolySymbol::monomial(one(), &[2, 0], 0.5).unwrap();
        let opts = IntegratorOptions {
            step: 0.01,
            ..Default::default()
        };
        let tr = integrate(&h, &GaussianState::vacuum(one(), 1.0), 2.0, &opts).unwrap();
        let expected = RMat::from_row_slice(2, 2, &[1.0, 0.0, -2.0, 1.0]);
        assert!(max_abs(&(&tr.last().propagator.lambda - expected)) < 1e-12);
    }

    #[test]
    fn harmonic_period_recovery() {
        let cov = RMat::from_row_slice(2, 2, &[0.9, 0.2, 0.2, 0.6]);
        let s = GaussianState::new(RVec::from_vec(vec![0.4, -1.0]), cov, 1.0).unwrap();
        let opts = IntegratorOptions {
            record_every: 100,
            ..Default::default()
        };
        let tr = integrate(&harmonic(), &s, 2.0 * std::f64::consts::PI, &opts).unwrap();
        let last = tr.last();
        assert!(max_abs(&(&last.propagator.lambda - RMat::identity(2, 2))) < 1e-6);
        assert!(last.propagator.delta.amax() < 1e-6);
        assert!((last.t - 2.0 * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn ballistic_motion() {
        let h = PolySymbol::monomial(one(), &[2, 0], 0.5).unwrap();
        let s = GaussianState::coherent(RVec::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
        let opts = IntegratorOptions {
            record_every: 500,
            ..Default::default()
        };
        let tr = integrate(&h, &s, 3.0, &opts).unwrap();
        let m = &tr.last().mean;
        assert!((m[0] - 1.0).abs() < 1e-12 && (m[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_vacuum_energy() {
        assert_eq!(
            energy(&harmonic(), &GaussianState::vacuum(one(), 1.0)).unwrap(),
            0.5
        );
    }

    #[test]
    fn invariants_of_vacuum() {
        let form = standard_j(one());
        let rec = universal_invariants(&(RMat::identity(2, 2) * 0.5), &form, &[2, 3]);
        assert!((rec.det_m - 0.25).abs() < 1e-15);
        assert!((rec.traces[&2] + 0.5).abs() < 1e-15);
        assert!(rec.traces[&3].abs() < 1e-15);
        // det(½E − μJ) = ¼ + μ²
        assert!((rec.d_coeffs[0] - 0.25).abs() < 1e-14);
        assert!(rec.d_coeffs[1].abs() < 1e-14);
        assert!((rec.d_coeffs[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stationary_residual_examples() {
        let s = GaussianState::new(RVec::zeros(2), RMat::identity(2, 2), 1.0).unwrap();
        assert_eq!(stationary_residual(&harmonic(), &s).unwrap(), 0.0);
        let cov = RMat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.8]);
        let s = GaussianState::new(RVec::zeros(2), cov, 1.0).unwrap();
        assert!(stationary_residual(&harmonic(), &s).unwrap().abs() < 1e-15);
        // quartic at the vacuum: B = diag(1, 1.6) commutes with M = ½E
        let r = stationary_residual(&quartic(0.1), &GaussianState::vacuum(one(), 1.0)).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn stationary_solve_examples() {
        let opts = StationaryOptions::default();
        let vac = GaussianState::vacuum(one(), 1.0);
        let s = stationary_solve(&harmonic(), &vac, &opts).unwrap();
        assert_eq!(s.cov(), vac.cov());

        let s = stationary_solve(&quartic(0.1), &vac, &opts).unwrap();
        assert!(stationary_residual(&quartic(0.1), &s).unwrap().abs() < 1e-8);
        assert!(stationarity_defect(&quartic(0.1), &s).unwrap() < 1e-8);
        assert!((s.cov().determinant() - 0.25).abs() < 1e-12);

        let free = PolySymbol::monomial(one(), &[2, 0], 0.5).unwrap();
        assert!(matches!(
            stationary_solve(&free, &vac, &opts),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn drift_abort_reports_time() {
        // a step this large breaks symplecticity at the first step
        let opts = IntegratorOptions {
            step: 0.5,
            ..Default::default()
        };
        match integrate(
            &quartic(0.1),
            &GaussianState::vacuum(one(), 1.0),
            2.0,
            &opts,
        ) {
            Err(Error::SymplecticDrift { t, .. }) => assert_eq!(t, 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ehrenfest_out_of_range() {
        let opts = IntegratorOptions {
            step: 0.01,
            ..Default::default()
        };
        let tr = integrate(&harmonic(), &GaussianState::vacuum(one(), 1.0), 1.0, &opts).unwrap();
        let x = PolySymbol::x(one(), 0);
        assert!(matches!(
            ehrenfest_residual(&x, &harmonic(), &tr, 0.0, 1e-4),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn csv_has_expected_columns() {
        let opts = IntegratorOptions {
            step: 0.01,
            record_every: 10,
            ..Default::default()
        };
        let tr = integrate(&harmonic(), &GaussianState::vacuum(one(), 1.0), 0.3, &opts).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 1 + 4 + 2 + 2 + 3 + 5);
        assert!(header.starts_with("t,lambda_00"));
        assert_eq!(lines.count(), 4);
    }
}
