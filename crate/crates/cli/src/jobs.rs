use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use scqa::linalg::{max_abs, RMat};
use scqa::oracle::{gaussian_to_fock, oracle_moments, oracle_response_s, weyl_quantize, Evolver};
use scqa::phasespace::{standard_j, GaussianState};
use scqa::response::{
    classical_limit_probe, polarization, ClassicalLimitReport, Interaction, ResponseEngine,
    ResponseRequest,
};
use scqa::scqa::{
    conservation_monitor, energy, fmt_f64, integrate, stationarity_defect, stationary_residual,
    stationary_solve, universal_invariants, Closure, ConservationReport, InvariantsRecord,
    Sample,
};
use scqa::weyl::PolySymbol;
use scqa::{Error, C64};

use crate::config::{ConfigError, EquilibriumMode, ExperimentConfig};
use crate::output::{self, ErrorReport};

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(#[from] Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl JobError {
    /// 2 configuration, 3 numerical tolerance, 4 truncation, 1 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            JobError::Config(_) => 2,
            JobError::Io(_) => 1,
            JobError::Numerical(e) => match e {
                Error::TruncationError { .. } => 4,
                Error::SymplecticDrift { .. }
                | Error::ConservationDrift { .. }
                | Error::NoConvergence { .. }
                | Error::NotStationary { .. }
                | Error::NonRealHamiltonian { .. }
                | Error::NonHermitian { .. }
                | Error::SingularCovariance => 3,
                _ => 2,
            },
        }
    }

    pub fn report(&self) -> ErrorReport {
        let (kind, t, path) = match self {
            JobError::Config(e) => ("ConfigError".to_string(), None, Some(e.path.clone())),
            JobError::Io(_) => ("IoError".to_string(), None, None),
            JobError::Numerical(e) => {
                let t = match e {
                    Error::SymplecticDrift { t, .. }
                    | Error::ConservationDrift { t, .. }
                    | Error::OutOfRange { t, .. } => Some(*t),
                    _ => None,
                };
                (error_kind(e), t, None)
            }
        };
        ErrorReport { kind, message: self.to_string(), t, path }
    }
}

fn error_kind(e: &Error) -> String {
    let debug = format!("{e:?}");
    debug
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("Error")
        .to_string()
}

/// Job result plus whether it met the tolerances the config asked for.
pub struct Outcome<T> {
    pub result: T,
    pub passed: bool,
}

impl<T> Outcome<T> {
    fn ok(result: T) -> Self {
        Outcome { result, passed: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StateOut {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

fn rows(m: &RMat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl From<&GaussianState> for StateOut {
    fn from(s: &GaussianState) -> Self {
        StateOut { mean: s.mean().iter().copied().collect(), cov: rows(s.cov()) }
    }
}

impl From<&Sample> for StateOut {
    fn from(s: &Sample) -> Self {
        StateOut { mean: s.mean.iter().copied().collect(), cov: rows(&s.cov) }
    }
}

fn required<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T, ConfigError> {
    block
        .as_ref()
        .ok_or_else(|| ConfigError::new(name, "block is required for this command"))
}

#[derive(Debug, Clone, Serialize)]
pub struct Conserved {
    pub quantity: String,
    pub initial: f64,
    pub last: f64,
    pub max_drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DcoeffsOut {
    pub initial: Vec<f64>,
    pub last: Vec<f64>,
    pub max_drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolveResult {
    pub t_end: f64,
    pub step: f64,
    pub closure: Closure,
    pub samples: usize,
    pub final_state: StateOut,
    pub conserved: Vec<Conserved>,
    pub d_coeffs: DcoeffsOut,
    pub max_symplectic_residual: f64,
    pub trajectory_csv: &'static str,
}

pub fn evolve(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome<EvolveResult>, JobError> {
    let job = required(&cfg.evolve, "evolve")?;
    let h = cfg.hamiltonian()?;
    let state = cfg.initial_state(h.dim())?;
    let traj = integrate(&h, &state, job.t_end, &cfg.integrator)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    output::write_text(out, "trajectory.csv", &String::from_utf8_lossy(&csv))?;

    let report = conservation_monitor(&traj);
    let (first, last) = (&traj.samples[0], traj.last());
    let mut conserved = vec![
        Conserved {
            quantity: "energy".into(),
            initial: first.energy,
            last: last.energy,
            max_drift: report.energy,
        },
        Conserved {
            quantity: "detM".into(),
            initial: first.invariants.det_m,
            last: last.invariants.det_m,
            max_drift: report.det_m,
        },
    ];
    for (m, drift) in &report.traces {
        conserved.push(Conserved {
            quantity: format!("L_{m}"),
            initial: first.invariants.traces[m],
            last: last.invariants.traces[m],
            max_drift: *drift,
        });
    }
    Ok(Outcome::ok(EvolveResult {
        t_end: job.t_end,
        step: cfg.integrator.step,
        closure: cfg.integrator.closure,
        samples: traj.samples.len(),
        final_state: last.into(),
        conserved,
        d_coeffs: DcoeffsOut {
            initial: first.invariants.d_coeffs.clone(),
            last: last.invariants.d_coeffs.clone(),
            max_drift: report.d_coeffs,
        },
        max_symplectic_residual: report.symplectic,
        trajectory_csv: "trajectory.csv",
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct ResponsePoint {
    pub times: Vec<f64>,
    pub s: C64,
    /// `i^N · S`, real for Hermitian interactions.
    pub scaled: C64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolarizationOut {
    pub points: usize,
    pub max_imag: f64,
    pub csv: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RespondResult {
    pub order: usize,
    pub equilibrium: StateOut,
    pub stationarity_defect: f64,
    pub points: Vec<ResponsePoint>,
    pub max_scaled_real: f64,
    pub max_scaled_imag: f64,
    /// `max|Im(i^N S)| / max|Re(i^N S)|`; absent when the real part vanishes.
    pub imag_to_real: Option<f64>,
    pub polarization: Option<PolarizationOut>,
    pub classical_limit: Option<ClassicalLimitReport>,
}

fn equilibrium(
    cfg: &ExperimentConfig,
    mode: EquilibriumMode,
    h: &PolySymbol,
) -> Result<GaussianState, JobError> {
    let initial = cfg.initial_state(h.dim())?;
    Ok(match mode {
        EquilibriumMode::Stationary => stationary_solve(h, &initial, &cfg.stationary)?,
        EquilibriumMode::Initial => initial,
    })
}

pub fn respond(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome<RespondResult>, JobError> {
    let job = required(&cfg.response, "response")?;
    let h = cfg.hamiltonian()?;
    let interaction = job.interaction(h.dim())?;
    let eq = equilibrium(cfg, job.equilibrium, &h)?;
    let engine = ResponseEngine::new(&h, &eq, &interaction, job.order)?;
    let phase = C64::new(0.0, 1.0).powu(job.order as u32);

    let tuples = job.time_tuples();
    let points = tuples
        .par_iter()
        .map(|t| {
            let s = engine.response_s(t)?;
            Ok(ResponsePoint { times: t.clone(), s, scaled: s * phase })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let max_scaled_real = points.iter().fold(0.0_f64, |a, p| a.max(p.scaled.re.abs()));
    let max_scaled_imag = points.iter().fold(0.0_f64, |a, p| a.max(p.scaled.im.abs()));

    let polarization = match (&job.field, &job.t_grid) {
        (Some(field), Some(grid)) => {
            let p = polarization(&engine, field, grid)?;
            let rows: Vec<Vec<String>> = p
                .times
                .iter()
                .zip(&p.values)
                .map(|(t, v)| vec![fmt_f64(*t), fmt_f64(*v)])
                .collect();
            output::write_csv(out, "polarization.csv", &["t", "P"], &rows)?;
            Some(PolarizationOut { points: rows.len(), max_imag: p.max_imag, csv: "polarization.csv" })
        }
        _ => None,
    };

    let classical_limit = match &job.hbar_sequence {
        Some(seq) => {
            let times = tuples.first().ok_or_else(|| {
                ConfigError::new("response.hbar_sequence", "needs at least one time tuple")
            })?;
            let req = ResponseRequest {
                order: job.order,
                times: times.clone(),
                interaction: interaction.clone(),
                equilibrium: eq.clone(),
                hamiltonian: h.clone(),
            };
            Some(classical_limit_probe(&req, seq)?)
        }
        None => None,
    };

    Ok(Outcome::ok(RespondResult {
        order: job.order,
        equilibrium: (&eq).into(),
        stationarity_defect: stationarity_defect(&h, &eq)?,
        points,
        max_scaled_real,
        max_scaled_imag,
        imag_to_real: (max_scaled_real > 0.0).then(|| max_scaled_imag / max_scaled_real),
        polarization,
        classical_limit,
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentDelta {
    pub t: f64,
    pub mean: f64,
    pub cov: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResponseDelta {
    pub times: Vec<f64>,
    pub scqa: C64,
    pub oracle: C64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub mean: f64,
    pub cov: f64,
    pub response: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareResult {
    pub oracle_dim: usize,
    pub moments: Vec<MomentDelta>,
    pub max_mean_delta: f64,
    pub max_cov_delta: f64,
    pub response: Vec<ResponseDelta>,
    pub max_response_delta: f64,
    pub truncation_change: Option<f64>,
    pub tolerances: Tolerances,
    pub pass: bool,
}

pub fn compare(cfg: &ExperimentConfig, _out: &Path) -> Result<Outcome<CompareResult>, JobError> {
    let job = required(&cfg.compare, "compare")?;
    let h = cfg.hamiltonian()?;
    if h.dim().modes() != 1 {
        return Err(Error::UnsupportedDim { n: h.dim().modes() }.into());
    }
    let state = cfg.initial_state(h.dim())?;
    let d = job.oracle_dim;
    let hbar = cfg.hbar;

    let traj = integrate(&h, &state, job.t_end, &cfg.integrator)?;
    let evolver = Evolver::new(&weyl_quantize(&h, d, hbar)?)?;
    let rho = gaussian_to_fock(&state, d)?;
    let moments = traj
        .samples
        .par_iter()
        .map(|s| {
            let (mean, cov) = oracle_moments(&evolver.evolve(&rho, s.t), hbar)?;
            Ok(MomentDelta { t: s.t, mean: (&s.mean - mean).amax(), cov: max_abs(&(&s.cov - cov)) })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let truncation_change = match job.truncation_tol {
        Some(tol) => {
            let t = traj.t_end();
            let (m1, c1) = oracle_moments(&evolver.evolve(&rho, t), hbar)?;
            let fine = Evolver::new(&weyl_quantize(&h, 2 * d, hbar)?)?;
            let (m2, c2) = oracle_moments(&fine.evolve(&gaussian_to_fock(&state, 2 * d)?, t), hbar)?;
            let change = (m1 - m2).amax().max(max_abs(&(c1 - c2)));
            if !(change <= tol) {
                return Err(Error::TruncationError { dim: d, change }.into());
            }
            Some(change)
        }
        None => None,
    };

    let mut response = Vec::new();
    if !job.response_times.is_empty() {
        let rjob = required(&cfg.response, "response")?;
        let Interaction::Polynomial(v) = rjob.interaction(h.dim())? else {
            return Err(ConfigError::new(
                "response.interaction",
                "compare needs a polynomial interaction",
            )
            .into());
        };
        let eq = equilibrium(cfg, rjob.equilibrium, &h)?;
        let engine = ResponseEngine::new(&h, &eq, &Interaction::Polynomial(v.clone()), rjob.order)?;
        let h_op = weyl_quantize(&h, d, hbar)?;
        let v_op = weyl_quantize(&v.semiclassical_eval(hbar), d, hbar)?;
        let rho_eq = gaussian_to_fock(&eq, d)?;
        for (i, times) in job.response_times.iter().enumerate() {
            if times.len() != rjob.order + 1 {
                return Err(ConfigError::new(
                    format!("compare.response_times[{i}]"),
                    format!("expected {} times", rjob.order + 1),
                )
                .into());
            }
            let scqa = engine.response_s(times)?;
            let oracle = oracle_response_s(&h_op, &rho_eq, &v_op, times)?;
            response.push(ResponseDelta { times: times.clone(), scqa, oracle, delta: (scqa - oracle).norm() });
        }
    }

    let max_mean_delta = moments.iter().fold(0.0_f64, |a, m| a.max(m.mean));
    let max_cov_delta = moments.iter().fold(0.0_f64, |a, m| a.max(m.cov));
    let max_response_delta = response.iter().fold(0.0_f64, |a, r| a.max(r.delta));
    let pass = max_mean_delta <= job.mean_tol
        && max_cov_delta <= job.cov_tol
        && max_response_delta <= job.response_tol;
    Ok(Outcome {
        result: CompareResult {
            oracle_dim: d,
            moments,
            max_mean_delta,
            max_cov_delta,
            response,
            max_response_delta,
            truncation_change,
            tolerances: Tolerances { mean: job.mean_tol, cov: job.cov_tol, response: job.response_tol },
            pass,
        },
        passed: pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryResult {
    pub state: StateOut,
    pub energy: f64,
    pub stationary_residual: f64,
    pub stationarity_defect: f64,
    pub invariants: InvariantsRecord,
}

pub fn stationary(cfg: &ExperimentConfig, _out: &Path) -> Result<Outcome<StationaryResult>, JobError> {
    let h = cfg.hamiltonian()?;
    let initial = cfg.initial_state(h.dim())?;
    let eq = stationary_solve(&h, &initial, &cfg.stationary)?;
    Ok(Outcome::ok(StationaryResult {
        state: (&eq).into(),
        energy: energy(&h, &eq)?,
        stationary_residual: stationary_residual(&h, &eq)?,
        stationarity_defect: stationarity_defect(&h, &eq)?,
        invariants: universal_invariants(eq.cov(), &standard_j(eq.dim()), &cfg.integrator.invariant_powers),
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantsResult {
    pub state: StateOut,
    pub energy: f64,
    pub invariants: InvariantsRecord,
    /// Drifts along the `evolve` horizon, when that block is present.
    pub trajectory: Option<ConservationReport>,
}

pub fn invariants(cfg: &ExperimentConfig, _out: &Path) -> Result<Outcome<InvariantsResult>, JobError> {
    let h = cfg.hamiltonian()?;
    let state = cfg.initial_state(h.dim())?;
    let trajectory = match &cfg.evolve {
        Some(job) => Some(conservation_monitor(&integrate(&h, &state, job.t_end, &cfg.integrator)?)),
        None => None,
    };
    Ok(Outcome::ok(InvariantsResult {
        state: (&state).into(),
        energy: energy(&h, &state)?,
        invariants: universal_invariants(state.cov(), &standard_j(state.dim()), &cfg.integrator.invariant_powers),
        trajectory,
    }))
}
