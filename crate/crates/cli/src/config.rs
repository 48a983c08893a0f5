//! Experiment configuration: one JSON document per run.
//!
//! Every block except `hamiltonian` is optional; a job only reads the blocks
//! it needs and reports a missing one as a configuration error.

use serde::Deserialize;

use scqa::linalg::{RMat, RVec};
use scqa::phasespace::{GaussianState, PhaseDim};
use scqa::response::{FieldProfile, Interaction};
use scqa::scqa::{IntegratorOptions, StationaryOptions};
use scqa::weyl::{symbol_from_literal, GradedSymbol, PolySymbol, SymbolTerm};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }
}

fn default_hbar() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    pub hamiltonian: Vec<SymbolTerm>,
    #[serde(default)]
    pub initial_state: StateSpec,
    #[serde(default)]
    pub integrator: IntegratorOptions,
    #[serde(default)]
    pub stationary: StationaryOptions,
    pub evolve: Option<EvolveJob>,
    pub response: Option<ResponseJob>,
    pub compare: Option<CompareJob>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    #[default]
    Vacuum,
    Coherent {
        mean: Vec<f64>,
    },
    /// `M = νE`, centred on `mean` (zero when omitted).
    Thermal {
        nu: f64,
        mean: Option<Vec<f64>>,
    },
    SqueezedVacuum {
        r: f64,
    },
    /// Arbitrary mean and covariance, rows of `cov` in canonical order.
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveJob {
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumMode {
    /// Solve for the stationary state starting from `initial_state`.
    #[default]
    Stationary,
    /// Use `initial_state` as given; it must already be stationary.
    Initial,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionSpec {
    Polynomial { symbol: Vec<SymbolTerm> },
    /// One vector `a_j` per waiting time, `V_j = exp(a_jᵀq)`.
    Exponential { vectors: Vec<Vec<f64>> },
}

/// Time tuples `(τ, rest…)` with `τ` on a uniform grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scan {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    #[serde(default)]
    pub rest: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseJob {
    pub order: usize,
    pub interaction: InteractionSpec,
    #[serde(default)]
    pub equilibrium: EquilibriumMode,
    #[serde(default)]
    pub times: Vec<Vec<f64>>,
    pub scan: Option<Scan>,
    pub field: Option<FieldProfile>,
    pub t_grid: Option<Vec<f64>>,
    pub hbar_sequence: Option<Vec<f64>>,
}

fn default_oracle_dim() -> usize {
    40
}

fn default_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareJob {
    #[serde(default = "default_oracle_dim")]
    pub oracle_dim: usize,
    pub t_end: f64,
    #[serde(default = "default_tol")]
    pub mean_tol: f64,
    #[serde(default = "default_tol")]
    pub cov_tol: f64,
    #[serde(default = "default_tol")]
    pub response_tol: f64,
    /// Response times compared against the oracle; needs a polynomial
    /// `response` block.
    #[serde(default)]
    pub response_times: Vec<Vec<f64>>,
    /// When set, the final-time oracle moments at `oracle_dim` and
    /// `2 · oracle_dim` must agree to this tolerance.
    pub truncation_tol: Option<f64>,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(path, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be positive and finite, got {v}")))
    }
}

fn descending(path: &str, times: &[f64]) -> Result<(), ConfigError> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(ConfigError::new(path, "times must be finite"));
    }
    if let Some(k) = times.windows(2).position(|w| w[0] < w[1]) {
        return Err(ConfigError::new(
            format!("{path}[{}]", k + 1),
            "times must be non-increasing",
        ));
    }
    Ok(())
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        positive("hbar", self.hbar)?;
        self.integrator
            .validate()
            .map_err(|e| ConfigError::new("integrator", e.to_string()))?;
        positive("stationary.tol", self.stationary.tol)?;
        positive("stationary.defect_tol", self.stationary.defect_tol)?;
        if let Some(job) = &self.evolve {
            positive("evolve.t_end", job.t_end)?;
        }
        if let Some(job) = &self.response {
            if job.order == 0 {
                return Err(ConfigError::new("response.order", "must be at least 1"));
            }
            for (i, t) in job.times.iter().enumerate() {
                let path = format!("response.times[{i}]");
                if t.len() != job.order + 1 {
                    return Err(ConfigError::new(
                        path,
                        format!("expected {} times, found {}", job.order + 1, t.len()),
                    ));
                }
                descending(&path, t)?;
            }
            if let Some(scan) = &job.scan {
                if scan.rest.len() != job.order {
                    return Err(ConfigError::new(
                        "response.scan.rest",
                        format!("expected {} fixed times", job.order),
                    ));
                }
                if scan.count < 2 {
                    return Err(ConfigError::new("response.scan.count", "must be at least 2"));
                }
            }
            if job.field.is_some() && job.t_grid.is_none() {
                return Err(ConfigError::new("response.t_grid", "required when a field is given"));
            }
            if let Some(seq) = &job.hbar_sequence {
                for (i, &h) in seq.iter().enumerate() {
                    positive(&format!("response.hbar_sequence[{i}]"), h)?;
                }
            }
        }
        if let Some(job) = &self.compare {
            positive("compare.t_end", job.t_end)?;
            positive("compare.mean_tol", job.mean_tol)?;
            positive("compare.cov_tol", job.cov_tol)?;
            positive("compare.response_tol", job.response_tol)?;
            if let Some(tol) = job.truncation_tol {
                positive("compare.truncation_tol", tol)?;
            }
            if job.oracle_dim < 2 {
                return Err(ConfigError::new("compare.oracle_dim", "must be at least 2"));
            }
            for (i, t) in job.response_times.iter().enumerate() {
                descending(&format!("compare.response_times[{i}]"), t)?;
            }
        }
        Ok(())
    }

    pub fn hamiltonian(&self) -> Result<PolySymbol, ConfigError> {
        let graded = symbol_from_literal(&self.hamiltonian)
            .map_err(|e| ConfigError::new("hamiltonian", e.to_string()))?;
        let h = graded.semiclassical_eval(self.hbar);
        if !h.is_real() {
            return Err(ConfigError::new("hamiltonian", "coefficients must be real"));
        }
        Ok(h)
    }

    pub fn initial_state(&self, dim: PhaseDim) -> Result<GaussianState, ConfigError> {
        let path = "initial_state";
        let err = |e: scqa::Error| ConfigError::new(path, e.to_string());
        let vector = |field: &str, v: &[f64]| -> Result<RVec, ConfigError> {
            if v.len() != dim.len() {
                return Err(ConfigError::new(
                    format!("{path}.{field}"),
                    format!("expected {} entries, found {}", dim.len(), v.len()),
                ));
            }
            Ok(RVec::from_column_slice(v))
        };
        match &self.initial_state {
            StateSpec::Vacuum => Ok(GaussianState::vacuum(dim, self.hbar)),
            StateSpec::Coherent { mean } => {
                GaussianState::coherent(vector("mean", mean)?, self.hbar).map_err(err)
            }
            StateSpec::Thermal { nu, mean } => {
                let state = GaussianState::thermal(dim, *nu, self.hbar).map_err(err)?;
                match mean {
                    Some(m) => state.with_mean(vector("mean", m)?).map_err(err),
                    None => Ok(state),
                }
            }
            StateSpec::SqueezedVacuum { r } => {
                if dim.modes() != 1 {
                    return Err(ConfigError::new(path, "squeezed_vacuum is single-mode"));
                }
                Ok(GaussianState::squeezed_vacuum(*r, self.hbar))
            }
            StateSpec::Gaussian { mean, cov } => {
                let mean = vector("mean", mean)?;
                if cov.len() != dim.len() {
                    return Err(ConfigError::new(
                        format!("{path}.cov"),
                        format!("expected {} rows", dim.len()),
                    ));
                }
                let mut flat = Vec::with_capacity(dim.len() * dim.len());
                for (i, row) in cov.iter().enumerate() {
                    if row.len() != dim.len() {
                        return Err(ConfigError::new(
                            format!("{path}.cov[{i}]"),
                            format!("expected {} entries", dim.len()),
                        ));
                    }
                    flat.extend_from_slice(row);
                }
                let cov = RMat::from_row_slice(dim.len(), dim.len(), &flat);
                GaussianState::new(mean, cov, self.hbar).map_err(err)
            }
        }
    }
}

impl ResponseJob {
    pub fn interaction(&self, dim: PhaseDim) -> Result<Interaction, ConfigError> {
        match &self.interaction {
            InteractionSpec::Polynomial { symbol } => {
                let v: GradedSymbol = symbol_from_literal(symbol)
                    .map_err(|e| ConfigError::new("response.interaction.symbol", e.to_string()))?;
                if v.dim() != dim {
                    return Err(ConfigError::new(
                        "response.interaction.symbol",
                        "mode count differs from the Hamiltonian",
                    ));
                }
                Ok(Interaction::Polynomial(v))
            }
            InteractionSpec::Exponential { vectors } => {
                if vectors.len() != self.order + 1 {
                    return Err(ConfigError::new(
                        "response.interaction.vectors",
                        format!("expected {} vectors", self.order + 1),
                    ));
                }
                let mut out = Vec::with_capacity(vectors.len());
                for (i, v) in vectors.iter().enumerate() {
                    if v.len() != dim.len() {
                        return Err(ConfigError::new(
                            format!("response.interaction.vectors[{i}]"),
                            format!("expected {} entries", dim.len()),
                        ));
                    }
                    out.push(RVec::from_column_slice(v));
                }
                Ok(Interaction::Exponential(out))
            }
        }
    }

    /// Explicit tuples first, then the scan.
    pub fn time_tuples(&self) -> Vec<Vec<f64>> {
        let mut out = self.times.clone();
        if let Some(scan) = &self.scan {
            for k in 0..scan.count {
                let tau = scan.start + (scan.stop - scan.start) * k as f64 / (scan.count - 1) as f64;
                let mut t = vec![tau];
                t.extend_from_slice(&scan.rest);
                out.push(t);
            }
        }
        out
    }
}
