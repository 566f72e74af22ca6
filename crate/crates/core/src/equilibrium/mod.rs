//! Fictitious play over empirical state-costate measures, with certificates.
//!
//! Each outer iteration builds the coupling of the current measure `κ` (state
//! marginals and the nodewise price fixed point), solves one agent problem
//! per initial atom against it, and mixes the best responses into `κ`. When
//! the price has settled and the exploitability is small, the best responses
//! themselves are certified as an equilibrium candidate.

mod solve;
mod uniqueness;

use thiserror::Error;

use crate::measures::{MeasureError, ParticleMeasure};
use crate::model::{InitialDistribution, ModelError};
use crate::ocp::{AgentOptions, Bounds, CouplingSignals, OcpError, PmpResidual, TimeGrid};
use crate::pointwise::PointwiseError;

pub use solve::{
    best_response, coupling_of, exploitability, initial_measure, price_consistency, solve_equilibrium, BestResponse,
    ResponseOptions,
};
pub use uniqueness::{monotonicity_probe, uniqueness_experiment, CouplingTerm, UniquenessReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("{failed} of {total} agent solves failed (first: {first})")]
    AgentFailures { failed: usize, total: usize, first: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Pointwise(#[from] PointwiseError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
}

/// Weight `ω_k` given to the best response at outer iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    Constant(f64),
    /// `ω_k = 1/(k+1)`.
    Harmonic,
}

impl Damping {
    pub fn weight(&self, k: usize) -> f64 {
        match *self {
            Damping::Constant(w) => w,
            Damping::Harmonic => 1.0 / (k as f64 + 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub nt: usize,
    pub m0: InitialDistribution,
    pub damping: Damping,
    /// Largest number of particles kept in `κ`.
    pub support_cap: usize,
    /// Bound on the price change between iterates and on price consistency.
    pub price_tol: f64,
    /// Exploitability bound, relative to `1 + |mean cost|`.
    pub exploitability_tol: f64,
    /// Bound on every residual of the certified trajectories.
    pub pmp_tol: f64,
    pub agent: AgentOptions,
    pub max_outer: usize,
    pub seed: u64,
    /// Half-width of the uniform shifts `r` in the initial controls
    /// `v[γ_k, r_k]`; zero gives the minimal-effort start.
    pub initial_spread: f64,
}

impl SolveConfig {
    pub fn new(nt: usize, m0: InitialDistribution) -> Self {
        Self {
            nt,
            m0,
            damping: Damping::Harmonic,
            support_cap: 256,
            price_tol: 1e-6,
            exploitability_tol: 1e-4,
            pmp_tol: 1e-5,
            agent: AgentOptions::default(),
            max_outer: 200,
            seed: 0,
            initial_spread: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), EquilibriumError> {
        let bad = |s: &str| Err(EquilibriumError::InvalidConfig(s.into()));
        if self.nt == 0 {
            return bad("nt must be positive");
        }
        let w_ok = match self.damping {
            Damping::Constant(w) => w > 0.0 && w <= 1.0,
            Damping::Harmonic => true,
        };
        if !w_ok {
            return bad("damping weight must lie in (0, 1]");
        }
        if self.support_cap == 0 {
            return bad("support_cap must be positive");
        }
        for (name, v) in [
            ("price_tol", self.price_tol),
            ("exploitability_tol", self.exploitability_tol),
            ("pmp_tol", self.pmp_tol),
            ("agent.tol", self.agent.tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EquilibriumError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive");
        }
        if !(self.initial_spread.is_finite() && self.initial_spread >= 0.0) {
            return bad("initial_spread must be nonnegative");
        }
        Ok(())
    }
}

/// One outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `sup_k |P_k − P_k^{prev}|`; infinite at the first iteration.
    pub price_change: f64,
    /// `sup_k d₁(m_k, m_k^{prev})`; infinite at the first iteration.
    pub marginal_d1_change: f64,
    pub exploitability: f64,
    pub mean_cost: f64,
    pub bounds: Bounds,
    pub support: usize,
    pub dropped_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub exploitability: f64,
    /// `exploitability_tol · (1 + |mean cost|)`.
    pub exploitability_bound: f64,
    pub price_consistency: f64,
    /// Price change from one more best response.
    pub fixed_point_gap: f64,
    pub pmp: PmpResidual,
    pub mean_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub coupling: CouplingSignals,
    pub kappa: ParticleMeasure,
    pub eta: ParticleMeasure,
    pub trace: ConvergenceTrace,
    pub certificate: Certificate,
    pub status: Status,
    pub grid: TimeGrid,
}
