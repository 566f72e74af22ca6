//! One agent's constrained optimal control problem against frozen coupling
//! signals.
//!
//! The time discretization is explicit Euler forward in the state and the
//! matching backward recursion for the costate:
//!
//! ```text
//! γ_{k+1} = γ_k + dt (a(γ_k) + b(γ_k) v_k)
//! p_k     = p_{k+1} + dt [D_xL + D_xf + ν_kᵀD_xc + (Da + Σᵢ v_{k,i} Dbᵢ)ᵀ p_{k+1}]
//! 0       = D_vL + P_k + b(γ_k)ᵀ p_{k+1} + D_vcᵀ ν_k
//! ```
//!
//! with left-endpoint quadrature of the running cost. These are exactly the
//! first-order conditions of the discrete problem, so the residuals reported
//! by [`pmp_residual`] certify discrete optimality.

mod certify;
mod integrate;
mod sweep;

use nalgebra::DVector;
use thiserror::Error;

use crate::measures::WeightedPoints;
use crate::model::ModelSpec;
use crate::pointwise::PointwiseError;

pub use certify::{bounds_report, pmp_residual, recover_terminal_multipliers, Bounds, PmpResidual};
pub use integrate::{cost_eval, integrate_costate, integrate_state, terminal_costate};
pub use sweep::{solve_agent, solve_agent_warm, AgentOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid coupling signals: {0}")]
    InvalidCoupling(String),
    #[error("path length mismatch: {0}")]
    PathMismatch(String),
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("agent solve did not converge: residual {residual:e} after {sweeps} sweeps")]
    NoConvergence {
        residual: f64,
        sweeps: usize,
        last: Option<Box<AgentTrajectory>>,
    },
    #[error(transparent)]
    Pointwise(#[from] PointwiseError),
}

/// Uniform grid `t_k = k·dt`, `k = 0..=nt`, on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    nt: usize,
    horizon: f64,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, nt: usize) -> Result<Self, OcpError> {
        if nt == 0 {
            return Err(OcpError::InvalidGrid("nt must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(OcpError::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            nt,
            horizon,
            dt: horizon / nt as f64,
        })
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `t_k`; the last node is exactly `T`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.nt {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.nt).map(|k| self.node(k)).collect()
    }
}

/// Discretized `(γ, v, p, ν)` with terminal multipliers.
///
/// `gamma` and `p` have `nt + 1` entries; `v` and `nu` live on the left node
/// of each interval and have `nt` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrajectory {
    pub x0: DVector<f64>,
    pub gamma: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub nu: Vec<DVector<f64>>,
    pub lambda1: DVector<f64>,
    pub lambda2: DVector<f64>,
    pub cost: f64,
}

impl AgentTrajectory {
    pub fn nt(&self) -> usize {
        self.v.len()
    }

    /// The costate paired with the control at node `k`: `p_{min(k+1, nt)}`.
    pub fn pricing_costate(&self, k: usize) -> &DVector<f64> {
        &self.p[(k + 1).min(self.p.len() - 1)]
    }

    pub(crate) fn check_grid(&self, grid: &TimeGrid) -> Result<(), OcpError> {
        let nt = grid.nt();
        if self.gamma.len() != nt + 1 || self.p.len() != nt + 1 || self.v.len() != nt || self.nu.len() != nt {
            return Err(OcpError::PathMismatch(format!(
                "trajectory has {} states, {} costates, {} controls, {} multipliers for nt = {nt}",
                self.gamma.len(),
                self.p.len(),
                self.v.len(),
                self.nu.len()
            )));
        }
        Ok(())
    }
}

/// Price path `P(t_k)` and state marginals `m_{t_k}` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSignals {
    price: Vec<DVector<f64>>,
    marginals: Vec<WeightedPoints>,
    f_grad_bound: f64,
}

/// Slack on `|P| ≤ sup|ψ|` for rounding in the price solver.
const PRICE_BOUND_SLACK: f64 = 1e-12;

impl CouplingSignals {
    pub fn new<M: ModelSpec + ?Sized>(
        model: &M,
        grid: &TimeGrid,
        price: Vec<DVector<f64>>,
        marginals: Vec<WeightedPoints>,
    ) -> Result<Self, OcpError> {
        let nodes = grid.nt() + 1;
        let dims = model.dims();
        if price.len() != nodes || marginals.len() != nodes {
            return Err(OcpError::InvalidCoupling(format!(
                "expected {nodes} nodes, got {} prices and {} marginals",
                price.len(),
                marginals.len()
            )));
        }
        let bound = model.price_bound();
        for (k, p) in price.iter().enumerate() {
            if p.len() != dims.n_control {
                return Err(OcpError::InvalidCoupling(format!(
                    "price at node {k} has {} components, expected {}",
                    p.len(),
                    dims.n_control
                )));
            }
            if !(p.norm() <= bound * (1.0 + PRICE_BOUND_SLACK) + PRICE_BOUND_SLACK) {
                return Err(OcpError::InvalidCoupling(format!(
                    "|P| = {} at node {k} exceeds sup|ψ| = {bound}",
                    p.norm()
                )));
            }
        }
        for (k, m) in marginals.iter().enumerate() {
            if m.dim() != dims.n_state {
                return Err(OcpError::InvalidCoupling(format!(
                    "marginal at node {k} lives in dimension {}, expected {}",
                    m.dim(),
                    dims.n_state
                )));
            }
            let total: f64 = m.weights().iter().sum();
            if (total - 1.0).abs() > crate::measures::NORMALIZATION_TOL {
                return Err(OcpError::InvalidCoupling(format!("marginal at node {k} has mass {total}")));
            }
        }
        let f_grad_bound = marginals
            .iter()
            .flat_map(|m| m.points().iter().map(move |x| model.congestion_dx(x, m).norm()))
            .fold(0.0, f64::max);
        Ok(Self {
            price,
            marginals,
            f_grad_bound,
        })
    }

    /// The same price and marginal at every node.
    pub fn constant<M: ModelSpec + ?Sized>(
        model: &M,
        grid: &TimeGrid,
        price: DVector<f64>,
        marginal: WeightedPoints,
    ) -> Result<Self, OcpError> {
        let nodes = grid.nt() + 1;
        Self::new(model, grid, vec![price; nodes], vec![marginal; nodes])
    }

    pub fn price(&self, k: usize) -> &DVector<f64> {
        &self.price[k]
    }

    pub fn prices(&self) -> &[DVector<f64>] {
        &self.price
    }

    pub fn marginal(&self, k: usize) -> &WeightedPoints {
        &self.marginals[k]
    }

    pub fn marginals(&self) -> &[WeightedPoints] {
        &self.marginals
    }

    /// `sup |D_xf(x, m_t)|` over the atoms of every marginal.
    pub fn f_grad_bound(&self) -> f64 {
        self.f_grad_bound
    }

    /// `sup_k |P_k − other.P_k|`.
    pub fn price_distance(&self, other: &CouplingSignals) -> f64 {
        self.price
            .iter()
            .zip(&other.price)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}
