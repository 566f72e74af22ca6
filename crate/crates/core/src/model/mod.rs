//! Problem data for a deterministic mean field game of controls.
//!
//! A model supplies the agent dynamics `γ̇ = a(γ) + b(γ) v`, the running cost
//! `L(x, v)`, the mixed constraints `c(x, v) ≤ 0`, the terminal data
//! `g₀, g₁, g₂`, the congestion term `f(x, m)` and the price map `ψ = ∇φ`,
//! all with analytic derivatives. Implementations must be immutable after
//! construction: solvers share them across threads.

mod gas;
mod initial;
mod lq;
mod price;
mod smoothing;
mod validate;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::measures::WeightedPoints;

pub use gas::{build_gas_storage, delta_gap, GasHooks, GasStorage, GasStorageParams, DEFAULT_DELTA_GRID};
pub use initial::InitialDistribution;
pub use lq::{build_lq_model, LqModel, LqParams};
pub use price::PriceFunction;
pub use smoothing::{smoothed_max, smoothed_max_grad};
pub use validate::{validate_assumptions, AssumptionCheck, AssumptionReport, CheckStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("smoothing epsilon {epsilon} must lie in (0, δ/2) with δ = {delta}")]
    ConstraintGap { epsilon: f64, delta: f64 },
    #[error("invalid initial distribution: {0}")]
    InvalidInitialDistribution(String),
}

/// Sizes of the problem data and the horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dimensions {
    pub n_state: usize,
    pub n_control: usize,
    pub n_mixed: usize,
    pub n_terminal_eq: usize,
    pub n_terminal_ineq: usize,
    pub horizon: f64,
}

impl Dimensions {
    pub fn new(
        n_state: usize,
        n_control: usize,
        n_mixed: usize,
        n_terminal_eq: usize,
        n_terminal_ineq: usize,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        if n_state == 0 || n_control == 0 {
            return Err(ModelError::InvalidDimensions(format!(
                "state and control dimensions must be positive (got n={n_state}, m={n_control})"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::InvalidDimensions(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            n_state,
            n_control,
            n_mixed,
            n_terminal_eq,
            n_terminal_ineq,
            horizon,
        })
    }
}

/// Box `[lower, upper]` per coordinate used by the assumption probes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRegion {
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
    pub control_lower: Vec<f64>,
    pub control_upper: Vec<f64>,
}

impl ProbeRegion {
    pub fn symmetric(n: usize, m: usize, state_radius: f64, control_radius: f64) -> Self {
        Self {
            state_lower: vec![-state_radius; n],
            state_upper: vec![state_radius; n],
            control_lower: vec![-control_radius; m],
            control_upper: vec![control_radius; m],
        }
    }
}

/// Problem data contract.
///
/// Vectors follow the shapes in [`Dimensions`]: states in ℝⁿ, controls in ℝᵐ,
/// mixed constraints in ℝ^{n_c}. Jacobians are row-major in the usual sense
/// (`D_x c` is `n_c × n`). Optional pieces default to "absent".
pub trait ModelSpec: Send + Sync {
    fn dims(&self) -> &Dimensions;

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }

    /// `b(x)`, an `n × m` matrix.
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// `D b_i(x)`, the `n × n` Jacobian of the `i`-th column of `b`.
    fn input_column_jacobian(&self, x: &DVector<f64>, _column: usize) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }

    fn running_cost(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64;
    fn running_cost_dx(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    fn running_cost_dv(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    fn running_cost_dvv(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>;

    fn mixed_constraints(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn mixed_constraints_dx(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, x.len())
    }

    fn mixed_constraints_dv(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, v.len())
    }

    fn terminal_cost(&self, _x: &DVector<f64>, _m: &WeightedPoints) -> f64 {
        0.0
    }

    fn terminal_cost_dx(&self, x: &DVector<f64>, _m: &WeightedPoints) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    fn terminal_equality(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn terminal_equality_dx(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, x.len())
    }

    fn terminal_inequality(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn terminal_inequality_dx(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, x.len())
    }

    fn congestion(&self, _x: &DVector<f64>, _m: &WeightedPoints) -> f64 {
        0.0
    }

    fn congestion_dx(&self, x: &DVector<f64>, _m: &WeightedPoints) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    /// `ψ(z)`.
    fn price(&self, z: &DVector<f64>) -> DVector<f64>;

    /// `φ(z)` with `∇φ = ψ`.
    fn price_potential(&self, z: &DVector<f64>) -> f64;

    /// `sup |ψ|`, possibly infinite.
    fn price_bound(&self) -> f64;

    /// Strong convexity parameter `1/C` of `L(x, ·)`.
    fn strong_convexity(&self) -> f64;

    fn probe_region(&self) -> ProbeRegion {
        let d = self.dims();
        ProbeRegion::symmetric(d.n_state, d.n_control, 1.0, 1.0)
    }
}

impl<M: ModelSpec + ?Sized> ModelSpec for &M {
    fn dims(&self) -> &Dimensions {
        (**self).dims()
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).drift(x)
    }
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).drift_jacobian(x)
    }
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).input_matrix(x)
    }
    fn input_column_jacobian(&self, x: &DVector<f64>, column: usize) -> DMatrix<f64> {
        (**self).input_column_jacobian(x, column)
    }
    fn running_cost(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (**self).running_cost(x, v)
    }
    fn running_cost_dx(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (**self).running_cost_dx(x, v)
    }
    fn running_cost_dv(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (**self).running_cost_dv(x, v)
    }
    fn running_cost_dvv(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        (**self).running_cost_dvv(x, v)
    }
    fn mixed_constraints(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (**self).mixed_constraints(x, v)
    }
    fn mixed_constraints_dx(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        (**self).mixed_constraints_dx(x, v)
    }
    fn mixed_constraints_dv(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        (**self).mixed_constraints_dv(x, v)
    }
    fn terminal_cost(&self, x: &DVector<f64>, m: &WeightedPoints) -> f64 {
        (**self).terminal_cost(x, m)
    }
    fn terminal_cost_dx(&self, x: &DVector<f64>, m: &WeightedPoints) -> DVector<f64> {
        (**self).terminal_cost_dx(x, m)
    }
    fn terminal_equality(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).terminal_equality(x)
    }
    fn terminal_equality_dx(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).terminal_equality_dx(x)
    }
    fn terminal_inequality(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).terminal_inequality(x)
    }
    fn terminal_inequality_dx(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).terminal_inequality_dx(x)
    }
    fn congestion(&self, x: &DVector<f64>, m: &WeightedPoints) -> f64 {
        (**self).congestion(x, m)
    }
    fn congestion_dx(&self, x: &DVector<f64>, m: &WeightedPoints) -> DVector<f64> {
        (**self).congestion_dx(x, m)
    }
    fn price(&self, z: &DVector<f64>) -> DVector<f64> {
        (**self).price(z)
    }
    fn price_potential(&self, z: &DVector<f64>) -> f64 {
        (**self).price_potential(z)
    }
    fn price_bound(&self) -> f64 {
        (**self).price_bound()
    }
    fn strong_convexity(&self) -> f64 {
        (**self).strong_convexity()
    }
    fn probe_region(&self) -> ProbeRegion {
        (**self).probe_region()
    }
}
