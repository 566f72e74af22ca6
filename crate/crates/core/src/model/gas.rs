//! Scaled energy storage with level-dependent pumping limits.
//!
//! The state `γ ∈ [0, 1]` is the storage level and the control the
//! injection rate, `γ̇ = v`. Injection is limited by
//! `max(v_m, φ₁(γ)) ≤ v ≤ min(v_M, φ₂(γ))` with `φ₁(x) = −c₁x` and
//! `φ₂(x) = c₂(1−x)`. Both bounds are replaced by smoothed versions
//!
//! ```text
//! lower(x) =  M_ε(v_m, −c₁x)
//! upper(x) = −M_ε(c₂(x−1), −v_M)
//! ```
//!
//! which keep the mixed constraints `lower(x) − v ≤ 0`, `v − upper(x) ≤ 0`
//! C¹ and never simultaneously active when `ε < δ/2`.
//!
//! The storage construction leaves the agent's cost open; [`GasHooks`]
//! supplies fixture defaults (`L = ½v²`, `f = 0`, `g₀ = 0`,
//! `ψ(z) = z/√(1+z²)`, no terminal constraint).

use nalgebra::{DMatrix, DVector};

use super::{
    smoothed_max, smoothed_max_grad, Dimensions, ModelError, ModelSpec, PriceFunction, ProbeRegion,
};
use crate::measures::WeightedPoints;

/// Default number of grid points for [`delta_gap`].
pub const DEFAULT_DELTA_GRID: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasStorageParams {
    pub v_min: f64,
    pub v_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub epsilon: f64,
}

impl Default for GasStorageParams {
    fn default() -> Self {
        Self {
            v_min: -1.0,
            v_max: 1.0,
            c1: 1.0,
            c2: 1.0,
            epsilon: 0.05,
        }
    }
}

impl GasStorageParams {
    fn check(&self) -> Result<(), ModelError> {
        let bad = |name, reason: &str| {
            Err(ModelError::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.v_min < 0.0 && self.v_min.is_finite()) {
            return bad("v_min", "must be finite and negative");
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return bad("v_max", "must be finite and positive");
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return bad("c1", "must be finite and positive");
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return bad("c2", "must be finite and positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", "must be finite and positive");
        }
        Ok(())
    }

    fn phi1(&self, x: f64) -> f64 {
        -self.c1 * x
    }

    fn phi2(&self, x: f64) -> f64 {
        self.c2 * (1.0 - x)
    }
}

/// Cost and coupling hooks for the storage model. The defaults are fixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct GasHooks {
    /// `L(x, v) = ½·w·v²`.
    pub control_weight: f64,
    /// `f(x, m) = κ·x·mean(m)`.
    pub congestion: f64,
    /// `g₀(x, m) = q·x`.
    pub terminal_linear: f64,
    /// When set, adds the terminal equality `g₁(x) = x − target`.
    pub terminal_target: Option<f64>,
    pub price: PriceFunction,
}

impl Default for GasHooks {
    fn default() -> Self {
        Self {
            control_weight: 1.0,
            congestion: 0.0,
            terminal_linear: 0.0,
            terminal_target: None,
            price: PriceFunction::Saturating { scale: 1.0 },
        }
    }
}

/// Grid approximation of `δ = min_{x∈[0,1]} [min(v_M, φ₂(x)) − max(v_m, φ₁(x))]`.
///
/// The integrand is Lipschitz with constant `c₁ + c₂`, so the returned grid
/// minimum exceeds the true minimum by at most `(c₁+c₂)/(2(grid_points−1))`.
pub fn delta_gap(params: &GasStorageParams, grid_points: usize) -> f64 {
    let n = grid_points.max(2);
    (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            params.v_max.min(params.phi2(x)) - params.v_min.max(params.phi1(x))
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone)]
pub struct GasStorage {
    params: GasStorageParams,
    hooks: GasHooks,
    dims: Dimensions,
    delta: f64,
}

/// Builds the storage model, rejecting smoothing levels `ε ≥ δ/2`.
pub fn build_gas_storage(
    params: GasStorageParams,
    hooks: GasHooks,
    horizon: f64,
) -> Result<GasStorage, ModelError> {
    params.check()?;
    if !(hooks.control_weight > 0.0 && hooks.control_weight.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "control_weight",
            reason: "must be finite and positive".into(),
        });
    }
    hooks
        .price
        .check_dim(1)
        .map_err(|reason| ModelError::InvalidParameter {
            name: "price",
            reason,
        })?;
    let delta = delta_gap(&params, DEFAULT_DELTA_GRID);
    if params.epsilon >= 0.5 * delta {
        return Err(ModelError::ConstraintGap {
            epsilon: params.epsilon,
            delta,
        });
    }
    let n_eq = usize::from(hooks.terminal_target.is_some());
    let dims = Dimensions::new(1, 1, 2, n_eq, 0, horizon)?;
    Ok(GasStorage {
        params,
        hooks,
        dims,
        delta,
    })
}

impl GasStorage {
    pub fn params(&self) -> &GasStorageParams {
        &self.params
    }

    pub fn hooks(&self) -> &GasHooks {
        &self.hooks
    }

    /// The grid value of `δ` computed at construction.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Smoothed lower injection bound and its derivative.
    pub fn lower_bound(&self, x: f64) -> (f64, f64) {
        let p = &self.params;
        let b = p.phi1(x);
        let value = smoothed_max(p.v_min, b, p.epsilon);
        let (_, db) = smoothed_max_grad(p.v_min, b, p.epsilon);
        (value, -p.c1 * db)
    }

    /// Smoothed upper injection bound and its derivative.
    pub fn upper_bound(&self, x: f64) -> (f64, f64) {
        let p = &self.params;
        let a = -p.phi2(x);
        let value = -smoothed_max(a, -p.v_max, p.epsilon);
        let (da, _) = smoothed_max_grad(a, -p.v_max, p.epsilon);
        (value, -p.c2 * da)
    }
}

fn scalar(x: &DVector<f64>) -> f64 {
    x[0]
}

impl ModelSpec for GasStorage {
    fn dims(&self) -> &Dimensions {
        &self.dims
    }

    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }

    fn running_cost(&self, _x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        0.5 * self.hooks.control_weight * v[0] * v[0]
    }

    fn running_cost_dx(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }

    fn running_cost_dv(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.hooks.control_weight * v[0])
    }

    fn running_cost_dvv(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.hooks.control_weight)
    }

    fn mixed_constraints(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (lo, _) = self.lower_bound(scalar(x));
        let (hi, _) = self.upper_bound(scalar(x));
        DVector::from_vec(vec![lo - v[0], v[0] - hi])
    }

    fn mixed_constraints_dx(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        let (_, dlo) = self.lower_bound(scalar(x));
        let (_, dhi) = self.upper_bound(scalar(x));
        DMatrix::from_column_slice(2, 1, &[dlo, -dhi])
    }

    fn mixed_constraints_dv(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[-1.0, 1.0])
    }

    fn terminal_cost(&self, x: &DVector<f64>, _m: &WeightedPoints) -> f64 {
        self.hooks.terminal_linear * x[0]
    }

    fn terminal_cost_dx(&self, _x: &DVector<f64>, _m: &WeightedPoints) -> DVector<f64> {
        DVector::from_element(1, self.hooks.terminal_linear)
    }

    fn terminal_equality(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.hooks.terminal_target {
            Some(target) => DVector::from_element(1, x[0] - target),
            None => DVector::zeros(0),
        }
    }

    fn terminal_equality_dx(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        match self.hooks.terminal_target {
            Some(_) => DMatrix::from_element(1, 1, 1.0),
            None => DMatrix::zeros(0, 1),
        }
    }

    fn congestion(&self, x: &DVector<f64>, m: &WeightedPoints) -> f64 {
        self.hooks.congestion * x[0] * m.mean()[0]
    }

    fn congestion_dx(&self, _x: &DVector<f64>, m: &WeightedPoints) -> DVector<f64> {
        DVector::from_element(1, self.hooks.congestion * m.mean()[0])
    }

    fn price(&self, z: &DVector<f64>) -> DVector<f64> {
        self.hooks.price.eval(z)
    }

    fn price_potential(&self, z: &DVector<f64>) -> f64 {
        self.hooks.price.potential(z)
    }

    fn price_bound(&self) -> f64 {
        self.hooks.price.bound()
    }

    fn strong_convexity(&self) -> f64 {
        self.hooks.control_weight
    }

    fn probe_region(&self) -> ProbeRegion {
        ProbeRegion {
            state_lower: vec![0.0],
            state_upper: vec![1.0],
            control_lower: vec![self.params.v_min],
            control_upper: vec![self.params.v_max],
        }
    }
}
