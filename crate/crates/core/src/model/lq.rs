//! Linear-quadratic fixture with closed-form agent solutions.
//!
//! `γ̇ = v` in ℝⁿ (so `m = n`), `L(x, v) = ½ r |v|²`, `g₀(x) = ⟨q, x⟩` and
//! `f(x, m) = κ ⟨x, mean(m)⟩`. Against a constant price `P̄` and `κ = 0` the
//! optimal control is `v ≡ −(P̄ + q)/r`. An optional componentwise bound
//! `vᵢ ≤ u` turns it into the simplest mixed-constraint test case.

use nalgebra::{DMatrix, DVector};

use super::{Dimensions, ModelError, ModelSpec, PriceFunction, ProbeRegion};
use crate::measures::WeightedPoints;

#[derive(Debug, Clone, PartialEq)]
pub struct LqParams {
    pub dim: usize,
    pub control_weight: f64,
    /// Coefficients of `g₀(x) = ⟨q, x⟩`; a single entry is broadcast.
    pub terminal_linear: Vec<f64>,
    pub congestion: f64,
    pub control_upper: Option<f64>,
    pub price: PriceFunction,
    pub horizon: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        Self {
            dim: 1,
            control_weight: 1.0,
            terminal_linear: vec![0.0],
            congestion: 0.0,
            control_upper: None,
            price: PriceFunction::Constant { value: vec![0.0] },
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LqModel {
    dims: Dimensions,
    control_weight: f64,
    q: DVector<f64>,
    congestion: f64,
    control_upper: Option<f64>,
    price: PriceFunction,
}

pub fn build_lq_model(params: LqParams) -> Result<LqModel, ModelError> {
    let n = params.dim;
    let n_c = if params.control_upper.is_some() { n } else { 0 };
    let dims = Dimensions::new(n, n, n_c, 0, 0, params.horizon)?;
    if !(params.control_weight > 0.0 && params.control_weight.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "control_weight",
            reason: "must be finite and positive".into(),
        });
    }
    let q = match params.terminal_linear.len() {
        1 => DVector::from_element(n, params.terminal_linear[0]),
        k if k == n => DVector::from_column_slice(&params.terminal_linear),
        k => {
            return Err(ModelError::InvalidParameter {
                name: "terminal_linear",
                reason: format!("expected 1 or {n} coefficients, got {k}"),
            })
        }
    };
    params
        .price
        .check_dim(n)
        .map_err(|reason| ModelError::InvalidParameter {
            name: "price",
            reason,
        })?;
    Ok(LqModel {
        dims,
        control_weight: params.control_weight,
        q,
        congestion: params.congestion,
        control_upper: params.control_upper,
        price: params.price,
    })
}

impl LqModel {
    pub fn terminal_linear(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn control_weight(&self) -> f64 {
        self.control_weight
    }
}

impl ModelSpec for LqModel {
    fn dims(&self) -> &Dimensions {
        &self.dims
    }

    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }

    fn running_cost(&self, _x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        0.5 * self.control_weight * v.norm_squared()
    }

    fn running_cost_dx(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    fn running_cost_dv(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v * self.control_weight
    }

    fn running_cost_dvv(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(v.len(), v.len()) * self.control_weight
    }

    fn mixed_constraints(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self.control_upper {
            Some(u) => v.map(|vi| vi - u),
            None => DVector::zeros(0),
        }
    }

    fn mixed_constraints_dx(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dims.n_mixed, x.len())
    }

    fn mixed_constraints_dv(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        match self.control_upper {
            Some(_) => DMatrix::identity(v.len(), v.len()),
            None => DMatrix::zeros(0, v.len()),
        }
    }

    fn terminal_cost(&self, x: &DVector<f64>, _m: &WeightedPoints) -> f64 {
        self.q.dot(x)
    }

    fn terminal_cost_dx(&self, _x: &DVector<f64>, _m: &WeightedPoints) -> DVector<f64> {
        self.q.clone()
    }

    fn congestion(&self, x: &DVector<f64>, m: &WeightedPoints) -> f64 {
        self.congestion * x.dot(m.mean())
    }

    fn congestion_dx(&self, _x: &DVector<f64>, m: &WeightedPoints) -> DVector<f64> {
        m.mean() * self.congestion
    }

    fn price(&self, z: &DVector<f64>) -> DVector<f64> {
        self.price.eval(z)
    }

    fn price_potential(&self, z: &DVector<f64>) -> f64 {
        self.price.potential(z)
    }

    fn price_bound(&self) -> f64 {
        self.price.bound()
    }

    fn strong_convexity(&self) -> f64 {
        self.control_weight
    }

    fn probe_region(&self) -> ProbeRegion {
        ProbeRegion::symmetric(self.dims.n_state, self.dims.n_control, 2.0, 2.0)
    }
}
