use nalgebra::DVector;

use super::{CouplingSignals, OcpError, TimeGrid};
use crate::measures::WeightedPoints;
use crate::model::ModelSpec;

fn finite(v: &DVector<f64>, node: usize) -> Result<(), OcpError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(OcpError::NonFinite { node })
    }
}

/// One explicit Euler step of the dynamics.
pub(crate) fn state_step<M: ModelSpec + ?Sized>(model: &M, x: &DVector<f64>, v: &DVector<f64>, dt: f64) -> DVector<f64> {
    x + (model.drift(x) + model.input_matrix(x) * v) * dt
}

/// Explicit Euler path `γ₀ = x0`, `γ_{k+1} = γ_k + dt (a(γ_k) + b(γ_k) v_k)`.
pub fn integrate_state<M: ModelSpec + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    v_path: &[DVector<f64>],
    grid: &TimeGrid,
) -> Result<Vec<DVector<f64>>, OcpError> {
    if v_path.len() != grid.nt() {
        return Err(OcpError::PathMismatch(format!(
            "{} controls for nt = {}",
            v_path.len(),
            grid.nt()
        )));
    }
    let mut gamma = Vec::with_capacity(grid.nt() + 1);
    gamma.push(x0.clone());
    for (k, v) in v_path.iter().enumerate() {
        let next = state_step(model, &gamma[k], v, grid.dt());
        finite(&next, k + 1)?;
        gamma.push(next);
    }
    Ok(gamma)
}

/// `p(T) = Dg₀(γ(T), m_T) + Dg₁ᵀλ₁ + Dg₂ᵀλ₂`.
pub fn terminal_costate<M: ModelSpec + ?Sized>(
    model: &M,
    gamma_t: &DVector<f64>,
    lambda1: &DVector<f64>,
    lambda2: &DVector<f64>,
    m_t: &WeightedPoints,
) -> DVector<f64> {
    let mut p = model.terminal_cost_dx(gamma_t, m_t);
    if !lambda1.is_empty() {
        p += model.terminal_equality_dx(gamma_t).transpose() * lambda1;
    }
    if !lambda2.is_empty() {
        p += model.terminal_inequality_dx(gamma_t).transpose() * lambda2;
    }
    p
}

/// Right side of the adjoint recursion at node `k`:
/// `D_xL + D_xf + ν_kᵀD_xc + (Da + Σᵢ v_{k,i} Dbᵢ)ᵀ p_{k+1}`.
pub(crate) fn adjoint_rhs<M: ModelSpec + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    v: &DVector<f64>,
    nu: &DVector<f64>,
    p_next: &DVector<f64>,
    m: &WeightedPoints,
) -> DVector<f64> {
    let mut rhs = model.running_cost_dx(x, v) + model.congestion_dx(x, m);
    if !nu.is_empty() {
        rhs += model.mixed_constraints_dx(x, v).transpose() * nu;
    }
    let mut jac = model.drift_jacobian(x);
    for (i, vi) in v.iter().enumerate() {
        if *vi != 0.0 {
            jac += model.input_column_jacobian(x, i) * *vi;
        }
    }
    rhs += jac.transpose() * p_next;
    rhs
}

/// Backward recursion from `p_nt = p_terminal` with `λ₀ = 1`.
pub fn integrate_costate<M: ModelSpec + ?Sized>(
    model: &M,
    gamma: &[DVector<f64>],
    v_path: &[DVector<f64>],
    nu_path: &[DVector<f64>],
    p_terminal: &DVector<f64>,
    coupling: &CouplingSignals,
    grid: &TimeGrid,
) -> Result<Vec<DVector<f64>>, OcpError> {
    let nt = grid.nt();
    if gamma.len() != nt + 1 || v_path.len() != nt || nu_path.len() != nt {
        return Err(OcpError::PathMismatch(format!(
            "{} states, {} controls, {} multipliers for nt = {nt}",
            gamma.len(),
            v_path.len(),
            nu_path.len()
        )));
    }
    let mut p = vec![DVector::zeros(p_terminal.len()); nt + 1];
    p[nt] = p_terminal.clone();
    for k in (0..nt).rev() {
        let rhs = adjoint_rhs(model, &gamma[k], &v_path[k], &nu_path[k], &p[k + 1], coupling.marginal(k));
        let pk = &p[k + 1] + rhs * grid.dt();
        finite(&pk, k)?;
        p[k] = pk;
    }
    Ok(p)
}

/// `Σ_k dt [L(γ_k, v_k) + ⟨P_k, v_k⟩ + f(γ_k, m_k)] + g₀(γ_nt, m_nt)`.
pub fn cost_eval<M: ModelSpec + ?Sized>(
    model: &M,
    gamma: &[DVector<f64>],
    v_path: &[DVector<f64>],
    coupling: &CouplingSignals,
    grid: &TimeGrid,
) -> f64 {
    let nt = grid.nt();
    let running: f64 = (0..nt)
        .map(|k| {
            let (x, v) = (&gamma[k], &v_path[k]);
            model.running_cost(x, v) + coupling.price(k).dot(v) + model.congestion(x, coupling.marginal(k))
        })
        .sum();
    running * grid.dt() + model.terminal_cost(&gamma[nt], coupling.marginal(nt))
}
