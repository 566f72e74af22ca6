use nalgebra::{DMatrix, DVector};

use super::integrate::{adjoint_rhs, state_step, terminal_costate};
use super::{AgentTrajectory, CouplingSignals, TimeGrid};
use crate::measures::WeightedPoints;
use crate::model::ModelSpec;

/// Sup-norm residuals of the discrete optimality system with `λ₀ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PmpResidual {
    /// `max_k |(p_k − p_{k+1})/dt − [D_xL + D_xf + νᵀD_xc + (Da + Σ vᵢDbᵢ)ᵀp_{k+1}]|`.
    pub adjoint_residual: f64,
    /// `max_k |D_vL + P_k + b(γ_k)ᵀp_{k+1} + D_vcᵀν_k|`.
    pub stationarity_residual: f64,
    /// Sign, feasibility and complementarity of `(c, ν)` and `(g₂, λ₂)`.
    pub complementarity_residual: f64,
    /// `|g₁(γ_T)|` and `max(0, g₂(γ_T))`.
    pub terminal_residual: f64,
    /// `|p_nt − Dg₀ − Dg₁ᵀλ₁ − Dg₂ᵀλ₂|`.
    pub transversality_residual: f64,
    /// `max_k |γ_{k+1} − γ_k − dt (a + b v_k)|`.
    pub dynamics_residual: f64,
}

impl PmpResidual {
    pub fn max(&self) -> f64 {
        [
            self.adjoint_residual,
            self.stationarity_residual,
            self.complementarity_residual,
            self.terminal_residual,
            self.transversality_residual,
            self.dynamics_residual,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Componentwise maximum.
    pub fn worst(&self, other: &PmpResidual) -> PmpResidual {
        PmpResidual {
            adjoint_residual: self.adjoint_residual.max(other.adjoint_residual),
            stationarity_residual: self.stationarity_residual.max(other.stationarity_residual),
            complementarity_residual: self.complementarity_residual.max(other.complementarity_residual),
            terminal_residual: self.terminal_residual.max(other.terminal_residual),
            transversality_residual: self.transversality_residual.max(other.transversality_residual),
            dynamics_residual: self.dynamics_residual.max(other.dynamics_residual),
        }
    }

    /// Per-node stationarity, for locating a defect.
    pub fn stationarity_profile<M: ModelSpec + ?Sized>(
        model: &M,
        traj: &AgentTrajectory,
        coupling: &CouplingSignals,
    ) -> Vec<f64> {
        (0..traj.nt())
            .map(|k| stationarity_at(model, traj, coupling, k))
            .collect()
    }
}

fn stationarity_at<M: ModelSpec + ?Sized>(
    model: &M,
    traj: &AgentTrajectory,
    coupling: &CouplingSignals,
    k: usize,
) -> f64 {
    let (x, v, nu) = (&traj.gamma[k], &traj.v[k], &traj.nu[k]);
    let mut g = model.running_cost_dv(x, v) + coupling.price(k) + model.input_matrix(x).transpose() * &traj.p[k + 1];
    if !nu.is_empty() {
        g += model.mixed_constraints_dv(x, v).transpose() * nu;
    }
    g.norm()
}

fn sign_complementarity(mult: &DVector<f64>, cons: &DVector<f64>) -> f64 {
    let negative = mult.iter().fold(0.0f64, |a, &n| a.max(-n));
    let infeasible = cons.iter().fold(0.0f64, |a, &c| a.max(c));
    mult.dot(cons).abs().max(negative).max(infeasible)
}

/// Evaluates every residual of the discrete optimality system.
///
/// Length mismatches between the trajectory and the grid are reported as
/// infinite residuals.
pub fn pmp_residual<M: ModelSpec + ?Sized>(
    model: &M,
    traj: &AgentTrajectory,
    coupling: &CouplingSignals,
    grid: &TimeGrid,
) -> PmpResidual {
    if traj.check_grid(grid).is_err() || coupling.prices().len() != grid.nt() + 1 {
        let inf = f64::INFINITY;
        return PmpResidual {
            adjoint_residual: inf,
            stationarity_residual: inf,
            complementarity_residual: inf,
            terminal_residual: inf,
            transversality_residual: inf,
            dynamics_residual: inf,
        };
    }
    let nt = grid.nt();
    let dt = grid.dt();
    let mut r = PmpResidual::default();
    for k in 0..nt {
        let (x, v, nu) = (&traj.gamma[k], &traj.v[k], &traj.nu[k]);
        let rhs = adjoint_rhs(model, x, v, nu, &traj.p[k + 1], coupling.marginal(k));
        let adj = ((&traj.p[k] - &traj.p[k + 1]) / dt - rhs).norm();
        r.adjoint_residual = r.adjoint_residual.max(adj);
        r.stationarity_residual = r.stationarity_residual.max(stationarity_at(model, traj, coupling, k));
        let c = model.mixed_constraints(x, v);
        r.complementarity_residual = r.complementarity_residual.max(sign_complementarity(nu, &c));
        let dyn_res = (&traj.gamma[k + 1] - state_step(model, x, v, dt)).norm();
        r.dynamics_residual = r.dynamics_residual.max(dyn_res);
    }
    let gt = &traj.gamma[nt];
    let g1 = model.terminal_equality(gt);
    let g2 = model.terminal_inequality(gt);
    r.complementarity_residual = r.complementarity_residual.max(sign_complementarity(&traj.lambda2, &g2));
    let g2_excess = g2.iter().fold(0.0f64, |a, &c| a.max(c));
    r.terminal_residual = g1.amax().max(g2_excess);
    let pt = terminal_costate(model, gt, &traj.lambda1, &traj.lambda2, coupling.marginal(nt));
    r.transversality_residual = (&traj.p[nt] - pt).norm();
    r
}

/// Least-squares terminal multipliers `(λ₁, λ₂)` from
/// `p_nt − Dg₀ = Dg₁ᵀλ₁ + Dg₂ᵀλ₂`, with `λ₂` clipped at zero. Used when a
/// trajectory is stored without its multipliers.
pub fn recover_terminal_multipliers<M: ModelSpec + ?Sized>(
    model: &M,
    gamma_t: &DVector<f64>,
    p_t: &DVector<f64>,
    m_t: &WeightedPoints,
) -> (DVector<f64>, DVector<f64>) {
    let d1 = model.terminal_equality_dx(gamma_t);
    let d2 = model.terminal_inequality_dx(gamma_t);
    let (n1, n2) = (d1.nrows(), d2.nrows());
    if n1 + n2 == 0 {
        return (DVector::zeros(0), DVector::zeros(0));
    }
    let n = gamma_t.len();
    let mut a = DMatrix::zeros(n, n1 + n2);
    a.columns_mut(0, n1).copy_from(&d1.transpose());
    a.columns_mut(n1, n2).copy_from(&d2.transpose());
    let rhs = p_t - model.terminal_cost_dx(gamma_t, m_t);
    let lambda = a
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(n1 + n2));
    let lambda1 = lambda.rows(0, n1).into_owned();
    let lambda2 = lambda.rows(n1, n2).map(|l| l.max(0.0));
    (lambda1, lambda2)
}

/// Observed `sup|γ|`, `sup|p|`, `sup|γ̇|`, `sup|ṗ|` with derivatives taken
/// as difference quotients between consecutive nodes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bounds {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl Bounds {
    pub fn max(&self, other: &Bounds) -> Bounds {
        Bounds {
            m1: self.m1.max(other.m1),
            m2: self.m2.max(other.m2),
            m3: self.m3.max(other.m3),
            m4: self.m4.max(other.m4),
        }
    }
}

pub fn bounds_report<'a>(trajectories: impl IntoIterator<Item = &'a AgentTrajectory>, grid: &TimeGrid) -> Bounds {
    let dt = grid.dt();
    let sup = |xs: &[DVector<f64>]| xs.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let sup_rate = |xs: &[DVector<f64>]| {
        xs.windows(2)
            .map(|w| (&w[1] - &w[0]).norm() / dt)
            .fold(0.0, f64::max)
    };
    trajectories.into_iter().fold(Bounds::default(), |acc, t| {
        acc.max(&Bounds {
            m1: sup(&t.gamma),
            m2: sup(&t.p),
            m3: sup_rate(&t.gamma),
            m4: sup_rate(&t.p),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_trajectory_bounds() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let one = |x: f64| DVector::from_element(1, x);
        let t = AgentTrajectory {
            x0: one(0.3),
            gamma: vec![one(0.3); 5],
            v: vec![one(0.0); 4],
            p: vec![one(0.0); 5],
            nu: vec![DVector::zeros(0); 4],
            lambda1: DVector::zeros(0),
            lambda2: DVector::zeros(0),
            cost: 0.0,
        };
        let b = bounds_report([&t], &grid);
        assert_eq!(
            b,
            Bounds {
                m1: 0.3,
                m2: 0.0,
                m3: 0.0,
                m4: 0.0
            }
        );
    }
}
