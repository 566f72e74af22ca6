//! Forward-backward sweep on the feedback form `v_k = v[γ_k, P_k + b(γ_k)ᵀp_{k+1}]`.
//!
//! For fixed terminal multipliers the sweep alternates a forward pass
//! (controls from the pointwise minimizer, then the state) with a backward
//! costate pass, damping the costate update. The multipliers are found by an
//! outer root solve on the terminal conditions `g₁(γ_T) = 0` and
//! `min(λ₂, −g₂(γ_T)) = 0`, each evaluation being a converged inner sweep.

use nalgebra::{DMatrix, DVector};

use super::certify::pmp_residual;
use super::integrate::{cost_eval, integrate_costate, state_step, terminal_costate};
use super::{AgentTrajectory, CouplingSignals, OcpError, TimeGrid};
use crate::model::ModelSpec;
use crate::pointwise::hamiltonian_min_warm;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOptions {
    /// Bound on every component of the returned [`super::PmpResidual`].
    pub tol: f64,
    /// Sweeps allowed per inner solve.
    pub max_sweeps: usize,
    /// Root-solver iterations allowed for the terminal multipliers.
    pub max_multiplier_iter: usize,
    /// Initial costate damping `β`.
    pub damping: f64,
    pub kkt_tol: f64,
}

impl Default for AgentOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_sweeps: 5000,
            max_multiplier_iter: 100,
            damping: 0.5,
            kkt_tol: 1e-12,
        }
    }
}

const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Clone)]
struct Inner {
    gamma: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    nu: Vec<DVector<f64>>,
    p: Vec<DVector<f64>>,
    hints: Vec<Vec<usize>>,
    sweeps: usize,
}

struct Problem<'a, M: ModelSpec + ?Sized> {
    model: &'a M,
    x0: &'a DVector<f64>,
    coupling: &'a CouplingSignals,
    grid: &'a TimeGrid,
    opts: &'a AgentOptions,
}

type Forward = (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>);

impl<M: ModelSpec + ?Sized> Problem<'_, M> {
    fn forward(&self, p: &[DVector<f64>], hints: &mut [Vec<usize>]) -> Result<Forward, OcpError> {
        let nt = self.grid.nt();
        let mut gamma = Vec::with_capacity(nt + 1);
        let mut v = Vec::with_capacity(nt);
        let mut nu = Vec::with_capacity(nt);
        gamma.push(self.x0.clone());
        for k in 0..nt {
            let x = &gamma[k];
            let r = self.coupling.price(k) + self.model.input_matrix(x).transpose() * &p[k + 1];
            let kkt = hamiltonian_min_warm(self.model, x, &r, self.opts.kkt_tol, &hints[k])?;
            let next = state_step(self.model, x, &kkt.v, self.grid.dt());
            if next.iter().any(|z| !z.is_finite()) {
                return Err(OcpError::NonFinite { node: k + 1 });
            }
            hints[k] = kkt.active_set;
            gamma.push(next);
            v.push(kkt.v);
            nu.push(kkt.nu);
        }
        Ok((gamma, v, nu))
    }

    fn backward(&self, fwd: &Forward, lambda1: &DVector<f64>, lambda2: &DVector<f64>) -> Result<Vec<DVector<f64>>, OcpError> {
        let nt = self.grid.nt();
        let pt = terminal_costate(self.model, &fwd.0[nt], lambda1, lambda2, self.coupling.marginal(nt));
        integrate_costate(self.model, &fwd.0, &fwd.1, &fwd.2, &pt, self.coupling, self.grid)
    }

    /// Converged sweep at fixed multipliers. The returned controls are the
    /// feedback of the returned costate.
    fn inner(&self, lambda1: &DVector<f64>, lambda2: &DVector<f64>, start: &Inner) -> Result<Inner, OcpError> {
        let tol = 1e-2 * self.opts.tol * self.grid.dt().min(1.0);
        let mut hints = start.hints.clone();
        let mut p = start.p.clone();
        let mut fwd = self.forward(&p, &mut hints)?;
        let mut p_new = self.backward(&fwd, lambda1, lambda2)?;
        let mut residual = sup_gap(&p, &p_new);
        let mut beta = self.opts.damping;
        let mut growth = 0;
        let mut sweeps = 1;
        while residual > tol {
            if sweeps >= self.opts.max_sweeps {
                let last = self.assemble(fwd, p, lambda1, lambda2);
                return Err(OcpError::NoConvergence {
                    residual,
                    sweeps,
                    last: Some(Box::new(last)),
                });
            }
            for (pk, qk) in p.iter_mut().zip(&p_new) {
                *pk = &*pk * (1.0 - beta) + qk * beta;
            }
            fwd = self.forward(&p, &mut hints)?;
            p_new = self.backward(&fwd, lambda1, lambda2)?;
            let next = sup_gap(&p, &p_new);
            if next > residual {
                growth += 1;
                if growth >= 3 {
                    beta = (beta * 0.5).max(MIN_DAMPING);
                    growth = 0;
                }
            } else {
                growth = 0;
            }
            residual = next;
            sweeps += 1;
        }
        let fwd = self.forward(&p_new, &mut hints)?;
        Ok(Inner {
            gamma: fwd.0,
            v: fwd.1,
            nu: fwd.2,
            p: p_new,
            hints,
            sweeps: start.sweeps + sweeps + 1,
        })
    }

    fn assemble(&self, fwd: Forward, p: Vec<DVector<f64>>, lambda1: &DVector<f64>, lambda2: &DVector<f64>) -> AgentTrajectory {
        let cost = cost_eval(self.model, &fwd.0, &fwd.1, self.coupling, self.grid);
        AgentTrajectory {
            x0: self.x0.clone(),
            gamma: fwd.0,
            v: fwd.1,
            p,
            nu: fwd.2,
            lambda1: lambda1.clone(),
            lambda2: lambda2.clone(),
            cost,
        }
    }

    /// `[g₁(γ_T); min(λ₂, −g₂(γ_T))]`.
    fn terminal_map(&self, state: &Inner, lambda2: &DVector<f64>) -> DVector<f64> {
        let gt = &state.gamma[self.grid.nt()];
        let g1 = self.model.terminal_equality(gt);
        let g2 = self.model.terminal_inequality(gt);
        let mut f = DVector::zeros(g1.len() + g2.len());
        f.rows_mut(0, g1.len()).copy_from(&g1);
        for i in 0..g2.len() {
            f[g1.len() + i] = lambda2[i].min(-g2[i]);
        }
        f
    }
}

fn sup_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

fn split(lambda: &DVector<f64>, n1: usize) -> (DVector<f64>, DVector<f64>) {
    let n2 = lambda.len() - n1;
    (lambda.rows(0, n1).into_owned(), lambda.rows(n1, n2).into_owned())
}

/// Solves the agent problem from a cold start.
pub fn solve_agent<M: ModelSpec + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    coupling: &CouplingSignals,
    grid: &TimeGrid,
    opts: &AgentOptions,
) -> Result<AgentTrajectory, OcpError> {
    solve_agent_warm(model, x0, coupling, grid, opts, None)
}

/// Solves the agent problem, starting from the costate, multipliers and
/// active sets of `warm` when given.
pub fn solve_agent_warm<M: ModelSpec + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    coupling: &CouplingSignals,
    grid: &TimeGrid,
    opts: &AgentOptions,
    warm: Option<&AgentTrajectory>,
) -> Result<AgentTrajectory, OcpError> {
    let dims = model.dims();
    let (n, n1, n2) = (dims.n_state, dims.n_terminal_eq, dims.n_terminal_ineq);
    let nt = grid.nt();
    if x0.len() != n {
        return Err(OcpError::PathMismatch(format!("x0 has {} components, expected {n}", x0.len())));
    }
    if coupling.prices().len() != nt + 1 {
        return Err(OcpError::InvalidCoupling(format!(
            "coupling has {} nodes, grid has {}",
            coupling.prices().len(),
            nt + 1
        )));
    }
    let problem = Problem {
        model,
        x0,
        coupling,
        grid,
        opts,
    };

    let warm = warm.filter(|w| w.check_grid(grid).is_ok() && w.lambda1.len() == n1 && w.lambda2.len() == n2);
    let mut start = Inner {
        gamma: Vec::new(),
        v: Vec::new(),
        nu: Vec::new(),
        p: vec![DVector::zeros(n); nt + 1],
        hints: vec![Vec::new(); nt],
        sweeps: 0,
    };
    let mut lambda = DVector::zeros(n1 + n2);
    if let Some(w) = warm {
        start.p = w.p.clone();
        start.hints = w
            .nu
            .iter()
            .map(|nu| (0..nu.len()).filter(|&i| nu[i] > 0.0).collect())
            .collect();
        lambda.rows_mut(0, n1).copy_from(&w.lambda1);
        lambda.rows_mut(n1, n2).copy_from(&w.lambda2);
    }

    let (state, lambda) = if n1 + n2 == 0 {
        (problem.inner(&lambda.rows(0, 0).into_owned(), &lambda.rows(0, 0).into_owned(), &start)?, lambda)
    } else if n1 + n2 == 1 {
        scalar_multiplier(&problem, start, lambda[0], n1 == 1)?
    } else {
        vector_multiplier(&problem, start, lambda, n1)?
    };

    let (l1, l2) = split(&lambda, n1);
    let sweeps = state.sweeps;
    let traj = problem.assemble((state.gamma, state.v, state.nu), state.p, &l1, &l2);
    let residual = pmp_residual(model, &traj, coupling, grid);
    if residual.max() <= opts.tol {
        Ok(traj)
    } else {
        Err(OcpError::NoConvergence {
            residual: residual.max(),
            sweeps,
            last: Some(Box::new(traj)),
        })
    }
}

/// Root of the single terminal condition by a bracketing secant method.
fn scalar_multiplier<M: ModelSpec + ?Sized>(
    problem: &Problem<'_, M>,
    start: Inner,
    lambda0: f64,
    equality: bool,
) -> Result<(Inner, DVector<f64>), OcpError> {
    let tol = 0.1 * problem.opts.tol;
    let max_iter = problem.opts.max_multiplier_iter;
    let empty = DVector::zeros(0);
    let one = |l: f64| DVector::from_element(1, l);
    let lower = if equality { f64::NEG_INFINITY } else { 0.0 };
    let evals = std::cell::Cell::new(0usize);
    let mut latest = start;
    // Residual of the terminal condition at multiplier `l`; for an
    // inequality, `g₂(γ_T(l))` restricted to `l ≥ 0`.
    let eval = |l: f64, latest: &mut Inner| -> Result<(f64, Inner), OcpError> {
        evals.set(evals.get() + 1);
        let state = if equality {
            problem.inner(&one(l), &empty, latest)?
        } else {
            problem.inner(&empty, &one(l), latest)?
        };
        let gt = &state.gamma[problem.grid.nt()];
        let g = if equality {
            problem.model.terminal_equality(gt)[0]
        } else {
            problem.model.terminal_inequality(gt)[0]
        };
        *latest = state.clone();
        Ok((g, state))
    };
    let done = |l: f64, s: Inner| Ok((s, one(l)));

    let mut a = lambda0.max(lower);
    let (mut fa, mut sa) = eval(a, &mut latest)?;
    if fa.abs() <= tol || (!equality && a == 0.0 && fa <= 0.0) {
        return done(a, sa);
    }
    if !equality && a > 0.0 {
        // A warm multiplier may no longer be needed.
        let (f0, s0) = eval(0.0, &mut latest)?;
        if f0 <= 0.0 {
            return done(0.0, s0);
        }
    }

    // Bracket search along secant or finite-difference Newton steps.
    let h = 1e-6 * (1.0 + a.abs());
    let (fh, _) = eval(a + h, &mut latest)?;
    let mut slope = (fh - fa) / h;
    let mut scale = 1.0 + a.abs();
    let (mut b, mut fb, mut sb);
    loop {
        if evals.get() > max_iter {
            return Err(multiplier_failure(problem, sa, a, equality, fa, evals.get()));
        }
        let newton = if slope.is_finite() && slope.abs() > 1e-14 { -fa / slope } else { -fa.signum() * scale };
        let step = newton.clamp(-scale, scale);
        b = (a + step).max(lower);
        if b == a {
            b = a + scale;
        }
        let r = eval(b, &mut latest)?;
        fb = r.0;
        sb = r.1;
        if fb.abs() <= tol {
            return done(b, sb);
        }
        if fb.signum() != fa.signum() {
            break;
        }
        if fb.abs() < fa.abs() {
            slope = (fb - fa) / (b - a);
            a = b;
            fa = fb;
            sa = sb;
        } else {
            slope = -slope;
        }
        scale *= 2.0;
    }

    // Illinois regula falsi on [a, b].
    let mut side = 0i8;
    let (mut best_l, mut best_f, mut best_s) = if fa.abs() < fb.abs() { (a, fa, sa.clone()) } else { (b, fb, sb.clone()) };
    while evals.get() <= max_iter {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let (fc, sc) = eval(c, &mut latest)?;
        if fc.abs() < best_f.abs() {
            best_l = c;
            best_f = fc;
            best_s = sc.clone();
        }
        if fc.abs() <= tol || (a - b).abs() <= 4.0 * f64::EPSILON * (1.0 + c.abs()) {
            return done(best_l, best_s);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
    }
    Err(multiplier_failure(problem, best_s, best_l, equality, best_f, evals.get()))
}

fn multiplier_failure<M: ModelSpec + ?Sized>(
    problem: &Problem<'_, M>,
    state: Inner,
    lambda: f64,
    equality: bool,
    residual: f64,
    sweeps: usize,
) -> OcpError {
    let one = DVector::from_element(1, lambda);
    let empty = DVector::zeros(0);
    let (l1, l2) = if equality { (one, empty) } else { (empty, one) };
    let last = problem.assemble((state.gamma, state.v, state.nu), state.p, &l1, &l2);
    OcpError::NoConvergence {
        residual: residual.abs(),
        sweeps,
        last: Some(Box::new(last)),
    }
}

/// Semismooth Newton with a finite-difference Jacobian and backtracking on
/// `|F(λ)|`.
fn vector_multiplier<M: ModelSpec + ?Sized>(
    problem: &Problem<'_, M>,
    start: Inner,
    mut lambda: DVector<f64>,
    n1: usize,
) -> Result<(Inner, DVector<f64>), OcpError> {
    let tol = 0.1 * problem.opts.tol;
    let k = lambda.len();
    for i in n1..k {
        lambda[i] = lambda[i].max(0.0);
    }
    let solve = |lambda: &DVector<f64>, from: &Inner| -> Result<(Inner, DVector<f64>), OcpError> {
        let (l1, l2) = split(lambda, n1);
        let state = problem.inner(&l1, &l2, from)?;
        let f = problem.terminal_map(&state, &l2);
        Ok((state, f))
    };
    let (mut state, mut f) = solve(&lambda, &start)?;
    for _ in 0..problem.opts.max_multiplier_iter {
        if f.amax() <= tol {
            return Ok((state, lambda));
        }
        let mut jac = DMatrix::zeros(k, k);
        for j in 0..k {
            let h = 1e-6 * (1.0 + lambda[j].abs());
            let mut shifted = lambda.clone();
            shifted[j] += h;
            let (_, fj) = solve(&shifted, &state)?;
            jac.set_column(j, &((fj - &f) / h));
        }
        let step = match jac.clone().lu().solve(&(-&f)) {
            Some(d) if d.iter().all(|x| x.is_finite()) => d,
            _ => {
                let jt = jac.transpose();
                let mut normal = &jt * &jac;
                let reg = 1e-10 * normal.diagonal().amax() + 1e-14;
                for i in 0..k {
                    normal[(i, i)] += reg;
                }
                normal
                    .lu()
                    .solve(&(-(jt * &f)))
                    .filter(|d| d.iter().all(|x| x.is_finite()))
                    .ok_or_else(|| OcpError::NoConvergence {
                        residual: f.amax(),
                        sweeps: state.sweeps,
                        last: None,
                    })?
            }
        };
        let norm = f.norm();
        let mut alpha = 1.0;
        loop {
            let trial = &lambda + &step * alpha;
            let (s, ft) = solve(&trial, &state)?;
            if ft.norm() < (1.0 - 1e-4 * alpha) * norm || alpha < 1e-8 {
                lambda = trial;
                state = s;
                f = ft;
                break;
            }
            alpha *= 0.5;
        }
    }
    if f.amax() <= tol {
        Ok((state, lambda))
    } else {
        let (l1, l2) = split(&lambda, n1);
        let residual = f.amax();
        let sweeps = state.sweeps;
        let last = problem.assemble((state.gamma, state.v, state.nu), state.p, &l1, &l2);
        Err(OcpError::NoConvergence {
            residual,
            sweeps,
            last: Some(Box::new(last)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::WeightedPoints;
    use crate::model::{build_lq_model, LqParams, PriceFunction};

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn lq_closed_form() {
        let (pbar, q, x0) = (0.3, 0.5, 0.2);
        let model = build_lq_model(LqParams {
            terminal_linear: vec![q],
            price: PriceFunction::Constant { value: vec![pbar] },
            ..LqParams::default()
        })
        .unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let c = CouplingSignals::constant(&model, &grid, v1(pbar), WeightedPoints::dirac(v1(0.0))).unwrap();
        let t = solve_agent(&model, &v1(x0), &c, &grid, &AgentOptions::default()).unwrap();
        for v in &t.v {
            assert!((v[0] + pbar + q).abs() < 1e-12);
        }
        assert!((t.gamma[50][0] - (x0 - (pbar + q))).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_model_stays_put() {
        let model = build_lq_model(LqParams::default()).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let c = CouplingSignals::constant(&model, &grid, v1(0.0), WeightedPoints::dirac(v1(0.0))).unwrap();
        let t = solve_agent(&model, &v1(0.4), &c, &grid, &AgentOptions::default()).unwrap();
        assert!(t.v.iter().all(|v| v[0] == 0.0));
        assert!(t.p.iter().all(|p| p[0] == 0.0));
        assert_eq!(t.cost, 0.0);
    }
}
