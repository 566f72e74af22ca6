use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    Certificate, ConvergenceTrace, EquilibriumError, EquilibriumReport, IterationRecord, SolveConfig, Status,
};
use crate::measures::{
    lagrangian_pushforward, marginal_state, mixture, pricing_snapshot, wasserstein1, MeasureKind, ParticleMeasure,
    WeightedPoints,
};
use crate::model::ModelSpec;
use crate::ocp::{
    bounds_report, cost_eval, pmp_residual, solve_agent_warm, AgentOptions, AgentTrajectory, CouplingSignals, OcpError,
    PmpResidual, TimeGrid,
};
use crate::pointwise::{hamiltonian_min, price_fixed_point, PriceOptions};

/// Share of agent failures tolerated by a best response.
const MAX_FAILURE_SHARE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResponseOptions {
    pub agent: AgentOptions,
    pub price: PriceOptions,
}

/// Best responses to the coupling of a measure.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub coupling: CouplingSignals,
    /// Distinct initial points of `κ` in first-occurrence order.
    pub atoms: Vec<DVector<f64>>,
    pub atom_weights: Vec<f64>,
    /// One optimal trajectory per atom.
    pub particles: Vec<Arc<AgentTrajectory>>,
    /// Agents whose solve did not converge; their last iterate is kept.
    pub failures: usize,
}

impl BestResponse {
    /// The best responses as a measure with the atom weights.
    pub fn measure(&self, grid: TimeGrid) -> Result<ParticleMeasure, EquilibriumError> {
        Ok(ParticleMeasure::new(
            self.particles.clone(),
            self.atom_weights.clone(),
            MeasureKind::StateCostate,
            grid,
        )?)
    }

    fn atom_of(&self, x0: &DVector<f64>) -> Option<usize> {
        self.atoms.iter().position(|a| a == x0)
    }
}

/// Distinct initial points of the particles and their total weights.
fn atoms_of(kappa: &ParticleMeasure) -> (Vec<DVector<f64>>, Vec<f64>) {
    let mut atoms: Vec<DVector<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (p, &w) in kappa.particles().iter().zip(kappa.weights()) {
        match atoms.iter().position(|a| *a == p.x0) {
            Some(i) => weights[i] += w,
            None => {
                atoms.push(p.x0.clone());
                weights.push(w);
            }
        }
    }
    (atoms, weights)
}

/// `(m_k, P[μ_k])` at every node, with `μ_k` the pricing snapshot of `κ`.
pub fn coupling_of<M: ModelSpec + ?Sized>(
    model: &M,
    kappa: &ParticleMeasure,
    opts: &PriceOptions,
) -> Result<CouplingSignals, EquilibriumError> {
    let grid = *kappa.grid();
    let nodes: Vec<usize> = (0..=grid.nt()).collect();
    let solved = nodes
        .par_iter()
        .map(|&k| -> Result<(DVector<f64>, WeightedPoints), EquilibriumError> {
            let snapshot = pricing_snapshot(kappa, k)?;
            let price = price_fixed_point(model, &snapshot, opts)?.price;
            Ok((price, marginal_state(kappa, k)?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (price, marginals) = solved.into_iter().unzip();
    Ok(CouplingSignals::new(model, &grid, price, marginals)?)
}

/// Builds the coupling of `κ` and solves one agent problem per initial atom.
///
/// `warm` supplies previous trajectories keyed by their initial point.
pub fn best_response<M: ModelSpec + ?Sized>(
    model: &M,
    kappa: &ParticleMeasure,
    opts: &ResponseOptions,
    warm: &[Arc<AgentTrajectory>],
) -> Result<BestResponse, EquilibriumError> {
    let coupling = coupling_of(model, kappa, &opts.price)?;
    respond(model, kappa, coupling, opts, warm)
}

fn respond<M: ModelSpec + ?Sized>(
    model: &M,
    kappa: &ParticleMeasure,
    coupling: CouplingSignals,
    opts: &ResponseOptions,
    warm: &[Arc<AgentTrajectory>],
) -> Result<BestResponse, EquilibriumError> {
    let grid = *kappa.grid();
    let (atoms, atom_weights) = atoms_of(kappa);
    let results: Vec<Result<AgentTrajectory, OcpError>> = atoms
        .par_iter()
        .map(|x0| {
            let start = warm.iter().find(|w| w.x0 == *x0).map(|w| w.as_ref());
            solve_agent_warm(model, x0, &coupling, &grid, &opts.agent, start)
        })
        .collect();
    let mut failures = 0;
    let mut first = None;
    let mut particles = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(t) => particles.push(Arc::new(t)),
            Err(OcpError::NoConvergence {
                last: Some(last),
                residual,
                ..
            }) => {
                failures += 1;
                first.get_or_insert_with(|| format!("agent solve stopped at residual {residual:e}"));
                particles.push(Arc::new(*last));
            }
            Err(e) => {
                return Err(EquilibriumError::AgentFailures {
                    failed: failures + 1,
                    total: atoms.len(),
                    first: e.to_string(),
                })
            }
        }
    }
    if failures as f64 > MAX_FAILURE_SHARE * atoms.len() as f64 {
        return Err(EquilibriumError::AgentFailures {
            failed: failures,
            total: atoms.len(),
            first: first.unwrap_or_default(),
        });
    }
    Ok(BestResponse {
        coupling,
        atoms,
        atom_weights,
        particles,
        failures,
    })
}

/// `Σᵢ wᵢ [J(γᵢ, vᵢ) − J(best response from γᵢ(0))]` over the stored
/// state-control pairs of `eta`.
pub fn exploitability<M: ModelSpec + ?Sized>(
    model: &M,
    eta: &ParticleMeasure,
    coupling: &CouplingSignals,
    opts: &AgentOptions,
) -> Result<f64, EquilibriumError> {
    let opts = ResponseOptions {
        agent: opts.clone(),
        ..ResponseOptions::default()
    };
    let br = respond(model, eta, coupling.clone(), &opts, &[])?;
    Ok(exploitability_against(model, eta, &br).0)
}

/// Exploitability and mean cost of `eta` against precomputed best responses.
fn exploitability_against<M: ModelSpec + ?Sized>(model: &M, eta: &ParticleMeasure, br: &BestResponse) -> (f64, f64) {
    let grid = eta.grid();
    let mut gap = 0.0;
    let mut mean_cost = 0.0;
    for (p, &w) in eta.particles().iter().zip(eta.weights()) {
        let cost = cost_eval(model, &p.gamma, &p.v, &br.coupling, grid);
        let best = br.atom_of(&p.x0).map_or(cost, |i| br.particles[i].cost);
        gap += w * (cost - best);
        mean_cost += w * cost;
    }
    (gap, mean_cost)
}

/// `max_k |P_k − ψ(Σᵢ wᵢ vᵢ(t_k))|` over the control nodes.
pub fn price_consistency<M: ModelSpec + ?Sized>(model: &M, eta: &ParticleMeasure, coupling: &CouplingSignals) -> f64 {
    (0..eta.grid().nt())
        .map(|k| (coupling.price(k) - model.price(&eta.mean_control(k))).norm())
        .fold(0.0, f64::max)
}

/// Initial `κ`: per atom, controls `v[γ_k, r_k]` integrated forward with zero
/// costates. The shifts `r_k` are zero, or uniform in `[−spread, spread]`
/// drawn from `seed`.
pub fn initial_measure<M: ModelSpec + ?Sized>(
    model: &M,
    atoms: &WeightedPoints,
    grid: &TimeGrid,
    seed: u64,
    spread: f64,
    kkt_tol: f64,
) -> Result<ParticleMeasure, EquilibriumError> {
    let dims = model.dims();
    let (n, m) = (dims.n_state, dims.n_control);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut particles = Vec::with_capacity(atoms.len());
    for x0 in atoms.points() {
        let mut gamma = vec![x0.clone()];
        let mut v = Vec::with_capacity(grid.nt());
        let mut nu = Vec::with_capacity(grid.nt());
        for k in 0..grid.nt() {
            let r = DVector::from_fn(m, |_, _| {
                if spread > 0.0 {
                    spread * (2.0 * rng.random::<f64>() - 1.0)
                } else {
                    0.0
                }
            });
            let kkt = hamiltonian_min(model, &gamma[k], &r, kkt_tol)?;
            let x = &gamma[k];
            let next = x + (model.drift(x) + model.input_matrix(x) * &kkt.v) * grid.dt();
            gamma.push(next);
            v.push(kkt.v);
            nu.push(kkt.nu);
        }
        particles.push(Arc::new(AgentTrajectory {
            x0: x0.clone(),
            gamma,
            v,
            p: vec![DVector::zeros(n); grid.nt() + 1],
            nu,
            lambda1: DVector::zeros(dims.n_terminal_eq),
            lambda2: DVector::zeros(dims.n_terminal_ineq),
            cost: 0.0,
        }));
    }
    Ok(ParticleMeasure::new(
        particles,
        atoms.weights().to_vec(),
        MeasureKind::StateCostate,
        *grid,
    )?)
}

fn sup_marginal_change(a: &ParticleMeasure, b: &ParticleMeasure) -> Result<f64, EquilibriumError> {
    let nodes: Vec<usize> = (0..=a.grid().nt()).collect();
    let d = nodes
        .par_iter()
        .map(|&k| -> Result<f64, EquilibriumError> {
            Ok(wasserstein1(&marginal_state(a, k)?, &marginal_state(b, k)?)?.value)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

struct Candidate {
    kappa: ParticleMeasure,
    eta: ParticleMeasure,
    coupling: CouplingSignals,
    certificate: Certificate,
}

/// Certifies the pure measure of best responses `br`: builds its coupling,
/// responds once more, and evaluates the certificate on its pushforward.
fn certify<M: ModelSpec + ?Sized>(
    model: &M,
    br: &BestResponse,
    grid: TimeGrid,
    config: &SolveConfig,
    opts: &ResponseOptions,
) -> Result<Candidate, EquilibriumError> {
    let kappa = br.measure(grid)?;
    let next = best_response(model, &kappa, opts, &br.particles)?;
    let eta = lagrangian_pushforward(&kappa, &next.coupling, model, opts.agent.kkt_tol)?;
    let (gap, mean_cost) = exploitability_against(model, &eta, &next);
    let follow = coupling_of(model, &next.measure(grid)?, &opts.price)?;
    let pmp = eta
        .particles()
        .iter()
        .map(|p| pmp_residual(model, p, &next.coupling, &grid))
        .fold(PmpResidual::default(), |a, b| a.worst(&b));
    let certificate = Certificate {
        exploitability: gap,
        exploitability_bound: config.exploitability_tol * (1.0 + mean_cost.abs()),
        price_consistency: price_consistency(model, &eta, &next.coupling),
        fixed_point_gap: follow.price_distance(&next.coupling),
        pmp,
        mean_cost,
    };
    Ok(Candidate {
        kappa,
        eta,
        coupling: next.coupling,
        certificate,
    })
}

fn accepted(c: &Certificate, config: &SolveConfig) -> bool {
    c.exploitability <= c.exploitability_bound
        && c.price_consistency <= config.price_tol
        && c.fixed_point_gap <= 2.0 * config.price_tol
        && c.pmp.max() <= config.pmp_tol
}

/// Fictitious play `κ_{k+1} = (1 − ω_k) κ_k + ω_k BR(κ_k)` with a support cap.
///
/// When the price change and the exploitability of `κ_k` are both below
/// tolerance, the measure of best responses is certified; on success the run
/// stops with status [`Status::Converged`]. Otherwise the best certified
/// candidate seen, or the final iterate, is returned with
/// [`Status::MaxIter`].
pub fn solve_equilibrium<M: ModelSpec + ?Sized>(
    model: &M,
    config: &SolveConfig,
) -> Result<EquilibriumReport, EquilibriumError> {
    config.validate()?;
    let grid = TimeGrid::new(model.dims().horizon, config.nt)?;
    let atoms = config.m0.sample()?;
    if atoms.dim() != model.dims().n_state {
        return Err(EquilibriumError::InvalidConfig(format!(
            "initial distribution lives in dimension {}, model state dimension is {}",
            atoms.dim(),
            model.dims().n_state
        )));
    }
    let opts = ResponseOptions {
        agent: config.agent.clone(),
        price: PriceOptions {
            kkt_tol: config.agent.kkt_tol,
            ..PriceOptions::default()
        },
    };
    let mut kappa = initial_measure(model, &atoms, &grid, config.seed, config.initial_spread, opts.agent.kkt_tol)?;
    let mut warm: Vec<Arc<AgentTrajectory>> = Vec::new();
    let mut previous: Option<(CouplingSignals, ParticleMeasure)> = None;
    let mut trace = ConvergenceTrace::default();
    let mut dropped_mass = 0.0;
    let mut best: Option<Candidate> = None;

    for k in 0..config.max_outer {
        let br = best_response(model, &kappa, &opts, &warm)?;
        warm.clone_from(&br.particles);
        let as_eta = kappa.with_kind(MeasureKind::StateControl);
        let (gap, mean_cost) = exploitability_against(model, &as_eta, &br);
        let (price_change, marginal_change) = match &previous {
            Some((c, prev)) => (br.coupling.price_distance(c), sup_marginal_change(&kappa, prev)?),
            None => (f64::INFINITY, f64::INFINITY),
        };
        trace.records.push(IterationRecord {
            iteration: k,
            price_change,
            marginal_d1_change: marginal_change,
            exploitability: gap,
            mean_cost,
            bounds: bounds_report(kappa.particles().iter().map(|p| p.as_ref()), &grid),
            support: kappa.len(),
            dropped_mass,
        });

        if price_change <= config.price_tol && gap <= config.exploitability_tol * (1.0 + mean_cost.abs()) {
            let candidate = certify(model, &br, grid, config, &opts)?;
            if accepted(&candidate.certificate, config) {
                return Ok(report(candidate, trace, Status::Converged, grid));
            }
            let better = best
                .as_ref()
                .map_or(true, |b| candidate.certificate.exploitability < b.certificate.exploitability);
            if better {
                best = Some(candidate);
            }
        }

        let w = config.damping.weight(k);
        let next = br.measure(grid)?;
        let mix = mixture(&[&kappa, &next], &[1.0 - w, w], config.support_cap)?;
        dropped_mass = mix.dropped_mass;
        previous = Some((br.coupling, kappa));
        kappa = mix.measure;
    }

    let candidate = match best {
        Some(c) => c,
        None => {
            let br = best_response(model, &kappa, &opts, &warm)?;
            certify(model, &br, grid, config, &opts)?
        }
    };
    Ok(report(candidate, trace, Status::MaxIter, grid))
}

fn report(candidate: Candidate, trace: ConvergenceTrace, status: Status, grid: TimeGrid) -> EquilibriumReport {
    EquilibriumReport {
        coupling: candidate.coupling,
        kappa: candidate.kappa,
        eta: candidate.eta,
        trace,
        certificate: candidate.certificate,
        status,
        grid,
    }
}
