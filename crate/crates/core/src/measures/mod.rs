//! Empirical trajectory measures and the distances between them.

mod points;
mod transport;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::ModelSpec;
use crate::ocp::{AgentTrajectory, CouplingSignals, TimeGrid};
use crate::pointwise::{hamiltonian_min_warm, MeasureSnapshot, PointwiseError};

pub use points::{WeightedPoints, NORMALIZATION_TOL};
pub use transport::{
    hungarian, quantile_distance, transport_cost, wasserstein1, wasserstein1_with_metric, Distance, GroundMetric,
    EXACT_LIMIT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("measure has no atoms")]
    Empty,
    #[error("{points} points but {weights} weights")]
    SizeMismatch { points: usize, weights: usize },
    #[error("point of dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weight {0} is negative or not finite")]
    NegativeWeight(f64),
    #[error("weights sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("operation needs a {expected:?} measure, got {found:?}")]
    WrongKind { expected: MeasureKind, found: MeasureKind },
    #[error("particles do not share one time grid")]
    IncompatibleGrids,
    #[error("node {node} outside 0..={nt}")]
    NodeOutOfRange { node: usize, nt: usize },
}

/// Which pair of paths a particle measure is read as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    /// `κ`, over state-costate paths `(γ, p)`.
    StateCostate,
    /// `η`, over state-control paths `(γ, v)`.
    StateControl,
}

/// `Σᵢ wᵢ δ_{trajectoryᵢ}` over trajectories sharing one time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    particles: Vec<Arc<AgentTrajectory>>,
    weights: Vec<f64>,
    kind: MeasureKind,
    grid: TimeGrid,
}

impl ParticleMeasure {
    pub fn new(
        particles: Vec<Arc<AgentTrajectory>>,
        weights: Vec<f64>,
        kind: MeasureKind,
        grid: TimeGrid,
    ) -> Result<Self, MeasureError> {
        if particles.is_empty() {
            return Err(MeasureError::Empty);
        }
        if particles.len() != weights.len() {
            return Err(MeasureError::SizeMismatch {
                points: particles.len(),
                weights: weights.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(MeasureError::NegativeWeight(w));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(MeasureError::NotNormalized(total));
        }
        if particles.iter().any(|p| p.check_grid(&grid).is_err()) {
            return Err(MeasureError::IncompatibleGrids);
        }
        Ok(Self {
            particles,
            weights,
            kind,
            grid,
        })
    }

    pub fn particles(&self) -> &[Arc<AgentTrajectory>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// The same particles read as the other kind.
    pub fn with_kind(&self, kind: MeasureKind) -> Self {
        Self { kind, ..self.clone() }
    }

    /// Checks that every initial point lies in the box `[lower, upper]`.
    pub fn initial_points_within(&self, lower: &[f64], upper: &[f64]) -> bool {
        self.particles.iter().all(|p| {
            p.x0.iter()
                .enumerate()
                .all(|(j, &x)| j < lower.len() && lower[j] <= x && x <= upper[j])
        })
    }

    fn check_node(&self, node: usize) -> Result<(), MeasureError> {
        if node > self.grid.nt() {
            Err(MeasureError::NodeOutOfRange {
                node,
                nt: self.grid.nt(),
            })
        } else {
            Ok(())
        }
    }

    fn require(&self, kind: MeasureKind) -> Result<(), MeasureError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(MeasureError::WrongKind {
                expected: kind,
                found: self.kind,
            })
        }
    }

    /// Mean control `Σᵢ wᵢ vᵢ(t_k)` for `k < nt`.
    pub fn mean_control(&self, node: usize) -> DVector<f64> {
        let m = self.particles[0].v[0].len();
        let mut mean = DVector::zeros(m);
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            mean.axpy(w, &p.v[node], 1.0);
        }
        mean
    }
}

/// `ẽ_t♯κ`: the atoms `γᵢ(t_k)` with the measure's weights.
pub fn marginal_state(kappa: &ParticleMeasure, node: usize) -> Result<WeightedPoints, MeasureError> {
    kappa.check_node(node)?;
    let points = kappa.particles.iter().map(|p| p.gamma[node].clone()).collect();
    Ok(WeightedPoints::from_parts(points, kappa.weights.clone()))
}

/// `ê_t♯κ`: the pairs `(γᵢ(t_k), pᵢ(t_k))`.
pub fn marginal_state_costate(kappa: &ParticleMeasure, node: usize) -> Result<MeasureSnapshot, MeasureError> {
    kappa.require(MeasureKind::StateCostate)?;
    kappa.check_node(node)?;
    snapshot(kappa, node, node)
}

/// The pairs `(γᵢ(t_k), pᵢ(t_{min(k+1, nt)}))` that enter the price at node
/// `k`: the discrete feedback pairs the control on `[t_k, t_{k+1})` with the
/// costate at the right end of the interval.
pub fn pricing_snapshot(kappa: &ParticleMeasure, node: usize) -> Result<MeasureSnapshot, MeasureError> {
    kappa.require(MeasureKind::StateCostate)?;
    kappa.check_node(node)?;
    snapshot(kappa, node, (node + 1).min(kappa.grid.nt()))
}

fn snapshot(kappa: &ParticleMeasure, state_node: usize, costate_node: usize) -> Result<MeasureSnapshot, MeasureError> {
    let states = kappa.particles.iter().map(|p| p.gamma[state_node].clone()).collect();
    let costates = kappa.particles.iter().map(|p| p.p[costate_node].clone()).collect();
    MeasureSnapshot::new(states, costates, kappa.weights.clone()).map_err(|_| MeasureError::NotNormalized(kappa.weights.iter().sum()))
}

/// Result of [`mixture`]: the capped mixture and the mass removed by the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub measure: ParticleMeasure,
    pub dropped_mass: f64,
}

/// `Σⱼ λⱼ μⱼ` as a particle list, capped at `support_cap` particles per
/// initial point.
///
/// Particles are concatenated in input order and grouped by `x0`. In a group
/// above the cap the lowest-weight particles are dropped, earliest first
/// among weights equal to about 12 digits, and the survivors are rescaled to
/// the group's original mass so the initial marginal is unchanged.
pub fn mixture(measures: &[&ParticleMeasure], weights: &[f64], support_cap: usize) -> Result<Mixture, MeasureError> {
    let first = measures.first().ok_or(MeasureError::Empty)?;
    if measures.len() != weights.len() {
        return Err(MeasureError::SizeMismatch {
            points: measures.len(),
            weights: weights.len(),
        });
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(MeasureError::NegativeWeight(w));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(MeasureError::NotNormalized(total));
    }
    for m in measures {
        if m.grid != first.grid {
            return Err(MeasureError::IncompatibleGrids);
        }
        if m.kind != first.kind {
            return Err(MeasureError::WrongKind {
                expected: first.kind,
                found: m.kind,
            });
        }
    }
    let mut particles = Vec::new();
    let mut mass = Vec::new();
    for (m, &lam) in measures.iter().zip(weights) {
        if lam == 0.0 {
            continue;
        }
        for (p, &w) in m.particles.iter().zip(&m.weights) {
            if w * lam > 0.0 {
                particles.push(Arc::clone(p));
                mass.push(w * lam);
            }
        }
    }
    let cap = support_cap.max(1);
    let mut dropped_mass = 0.0;
    let mut keep = vec![true; particles.len()];
    for group in group_by_origin(&particles) {
        if group.len() <= cap {
            continue;
        }
        let top = group.iter().map(|&i| mass[i]).fold(0.0, f64::max);
        let level = |i: usize| (mass[i] / top * QUANTUM).round() as u64;
        let mut order = group.clone();
        order.sort_by_key(|&i| (level(i), i));
        let group_mass: f64 = group.iter().map(|&i| mass[i]).sum();
        let mut lost = 0.0;
        for &i in &order[..group.len() - cap] {
            keep[i] = false;
            lost += mass[i];
        }
        dropped_mass += lost;
        let scale = group_mass / (group_mass - lost);
        for &i in &order[group.len() - cap..] {
            mass[i] *= scale;
        }
    }
    let mut idx = 0;
    particles.retain(|_| {
        idx += 1;
        keep[idx - 1]
    });
    let mut idx = 0;
    mass.retain(|_| {
        idx += 1;
        keep[idx - 1]
    });
    let sum: f64 = mass.iter().sum();
    let weights = mass.iter().map(|w| w / sum).collect();
    Ok(Mixture {
        measure: ParticleMeasure {
            particles,
            weights,
            kind: first.kind,
            grid: first.grid,
        },
        dropped_mass,
    })
}

/// Mass levels per group maximum used to compare weights in the cap.
const QUANTUM: f64 = (1u64 << 40) as f64;

/// Particle indices grouped by initial point, groups in order of first
/// appearance.
fn group_by_origin(particles: &[Arc<AgentTrajectory>]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in particles.iter().enumerate() {
        match groups.iter_mut().find(|g| particles[g[0]].x0 == p.x0) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Trajectory-level `d₁` with ground distance `sup_k max(|Δγ_k|, |Δp_k|)`
/// (for `η`, `|Δv_k|` replaces `|Δp_k|`).
pub fn trajectory_distance(a: &ParticleMeasure, b: &ParticleMeasure) -> Result<Distance, MeasureError> {
    if a.grid != b.grid {
        return Err(MeasureError::IncompatibleGrids);
    }
    if a.kind != b.kind {
        return Err(MeasureError::WrongKind {
            expected: a.kind,
            found: b.kind,
        });
    }
    let kind = a.kind;
    let ground = |x: &AgentTrajectory, y: &AgentTrajectory| {
        let states = x.gamma.iter().zip(&y.gamma).map(|(g, h)| (g - h).norm());
        let second: Box<dyn Iterator<Item = f64>> = match kind {
            MeasureKind::StateCostate => Box::new(x.p.iter().zip(&y.p).map(|(g, h)| (g - h).norm())),
            MeasureKind::StateControl => Box::new(x.v.iter().zip(&y.v).map(|(g, h)| (g - h).norm())),
        };
        states.chain(second).fold(0.0, f64::max)
    };
    let cost = DMatrix::from_fn(a.len(), b.len(), |i, j| ground(&a.particles[i], &b.particles[j]));
    Ok(transport_cost(&cost, &a.weights, &b.weights))
}

/// Outcome of the Hölder diagnostic on the state-costate marginals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderReport {
    /// `max_{s≠t} d₁(μ_t, μ_s) / |t − s|^{1/2}`.
    pub worst_ratio: f64,
    /// `T^{1/2} max(M₃, M₄) (1 + 1e-6)`.
    pub bound: f64,
    pub holds: bool,
    /// Node pairs whose distance had to be solved exactly.
    pub exact_evaluations: usize,
}

/// Hölder-½ check of `t ↦ ê_t♯κ` in `d₁` with the ground metric
/// `max(|Δx|, |Δq|)`.
///
/// Pairs are screened with cheap bounds: the identity coupling gives
/// `d₁ ≤ Σᵢ wᵢ max(|Δγᵢ|, |Δpᵢ|)`, and the mean shift in either block gives
/// a lower bound. Only pairs whose upper bound exceeds the running maximum
/// are solved exactly.
pub fn holder_check(kappa: &ParticleMeasure, bounds: (f64, f64)) -> Result<HolderReport, MeasureError> {
    kappa.require(MeasureKind::StateCostate)?;
    let grid = *kappa.grid();
    let nt = grid.nt();
    let n = kappa.particles[0].x0.len();
    let snapshots: Vec<WeightedPoints> = (0..=nt)
        .map(|k| marginal_state_costate(kappa, k).map(|s| s.to_points()))
        .collect::<Result<_, _>>()?;
    let metric = GroundMetric::BlockMax(n);

    let mut candidates = Vec::new();
    let mut worst: f64 = 0.0;
    for s in 0..=nt {
        for t in s + 1..=nt {
            let scale = (grid.node(t) - grid.node(s)).sqrt();
            let upper: f64 = kappa
                .particles
                .iter()
                .zip(&kappa.weights)
                .map(|(p, &w)| w * (&p.gamma[t] - &p.gamma[s]).norm().max((&p.p[t] - &p.p[s]).norm()))
                .sum();
            let (ms, mt) = (snapshots[s].mean(), snapshots[t].mean());
            let dm = mt - ms;
            let lower = dm.rows(0, n).norm().max(dm.rows(n, n).norm());
            worst = worst.max(lower / scale);
            candidates.push((upper / scale, s, t));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut exact_evaluations = 0;
    for (upper_ratio, s, t) in candidates {
        if upper_ratio <= worst {
            break;
        }
        let scale = (grid.node(t) - grid.node(s)).sqrt();
        let d = wasserstein1_with_metric(&snapshots[s], &snapshots[t], metric)?;
        exact_evaluations += 1;
        worst = worst.max(d.value / scale);
    }
    let bound = grid.horizon().sqrt() * bounds.0.max(bounds.1) * (1.0 + 1e-6);
    Ok(HolderReport {
        worst_ratio: worst,
        bound,
        holds: worst <= bound,
        exact_evaluations,
    })
}

/// `η[κ] = (π₁, V^κ)♯κ`: every particle's control recomputed as
/// `v[γ_k, P_k + b(γ_k)ᵀp_{k+1}]` with multipliers to match.
pub fn lagrangian_pushforward<M: ModelSpec + ?Sized>(
    kappa: &ParticleMeasure,
    coupling: &CouplingSignals,
    model: &M,
    kkt_tol: f64,
) -> Result<ParticleMeasure, PointwiseError> {
    kappa.require(MeasureKind::StateCostate)?;
    let nt = kappa.grid.nt();
    let particles = kappa
        .particles
        .iter()
        .map(|p| {
            let mut traj = AgentTrajectory::clone(p);
            for k in 0..nt {
                let x = &p.gamma[k];
                let r = coupling.price(k) + model.input_matrix(x).transpose() * &p.p[k + 1];
                let hint: Vec<usize> = (0..p.nu[k].len()).filter(|&i| p.nu[k][i] > 0.0).collect();
                let kkt = hamiltonian_min_warm(model, x, &r, kkt_tol, &hint)?;
                traj.v[k] = kkt.v;
                traj.nu[k] = kkt.nu;
            }
            Ok(Arc::new(traj))
        })
        .collect::<Result<Vec<_>, PointwiseError>>()?;
    Ok(ParticleMeasure {
        particles,
        weights: kappa.weights.clone(),
        kind: MeasureKind::StateControl,
        grid: kappa.grid,
    })
}
