//! Pointwise Hamiltonian minimization and the auxiliary price fixed point.
//!
//! [`hamiltonian_min`] computes the auxiliary mapping `v[x, r]`, the unique
//! minimizer of `L(x, v) + ⟨r, v⟩` subject to `c(x, v) ≤ 0`, together with
//! its multiplier `ν[x, r]`. [`price_fixed_point`] solves
//! `P = ψ(Σₖ wₖ v[xₖ, P + b(xₖ)ᵀqₖ])` for a discrete state-costate measure.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::measures::{wasserstein1_with_metric, GroundMetric, MeasureError, WeightedPoints};
use crate::model::ModelSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointwiseError {
    #[error("no feasible control found at x = {x:?}")]
    InfeasiblePoint { x: Vec<f64> },
    #[error("active-set search exceeded {iterations} working sets without a KKT point")]
    MaxIterations { iterations: usize },
    #[error("price fixed point did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("invalid measure snapshot: {0}")]
    InvalidSnapshot(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// KKT point `(v[x,r], ν[x,r])` of the pointwise problem.
#[derive(Debug, Clone, PartialEq)]
pub struct KktPoint {
    pub v: DVector<f64>,
    pub nu: DVector<f64>,
    /// Indices of the constraints treated as active, sorted.
    pub active_set: Vec<usize>,
    pub stationarity_residual: f64,
}

/// Residuals of the pointwise KKT system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub complementarity: f64,
    pub feasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.feasibility)
    }
}

/// Residuals `|D_vLᵀ + r + D_vcᵀν|`, `|⟨ν, c⟩|` and `max(0, maxᵢ cᵢ)`.
/// Negative multiplier entries are reported through the complementarity term.
pub fn kkt_residual<M: ModelSpec + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    r: &DVector<f64>,
    v: &DVector<f64>,
    nu: &DVector<f64>,
) -> KktResidual {
    let c = model.mixed_constraints(x, v);
    let mut grad = model.running_cost_dv(x, v) + r;
    if !c.is_empty() {
        grad += model.mixed_constraints_dv(x, v).transpose() * nu;
    }
    let negative = nu.iter().fold(0.0f64, |acc, &n| acc.max(-n));
    KktResidual {
        stationarity: grad.norm(),
        complementarity: nu.dot(&c).abs().max(negative),
        feasibility: c.iter().fold(0.0f64, |acc, &ci| acc.max(ci)),
    }
}

const NEWTON_MAX_ITER: usize = 60;

/// Newton's method on the KKT system with the working set `w` held as
/// equalities. Starts from `v = 0` so the result depends on `w` only.
fn equality_newton<M: ModelSpec + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    r: &DVector<f64>,
    w: &[usize],
    tol: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = model.dims().n_control;
    let k = w.len();
    let mut v = DVector::zeros(m);
    let mut nu_w = DVector::zeros(k);

    let residual = |v: &DVector<f64>, nu_w: &DVector<f64>| -> f64 {
        let mut g = model.running_cost_dv(x, v) + r;
        if k > 0 {
            let c = model.mixed_constraints(x, v);
            let a = model.mixed_constraints_dv(x, v);
            for (j, &i) in w.iter().enumerate() {
                g += a.row(i).transpose() * nu_w[j];
            }
            let cw: f64 = w.iter().map(|&i| c[i] * c[i]).sum();
            (g.norm_squared() + cw).sqrt()
        } else {
            g.norm()
        }
    };

    let mut res = residual(&v, &nu_w);
    for _ in 0..NEWTON_MAX_ITER {
        let grad = model.running_cost_dv(x, &v) + r;
        let hess = model.running_cost_dvv(x, &v);
        let mut kkt = DMatrix::zeros(m + k, m + k);
        let mut rhs = DVector::zeros(m + k);
        kkt.view_mut((0, 0), (m, m)).copy_from(&hess);
        rhs.rows_mut(0, m).copy_from(&(-&grad));
        if k > 0 {
            let c = model.mixed_constraints(x, &v);
            let a = model.mixed_constraints_dv(x, &v);
            for (j, &i) in w.iter().enumerate() {
                for col in 0..m {
                    kkt[(m + j, col)] = a[(i, col)];
                    kkt[(col, m + j)] = a[(i, col)];
                }
                rhs[m + j] = -c[i];
            }
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|s| !s.is_finite()) {
            return None;
        }
        let step = sol.rows(0, m).into_owned();
        let nu_new = sol.rows(m, k).into_owned();

        // Backtrack on the KKT residual norm.
        let mut alpha = 1.0;
        let mut v_new = &v + &step;
        let mut res_new = residual(&v_new, &nu_new);
        while res_new > (1.0 - 1e-4 * alpha) * res && alpha > 1e-6 && res > tol * 1e-3 {
            alpha *= 0.5;
            v_new = &v + &step * alpha;
            res_new = residual(&v_new, &nu_new);
        }
        let step_norm = alpha * step.norm();
        v = v_new;
        nu_w = nu_new;
        res = res_new;
        if res <= tol * 1e-3 || step_norm <= 1e-15 * (1.0 + v.norm()) {
            break;
        }
    }
    if res.is_finite() && res <= tol {
        Some((v, nu_w))
    } else {
        None
    }
}

fn expand_multipliers(n_c: usize, w: &[usize], nu_w: &DVector<f64>) -> DVector<f64> {
    let mut nu = DVector::zeros(n_c);
    for (j, &i) in w.iter().enumerate() {
        nu[i] = nu_w[j];
    }
    nu
}

enum Verdict {
    Optimal,
    Add(usize),
    Drop(usize),
}

fn classify(c: &DVector<f64>, w: &[usize], nu_w: &DVector<f64>, tol: f64) -> (Verdict, bool) {
    let violated = (0..c.len()).find(|i| !w.contains(i) && c[*i] > tol);
    let primal_feasible = violated.is_none();
    if let Some(i) = violated {
        return (Verdict::Add(i), primal_feasible);
    }
    // Lowest index with a negative multiplier leaves first (Bland's rule).
    let negative = w
        .iter()
        .enumerate()
        .filter(|(j, _)| nu_w[*j] < -tol)
        .map(|(_, &i)| i)
        .min();
    match negative {
        Some(i) => (Verdict::Drop(i), primal_feasible),
        None => (Verdict::Optimal, primal_feasible),
    }
}

/// Computes `v[x, r]` and `ν[x, r]` by an active-set Newton method.
pub fn hamiltonian_min<M: ModelSpec + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    r: &DVector<f64>,
    tol: f64,
) -> Result<KktPoint, PointwiseError> {
    hamiltonian_min_warm(model, x, r, tol, &[])
}

/// As [`hamiltonian_min`], seeding the working set with `hint`.
///
/// The hint only changes how fast the optimal working set is found; the
/// returned point is computed from it afresh and does not depend on `hint`.
pub fn hamiltonian_min_warm<M: ModelSpec + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    r: &DVector<f64>,
    tol: f64,
    hint: &[usize],
) -> Result<KktPoint, PointwiseError> {
    let dims = model.dims();
    let (m, n_c) = (dims.n_control, dims.n_mixed);
    let finish = |w: Vec<usize>, v: DVector<f64>, nu_w: DVector<f64>| {
        let nu = expand_multipliers(n_c, &w, &nu_w);
        let res = kkt_residual(model, x, r, &v, &nu);
        KktPoint {
            v,
            nu,
            active_set: w,
            stationarity_residual: res.stationarity,
        }
    };

    let mut w: Vec<usize> = hint.iter().copied().filter(|&i| i < n_c).collect();
    w.sort_unstable();
    w.dedup();
    w.truncate(m);

    let mut visited: HashSet<Vec<usize>> = HashSet::new();
    let mut seen_feasible = false;
    let guard = 4 * (n_c + 1) + 8;
    for _ in 0..guard {
        if !visited.insert(w.clone()) {
            break;
        }
        let Some((v, nu_w)) = equality_newton(model, x, r, &w, tol) else {
            break;
        };
        let c = model.mixed_constraints(x, &v);
        let (verdict, feasible) = classify(&c, &w, &nu_w, tol);
        seen_feasible |= feasible;
        match verdict {
            Verdict::Optimal => return Ok(finish(w, v, nu_w)),
            Verdict::Add(i) if w.len() < m => {
                w.push(i);
                w.sort_unstable();
            }
            Verdict::Add(_) => break,
            Verdict::Drop(i) => w.retain(|&j| j != i),
        }
    }

    // Cycling or a singular working set: enumerate working sets of size ≤ m.
    for size in 0..=m.min(n_c) {
        for subset in Subsets::new(n_c, size) {
            if visited.contains(&subset) {
                continue;
            }
            let Some((v, nu_w)) = equality_newton(model, x, r, &subset, tol) else {
                continue;
            };
            let c = model.mixed_constraints(x, &v);
            let (verdict, feasible) = classify(&c, &subset, &nu_w, tol);
            seen_feasible |= feasible;
            if matches!(verdict, Verdict::Optimal) {
                return Ok(finish(subset, v, nu_w));
            }
        }
    }
    if seen_feasible {
        Err(PointwiseError::MaxIterations {
            iterations: visited.len(),
        })
    } else {
        Err(PointwiseError::InfeasiblePoint {
            x: x.iter().copied().collect(),
        })
    }
}

/// Lexicographic `size`-subsets of `0..n`.
struct Subsets {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Subsets {
    fn new(n: usize, size: usize) -> Self {
        let current = (size <= n).then(|| (0..size).collect());
        Self { n, current }
    }
}

impl Iterator for Subsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// A discrete state-costate measure `μ = Σₖ wₖ δ_{(xₖ, qₖ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSnapshot {
    states: Vec<DVector<f64>>,
    costates: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl MeasureSnapshot {
    pub fn new(
        states: Vec<DVector<f64>>,
        costates: Vec<DVector<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self, PointwiseError> {
        let invalid = |s: String| Err(PointwiseError::InvalidSnapshot(s));
        if states.is_empty() {
            return invalid("snapshot has no atoms".into());
        }
        if states.len() != costates.len() || states.len() != weights.len() {
            return invalid(format!(
                "{} states, {} costates, {} weights",
                states.len(),
                costates.len(),
                weights.len()
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid("weights must be finite and nonnegative".into());
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > crate::measures::NORMALIZATION_TOL {
            return invalid(format!("weights sum to {total}, not 1"));
        }
        Ok(Self {
            states,
            costates,
            weights,
        })
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn costates(&self) -> &[DVector<f64>] {
        &self.costates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Checks `supp(μ) ⊆ B̄(state_radius) × B̄(costate_radius)`.
    pub fn within(&self, state_radius: f64, costate_radius: f64) -> bool {
        self.states.iter().all(|x| x.norm() <= state_radius)
            && self.costates.iter().all(|q| q.norm() <= costate_radius)
    }

    /// The snapshot as points `(x, q)` in ℝ²ⁿ, for distance computations.
    pub fn to_points(&self) -> WeightedPoints {
        let points = self
            .states
            .iter()
            .zip(&self.costates)
            .map(|(x, q)| {
                let mut z = DVector::zeros(x.len() + q.len());
                z.rows_mut(0, x.len()).copy_from(x);
                z.rows_mut(x.len(), q.len()).copy_from(q);
                z
            })
            .collect();
        WeightedPoints::from_parts(points, self.weights.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub kkt_tol: f64,
    /// Starting price; zero when absent.
    pub initial: Option<DVector<f64>>,
}

impl Default for PriceOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 500,
            kkt_tol: 1e-11,
            initial: None,
        }
    }
}

/// Solution `(P[μ], v[μ])` of the price fixed point on the atoms of `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSolution {
    pub price: DVector<f64>,
    /// `v[xₖ, P + b(xₖ)ᵀqₖ]` per atom.
    pub controls: Vec<DVector<f64>>,
    pub active_sets: Vec<Vec<usize>>,
    /// `|P − ψ(Σ wₖ vₖ)|` at the returned price.
    pub residual: f64,
    pub iterations: usize,
}

struct PriceMap<'a, M: ModelSpec + ?Sized> {
    model: &'a M,
    mu: &'a MeasureSnapshot,
    shifts: Vec<DVector<f64>>,
    hints: Vec<Vec<usize>>,
    kkt_tol: f64,
}

struct PriceEval {
    image: DVector<f64>,
    controls: Vec<DVector<f64>>,
    active_sets: Vec<Vec<usize>>,
}

impl<M: ModelSpec + ?Sized> PriceMap<'_, M> {
    /// `ψ(Σ wₖ v[xₖ, P + b(xₖ)ᵀqₖ])`, refreshing the working-set hints.
    fn eval(&mut self, price: &DVector<f64>) -> Result<PriceEval, PointwiseError> {
        let m = price.len();
        let mut mean = DVector::zeros(m);
        let mut controls = Vec::with_capacity(self.mu.len());
        let mut active_sets = Vec::with_capacity(self.mu.len());
        for (k, x) in self.mu.states().iter().enumerate() {
            let r = price + &self.shifts[k];
            let kkt = hamiltonian_min_warm(self.model, x, &r, self.kkt_tol, &self.hints[k])?;
            mean.axpy(self.mu.weights()[k], &kkt.v, 1.0);
            self.hints[k].clone_from(&kkt.active_set);
            controls.push(kkt.v);
            active_sets.push(kkt.active_set);
        }
        Ok(PriceEval {
            image: self.model.price(&mean),
            controls,
            active_sets,
        })
    }
}

/// Solves `P = ψ(Σₖ wₖ v[xₖ, P + b(xₖ)ᵀqₖ])`.
///
/// With a scalar price the residual `P − ψ(mean control)` is increasing in
/// `P`, and the root is bracketed by `±sup|ψ|`; it is found by regula falsi
/// (Illinois variant). Otherwise a damped iteration
/// `P ← (1−α)P + α ψ(mean control)` is used, with `α` starting at ½, halved
/// whenever the residual grows, and floored at 1/64.
pub fn price_fixed_point<M: ModelSpec + ?Sized>(
    model: &M,
    mu: &MeasureSnapshot,
    opts: &PriceOptions,
) -> Result<PriceSolution, PointwiseError> {
    let m = model.dims().n_control;
    let shifts = mu
        .states()
        .iter()
        .zip(mu.costates())
        .map(|(x, q)| model.input_matrix(x).transpose() * q)
        .collect();
    let mut map = PriceMap {
        model,
        mu,
        shifts,
        hints: vec![Vec::new(); mu.len()],
        kkt_tol: opts.kkt_tol,
    };
    let start = opts.initial.clone().unwrap_or_else(|| DVector::zeros(m));
    if m == 1 {
        scalar_price(&mut map, start, opts)
    } else {
        damped_price(&mut map, start, opts)
    }
}

fn solution(price: DVector<f64>, eval: PriceEval, iterations: usize) -> PriceSolution {
    let residual = (&price - &eval.image).norm();
    PriceSolution {
        price,
        controls: eval.controls,
        active_sets: eval.active_sets,
        residual,
        iterations,
    }
}

fn scalar_price<M: ModelSpec + ?Sized>(
    map: &mut PriceMap<'_, M>,
    start: DVector<f64>,
    opts: &PriceOptions,
) -> Result<PriceSolution, PointwiseError> {
    let point = |p: f64| DVector::from_element(1, p);
    let mut iterations = 1;
    let p0 = start[0];
    let e0 = map.eval(&point(p0))?;
    let f0 = p0 - e0.image[0];
    if f0.abs() <= opts.tol {
        return Ok(solution(point(p0), e0, iterations));
    }
    // One plain step settles constant price maps.
    let p1 = e0.image[0];
    iterations += 1;
    let e1 = map.eval(&point(p1))?;
    let f1 = p1 - e1.image[0];
    if f1.abs() <= opts.tol {
        return Ok(solution(point(p1), e1, iterations));
    }

    // Bracket the root of the increasing residual.
    let (mut lo, mut f_lo, mut hi, mut f_hi) = (f64::NEG_INFINITY, f64::NAN, f64::INFINITY, f64::NAN);
    for (p, f) in [(p0, f0), (p1, f1)] {
        if f < 0.0 && p > lo {
            lo = p;
            f_lo = f;
        } else if f > 0.0 && p < hi {
            hi = p;
            f_hi = f;
        }
    }
    let bound = map.model.price_bound();
    let mut width = if bound.is_finite() && bound > 0.0 { bound } else { 1.0 };
    while lo == f64::NEG_INFINITY || hi == f64::INFINITY {
        if iterations >= opts.max_iter {
            return Err(PointwiseError::NoConvergence {
                residual: f0.abs().min(f1.abs()),
                iterations,
            });
        }
        let p = if lo == f64::NEG_INFINITY {
            if bound.is_finite() && width == bound {
                -bound
            } else {
                hi.min(p0) - width
            }
        } else if bound.is_finite() && width == bound {
            bound
        } else {
            lo.max(p0) + width
        };
        iterations += 1;
        let e = map.eval(&point(p))?;
        let f = p - e.image[0];
        if f.abs() <= opts.tol {
            return Ok(solution(point(p), e, iterations));
        }
        if f < 0.0 {
            lo = p;
            f_lo = f;
        } else {
            hi = p;
            f_hi = f;
        }
        width *= 2.0;
    }

    let mut side = 0i8;
    let mut best: Option<(f64, PriceEval, f64)> = None;
    while iterations < opts.max_iter {
        let mut p = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        if !(p > lo && p < hi) {
            p = 0.5 * (lo + hi);
        }
        iterations += 1;
        let e = map.eval(&point(p))?;
        let f = p - e.image[0];
        let better = best.as_ref().map_or(true, |(_, _, fb)| f.abs() < fb.abs());
        if f.abs() <= opts.tol || hi - lo <= 4.0 * f64::EPSILON * (1.0 + p.abs()) {
            if f.abs() <= opts.tol || better {
                return finish_scalar(p, e, f, iterations, opts);
            }
            let (pb, eb, fb) = best.take().expect("best iterate recorded");
            return finish_scalar(pb, eb, fb, iterations, opts);
        }
        if f < 0.0 {
            lo = p;
            f_lo = f;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = p;
            f_hi = f;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
        if better {
            best = Some((p, e, f));
        }
    }
    let residual = best.map_or(f64::INFINITY, |(_, _, f)| f.abs());
    Err(PointwiseError::NoConvergence {
        residual,
        iterations,
    })
}

fn finish_scalar(
    p: f64,
    e: PriceEval,
    f: f64,
    iterations: usize,
    opts: &PriceOptions,
) -> Result<PriceSolution, PointwiseError> {
    // The bracket collapsed to machine precision; accept only a small residual.
    if f.abs() <= opts.tol.max(1e3 * f64::EPSILON * (1.0 + p.abs())) {
        Ok(solution(DVector::from_element(1, p), e, iterations))
    } else {
        Err(PointwiseError::NoConvergence {
            residual: f.abs(),
            iterations,
        })
    }
}

fn damped_price<M: ModelSpec + ?Sized>(
    map: &mut PriceMap<'_, M>,
    start: DVector<f64>,
    opts: &PriceOptions,
) -> Result<PriceSolution, PointwiseError> {
    const ALPHA_FLOOR: f64 = 1.0 / 64.0;
    let mut alpha = 0.5;
    let mut price = start;
    let mut eval = map.eval(&price)?;
    let mut residual = (&price - &eval.image).norm();
    let mut iterations = 1;
    while residual > opts.tol {
        if iterations >= opts.max_iter {
            return Err(PointwiseError::NoConvergence {
                residual,
                iterations,
            });
        }
        let trial = &price * (1.0 - alpha) + &eval.image * alpha;
        iterations += 1;
        let trial_eval = map.eval(&trial)?;
        let trial_residual = (&trial - &trial_eval.image).norm();
        if trial_residual > residual && alpha > ALPHA_FLOOR {
            alpha = (alpha * 0.5).max(ALPHA_FLOOR);
            continue;
        }
        price = trial;
        eval = trial_eval;
        residual = trial_residual;
    }
    Ok(solution(price, eval, iterations))
}

/// `d₁(μ₁, μ₂)` under the ground metric `max(|Δx|, |Δq|)` and the price gap
/// `|P[μ₁] − P[μ₂]|`.
pub fn price_continuity_probe<M: ModelSpec + ?Sized>(
    model: &M,
    mu1: &MeasureSnapshot,
    mu2: &MeasureSnapshot,
    opts: &PriceOptions,
) -> Result<(f64, f64), PointwiseError> {
    let n = model.dims().n_state;
    let d1 = wasserstein1_with_metric(&mu1.to_points(), &mu2.to_points(), GroundMetric::BlockMax(n))?;
    let p1 = price_fixed_point(model, mu1, opts)?;
    let p2 = price_fixed_point(model, mu2, opts)?;
    Ok((d1.value, (p1.price - p2.price).norm()))
}
