//! Wasserstein-1 distances between finitely supported measures.
//!
//! Scalar measures use the quantile formula `∫|F_μ − F_ν|`. Equal-size sets
//! with uniform weights go through the Hungarian algorithm, other sets up to
//! [`EXACT_LIMIT`] atoms through a successive-shortest-path solve of the
//! transport LP. Larger problems fall back to log-domain Sinkhorn iterations
//! and are flagged as approximate.

use nalgebra::{DMatrix, DVector};

use super::{MeasureError, WeightedPoints};

/// Largest support size handled by the exact solvers.
pub const EXACT_LIMIT: usize = 512;

const SINKHORN_ITERATIONS: usize = 500;
const SINKHORN_REGULARIZATION: f64 = 1e-2;

/// Ground distance between atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundMetric {
    Euclidean,
    /// `max(|x₁ − y₁|, |x₂ − y₂|)` for points split as `(x₁, x₂)` with
    /// `x₁ ∈ ℝᵏ`. Used for state-costate pairs.
    BlockMax(usize),
}

impl GroundMetric {
    pub fn distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match *self {
            GroundMetric::Euclidean => (a - b).norm(),
            GroundMetric::BlockMax(k) => {
                let d = a - b;
                let k = k.min(d.len());
                d.rows(0, k).norm().max(d.rows(k, d.len() - k).norm())
            }
        }
    }
}

/// A transport cost together with whether it was computed exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub value: f64,
    pub exact: bool,
}

/// `d₁(a, b)` under the Euclidean ground metric.
pub fn wasserstein1(a: &WeightedPoints, b: &WeightedPoints) -> Result<Distance, MeasureError> {
    wasserstein1_with_metric(a, b, GroundMetric::Euclidean)
}

pub fn wasserstein1_with_metric(
    a: &WeightedPoints,
    b: &WeightedPoints,
    metric: GroundMetric,
) -> Result<Distance, MeasureError> {
    if a.dim() != b.dim() {
        return Err(MeasureError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let scalar = a.dim() == 1 && !matches!(metric, GroundMetric::BlockMax(0));
    if scalar {
        let xs: Vec<f64> = a.points().iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = b.points().iter().map(|p| p[0]).collect();
        return Ok(Distance {
            value: quantile_distance(&xs, a.weights(), &ys, b.weights()),
            exact: true,
        });
    }
    let cost = DMatrix::from_fn(a.len(), b.len(), |i, j| metric.distance(&a.points()[i], &b.points()[j]));
    Ok(transport_cost(&cost, a.weights(), b.weights()))
}

/// `∫ |F_a(t) − F_b(t)| dt` for scalar atoms.
pub fn quantile_distance(xs: &[f64], wx: &[f64], ys: &[f64], wy: &[f64]) -> f64 {
    let mut events: Vec<(f64, f64)> = xs
        .iter()
        .zip(wx)
        .map(|(&x, &w)| (x, w))
        .chain(ys.iter().zip(wy).map(|(&y, &w)| (y, -w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        cdf_gap += pair[0].1;
        total += cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    total
}

/// Optimal transport cost `min_π Σ πᵢⱼ cᵢⱼ` over couplings of `wa` and `wb`.
pub fn transport_cost(cost: &DMatrix<f64>, wa: &[f64], wb: &[f64]) -> Distance {
    let (n, m) = cost.shape();
    if n == 1 || m == 1 {
        // Every coupling with a one-atom marginal is the product coupling.
        let value = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| wa[i] * wb[j] * cost[(i, j)])
            .sum();
        return Distance { value, exact: true };
    }
    if n == m && n <= EXACT_LIMIT && is_uniform(wa) && is_uniform(wb) {
        let assignment = hungarian(cost);
        let value = assignment.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / n as f64;
        return Distance { value, exact: true };
    }
    if n <= EXACT_LIMIT && m <= EXACT_LIMIT {
        return Distance {
            value: min_cost_flow(cost, wa, wb),
            exact: true,
        };
    }
    Distance {
        value: sinkhorn(cost, wa, wb),
        exact: false,
    }
}

fn is_uniform(w: &[f64]) -> bool {
    let target = 1.0 / w.len() as f64;
    w.iter().all(|&x| (x - target).abs() <= 1e-15)
}

/// Minimum-cost perfect assignment (row `i` goes to column `result[i]`),
/// by the shortest augmenting path method with potentials, `O(n³)`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    // One-based arrays with a sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

/// Transport LP by successive shortest paths on the bipartite residual graph,
/// with Dijkstra on reduced costs.
fn min_cost_flow(cost: &DMatrix<f64>, wa: &[f64], wb: &[f64]) -> f64 {
    const EPS: f64 = 1e-15;
    let (n, m) = cost.shape();
    let mut supply = wa.to_vec();
    let mut demand = wb.to_vec();
    // Mass left over by rounding is dropped from the larger side.
    let mut flow = DMatrix::<f64>::zeros(n, m);
    let mut pot = vec![0.0; n + m];
    let nodes = n + m;
    loop {
        let remaining: f64 = supply.iter().sum::<f64>().min(demand.iter().sum());
        if remaining <= 1e-14 {
            break;
        }
        // Multi-source Dijkstra from supply nodes with mass left.
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        for i in 0..n {
            if supply[i] > EPS {
                dist[i] = 0.0;
            }
        }
        let mut target = None;
        loop {
            let mut best = f64::INFINITY;
            let mut u = usize::MAX;
            for k in 0..nodes {
                if !done[k] && dist[k] < best {
                    best = dist[k];
                    u = k;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= n && demand[u - n] > EPS {
                target = Some(u);
                break;
            }
            if u < n {
                for j in 0..m {
                    let w = n + j;
                    if done[w] {
                        continue;
                    }
                    let rc = (cost[(u, j)] + pot[u] - pot[w]).max(0.0);
                    if dist[u] + rc < dist[w] {
                        dist[w] = dist[u] + rc;
                        prev[w] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if done[i] || flow[(i, j)] <= EPS {
                        continue;
                    }
                    let rc = (-cost[(i, j)] + pot[u] - pot[i]).max(0.0);
                    if dist[u] + rc < dist[i] {
                        dist[i] = dist[u] + rc;
                        prev[i] = u;
                    }
                }
            }
        }
        let Some(t) = target else { break };
        let reach = dist[t];
        for k in 0..nodes {
            pot[k] += dist[k].min(reach);
        }
        // Bottleneck along the path.
        let mut amount = demand[t - n];
        let mut node = t;
        while prev[node] != usize::MAX {
            let p = prev[node];
            if p >= n {
                amount = amount.min(flow[(node, p - n)]);
            }
            node = p;
        }
        amount = amount.min(supply[node]);
        let source = node;
        let mut node = t;
        while prev[node] != usize::MAX {
            let p = prev[node];
            if p < n {
                flow[(p, node - n)] += amount;
            } else {
                flow[(node, p - n)] -= amount;
            }
            node = p;
        }
        supply[source] -= amount;
        demand[t - n] -= amount;
    }
    flow.component_mul(cost).sum()
}

/// Entropic transport cost `Σ πᵢⱼ cᵢⱼ` of the Sinkhorn plan.
fn sinkhorn(cost: &DMatrix<f64>, wa: &[f64], wb: &[f64]) -> f64 {
    let (n, m) = cost.shape();
    let mut entries: Vec<f64> = cost.iter().copied().filter(|c| *c > 0.0).collect();
    if entries.is_empty() {
        return 0.0;
    }
    entries.sort_by(f64::total_cmp);
    let eps = SINKHORN_REGULARIZATION * entries[entries.len() / 2];
    let log_a: Vec<f64> = wa.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = wb.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let logsumexp = |vals: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = vals.collect();
        let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return mx;
        }
        mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
    };
    for _ in 0..SINKHORN_ITERATIONS {
        for i in 0..n {
            let lse = logsumexp(&mut (0..m).map(|j| (g[j] - cost[(i, j)]) / eps + log_b[j]));
            f[i] = -eps * lse;
        }
        for j in 0..m {
            let lse = logsumexp(&mut (0..n).map(|i| (f[i] - cost[(i, j)]) / eps + log_a[i]));
            g[j] = -eps * lse;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let pi = ((f[i] + g[j] - cost[(i, j)]) / eps + log_a[i] + log_b[j]).exp();
            total += pi * cost[(i, j)];
        }
    }
    total
}
