//! Independent reference computations used by the integration and acceptance
//! tests. Nothing here calls into the solver code paths it is checked against.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// `½(a+b) + ½√((a−b)² + 4ε²)`, written out directly.
pub fn smoothed_max_ref(a: f64, b: f64, eps: f64) -> f64 {
    0.5 * (a + b) + 0.5 * ((a - b).powi(2) + 4.0 * eps * eps).sqrt()
}

/// Storage box parameters as plain numbers.
#[derive(Debug, Clone, Copy)]
pub struct Storage {
    pub v_min: f64,
    pub v_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps: f64,
}

impl Storage {
    pub fn lower(&self, x: f64) -> f64 {
        smoothed_max_ref(self.v_min, -self.c1 * x, self.eps)
    }

    pub fn upper(&self, x: f64) -> f64 {
        -smoothed_max_ref(self.c2 * (x - 1.0), -self.v_max, self.eps)
    }

    /// `min_{x∈[0,1]} [min(v_M, c₂(1−x)) − max(v_m, −c₁x)]`, evaluated at the
    /// endpoints and kinks of the piecewise-linear gap.
    pub fn exact_delta(&self) -> f64 {
        let gap = |x: f64| self.v_max.min(self.c2 * (1.0 - x)) - self.v_min.max(-self.c1 * x);
        [0.0, 1.0, 1.0 - self.v_max / self.c2, -self.v_min / self.c1]
            .into_iter()
            .filter(|x| (0.0..=1.0).contains(x))
            .map(gap)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Minimizer of `½w v² + r v` over a uniform grid of `points` values in
/// `[lo, hi]`, and the grid step.
pub fn grid_minimizer(lo: f64, hi: f64, w: f64, r: f64, points: usize) -> (f64, f64) {
    let step = (hi - lo) / (points - 1) as f64;
    let mut best = (f64::INFINITY, lo);
    for i in 0..points {
        let v = lo + step * i as f64;
        let val = 0.5 * w * v * v + r * v;
        if val < best.0 {
            best = (val, v);
        }
    }
    (best.1, step)
}

/// Scalar price root by bisection for `P = ψ(Σ wₖ clamp(−(P + qₖ)/w, loₖ, hiₖ))`.
pub fn price_bisection(
    shifts: &[f64],
    weights: &[f64],
    bounds: &[(f64, f64)],
    w: f64,
    psi: impl Fn(f64) -> f64,
    bound: f64,
) -> f64 {
    let residual = |p: f64| {
        let mean: f64 = shifts
            .iter()
            .zip(weights)
            .zip(bounds)
            .map(|((q, wk), (lo, hi))| wk * (-(p + q) / w).clamp(*lo, *hi))
            .sum();
        p - psi(mean)
    };
    let (mut a, mut b) = (-bound - 1.0, bound + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if residual(mid) > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    0.5 * (a + b)
}

/// Heap's algorithm over all permutations; minimal `Σᵢ cost[i][σ(i)] / n`.
pub fn assignment_by_permutations(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / n as f64;
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Minimal transport cost over all vertices of the transportation polytope.
///
/// Every vertex is supported on at most `n + m − 1` cells forming a forest of
/// the bipartite graph; each such subset is solved by leaf elimination and kept
/// when the flow is nonnegative and matches the marginals.
pub fn transport_by_vertices(cost: &[Vec<f64>], a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let k = n + m - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(k);
    subsets(&cells, k, 0, &mut chosen, &mut |subset| {
        if let Some(flow) = tree_flow(subset, a, b) {
            let c: f64 = subset.iter().zip(&flow).map(|(&(i, j), f)| cost[i][j] * f).sum();
            best = best.min(c);
        }
    });
    best
}

fn subsets(
    cells: &[(usize, usize)],
    k: usize,
    start: usize,
    chosen: &mut Vec<(usize, usize)>,
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    for idx in start..cells.len() {
        if cells.len() - idx < k - chosen.len() {
            break;
        }
        chosen.push(cells[idx]);
        subsets(cells, k, idx + 1, chosen, visit);
        chosen.pop();
    }
}

/// Flow on `subset` meeting the marginals, solved by repeatedly fixing cells
/// whose row or column has a single open cell. `None` when the subset has a
/// cycle, the flow is negative, or the marginals are not met.
fn tree_flow(subset: &[(usize, usize)], a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let mut row = a.to_vec();
    let mut col = b.to_vec();
    let mut flow = vec![f64::NAN; subset.len()];
    let mut open = subset.len();
    while open > 0 {
        let mut progressed = false;
        for idx in 0..subset.len() {
            if !flow[idx].is_nan() {
                continue;
            }
            let (i, j) = subset[idx];
            let row_open = (0..subset.len()).filter(|&t| flow[t].is_nan() && subset[t].0 == i).count();
            let col_open = (0..subset.len()).filter(|&t| flow[t].is_nan() && subset[t].1 == j).count();
            let f = if row_open == 1 {
                row[i]
            } else if col_open == 1 {
                col[j]
            } else {
                continue;
            };
            flow[idx] = f;
            row[i] -= f;
            col[j] -= f;
            open -= 1;
            progressed = true;
        }
        if !progressed {
            return None;
        }
    }
    let tol = 1e-12;
    if flow.iter().any(|&f| f < -tol) || row.iter().chain(&col).any(|r| r.abs() > tol) {
        return None;
    }
    Some(flow)
}

/// Fill fixture: `γ̇ = v`, cost `Σ dt(½v² + P_k v_k + f γ_k)` with constant
/// congestion gradient `f`, bounds `lo(γ_k) ≤ v_k ≤ hi(γ_k)`, `γ_nt = target`.
pub struct FillProblem {
    pub storage: Storage,
    pub x0: f64,
    pub target: f64,
    pub price: Vec<f64>,
    pub congestion_slope: f64,
    pub dt: f64,
}

/// Result of the transcription oracle.
#[derive(Debug, Clone)]
pub struct FillSolution {
    pub v: Vec<f64>,
    pub gamma: Vec<f64>,
    pub cost: f64,
    pub lambda: f64,
}

impl FillProblem {
    fn controls(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gamma = vec![self.x0];
        let mut v = Vec::with_capacity(s.len());
        for &sk in s {
            let x = *gamma.last().unwrap();
            let (lo, hi) = (self.storage.lower(x), self.storage.upper(x));
            let vk = lo + sk * (hi - lo);
            gamma.push(x + self.dt * vk);
            v.push(vk);
        }
        (v, gamma)
    }

    pub fn cost(&self, v: &[f64], gamma: &[f64]) -> f64 {
        v.iter()
            .zip(gamma)
            .zip(&self.price)
            .map(|((vk, gk), pk)| self.dt * (0.5 * vk * vk + pk * vk + self.congestion_slope * gk))
            .sum()
    }

    fn lagrangian(&self, s: &[f64], lambda: f64) -> f64 {
        let (v, gamma) = self.controls(s);
        self.cost(&v, &gamma) + lambda * (gamma[gamma.len() - 1] - self.target)
    }

    /// Exact gradient of the discrete Lagrangian in `s`, by reverse
    /// accumulation through the Euler recursion.
    fn gradient(&self, s: &[f64], lambda: f64) -> Vec<f64> {
        let (v, gamma) = self.controls(s);
        let st = &self.storage;
        let dmax_db = |a: f64, b: f64| 0.5 - 0.5 * (a - b) / ((a - b).powi(2) + 4.0 * st.eps * st.eps).sqrt();
        let mut grad = vec![0.0; s.len()];
        let mut adj = lambda;
        for k in (0..s.len()).rev() {
            let x = gamma[k];
            let (lo, hi) = (st.lower(x), st.upper(x));
            let dlo = -st.c1 * dmax_db(st.v_min, -st.c1 * x);
            let dhi = -st.c2 * dmax_db(-st.v_max, st.c2 * (x - 1.0));
            let dv = self.dt * (v[k] + self.price[k]) + self.dt * adj;
            grad[k] = dv * (hi - lo);
            adj = self.dt * self.congestion_slope + adj + dv * (dlo + s[k] * (dhi - dlo));
        }
        grad
    }

    /// Projected Newton on `s ∈ [0, 1]^nt`: coordinates held at a bound by
    /// the gradient move along the negative gradient, the free block along a
    /// Newton step with a Hessian differenced from the exact gradient, and an
    /// Armijo search runs along the projection arc.
    fn inner(&self, lambda: f64, s0: &[f64]) -> Vec<f64> {
        let n = s0.len();
        let project = |s: &[f64]| s.iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<f64>>();
        let mut s = project(s0);
        let mut f = self.lagrangian(&s, lambda);
        for _ in 0..500 {
            let g = self.gradient(&s, lambda);
            let pg: f64 = s
                .iter()
                .zip(&g)
                .map(|(x, gx)| (x - (x - gx).clamp(0.0, 1.0)).abs())
                .fold(0.0, f64::max);
            if pg < 1e-14 {
                break;
            }
            let held = |i: usize| (s[i] <= 1e-12 && g[i] > 0.0) || (s[i] >= 1.0 - 1e-12 && g[i] < 0.0);
            let free: Vec<usize> = (0..n).filter(|&i| !held(i)).collect();
            let mut d: Vec<f64> = g.iter().map(|gx| -gx).collect();
            if !free.is_empty() {
                let h = 1e-6;
                let mut hess = DMatrix::zeros(free.len(), free.len());
                for (c, &j) in free.iter().enumerate() {
                    let (mut sp, mut sm) = (s.clone(), s.clone());
                    sp[j] += h;
                    sm[j] -= h;
                    let (gp, gm) = (self.gradient(&sp, lambda), self.gradient(&sm, lambda));
                    for (r, &i) in free.iter().enumerate() {
                        hess[(r, c)] = (gp[i] - gm[i]) / (2.0 * h);
                    }
                }
                let hess = 0.5 * (&hess + hess.transpose());
                let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
                if let Some(chol) = hess.cholesky() {
                    let step = chol.solve(&rhs);
                    for (r, &i) in free.iter().enumerate() {
                        d[i] = step[r];
                    }
                }
            }
            let mut t = 1.0;
            loop {
                let trial = project(&s.iter().zip(&d).map(|(x, dx)| x + t * dx).collect::<Vec<_>>());
                let decrease: f64 = g.iter().zip(&trial).zip(&s).map(|((gx, y), x)| gx * (y - x)).sum();
                let ft = self.lagrangian(&trial, lambda);
                if ft <= f + 1e-4 * decrease || t < 1e-12 {
                    let moved = trial.iter().zip(&s).any(|(a, b)| a != b);
                    s = trial;
                    f = ft;
                    if !moved {
                        return s;
                    }
                    break;
                }
                t *= 0.5;
            }
        }
        s
    }

    /// Direct transcription solved by projected gradient for each terminal
    /// multiplier, with the multiplier found by bisection on `γ_nt − target`.
    pub fn solve(&self) -> FillSolution {
        let n = self.price.len();
        let mut s = vec![0.5; n];
        let terminal = |lambda: f64, s: &mut Vec<f64>| {
            *s = self.inner(lambda, s);
            let (_, gamma) = self.controls(s);
            gamma[n] - self.target
        };
        let (mut lo, mut hi) = (-10.0, 10.0);
        assert!(terminal(lo, &mut s) > 0.0 && terminal(hi, &mut s) < 0.0, "multiplier bracket");
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if terminal(mid, &mut s) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        let lambda = 0.5 * (lo + hi);
        terminal(lambda, &mut s);
        let (v, gamma) = self.controls(&s);
        FillSolution {
            cost: self.cost(&v, &gamma),
            v,
            gamma,
            lambda,
        }
    }
}
