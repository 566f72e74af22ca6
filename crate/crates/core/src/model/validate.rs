//! Sampled spot checks of the standing assumptions on a model.
//!
//! Only pointwise properties can be sampled: convexity and strong convexity
//! of the data in the control, the gradient identity `ψ = ∇φ`, boundedness of
//! `ψ`, the rank condition on active constraint gradients, and consistency of
//! the analytic derivatives with central differences. Properties quantified
//! over trajectories are reported as skipped.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelSpec;
use crate::measures::WeightedPoints;
use crate::pointwise::hamiltonian_min;

const SEED: u64 = 0x6d66_6763;

#[derive(Debug, Clone, PartialEq)]
pub enum CheckStatus {
    Checked { worst_violation: f64, probes: usize },
    Skipped { reason: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub description: &'static str,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub tol: f64,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Checks whose worst violation exceeds the tolerance.
    pub fn violations(&self) -> Vec<&AssumptionCheck> {
        self.checks
            .iter()
            .filter(|c| matches!(c.status, CheckStatus::Checked { worst_violation, .. } if !(worst_violation <= self.tol)))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.violations().is_empty()
    }

    pub fn worst_violation(&self) -> f64 {
        self.checks
            .iter()
            .filter_map(|c| match c.status {
                CheckStatus::Checked { worst_violation, .. } => Some(worst_violation),
                CheckStatus::Skipped { .. } => None,
            })
            .fold(0.0, f64::max)
    }
}

struct Sampler<'a> {
    rng: ChaCha8Rng,
    region: &'a super::ProbeRegion,
}

impl Sampler<'_> {
    fn uniform(&mut self, lo: &[f64], hi: &[f64]) -> DVector<f64> {
        DVector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(&l, &h)| l + (h - l) * self.rng.random::<f64>()))
    }

    fn state(&mut self) -> DVector<f64> {
        let (lo, hi) = (self.region.state_lower.clone(), self.region.state_upper.clone());
        self.uniform(&lo, &hi)
    }

    fn control(&mut self) -> DVector<f64> {
        let (lo, hi) = (self.region.control_lower.clone(), self.region.control_upper.clone());
        self.uniform(&lo, &hi)
    }

    fn symmetric(&mut self, dim: usize, radius: f64) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| radius * (2.0 * self.rng.random::<f64>() - 1.0))
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central-difference gradient of a scalar function.
fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let h = fd_step(x[j]);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[j] += h;
        xm[j] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a vector function.
fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, rows: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[j] += h;
        xm[j] -= h;
        jac.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

fn relative_gap(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    if analytic.shape() != numeric.shape() {
        return f64::INFINITY;
    }
    (analytic - numeric).amax() / (1.0 + analytic.amax())
}

fn as_matrix(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

/// Samples the checkable assumptions at `probes` points of the model's probe
/// region. Deterministic for a given model and probe count.
pub fn validate_assumptions<M: ModelSpec + ?Sized>(model: &M, probes: usize, tol: f64) -> AssumptionReport {
    let dims = *model.dims();
    let (n, m) = (dims.n_state, dims.n_control);
    let region = model.probe_region();
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(SEED),
        region: &region,
    };
    let probes = probes.max(1);
    let inv_c = model.strong_convexity();

    let mut strong = 0.0f64;
    let mut convex = 0.0f64;
    let mut gradient = 0.0f64;
    let mut bounded = 0.0f64;
    let mut rank = 0.0f64;
    let mut rank_probes = 0;
    let mut derivs = 0.0f64;

    let states: Vec<DVector<f64>> = (0..4).map(|_| s.state()).collect();
    let population = WeightedPoints::uniform(states).expect("nonempty sample");

    for _ in 0..probes {
        let x = s.state();
        let v = s.control();

        // Strong convexity of L(x, ·).
        let h = model.running_cost_dvv(&x, &v);
        let sym = (&h + h.transpose()) * 0.5;
        let asym = (&h - &sym).amax();
        let eig_min = sym.symmetric_eigenvalues().min();
        strong = strong.max((inv_c - eig_min).max(0.0)).max(asym);

        // Midpoint convexity of each cᵢ(x, ·).
        if dims.n_mixed > 0 {
            let w = s.control();
            let mid = (&v + &w) * 0.5;
            let (cv, cw, cm) = (
                model.mixed_constraints(&x, &v),
                model.mixed_constraints(&x, &w),
                model.mixed_constraints(&x, &mid),
            );
            for i in 0..dims.n_mixed {
                convex = convex.max(cm[i] - 0.5 * (cv[i] + cw[i]));
            }
        }

        // ψ against the numerical gradient of φ.
        let z = s.symmetric(m, 3.0);
        let fd = fd_gradient(|z| model.price_potential(z), &z);
        gradient = gradient.max((model.price(&z) - &fd).amax() / (1.0 + fd.amax()));

        // |ψ| ≤ sup|ψ| at growing scales.
        let bound = model.price_bound();
        let far = s.symmetric(m, 1.0) * 10f64.powi(s.rng.random_range(0..8));
        bounded = if bound.is_finite() {
            bounded.max(model.price(&far).norm() - bound)
        } else {
            f64::INFINITY
        };

        // Full row rank of active constraint gradients.
        if dims.n_mixed > 0 {
            let r = s.symmetric(m, 3.0);
            if let Ok(kkt) = hamiltonian_min(model, &x, &r, 1e-10) {
                if !kkt.active_set.is_empty() {
                    let a = model.mixed_constraints_dv(&x, &kkt.v);
                    let rows = DMatrix::from_fn(kkt.active_set.len(), m, |i, j| a[(kkt.active_set[i], j)]);
                    let sigma = rows.singular_values().min();
                    rank = rank.max(inv_c - sigma);
                    rank_probes += 1;
                }
            }
        }

        // Analytic derivatives against central differences.
        let mut gap = relative_gap(
            &as_matrix(model.running_cost_dx(&x, &v)),
            &as_matrix(fd_gradient(|y| model.running_cost(y, &v), &x)),
        );
        gap = gap.max(relative_gap(
            &as_matrix(model.running_cost_dv(&x, &v)),
            &as_matrix(fd_gradient(|u| model.running_cost(&x, u), &v)),
        ));
        gap = gap.max(relative_gap(&h, &fd_jacobian(|u| model.running_cost_dv(&x, u), &v, m)));
        gap = gap.max(relative_gap(&model.drift_jacobian(&x), &fd_jacobian(|y| model.drift(y), &x, n)));
        for col in 0..m {
            gap = gap.max(relative_gap(
                &model.input_column_jacobian(&x, col),
                &fd_jacobian(|y| model.input_matrix(y).column(col).into_owned(), &x, n),
            ));
        }
        if dims.n_mixed > 0 {
            gap = gap.max(relative_gap(
                &model.mixed_constraints_dx(&x, &v),
                &fd_jacobian(|y| model.mixed_constraints(y, &v), &x, dims.n_mixed),
            ));
            gap = gap.max(relative_gap(
                &model.mixed_constraints_dv(&x, &v),
                &fd_jacobian(|u| model.mixed_constraints(&x, u), &v, dims.n_mixed),
            ));
        }
        gap = gap.max(relative_gap(
            &as_matrix(model.terminal_cost_dx(&x, &population)),
            &as_matrix(fd_gradient(|y| model.terminal_cost(y, &population), &x)),
        ));
        gap = gap.max(relative_gap(
            &as_matrix(model.congestion_dx(&x, &population)),
            &as_matrix(fd_gradient(|y| model.congestion(y, &population), &x)),
        ));
        if dims.n_terminal_eq > 0 {
            gap = gap.max(relative_gap(
                &model.terminal_equality_dx(&x),
                &fd_jacobian(|y| model.terminal_equality(y), &x, dims.n_terminal_eq),
            ));
        }
        if dims.n_terminal_ineq > 0 {
            gap = gap.max(relative_gap(
                &model.terminal_inequality_dx(&x),
                &fd_jacobian(|y| model.terminal_inequality(y), &x, dims.n_terminal_ineq),
            ));
        }
        derivs = derivs.max(gap);
    }

    let checked = |worst_violation: f64, probes: usize| CheckStatus::Checked {
        worst_violation: worst_violation.max(0.0),
        probes,
    };
    let mut checks = vec![
        AssumptionCheck {
            name: "strong_convexity",
            description: "D_vvL symmetric with smallest eigenvalue at least 1/C",
            status: checked(strong, probes),
        },
        AssumptionCheck {
            name: "constraint_convexity",
            description: "each c_i(x, ·) convex along sampled segments",
            status: if dims.n_mixed > 0 {
                checked(convex, probes)
            } else {
                CheckStatus::Skipped {
                    reason: "no mixed constraints",
                }
            },
        },
        AssumptionCheck {
            name: "price_gradient",
            description: "ψ equals the finite-difference gradient of φ",
            status: checked(gradient, probes),
        },
        AssumptionCheck {
            name: "price_bound",
            description: "|ψ| bounded by the declared sup|ψ|",
            status: checked(bounded, probes),
        },
        AssumptionCheck {
            name: "trajectory_feasibility",
            description: "feasibility along trajectories",
            status: CheckStatus::Skipped {
                reason: "quantified over feasible trajectories",
            },
        },
        AssumptionCheck {
            name: "terminal_qualification",
            description: "qualification of terminal constraints",
            status: CheckStatus::Skipped {
                reason: "quantified over feasible trajectories",
            },
        },
    ];
    checks.push(AssumptionCheck {
        name: "active_rank",
        description: "active rows of D_vc have smallest singular value at least 1/C",
        status: if rank_probes > 0 {
            checked(rank, rank_probes)
        } else {
            CheckStatus::Skipped {
                reason: "no active constraints at the sampled points",
            }
        },
    });
    checks.push(AssumptionCheck {
        name: "derivatives",
        description: "analytic derivatives match central differences",
        status: checked(derivs, probes),
    });
    AssumptionReport { checks, tol }
}
