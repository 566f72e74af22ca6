use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{solve_equilibrium, EquilibriumError, EquilibriumReport, SolveConfig};
use crate::measures::WeightedPoints;
use crate::model::ModelSpec;

/// Which measure-dependent cost a monotonicity probe evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingTerm {
    /// `f(x, m)`.
    Congestion,
    /// `g₀(x, m)`.
    Terminal,
}

fn term<M: ModelSpec + ?Sized>(model: &M, which: CouplingTerm, x: &DVector<f64>, m: &WeightedPoints) -> f64 {
    match which {
        CouplingTerm::Congestion => model.congestion(x, m),
        CouplingTerm::Terminal => model.terminal_cost(x, m),
    }
}

/// `∫ (h(x, m₁) − h(x, m₂)) d(m₁ − m₂)(x)`.
fn monotonicity_integral<M: ModelSpec + ?Sized>(
    model: &M,
    which: CouplingTerm,
    m1: &WeightedPoints,
    m2: &WeightedPoints,
) -> f64 {
    let diff = |x: &DVector<f64>| term(model, which, x, m1) - term(model, which, x, m2);
    m1.integrate(diff) - m2.integrate(diff)
}

/// Smallest value of `∫ (h(x, m₁) − h(x, m₂)) d(m₁ − m₂)(x)` over the pairs;
/// a value `≥ −1e-10` certifies sampled monotonicity. Zero for no pairs.
pub fn monotonicity_probe<M: ModelSpec + ?Sized>(
    model: &M,
    pairs: &[(WeightedPoints, WeightedPoints)],
    which: CouplingTerm,
) -> f64 {
    pairs
        .iter()
        .map(|(a, b)| monotonicity_integral(model, which, a, b))
        .fold(f64::INFINITY, f64::min)
        .min(if pairs.is_empty() { 0.0 } else { f64::INFINITY })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub starts: usize,
    /// Largest pairwise `sup_k |P¹_k − P²_k|`.
    pub price_gap: f64,
    /// Largest pairwise gap in the population mean cost.
    pub mean_cost_gap: f64,
    /// Largest pairwise gap between costs of the same initial atom.
    pub cost_profile_gap: f64,
    /// Largest `|∫⟨P¹ − P², V¹ − V²⟩ dt|` over pairs, `V` the mean control.
    pub price_term: f64,
    /// Largest `|∫∫ (f(x, m¹_t) − f(x, m²_t)) d(m¹_t − m²_t) dt|` over pairs.
    pub congestion_term: f64,
    /// Largest `|∫ (g₀(x, m¹_T) − g₀(x, m²_T)) d(m¹_T − m²_T)|` over pairs.
    pub terminal_term: f64,
    pub congestion_monotonicity: f64,
    pub terminal_monotonicity: f64,
    /// Smallest sampled `(φ(a) + φ(b))/2 − φ((a+b)/2)`.
    pub potential_convexity: f64,
    pub preconditions_hold: bool,
    pub runs: Vec<EquilibriumReport>,
}

const PROBE_PAIRS: usize = 200;

fn random_measure(rng: &mut ChaCha8Rng, lower: &[f64], upper: &[f64]) -> WeightedPoints {
    let atoms = rng.random_range(1..6);
    let points = (0..atoms)
        .map(|_| DVector::from_iterator(lower.len(), lower.iter().zip(upper).map(|(&l, &u)| l + (u - l) * rng.random::<f64>())))
        .collect();
    let weights = (0..atoms).map(|_| 0.05 + rng.random::<f64>()).collect();
    WeightedPoints::normalized(points, weights).expect("positive weights")
}

/// Sampled preconditions: monotonicity of `f` and `g₀`, strict convexity of `φ`.
fn preconditions<M: ModelSpec + ?Sized>(model: &M, seed: u64) -> (f64, f64, f64) {
    let region = model.probe_region();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x756e_6971);
    let pairs: Vec<(WeightedPoints, WeightedPoints)> = (0..PROBE_PAIRS)
        .map(|_| {
            (
                random_measure(&mut rng, &region.state_lower, &region.state_upper),
                random_measure(&mut rng, &region.state_lower, &region.state_upper),
            )
        })
        .collect();
    let f = monotonicity_probe(model, &pairs, CouplingTerm::Congestion);
    let g = monotonicity_probe(model, &pairs, CouplingTerm::Terminal);
    let m = model.dims().n_control;
    let mut convexity = f64::INFINITY;
    for _ in 0..PROBE_PAIRS {
        let a = DVector::from_fn(m, |_, _| 4.0 * rng.random::<f64>() - 2.0);
        let b = DVector::from_fn(m, |_, _| 4.0 * rng.random::<f64>() - 2.0);
        let mid = (&a + &b) * 0.5;
        let gap = 0.5 * (model.price_potential(&a) + model.price_potential(&b)) - model.price_potential(&mid);
        convexity = convexity.min(gap);
    }
    (f, g, convexity)
}

/// The three terms of the uniqueness argument for two runs.
fn pair_terms<M: ModelSpec + ?Sized>(model: &M, a: &EquilibriumReport, b: &EquilibriumReport) -> (f64, f64, f64) {
    let grid = a.grid;
    let dt = grid.dt();
    let nt = grid.nt();
    let mut price = 0.0;
    let mut congestion = 0.0;
    for k in 0..nt {
        let dp = a.coupling.price(k) - b.coupling.price(k);
        let dv = a.eta.mean_control(k) - b.eta.mean_control(k);
        price += dt * dp.dot(&dv);
        congestion += dt * monotonicity_integral(model, CouplingTerm::Congestion, a.coupling.marginal(k), b.coupling.marginal(k));
    }
    let terminal = monotonicity_integral(model, CouplingTerm::Terminal, a.coupling.marginal(nt), b.coupling.marginal(nt));
    (price, congestion, terminal)
}

/// Solves from `n_starts` initial measures and compares the results.
///
/// Start `i` uses seed `config.seed + i`; every start after the first draws
/// random initial controls (spread at least 1).
pub fn uniqueness_experiment<M: ModelSpec + ?Sized>(
    model: &M,
    config: &SolveConfig,
    n_starts: usize,
) -> Result<UniquenessReport, EquilibriumError> {
    if n_starts < 2 {
        return Err(EquilibriumError::InvalidConfig("uniqueness needs at least two starts".into()));
    }
    let (f_mono, g_mono, convexity) = preconditions(model, config.seed);
    let preconditions_hold = f_mono >= -1e-10 && g_mono >= -1e-10 && convexity > 0.0;
    let mut runs = Vec::with_capacity(n_starts);
    for i in 0..n_starts {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(i as u64);
        if i > 0 {
            cfg.initial_spread = config.initial_spread.max(1.0);
        }
        runs.push(solve_equilibrium(model, &cfg)?);
    }
    let mut report = UniquenessReport {
        starts: n_starts,
        price_gap: 0.0,
        mean_cost_gap: 0.0,
        cost_profile_gap: 0.0,
        price_term: 0.0,
        congestion_term: 0.0,
        terminal_term: 0.0,
        congestion_monotonicity: f_mono,
        terminal_monotonicity: g_mono,
        potential_convexity: convexity,
        preconditions_hold,
        runs: Vec::new(),
    };
    for i in 0..n_starts {
        for j in i + 1..n_starts {
            let (a, b) = (&runs[i], &runs[j]);
            report.price_gap = report.price_gap.max(a.coupling.price_distance(&b.coupling));
            report.mean_cost_gap = report
                .mean_cost_gap
                .max((a.certificate.mean_cost - b.certificate.mean_cost).abs());
            for (pa, pb) in a.kappa.particles().iter().zip(b.kappa.particles()) {
                if pa.x0 == pb.x0 {
                    report.cost_profile_gap = report.cost_profile_gap.max((pa.cost - pb.cost).abs());
                }
            }
            let (tp, tf, tg) = pair_terms(model, a, b);
            report.price_term = report.price_term.max(tp.abs());
            report.congestion_term = report.congestion_term.max(tf.abs());
            report.terminal_term = report.terminal_term.max(tg.abs());
        }
    }
    report.runs = runs;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lq_model, LqParams};

    fn scalar(xs: &[f64]) -> WeightedPoints {
        WeightedPoints::from_scalars(xs, vec![1.0 / xs.len() as f64; xs.len()]).unwrap()
    }

    #[test]
    fn mean_coupling_gives_squared_mean_gap() {
        let model = build_lq_model(LqParams {
            congestion: 1.0,
            ..LqParams::default()
        })
        .unwrap();
        let (a, b) = (scalar(&[0.0, 1.0]), scalar(&[2.0]));
        let v = monotonicity_probe(&model, &[(a, b)], CouplingTerm::Congestion);
        assert!((v - 2.25).abs() < 1e-14);
    }

    #[test]
    fn measure_free_terms_vanish() {
        let model = build_lq_model(LqParams {
            terminal_linear: vec![0.3],
            ..LqParams::default()
        })
        .unwrap();
        let pairs = vec![(scalar(&[0.1, 0.4]), scalar(&[0.9]))];
        assert_eq!(monotonicity_probe(&model, &pairs, CouplingTerm::Congestion), 0.0);
        assert!(monotonicity_probe(&model, &pairs, CouplingTerm::Terminal).abs() < 1e-15);
    }

    #[test]
    fn reversed_coupling_is_detected() {
        let model = build_lq_model(LqParams {
            congestion: -1.0,
            ..LqParams::default()
        })
        .unwrap();
        let v = monotonicity_probe(&model, &[(scalar(&[0.0]), scalar(&[1.0]))], CouplingTerm::Congestion);
        assert!(v < 0.0);
    }
}
