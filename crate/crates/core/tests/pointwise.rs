mod common;

use common::{grid_minimizer, price_bisection, Storage};
use mfgc_core::model::{build_gas_storage, build_lq_model, GasHooks, GasStorage, GasStorageParams, LqParams, PriceFunction};
use mfgc_core::pointwise::{
    hamiltonian_min, hamiltonian_min_warm, kkt_residual, price_continuity_probe, price_fixed_point, MeasureSnapshot,
    PriceOptions,
};
use mfgc_core::ModelSpec;
use nalgebra::DVector;
use proptest::prelude::*;

fn gas() -> GasStorage {
    build_gas_storage(GasStorageParams::default(), GasHooks::default(), 1.0).unwrap()
}

fn storage() -> Storage {
    let p = GasStorageParams::default();
    Storage {
        v_min: p.v_min,
        v_max: p.v_max,
        c1: p.c1,
        c2: p.c2,
        eps: p.epsilon,
    }
}

fn s(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn saturating(z: f64) -> f64 {
    z / (1.0 + z * z).sqrt()
}

fn snapshot(states: &[f64], costates: &[f64], weights: &[f64]) -> MeasureSnapshot {
    MeasureSnapshot::new(
        states.iter().map(|&x| s(x)).collect(),
        costates.iter().map(|&q| s(q)).collect(),
        weights.to_vec(),
    )
    .unwrap()
}

#[test]
fn gas_minimizer_matches_a_dense_grid() {
    let storage = storage();
    let kkt = hamiltonian_min(&gas(), &s(0.2), &s(0.3), 1e-12).unwrap();
    let (v, step) = grid_minimizer(storage.lower(0.2), storage.upper(0.2), 1.0, 0.3, 1_000_000);
    assert!((kkt.v[0] - v).abs() <= 2.0 * step);
    assert!((kkt.v[0] - storage.lower(0.2)).abs() < 1e-12);
}

#[test]
fn active_lower_bound_on_the_gas_model() {
    let storage = storage();
    let kkt = hamiltonian_min(&gas(), &s(0.1), &s(2.0), 1e-12).unwrap();
    let lo = storage.lower(0.1);
    assert!((kkt.v[0] - lo).abs() < 1e-12);
    assert_eq!(kkt.active_set, vec![0]);
    // Stationarity v + r − ν₁ = 0 on the lower bound.
    assert!((kkt.nu[0] - (lo + 2.0)).abs() < 1e-10);
    let res = kkt_residual(&gas(), &s(0.1), &s(2.0), &kkt.v, &kkt.nu);
    assert!(res.max() <= 1e-10);
}

#[test]
fn two_point_price_matches_bisection() {
    let model = gas();
    let storage = storage();
    let mu = snapshot(&[0.2, 0.9], &[0.4, -1.5], &[0.3, 0.7]);
    let sol = price_fixed_point(&model, &mu, &PriceOptions::default()).unwrap();
    let bounds = [(storage.lower(0.2), storage.upper(0.2)), (storage.lower(0.9), storage.upper(0.9))];
    let reference = price_bisection(&[0.4, -1.5], &[0.3, 0.7], &bounds, 1.0, saturating, 1.0);
    assert!((sol.price[0] - reference).abs() <= 1e-8, "{} vs {reference}", sol.price[0]);
}

#[test]
fn identical_snapshots_have_no_price_gap() {
    let mu = snapshot(&[0.2, 0.6], &[0.1, -0.3], &[0.5, 0.5]);
    let (d1, gap) = price_continuity_probe(&gas(), &mu, &mu, &PriceOptions::default()).unwrap();
    assert_eq!(d1, 0.0);
    assert_eq!(gap, 0.0);
}

#[test]
fn tiny_perturbation_moves_the_price_little() {
    let states = [0.1, 0.35, 0.6, 0.85];
    let costates = [0.5, -0.2, 0.9, -1.1];
    let w = [0.25; 4];
    let mu1 = snapshot(&states, &costates, &w);
    let shifted: Vec<f64> = states.iter().map(|x| x + 1e-6).collect();
    let mu2 = snapshot(&shifted, &costates, &w);
    let (d1, gap) = price_continuity_probe(&gas(), &mu1, &mu2, &PriceOptions::default()).unwrap();
    assert!(d1 > 0.0 && d1 < 2e-6);
    assert!(gap <= 1e-3);
}

#[test]
fn price_gap_shrinks_with_the_distance() {
    let states = [0.05, 0.3, 0.55, 0.95];
    let costates = [1.5, 0.2, -0.4, -2.0];
    let w = [0.1, 0.2, 0.3, 0.4];
    let mu1 = snapshot(&states, &costates, &w);
    let mut last = f64::INFINITY;
    for k in 0..8 {
        let h = 0.1 / 2f64.powi(k);
        let moved: Vec<f64> = costates.iter().map(|q| q + h).collect();
        let (_, gap) = price_continuity_probe(&gas(), &mu1, &snapshot(&states, &moved, &w), &PriceOptions::default()).unwrap();
        assert!(gap <= last + 1e-12);
        last = gap;
    }
    assert!(last < 1e-3);
}

#[test]
fn lipschitz_quotients_stay_finite() {
    let model = gas();
    let mut worst: f64 = 0.0;
    for i in 0..40 {
        for j in 0..40 {
            let (x1, r1) = (i as f64 / 39.0, -3.0 + 6.0 * j as f64 / 39.0);
            let (x2, r2) = (x1 * 0.97 + 0.01, r1 + 0.013);
            let v1 = hamiltonian_min(&model, &s(x1), &s(r1), 1e-12).unwrap().v[0];
            let v2 = hamiltonian_min(&model, &s(x2), &s(r2), 1e-12).unwrap().v[0];
            worst = worst.max((v1 - v2).abs() / ((x1 - x2).powi(2) + (r1 - r2).powi(2)).sqrt());
        }
    }
    assert!(worst.is_finite() && worst < 10.0, "{worst}");
}

fn random_snapshot() -> impl Strategy<Value = MeasureSnapshot> {
    prop::collection::vec((0.0..1.0f64, -3.0..3.0f64, 0.05..1.0f64), 1..12).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.2).sum();
        MeasureSnapshot::new(
            atoms.iter().map(|a| s(a.0)).collect(),
            atoms.iter().map(|a| s(a.1)).collect(),
            atoms.iter().map(|a| a.2 / total).collect(),
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn warm_starts_do_not_change_the_minimizer(x in 0.0..1.0f64, r in -4.0..4.0f64) {
        let model = gas();
        let cold = hamiltonian_min(&model, &s(x), &s(r), 1e-12).unwrap();
        for hint in [&[][..], &[0][..], &[1][..]] {
            let warm = hamiltonian_min_warm(&model, &s(x), &s(r), 1e-12, hint).unwrap();
            prop_assert!((warm.v[0] - cold.v[0]).abs() <= 1e-8);
        }
    }

    #[test]
    fn price_is_unique_and_bounded(mu in random_snapshot()) {
        let model = gas();
        let base = price_fixed_point(&model, &mu, &PriceOptions::default()).unwrap();
        prop_assert!(base.price[0].abs() <= model.price_bound());
        for start in [0.0, model.price_bound(), -model.price_bound()] {
            let other = price_fixed_point(&model, &mu, &PriceOptions { initial: Some(s(start)), ..PriceOptions::default() }).unwrap();
            prop_assert!((other.price[0] - base.price[0]).abs() <= 1e-6);
        }
    }

    #[test]
    fn saturating_price_is_monotone(a in prop::collection::vec(-5.0..5.0f64, 2), b in prop::collection::vec(-5.0..5.0f64, 2)) {
        let model = build_lq_model(LqParams { dim: 2, price: PriceFunction::Saturating { scale: 1.3 }, ..LqParams::default() }).unwrap();
        let (za, zb) = (DVector::from_vec(a), DVector::from_vec(b));
        prop_assert!((model.price(&zb) - model.price(&za)).dot(&(&zb - &za)) >= -1e-15);
    }
}
