mod common;

use common::{smoothed_max_ref, Storage};
use mfgc_core::model::{
    build_gas_storage, build_lq_model, delta_gap, smoothed_max, validate_assumptions, CheckStatus, GasHooks,
    GasStorageParams, LqParams, PriceFunction, DEFAULT_DELTA_GRID,
};
use mfgc_core::pointwise::hamiltonian_min;
use mfgc_core::ModelSpec;
use nalgebra::DVector;
use proptest::prelude::*;

fn storage_params() -> impl Strategy<Value = GasStorageParams> {
    (-2.0..-0.2f64, 0.2..2.0f64, 0.3..3.0f64, 0.3..3.0f64, 0.1..0.45f64).prop_map(|(v_min, v_max, c1, c2, frac)| {
        let base = GasStorageParams {
            v_min,
            v_max,
            c1,
            c2,
            epsilon: 0.0,
        };
        let delta = delta_gap(&base, DEFAULT_DELTA_GRID);
        GasStorageParams {
            epsilon: frac * delta,
            ..base
        }
    })
}

fn plain(p: &GasStorageParams) -> Storage {
    Storage {
        v_min: p.v_min,
        v_max: p.v_max,
        c1: p.c1,
        c2: p.c2,
        eps: p.epsilon,
    }
}

proptest! {
    #[test]
    fn smoothed_max_is_symmetric_and_monotone(a in -50.0..50.0f64, b in -50.0..50.0f64, eps in 0.0..2.0f64, da in 0.0..5.0f64) {
        let m = smoothed_max(a, b, eps);
        prop_assert_eq!(m, smoothed_max(b, a, eps));
        prop_assert!(smoothed_max(a + da, b, eps) >= m);
        prop_assert!(smoothed_max(a, b + da, eps) >= m);
        let slack = 1e-12 * (1.0 + a.abs() + b.abs());
        prop_assert!(m >= a.max(b) - slack && m <= a.max(b) + eps + slack);
        prop_assert!((m - smoothed_max_ref(a, b, eps)).abs() <= slack);
    }

    #[test]
    fn gap_is_positive_and_close_to_the_kink_minimum(params in storage_params()) {
        let delta = delta_gap(&params, DEFAULT_DELTA_GRID);
        let exact = plain(&params).exact_delta();
        prop_assert!(delta > 0.0);
        prop_assert!(delta >= exact - 1e-12);
        prop_assert!(delta - exact <= (params.c1 + params.c2) / (DEFAULT_DELTA_GRID - 1) as f64);
    }

    #[test]
    fn gas_models_pass_every_sampled_assumption(params in storage_params()) {
        let model = build_gas_storage(params, GasHooks::default(), 1.0).unwrap();
        let report = validate_assumptions(&model, 100, 1e-8);
        prop_assert!(report.passed(), "{:?}", report.violations());
    }

    #[test]
    fn gas_bounds_never_bind_together(params in storage_params(), x in 0.0..1.0f64, r in -4.0..4.0f64) {
        let model = build_gas_storage(params, GasHooks::default(), 1.0).unwrap();
        let kkt = hamiltonian_min(&model, &DVector::from_element(1, x), &DVector::from_element(1, r), 1e-12).unwrap();
        prop_assert!(kkt.active_set.len() <= 1);
        prop_assert!(kkt.nu[0] == 0.0 || kkt.nu[1] == 0.0);
    }

    #[test]
    fn smoothed_bounds_follow_the_hard_limits(params in storage_params(), x in 0.0..1.0f64) {
        let model = build_gas_storage(params, GasHooks::default(), 1.0).unwrap();
        let s = plain(&params);
        let (lo, _) = model.lower_bound(x);
        let (hi, _) = model.upper_bound(x);
        prop_assert!((lo - s.lower(x)).abs() <= 1e-12);
        prop_assert!((hi - s.upper(x)).abs() <= 1e-12);
        prop_assert!(lo >= params.v_min.max(-params.c1 * x) - 1e-12);
        prop_assert!(lo <= params.v_min.max(-params.c1 * x) + params.epsilon + 1e-12);
        prop_assert!(hi <= params.v_max.min(params.c2 * (1.0 - x)) + 1e-12);
        prop_assert!(hi >= params.v_max.min(params.c2 * (1.0 - x)) - params.epsilon - 1e-12);
    }
}

#[test]
fn default_gap_matches_the_kink_oracle() {
    let params = GasStorageParams::default();
    let delta = delta_gap(&params, DEFAULT_DELTA_GRID);
    assert!((delta - plain(&params).exact_delta()).abs() < 1e-4);
    assert!(delta > 0.0);
}

#[test]
fn smoothing_at_or_above_half_the_gap_is_rejected() {
    let base = GasStorageParams::default();
    let delta = delta_gap(&base, DEFAULT_DELTA_GRID);
    for eps in [0.5 * delta, 0.6 * delta, delta] {
        let params = GasStorageParams { epsilon: eps, ..base };
        assert!(build_gas_storage(params, GasHooks::default(), 1.0).is_err(), "eps = {eps}");
    }
    let params = GasStorageParams {
        epsilon: 0.49 * delta,
        ..base
    };
    assert!(build_gas_storage(params, GasHooks::default(), 1.0).is_ok());
}

#[test]
fn identity_price_map_passes_the_gradient_check_but_not_the_bound() {
    let model = build_lq_model(LqParams {
        price: PriceFunction::Linear { slope: 1.0 },
        ..LqParams::default()
    })
    .unwrap();
    let report = validate_assumptions(&model, 200, 1e-6);
    let worst = |name: &str| match report.get(name).unwrap().status {
        CheckStatus::Checked { worst_violation, .. } => worst_violation,
        CheckStatus::Skipped { .. } => f64::NAN,
    };
    assert!(worst("price_gradient") <= 1e-6);
    assert!(!(worst("price_bound") <= 1e-6));
    assert!(worst("trajectory_feasibility").is_nan());
}

#[test]
fn saturating_price_is_the_gradient_of_its_potential() {
    let model = build_gas_storage(GasStorageParams::default(), GasHooks::default(), 1.0).unwrap();
    for z in [-3.0, -0.4, 0.0, 0.7, 5.0] {
        let h = 1e-6;
        let fd = (model.price_potential(&DVector::from_element(1, z + h))
            - model.price_potential(&DVector::from_element(1, z - h)))
            / (2.0 * h);
        assert!((fd - model.price(&DVector::from_element(1, z))[0]).abs() < 1e-8);
        assert!(model.price(&DVector::from_element(1, z))[0].abs() <= model.price_bound());
    }
}
