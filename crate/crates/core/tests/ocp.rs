mod common;

use common::{FillProblem, Storage};
use mfgc_core::model::{build_gas_storage, build_lq_model, GasHooks, GasStorageParams, LqParams, PriceFunction};
use mfgc_core::ocp::{
    bounds_report, cost_eval, integrate_costate, integrate_state, pmp_residual, solve_agent, terminal_costate,
    AgentOptions, CouplingSignals, TimeGrid,
};
use mfgc_core::pointwise::hamiltonian_min;
use mfgc_core::{ModelSpec, WeightedPoints};
use nalgebra::DVector;
use proptest::prelude::*;

fn s(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

/// Steep storage (c₁ = c₂ = 2) so every target in `[0.2, 0.8]` is reachable
/// from any initial level in unit time.
fn steep() -> GasStorageParams {
    GasStorageParams {
        c1: 2.0,
        c2: 2.0,
        ..GasStorageParams::default()
    }
}

fn fill_model(target: f64) -> mfgc_core::model::GasStorage {
    let hooks = GasHooks {
        congestion: 0.5,
        terminal_target: Some(target),
        ..GasHooks::default()
    };
    build_gas_storage(steep(), hooks, 1.0).unwrap()
}

fn seasonal(grid: &TimeGrid) -> Vec<f64> {
    grid.nodes()
        .iter()
        .map(|t| 0.4 * (2.0 * std::f64::consts::PI * t).sin())
        .collect()
}

#[test]
fn lq_agent_bounds_are_the_closed_form_speed() {
    let (price, q) = (0.2, 0.3);
    let model = build_lq_model(LqParams {
        terminal_linear: vec![q],
        price: PriceFunction::Constant { value: vec![price] },
        ..LqParams::default()
    })
    .unwrap();
    let grid = TimeGrid::new(1.0, 40).unwrap();
    let coupling = CouplingSignals::constant(&model, &grid, s(price), WeightedPoints::dirac(s(0.0))).unwrap();
    let trajs: Vec<_> = [0.0, 0.25, -0.5]
        .iter()
        .map(|&x0| solve_agent(&model, &s(x0), &coupling, &grid, &AgentOptions::default()).unwrap())
        .collect();
    for t in &trajs {
        assert!((t.gamma[40][0] - (t.x0[0] - (price + q))).abs() < 1e-10);
        // ∫½v² + Pv dt + q γ(T) with constant v.
        let v = -(price + q);
        let hand = 0.5 * v * v + price * v + q * t.gamma[40][0];
        assert!((t.cost - hand).abs() < 1e-10);
    }
    let b = bounds_report(trajs.iter(), &grid);
    assert!((b.m3 - (price + q)).abs() < 1e-10);
    assert!(b.m4 < 1e-10);
    assert!((b.m2 - q).abs() < 1e-10);
    assert!((b.m1 - 1.0).abs() < 1e-10);
}

#[test]
fn terminal_costate_with_a_fill_constraint() {
    let model = fill_model(1.0);
    let p = terminal_costate(&model, &s(1.0), &s(2.0), &DVector::zeros(0), &WeightedPoints::dirac(s(0.5)));
    assert!((p[0] - 2.0).abs() < 1e-15);
}

#[test]
fn costate_error_is_first_order() {
    // Congested LQ fixture with frozen mean t: p(t) = q + (1 − t²)/2.
    let model = build_lq_model(LqParams {
        terminal_linear: vec![0.3],
        congestion: 1.0,
        ..LqParams::default()
    })
    .unwrap();
    let errs: Vec<f64> = [100, 200, 400]
        .iter()
        .map(|&nt| {
            let grid = TimeGrid::new(1.0, nt).unwrap();
            let marginals = grid.nodes().iter().map(|&t| WeightedPoints::dirac(s(t))).collect();
            let coupling = CouplingSignals::new(&model, &grid, vec![s(0.0); nt + 1], marginals).unwrap();
            let v = vec![s(0.0); nt];
            let gamma = integrate_state(&model, &s(0.0), &v, &grid).unwrap();
            let p = integrate_costate(&model, &gamma, &v, &vec![DVector::zeros(0); nt], &s(0.3), &coupling, &grid).unwrap();
            (0..=nt)
                .map(|k| {
                    let t = grid.node(k);
                    (p[k][0] - (0.3 + 0.5 * (1.0 - t * t))).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.5 / 1.25..=0.5 * 1.25).contains(&ratio), "{errs:?}");
    }
}

#[test]
fn gas_fill_agrees_with_direct_transcription() {
    let nt = 12;
    let model = fill_model(0.75);
    let grid = TimeGrid::new(1.0, nt).unwrap();
    let price = seasonal(&grid);
    let coupling = CouplingSignals::new(
        &model,
        &grid,
        price.iter().map(|&p| s(p)).collect(),
        vec![WeightedPoints::dirac(s(0.6)); nt + 1],
    )
    .unwrap();
    let opts = AgentOptions::default();
    let traj = solve_agent(&model, &s(0.4), &coupling, &grid, &opts).unwrap();
    let p = steep();
    let oracle = FillProblem {
        storage: Storage {
            v_min: p.v_min,
            v_max: p.v_max,
            c1: p.c1,
            c2: p.c2,
            eps: p.epsilon,
        },
        x0: 0.4,
        target: 0.75,
        price: price[..nt].to_vec(),
        congestion_slope: 0.3,
        dt: grid.dt(),
    }
    .solve();
    assert!(traj.cost <= oracle.cost + 1e-6 * (1.0 + traj.cost.abs()));
    assert!((traj.cost - oracle.cost).abs() <= 1e-3);
    assert!((traj.gamma[nt][0] - 0.75).abs() <= 1e-6);

    // The oracle's own trajectory certifies to a loose tolerance once its
    // multiplier and the implied costates are attached.
    let mut from_oracle = traj.clone();
    from_oracle.v = oracle.v.iter().map(|&v| s(v)).collect();
    from_oracle.gamma = oracle.gamma.iter().map(|&g| s(g)).collect();
    from_oracle.lambda1 = s(oracle.lambda);
    let pt = terminal_costate(&model, &from_oracle.gamma[nt], &from_oracle.lambda1, &DVector::zeros(0), coupling.marginal(nt));
    let nu: Vec<DVector<f64>> = (0..nt)
        .map(|k| {
            // Multipliers recovered pointwise from the oracle control.
            let r = coupling.price(k) + &traj.p[k + 1];
            hamiltonian_min(&model, &from_oracle.gamma[k], &r, 1e-12).unwrap().nu
        })
        .collect();
    from_oracle.p = integrate_costate(&model, &from_oracle.gamma, &from_oracle.v, &nu, &pt, &coupling, &grid).unwrap();
    from_oracle.nu = nu;
    from_oracle.cost = cost_eval(&model, &from_oracle.gamma, &from_oracle.v, &coupling, &grid);
    let r = pmp_residual(&model, &from_oracle, &coupling, &grid);
    assert!(r.max() <= 10.0 * 1e-4, "{r:?}");
}

#[test]
fn converged_agents_are_self_consistent() {
    let nt = 50;
    let model = fill_model(0.5);
    let grid = TimeGrid::new(1.0, nt).unwrap();
    let coupling = CouplingSignals::new(
        &model,
        &grid,
        seasonal(&grid).iter().map(|&p| s(p)).collect(),
        vec![WeightedPoints::dirac(s(0.5)); nt + 1],
    )
    .unwrap();
    let opts = AgentOptions::default();
    for x0 in [0.0, 0.3, 0.7, 1.0] {
        let traj = solve_agent(&model, &s(x0), &coupling, &grid, &opts).unwrap();
        assert!(pmp_residual(&model, &traj, &coupling, &grid).max() <= opts.tol);
        let complementarity: f64 = (0..nt)
            .map(|k| traj.nu[k].dot(&model.mixed_constraints(&traj.gamma[k], &traj.v[k])).abs())
            .sum();
        assert!(complementarity <= nt as f64 * 1e-10);
        for k in 0..nt {
            let r = coupling.price(k) + model.input_matrix(&traj.gamma[k]).transpose() * traj.pricing_costate(k);
            let v = hamiltonian_min(&model, &traj.gamma[k], &r, 1e-12).unwrap().v;
            assert!((v - &traj.v[k]).amax() <= 1e-10);
        }
    }
}

#[test]
fn bumped_control_breaks_stationarity() {
    let nt = 20;
    let model = fill_model(0.6);
    let grid = TimeGrid::new(1.0, nt).unwrap();
    let coupling = CouplingSignals::constant(&model, &grid, s(0.1), WeightedPoints::dirac(s(0.5))).unwrap();
    let mut traj = solve_agent(&model, &s(0.3), &coupling, &grid, &AgentOptions::default()).unwrap();
    traj.v[7][0] += 0.05;
    let profile = mfgc_core::ocp::PmpResidual::stationarity_profile(&model, &traj, &coupling);
    assert!(profile[7] > 0.04);
    assert!(profile.iter().enumerate().all(|(k, &r)| k == 7 || r < 1e-6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn agent_cost_never_beats_feasible_constant_fills(x0 in 0.0..0.8f64, level in -0.3..0.3f64) {
        let nt = 20;
        let model = build_gas_storage(GasStorageParams::default(), GasHooks { congestion: 0.5, ..GasHooks::default() }, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, nt).unwrap();
        let coupling = CouplingSignals::new(
            &model,
            &grid,
            seasonal(&grid).iter().map(|&p| s(p)).collect(),
            vec![WeightedPoints::dirac(s(0.5)); nt + 1],
        ).unwrap();
        let traj = solve_agent(&model, &s(x0), &coupling, &grid, &AgentOptions::default()).unwrap();
        // Any feasible control does at least as badly.
        let mut gamma = vec![s(x0)];
        let mut v = Vec::new();
        for _ in 0..nt {
            let x = gamma.last().unwrap()[0];
            let (lo, _) = model.lower_bound(x);
            let (hi, _) = model.upper_bound(x);
            let vk = level.clamp(lo, hi);
            gamma.push(s(x + grid.dt() * vk));
            v.push(s(vk));
        }
        let other = cost_eval(&model, &gamma, &v, &coupling, &grid);
        prop_assert!(traj.cost <= other + 1e-9);
    }
}
