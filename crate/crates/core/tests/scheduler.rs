mod common;

use std::collections::BTreeMap;

use common::*;
use islandctl::forecast::{conservative_bounds, scenario_error_stats, Forecasts};
use islandctl::grid::{load_scenario, parse_scenario, Scenario};
use islandctl::scheduler::{
    build_problem, cost_report, mpc_step, propagate_soc, solve, MpcState, ScheduleSolution, SchedulingProblem,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn problem(sc: &Scenario, gamma: f64, t: usize) -> SchedulingProblem {
    let f = Forecasts::from_scenario(sc, t, sc.params.horizon_intervals).unwrap();
    let b = conservative_bounds(&f, &scenario_error_stats(sc), gamma).unwrap();
    build_problem(sc, &b, t).unwrap()
}

fn scheduled(sc: &Scenario, gamma: f64) -> (SchedulingProblem, ScheduleSolution) {
    let p = problem(sc, gamma, 0);
    let s = solve(sc, &p, &Default::default()).unwrap();
    (p, s)
}

fn single_bus(assets: serde_json::Value, profiles: serde_json::Value, h: usize) -> Scenario {
    let doc = json!({
        "buses": [{"id": 1}], "branches": [], "assets": assets, "profiles": profiles,
        "params": {"horizon_intervals": h, "delta_tau_s": 3600, "delta_t_s": 60,
                   "power_threshold_kw": 0.5, "suspend_intervals": 15, "start": "2024-08-02T00:00:00"}
    });
    parse_scenario(&doc.to_string()).unwrap()
}

fn profile(id: &str, v: &[f64]) -> serde_json::Value {
    json!({"id": id, "start": "2024-08-02T00:00:00", "resolution_s": 3600, "values": v})
}

#[test]
fn storage_alone_covers_critical_load() {
    // Hand-computed: 1 kW for two hours needs 2 kWh, reserved at 0.1 each.
    let sc = single_bus(
        json!([
            {"kind": "gfr", "id": "gfr", "bus": 1, "rated_kw": 10.0},
            {"kind": "storage", "id": "ess", "bus": 1, "max_store_kw": 5.0, "max_dispatch_kw": 5.0,
             "soc_max_kwh": 10.0, "c_res": 0.1, "c_use": 0.0},
            {"kind": "load", "id": "crit", "bus": 1, "critical": true, "profile": "crit"}
        ]),
        json!([profile("crit", &[1.0, 1.0])]),
        2,
    );
    let (_, s) = scheduled(&sc, 0.5);
    assert!((s.reserved_kwh("ess").unwrap() - 2.0).abs() < 1e-6);
    assert!((s.objective - 0.2).abs() < 1e-6);
    assert!(s.storage[0].soc_kwh.last().unwrap().abs() < 1e-6);
}

#[test]
fn nothing_to_pay_for() {
    let sc = single_bus(
        json!([
            {"kind": "gfr", "id": "gfr", "bus": 1, "rated_kw": 10.0},
            {"kind": "generator", "id": "pv", "bus": 1, "profile": "pv"},
            {"kind": "storage", "id": "ess", "bus": 1, "max_store_kw": 5.0, "max_dispatch_kw": 5.0,
             "soc_max_kwh": 10.0, "c_res": 0.1}
        ]),
        json!([profile("pv", &[3.0])]),
        1,
    );
    let (p, s) = scheduled(&sc, 0.5);
    assert_eq!(p.binary_count(), 0);
    assert!(s.objective.abs() < 1e-9);
    assert!(s.total_reserved_kwh().abs() < 1e-9);
}

#[test]
fn single_switch_is_charged_once() {
    // A load that can only be served in the second hour.
    let sc = single_bus(
        json!([
            {"kind": "gfr", "id": "gfr", "bus": 1, "rated_kw": 10.0},
            {"kind": "generator", "id": "pv", "bus": 1, "profile": "pv"},
            {"kind": "load", "id": "l", "bus": 1, "profile": "l", "c_shed": 1.0, "c_sw": 0.05}
        ]),
        json!([profile("pv", &[0.0, 2.0]), profile("l", &[1.0, 1.0])]),
        2,
    );
    let (_, s) = scheduled(&sc, 0.5);
    assert_eq!(s.loads[0].state, vec![0, 1]);
    // Shed 1 kWh at 1.0 plus two switches (off, then on again).
    assert!((s.costs.c_load - (1.0 + 2.0 * 0.05)).abs() < 1e-9);
    assert!((s.shed_kwh() - 1.0).abs() < 1e-9);
}

#[test]
fn tiny_instances_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..60 {
        let sc = tiny_instance(&mut rng);
        let p = problem(&sc, 0.5, 0);
        assert!(p.binary_count() <= 3);
        let oracle = brute_force(&p.model);
        match solve(&sc, &p, &Default::default()) {
            Ok(s) if !s.costs.terminal_penalty.is_normal() => {
                let o = oracle.unwrap_or_else(|| panic!("instance {i}: oracle infeasible"));
                assert!((s.objective - o).abs() < 1e-6, "instance {i}: {} vs {o}", s.objective);
            }
            Ok(_) => assert!(oracle.is_none(), "instance {i}: relaxed although feasible"),
            Err(e) => assert!(oracle.is_none(), "instance {i}: {e}"),
        }
    }
}

#[test]
fn critical_loads_are_always_served() {
    let sc = load_scenario(fixture("rural13.json")).unwrap();
    let p = problem(&sc, 0.95, 0);
    assert_eq!(p.horizon, 96);
    assert_eq!(p.binary_count(), 8 * 96);
    assert!(p.loads.iter().filter(|l| l.critical).all(|l| l.state.is_none()));
}

#[test]
fn rural_solution_invariants() {
    let sc = load_scenario(fixture("rural13.json")).unwrap();
    let (p, s) = scheduled(&sc, 0.95);
    assert!(s.mip_gap <= 1e-4);
    for (st, vars) in s.storage.iter().zip(&p.storage) {
        let spec = &vars.spec;
        assert!(st.soc_kwh.last().unwrap().abs() < 1e-6, "{} terminal", st.id);
        for k in 0..p.horizon {
            let replay = spec.eta_preserve * st.soc_kwh[k] + spec.eta_store * st.store_kwh[k]
                - st.dispatch_kwh[k] / spec.eta_dispatch
                + vars.inflow_kwh[k]
                - vars.outflow_kwh[k];
            assert!((replay - st.soc_kwh[k + 1]).abs() < 1e-6, "{} interval {k}", st.id);
            assert!(st.soc_kwh[k] >= spec.soc_min_kwh - 1e-6 && st.soc_kwh[k] <= spec.soc_max_kwh + 1e-6);
            assert!(st.store_kwh[k] <= spec.max_store_kw * 0.25 + 1e-6);
            assert!(st.dispatch_kwh[k] <= spec.max_dispatch_kw * 0.25 + 1e-6);
        }
    }
    for (f, br) in s.flows.iter().zip(&sc.branches) {
        assert!(f.flow_kw.iter().all(|v| v.abs() <= br.flow_limit_kw + 1e-6));
    }
    let c = cost_report(&sc, &s);
    assert!((c.total - s.objective).abs() < 1e-6, "{} vs {}", c.total, s.objective);
    assert_eq!(c, s.costs);
}

#[test]
fn confidence_raises_cost_and_reserve() {
    let sc = load_scenario(fixture("rural13.json")).unwrap();
    let mut prev = (0.0, 0.0);
    for g in [0.5, 0.9, 0.95, 0.99] {
        let (_, s) = scheduled(&sc, g);
        let now = (s.objective, s.total_reserved_kwh());
        assert!(now.0 >= prev.0 - 1e-6 && now.1 >= prev.1 - 1e-6, "{g}: {now:?} after {prev:?}");
        prev = now;
    }
}

fn one_ess() -> Scenario {
    
    single_bus(
        json!([
            {"kind": "gfr", "id": "gfr", "bus": 1, "rated_kw": 10.0},
            {"kind": "generator", "id": "pv", "bus": 1, "profile": "pv"},
            {"kind": "storage", "id": "ess", "bus": 1, "max_store_kw": 5.0, "max_dispatch_kw": 5.0,
             "soc_max_kwh": 20.0, "c_res": 0.1, "c_use": 0.001},
            {"kind": "load", "id": "crit", "bus": 1, "critical": true, "profile": "crit"}
        ]),
        json!([profile("pv", &[0.0; 30]), profile("crit", &[1.0; 30])]),
        4,
    )
}

#[test]
fn mpc_is_time_invariant_for_stationary_inputs() {
    let sc = one_ess();
    let f0 = Forecasts::from_scenario(&sc, 0, 4).unwrap();
    let b0 = conservative_bounds(&f0, &scenario_error_stats(&sc), 0.5).unwrap();
    let st = MpcState::new(0, BTreeMap::from([("ess".to_string(), 0.0)]));
    let a = mpc_step(&st, &sc, &b0, 0, &Default::default()).unwrap();
    assert!(!a.fallback);
    let f1 = Forecasts::from_scenario(&sc, 1, 4).unwrap();
    let b1 = conservative_bounds(&f1, &scenario_error_stats(&sc), 0.5).unwrap();
    let next = MpcState { measured_soc_kwh: propagate_soc(&sc, &a), ..a.clone() };
    let b = mpc_step(&next, &sc, &b1, 1, &Default::default()).unwrap();
    let ra = a.solution.as_ref().unwrap().reserved_kwh("ess").unwrap();
    let rb = b.solution.as_ref().unwrap().reserved_kwh("ess").unwrap();
    assert!((ra - 4.0).abs() < 1e-6 && (rb - ra).abs() < 1e-6);
    // The applied control steers the measured SoC to the reservation.
    assert!((a.control[0].store_kwh - 4.0).abs() < 1e-6);
    assert!((propagate_soc(&sc, &a)["ess"] - 4.0).abs() < 1e-6);
}

#[test]
fn more_generation_never_raises_reserve() {
    let mut sc = one_ess();
    let (_, low) = scheduled(&sc, 0.5);
    if let Some(p) = sc.profiles.iter_mut().find(|p| p.id == "pv") {
        p.values[1] = 0.6;
    }
    let (_, high) = scheduled(&sc, 0.5);
    assert!(high.total_reserved_kwh() <= low.total_reserved_kwh() + 1e-9);
    assert!((high.total_reserved_kwh() - 3.4).abs() < 1e-6);
}

#[test]
fn mpc_falls_back_to_previous_schedule() {
    let sc = one_ess();
    let f = Forecasts::from_scenario(&sc, 0, 4).unwrap();
    let b = conservative_bounds(&f, &scenario_error_stats(&sc), 0.5).unwrap();
    let st = MpcState::new(0, BTreeMap::new());
    let a = mpc_step(&st, &sc, &b, 0, &Default::default()).unwrap();
    // Demand that no storage or generation can meet.
    let mut bad = b.clone();
    bad.load.get_mut("crit").unwrap()[0] = 50.0;
    let next = mpc_step(&a, &sc, &bad, 0, &Default::default()).unwrap();
    assert!(next.fallback);
    assert_eq!(next.solution, a.solution);
    assert!(mpc_step(&st, &sc, &bad, 0, &Default::default()).is_err());
}
