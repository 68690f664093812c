use islandctl::consensus::CommGraph;
use islandctl::forecast::{conservative_bounds, scenario_error_stats, Forecasts};
use islandctl::grid::{load_scenario, Asset, Scenario};
use islandctl::scheduler::{build_problem, solve, ScheduleSolution};
use islandctl::sim::{check_conservation, record_metrics, run, SimConfig, SimTrace};

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn schedule_for(sc: &Scenario, gamma: f64) -> ScheduleSolution {
    let f = Forecasts::from_scenario(sc, 0, sc.params.horizon_intervals).unwrap();
    let b = conservative_bounds(&f, &scenario_error_stats(sc), gamma).unwrap();
    let p = build_problem(sc, &b, 0).unwrap();
    solve(sc, &p, &Default::default()).unwrap()
}

fn simulate(sc: &Scenario, schedule: &ScheduleSolution) -> SimTrace {
    let g = CommGraph::from_scenario(sc).unwrap();
    let cfg = SimConfig::from_scenario(sc, &g).unwrap();
    run(sc, schedule, g, cfg).unwrap()
}

#[test]
fn hil_winner_sequence() {
    let sc = load_scenario(fixture("hil.json")).unwrap();
    let schedule = ScheduleSolution::empty(sc.start(), sc.params.delta_tau_s);
    let g = CommGraph::from_scenario(&sc).unwrap();
    let cfg = SimConfig::from_scenario(&sc, &g).unwrap();
    assert_eq!(cfg.latency_s, 4.0);
    let trace = run(&sc, &schedule, g, cfg).unwrap();
    assert_eq!(
        trace.winner_pairs(),
        vec![
            (Some("gfr"), Some("pv")),
            (Some("load"), Some("ess")),
            (Some("gfr"), Some("pv")),
            (Some("gfr"), Some("ess")),
            (Some("ess"), None),
            (Some("ess"), None),
        ]
    );
    // The first GFR request covers the 3 kW critical load.
    let first = trace.rows[0].request.as_ref().unwrap();
    assert!((first.power_kw - 3.0).abs() < 1e-9);
    // The unanswered storage requests are value-free charge requests.
    for r in &trace.rows[4..] {
        assert_eq!(r.request.as_ref().unwrap().value, 0.0);
    }
    assert!(check_conservation(&sc, &trace).is_empty());
}

#[test]
fn blackstart_connects_loads_in_value_order() {
    let sc = load_scenario(fixture("blackstart.json")).unwrap();
    let schedule = schedule_for(&sc, 0.5);
    let trace = simulate(&sc, &schedule);
    let pairs = trace.winner_pairs();
    let mut expected = vec![(Some("gfr"), Some("ess"))];
    for l in ["load_1", "load_2", "load_3", "load_4", "load_5", "load_6", "load_8", "load_7"] {
        expected.push((Some(l), Some("ess")));
    }
    assert_eq!(&pairs[..9], &expected[..]);
    for r in &trace.rows[9..] {
        assert!(r.response.is_none(), "{:?}", r.response);
        assert!(r.gfr_kw.abs() < 0.5, "interval {} gfr {}", r.interval, r.gfr_kw);
    }
    let last = trace.rows.last().unwrap();
    assert!(last.load_connected.iter().all(|&c| c));
    assert!(check_conservation(&sc, &trace).is_empty());
}

#[test]
fn undersupply_shed_tracks_schedule() {
    let mut sc = load_scenario(fixture("undersupply.json")).unwrap();
    let schedule = schedule_for(&sc, 0.5);
    let scheduled = schedule.shed_kwh();
    assert!(scheduled > 1.0, "fixture must shed in the schedule");

    let trace = simulate(&sc, &schedule);
    assert!(check_conservation(&sc, &trace).is_empty());
    let with_surplus = record_metrics(&trace).shed_kwh;
    assert!(with_surplus <= scheduled + 1e-9, "{with_surplus} > {scheduled}");

    for a in sc.assets.iter_mut() {
        if let Asset::Generator(g) = a {
            g.actual_profile = None;
        }
    }
    let trace = simulate(&sc, &schedule);
    assert!(check_conservation(&sc, &trace).is_empty());
    let exact = record_metrics(&trace).shed_kwh;
    let load_kw: f64 = trace.rows.iter().map(|r| r.shed_kw).fold(0.0, f64::max);
    let tol = load_kw.max(2.0) * trace.delta_t_s as f64 / 3600.0;
    assert!((exact - scheduled).abs() <= tol, "{exact} vs {scheduled} (tol {tol})");
}

#[test]
fn rural13_trace_conserves_energy() {
    let sc = load_scenario(fixture("rural13.json")).unwrap();
    let schedule = schedule_for(&sc, 0.95);
    let trace = simulate(&sc, &schedule);
    let violations = check_conservation(&sc, &trace);
    assert!(violations.is_empty(), "{violations:?}");
    assert!(!trace.rows.is_empty());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let sc = load_scenario(fixture("blackstart.json")).unwrap();
    let schedule = schedule_for(&sc, 0.5);
    let a = simulate(&sc, &schedule).to_csv_string().unwrap();
    let b = simulate(&sc, &schedule).to_csv_string().unwrap();
    assert_eq!(a, b);
}
