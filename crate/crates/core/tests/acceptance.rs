//! Acceptance gate: one PASS/FAIL line per criterion.

mod common;

use std::time::Instant;

use common::*;
use islandctl::consensus::{feasible_delta_t, max_consensus, min_consensus, CommGraph};
use islandctl::forecast::{conservative_bounds, scenario_error_stats, Forecasts};
use islandctl::grid::{load_scenario, Asset, Scenario};
use islandctl::scheduler::{build_problem, solve, ScheduleSolution};
use islandctl::sim::{check_conservation, record_metrics, run, SimConfig, SimTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

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

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac1_consensus() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = 200;
    for c in 0..cases {
        let n = rng.gen_range(1..=8);
        let (n, edges) = random_graph(&mut rng, n);
        let g = graph(n, &edges);
        let diam = diameter_oracle(n, &edges);
        let req = random_vectors(&mut rng, n);
        let out = max_consensus(&g, &req, diam, None);
        if !out.agreed() || out.winner != max_oracle(&req) || out.converged_after > diam {
            return Err(format!("max-consensus case {c} (n={n}, diam={diam})"));
        }
        let r = random_vectors(&mut rng, 1)[0];
        let resp = random_vectors(&mut rng, n);
        let out = min_consensus(&g, &r, &resp, diam, None);
        if !out.agreed() || out.winner != argmin_oracle(&r, &resp) || out.converged_after > diam {
            return Err(format!("min-consensus case {c} (n={n}, diam={diam})"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("{cases} graphs, both phases match oracles, {secs:.2} s"))
}

fn ac2_scheduler_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 60;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for c in 0..cases {
        let sc = tiny_instance(&mut rng);
        let f = Forecasts::from_scenario(&sc, 0, sc.params.horizon_intervals).unwrap();
        let b = conservative_bounds(&f, &scenario_error_stats(&sc), 0.5).unwrap();
        let p = build_problem(&sc, &b, 0).unwrap();
        if p.binary_count() > 3 {
            return Err(format!("instance {c} has {} binaries", p.binary_count()));
        }
        let oracle = brute_force(&p.model);
        match (solve(&sc, &p, &Default::default()), oracle) {
            (Ok(s), Some(o)) if s.costs.terminal_penalty == 0.0 => {
                worst = worst.max((s.objective - o).abs());
                compared += 1;
            }
            (Ok(s), None) if s.costs.terminal_penalty > 0.0 => {}
            (Err(_), None) => {}
            _ => return Err(format!("instance {c}: feasibility disagrees")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-6 && secs < 60.0 && compared >= 50,
        format!("{compared}/{cases} feasible instances, max |diff| {worst:.1e}, {secs:.2} s"),
    )
}

fn ac3_monotone() -> Check {
    let sc = load_scenario(fixture("rural13.json")).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for g in [0.5, 0.9, 0.95, 0.99] {
        let s = schedule_for(&sc, g);
        rows.push((s.objective, s.total_reserved_kwh()));
    }
    let ok = rows
        .windows(2)
        .all(|w| w[1].0 >= w[0].0 - 1e-6 && w[1].1 >= w[0].1 - 1e-6);
    let text: Vec<String> = rows.iter().map(|(c, r)| format!("{c:.2}/{r:.1}")).collect();
    ensure(ok, format!("cost/reserved kWh: {}", text.join(", ")))
}

fn ac4_blackstart() -> Check {
    let sc = load_scenario(fixture("blackstart.json")).map_err(|e| e.to_string())?;
    let trace = simulate(&sc, &schedule_for(&sc, 0.5));
    let mut expected = vec![(Some("gfr"), Some("ess"))];
    for l in ["load_1", "load_2", "load_3", "load_4", "load_5", "load_6", "load_8", "load_7"] {
        expected.push((Some(l), Some("ess")));
    }
    let pairs = trace.winner_pairs();
    if pairs.len() < 9 || pairs[..9] != expected[..] {
        return Err(format!("sequence {:?}", &pairs[..pairs.len().min(9)]));
    }
    let connected_at = trace
        .rows
        .iter()
        .position(|r| r.load_connected.iter().all(|&c| c))
        .ok_or("not all loads connected")?;
    let calm = trace.rows[connected_at..].iter().all(|r| r.gfr_kw.abs() < 0.5);
    ensure(
        connected_at <= 8 && calm,
        format!("all 8 loads connected after {} iterations, |GFR| < 0.5 kW thereafter", connected_at + 1),
    )
}

fn ac5_hil() -> Check {
    let sc = load_scenario(fixture("hil.json")).map_err(|e| e.to_string())?;
    let trace = simulate(&sc, &ScheduleSolution::empty(sc.start(), sc.params.delta_tau_s));
    let expected = vec![
        (Some("gfr"), Some("pv")),
        (Some("load"), Some("ess")),
        (Some("gfr"), Some("pv")),
        (Some("gfr"), Some("ess")),
        (Some("ess"), None),
        (Some("ess"), None),
    ];
    let pairs = trace.winner_pairs();
    ensure(pairs == expected, format!("{} rounds {:?}", pairs.len(), pairs))
}

fn ac6_undersupply() -> Check {
    let mut sc = load_scenario(fixture("undersupply.json")).map_err(|e| e.to_string())?;
    let schedule = schedule_for(&sc, 0.5);
    let planned = schedule.shed_kwh();
    let surplus = record_metrics(&simulate(&sc, &schedule)).shed_kwh;
    for a in sc.assets.iter_mut() {
        if let Asset::Generator(g) = a {
            g.actual_profile = None;
        }
    }
    let trace = simulate(&sc, &schedule);
    let exact = record_metrics(&trace).shed_kwh;
    // One control interval of the controllable load.
    let controllable_kw: f64 = trace.rows.iter().map(|r| r.shed_kw).fold(0.0, f64::max);
    let tol = controllable_kw * trace.delta_t_s as f64 / 3600.0;
    ensure(
        surplus <= planned && (exact - planned).abs() <= tol,
        format!(
            "planned {planned:.3} kWh; surplus actuals {surplus:.3} kWh; exact actuals {exact:.3} kWh (tol {tol:.3})"
        ),
    )
}

fn ac7_conservation() -> Check {
    let mut traces = 0;
    for (f, gamma) in [
        ("hil.json", None),
        ("blackstart.json", Some(0.5)),
        ("undersupply.json", Some(0.5)),
        ("rural13.json", Some(0.95)),
    ] {
        let sc = load_scenario(fixture(f)).map_err(|e| e.to_string())?;
        let schedule = match gamma {
            Some(g) => schedule_for(&sc, g),
            None => ScheduleSolution::empty(sc.start(), sc.params.delta_tau_s),
        };
        let v = check_conservation(&sc, &simulate(&sc, &schedule));
        if !v.is_empty() {
            return Err(format!("{f}: {}", v[0]));
        }
        traces += 1;
    }
    Ok(format!("{traces} fixture traces balanced, SoC replayed, limits held"))
}

fn ac8_feasibility() -> Check {
    let base = feasible_delta_t(10, 100.0, 0.0);
    let all = (1..=3000).all(|d| feasible_delta_t(10, d as f64, 0.0) <= 60_000.0);
    ensure(
        base == 2000.0 && all,
        format!("D=10, d=100 ms -> {base} ms; delays 1..3000 ms feasible at 60 s"),
    )
}

fn ac9_determinism() -> Check {
    let mut checked = Vec::new();
    for (f, sched) in [("hil.json", "hil_schedule.json"), ("blackstart.json", "")] {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let sched = if sched.is_empty() {
            let sc = load_scenario(fixture(f)).map_err(|e| e.to_string())?;
            let p = tmp.path().join("schedule.json");
            std::fs::write(&p, schedule_for(&sc, 0.5).to_json()).map_err(|e| e.to_string())?;
            p.display().to_string()
        } else {
            fixture(sched)
        };
        let mut outputs = Vec::new();
        for i in 0..2 {
            let out = tmp.path().join(format!("run{i}"));
            let code = islandctl::cli::main_with([
                "islandctl",
                "island",
                "--scenario",
                &fixture(f),
                "--schedule",
                &sched,
                "--out",
                out.to_str().unwrap(),
            ]);
            if code != 0 {
                return Err(format!("{f}: exit {code}"));
            }
            outputs.push(std::fs::read(out.join("trace.csv")).map_err(|e| e.to_string())?);
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{f}: traces differ"));
        }
        checked.push(f);
    }
    Ok(format!("byte-identical trace.csv for {}", checked.join(", ")))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("consensus correctness", ac1_consensus),
        ("scheduler oracle equivalence", ac2_scheduler_oracle),
        ("confidence monotonicity", ac3_monotone),
        ("blackstart sequence", ac4_blackstart),
        ("HIL winner sequence", ac5_hil),
        ("undersupply shed", ac6_undersupply),
        ("conservation", ac7_conservation),
        ("feasibility formula", ac8_feasibility),
        ("determinism", ac9_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(d) => println!("AC{} PASS {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("AC{} FAIL {name}: {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
