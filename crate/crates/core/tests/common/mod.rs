#![allow(dead_code)]

use islandctl::agents::FlexVector;
use islandctl::consensus::CommGraph;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize) -> (usize, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        edges.push((parent, order[i]));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.2) && !edges.contains(&(a, b)) && !edges.contains(&(b, a)) {
                edges.push((a, b));
            }
        }
    }
    (n, edges)
}

/// All-pairs hop distances by Floyd-Warshall; returns the largest.
pub fn diameter_oracle(n: usize, edges: &[(usize, usize)]) -> usize {
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b) in edges {
        d[a][b] = 1;
        d[b][a] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d.iter().flatten().copied().max().unwrap_or(0)
}

/// Random vectors with unique priorities; roughly a third are empty. Values
/// are drawn from a small grid so ties actually occur.
pub fn random_vectors<R: Rng>(rng: &mut R, n: usize) -> Vec<FlexVector> {
    let mut prio: Vec<u32> = (1..=n as u32).collect();
    prio.shuffle(rng);
    (0..n)
        .map(|i| {
            if rng.gen_bool(0.3) {
                FlexVector::none(i, prio[i])
            } else {
                let mut p = rng.gen_range(-10..=10) as f64 * 0.5;
                if p == 0.0 {
                    p = 1.0;
                }
                FlexVector {
                    power_kw: p,
                    value: rng.gen_range(0..=6) as f64 * 0.25,
                    owner: i,
                    priority: prio[i],
                }
            }
        })
        .collect()
}

/// Centralised max: highest value, ties to the lowest priority integer.
pub fn max_oracle(v: &[FlexVector]) -> Option<FlexVector> {
    let mut best: Option<FlexVector> = None;
    for x in v.iter().filter(|x| !x.is_none()) {
        best = match best {
            None => Some(*x),
            Some(b) if x.value > b.value || (x.value == b.value && x.priority < b.priority) => {
                Some(*x)
            }
            keep => keep,
        };
    }
    best
}

/// Centralised argmin of |dp| + |dv| over non-empty responses.
pub fn argmin_oracle(r: &FlexVector, v: &[FlexVector]) -> Option<FlexVector> {
    let d = |a: &FlexVector| (r.power_kw - a.power_kw).abs() + (r.value - a.value).abs();
    let mut best: Option<FlexVector> = None;
    for x in v.iter().filter(|x| !x.is_none()) {
        best = match best {
            None => Some(*x),
            Some(b) if d(x) < d(&b) || (d(x) == d(&b) && x.priority < b.priority) => Some(*x),
            keep => keep,
        };
    }
    best
}

pub fn graph(n: usize, edges: &[(usize, usize)]) -> CommGraph {
    CommGraph::new(n, edges).expect("connected graph")
}

use islandctl::grid::{parse_scenario, Scenario};
use islandctl::milp::LinearModel;
use serde_json::json;

/// Random scheduling instance with at most three binary columns, one to
/// three hourly intervals and one or two buses.
pub fn tiny_instance<R: Rng>(rng: &mut R) -> Scenario {
    let h = rng.gen_range(1..=3usize);
    let two = rng.gen_bool(0.5);
    let bus = |rng: &mut R| if two && rng.gen_bool(0.5) { 2 } else { 1 };
    let series = |rng: &mut R, hi: f64| -> Vec<f64> {
        (0..h).map(|_| (rng.gen_range(0.0..hi) * 100.0f64).round() / 100.0).collect()
    };
    let mut assets = vec![json!({"kind": "gfr", "id": "gfr", "bus": 1, "rated_kw": 10.0})];
    let mut profiles = Vec::new();
    let mut profile = |id: &str, v: Vec<f64>| {
        profiles.push(json!({"id": id, "start": "2024-08-02T00:00:00", "resolution_s": 3600, "values": v}));
    };
    let g = series(rng, 6.0);
    profile("g", g);
    assets.push(json!({"kind": "generator", "id": "g", "bus": bus(rng),
        "c_gen": rng.gen_range(0.0..0.5), "profile": "g"}));
    let cap = rng.gen_range(0.0..8.0f64);
    assets.push(json!({"kind": "storage", "id": "ess", "bus": bus(rng),
        "max_store_kw": rng.gen_range(0.5..4.0), "max_dispatch_kw": rng.gen_range(0.5..4.0),
        "soc_max_kwh": cap, "eta_store": rng.gen_range(0.85..1.0), "eta_dispatch": rng.gen_range(0.85..1.0),
        "c_res": rng.gen_range(0.0..0.3), "c_use": rng.gen_range(0.0..0.05)}));
    let c = series(rng, 1.0);
    profile("crit", c);
    assets.push(json!({"kind": "load", "id": "crit", "bus": bus(rng), "critical": true, "profile": "crit"}));
    let n_loads = rng.gen_range(1..=3 / h);
    for i in 0..n_loads {
        let id = format!("l{i}");
        let v = series(rng, 3.0);
        profile(&id, v);
        assets.push(json!({"kind": "load", "id": id, "bus": bus(rng), "profile": id,
            "c_shed": rng.gen_range(0.0..2.0), "c_sw": rng.gen_range(0.0..0.2)}));
    }
    let (buses, branches) = if two {
        (
            json!([{"id": 1}, {"id": 2}]),
            json!([{"from": 1, "to": 2, "susceptance": rng.gen_range(1.0..20.0),
                    "flow_limit_kw": rng.gen_range(1.0..10.0)}]),
        )
    } else {
        (json!([{"id": 1}]), json!([]))
    };
    let doc = json!({
        "buses": buses, "branches": branches, "assets": assets, "profiles": profiles,
        "params": {"horizon_intervals": h, "delta_tau_s": 3600, "delta_t_s": 60,
                   "power_threshold_kw": 0.5, "suspend_intervals": 15,
                   "start": "2024-08-02T00:00:00"}
    });
    parse_scenario(&doc.to_string()).expect("valid tiny instance")
}

/// LP optimum of `m` with every integer column fixed to `fixed`, solved with
/// an independent simplex implementation. `None` when infeasible.
pub fn lp_with_fixed(m: &LinearModel, fixed: &[f64]) -> Option<f64> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let mut it = fixed.iter();
    let vars: Vec<_> = m
        .columns
        .iter()
        .map(|c| {
            if c.integer {
                let v = *it.next().unwrap();
                pb.add_var(c.cost, (v, v))
            } else {
                pb.add_var(c.cost, (c.lower, c.upper))
            }
        })
        .collect();
    for r in &m.constraints {
        let expr: Vec<_> = r.terms.iter().map(|&(j, k)| (vars[j], k)).collect();
        if r.lower == r.upper {
            pb.add_constraint(expr, ComparisonOp::Eq, r.lower);
            continue;
        }
        if r.lower.is_finite() {
            pb.add_constraint(expr.clone(), ComparisonOp::Ge, r.lower);
        }
        if r.upper.is_finite() {
            pb.add_constraint(expr, ComparisonOp::Le, r.upper);
        }
    }
    match pb.solve() {
        Ok(SolveOutcome::Solution(s)) => Some(s.objective() + m.objective_offset),
        Ok(SolveOutcome::Interrupted(_)) => panic!("oracle LP interrupted"),
        Err(microlp::Error::Infeasible) => None,
        Err(e) => panic!("oracle LP failed: {e}"),
    }
}

/// Best objective over all assignments of the integer columns.
pub fn brute_force(m: &LinearModel) -> Option<f64> {
    let n = m.integer_columns().len();
    (0..1u32 << n)
        .filter_map(|mask| {
            let fixed: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
            lp_with_fixed(m, &fixed)
        })
        .min_by(f64::total_cmp)
}
