//! Regenerates the scenario files under `fixtures/`.
//!
//! `cargo run -p islandctl --example gen_fixtures`

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use islandctl::forecast::{backtest_same_as_yesterday, ErrorStats};
use islandctl::grid::Profile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const DAY: usize = 96;

fn out_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn at(day: u32, hour: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 8, day)
        .unwrap()
        .and_hms_opt(hour, 0, 0)
        .unwrap()
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn inline(id: &str, start: NaiveDateTime, res: u32, values: &[f64]) -> Value {
    json!({ "id": id, "start": start, "resolution_s": res, "values": values.iter().map(|&v| round3(v)).collect::<Vec<_>>() })
}

fn write_json(name: &str, v: &Value) {
    let path = out_dir().join(name);
    fs::write(&path, serde_json::to_string_pretty(v).unwrap() + "\n").unwrap();
    println!("wrote {}", path.display());
}

fn write_csv(dir: &Path, p: &Profile) -> String {
    let name = format!("{}.csv", p.id);
    let mut s = String::from("timestamp,value\n");
    for (k, v) in p.values.iter().enumerate() {
        let t = p.start + Duration::seconds(k as i64 * p.resolution_s as i64);
        s.push_str(&format!("{},{}\n", t.format("%Y-%m-%dT%H:%M:%S"), round3(*v)));
    }
    fs::write(dir.join(&name), s).unwrap();
    name
}

fn stats_json(s: &ErrorStats) -> Value {
    json!({
        "mu_kw": s.mu_kw.iter().map(|&v| round3(v)).collect::<Vec<_>>(),
        "sigma_kw": s.sigma_kw.iter().map(|&v| round3(v)).collect::<Vec<_>>(),
    })
}

/// Eight controllable loads and one storage unit holding far more than its
/// schedule asks for, at night.
fn blackstart() {
    let start = at(2, 0);
    let sizes = [1.5, 1.0, 2.0, 0.8, 1.2, 0.6, 1.0, 0.9];
    let c_shed = [0.62, 0.91, 0.35, 0.77, 0.48, 0.83, 0.27, 0.55];
    let mut assets = vec![
        json!({ "kind": "gfr", "id": "gfr", "bus": 1, "rated_kw": 6.0, "buffer_kwh": 2.0 }),
        json!({ "kind": "storage", "id": "ess", "bus": 1, "max_store_kw": 20.0, "max_dispatch_kw": 20.0,
                "soc_max_kwh": 40.0, "initial_soc_kwh": 30.0, "c_res": 0.1, "c_use": 0.001 }),
        json!({ "kind": "load", "id": "critical_a", "bus": 2, "critical": true, "profile": "critical_a" }),
        json!({ "kind": "load", "id": "critical_b", "bus": 3, "critical": true, "profile": "critical_b" }),
    ];
    let mut profiles = vec![
        inline("critical_a", start, 900, &[1.2; 4]),
        inline("critical_b", start, 900, &[0.8; 4]),
    ];
    for (i, (&l, &c)) in sizes.iter().zip(&c_shed).enumerate() {
        let id = format!("load_{}", i + 1);
        assets.push(json!({ "kind": "load", "id": id, "bus": 2 + (i as u32 % 2), "c_shed": c, "c_sw": 0.0001, "profile": id }));
        profiles.push(inline(&id, start, 900, &[l; 4]));
    }
    write_json(
        "blackstart.json",
        &json!({
            "name": "blackstart",
            "buses": [{ "id": 1 }, { "id": 2 }, { "id": 3 }],
            "branches": [
                { "from": 1, "to": 2, "susceptance": 10.0, "flow_limit_kw": 50.0 },
                { "from": 2, "to": 3, "susceptance": 10.0, "flow_limit_kw": 50.0 }
            ],
            "assets": assets,
            "profiles": profiles,
            "params": {
                "horizon_intervals": 4, "delta_tau_s": 900, "delta_t_s": 60,
                "power_threshold_kw": 0.5, "suspend_intervals": 15,
                "start": start, "sim_duration_s": 900
            }
        }),
    );
}

fn pv_shape(minute_of_day: f64) -> f64 {
    let h = minute_of_day / 60.0;
    if (6.0..20.0).contains(&h) {
        (PI * (h - 6.0) / 14.0).sin().powf(1.5)
    } else {
        0.0
    }
}

fn load_shape(minute_of_day: f64) -> f64 {
    let h = minute_of_day / 60.0;
    let bump = |c: f64, w: f64| (-((h - c) / w).powi(2)).exp();
    0.45 + 0.35 * bump(7.5, 1.2) + 0.6 * bump(19.5, 1.8) + 0.15 * bump(13.0, 2.0)
}

/// A day with storage too small for the night, at one-minute resolution so
/// the schedule and the simulation see the same energy.
fn undersupply() {
    let start = at(2, 0);
    let n = 24 * 60;
    let minute = |k: usize| (k % 1440) as f64;
    let pv: Vec<f64> = (0..n).map(|k| 12.0 * pv_shape(minute(k))).collect();
    let pv_actual: Vec<f64> = pv.iter().map(|v| v * 1.15).collect();
    let critical: Vec<f64> = (0..n).map(|k| 0.8 * load_shape(minute(k)) / 0.6).collect();
    let served: Vec<f64> = (0..n).map(|k| 1.5 * load_shape(minute(k)) / 0.6).collect();
    let deferrable = vec![2.0; n];
    write_json(
        "undersupply.json",
        &json!({
            "name": "undersupply",
            "buses": [{ "id": 1 }, { "id": 2 }],
            "branches": [{ "from": 1, "to": 2, "susceptance": 10.0, "flow_limit_kw": 40.0 }],
            "assets": [
                { "kind": "gfr", "id": "gfr", "bus": 1, "rated_kw": 30.0, "buffer_kwh": 5.0 },
                { "kind": "storage", "id": "ess", "bus": 1, "max_store_kw": 8.0, "max_dispatch_kw": 8.0,
                  "soc_max_kwh": 20.0, "c_res": 0.1, "c_use": 0.001 },
                { "kind": "generator", "id": "pv", "bus": 2, "c_gen": 0.0, "profile": "pv",
                  "actual_profile": "pv_actual", "rated_kw": 12.0 },
                { "kind": "load", "id": "critical", "bus": 2, "critical": true, "profile": "critical" },
                { "kind": "load", "id": "served", "bus": 2, "c_shed": 0.9, "c_sw": 0.0001, "profile": "served" },
                { "kind": "load", "id": "deferrable", "bus": 1, "c_shed": 0.02, "c_sw": 0.0001, "profile": "deferrable" }
            ],
            "profiles": [
                inline("pv", start, 60, &pv),
                inline("pv_actual", start, 60, &pv_actual),
                inline("critical", start, 60, &critical),
                inline("served", start, 60, &served),
                inline("deferrable", start, 60, &deferrable)
            ],
            "params": {
                "horizon_intervals": 96, "delta_tau_s": 900, "delta_t_s": 60,
                "power_threshold_kw": 0.5, "suspend_intervals": 15, "start": start
            }
        }),
    );
}

struct Series {
    forecast: Profile,
    actual: Profile,
    stats: ErrorStats,
}

/// Fourteen days of synthetic history before the scheduled day, one day
/// after it, and a same-as-yesterday forecast for the scheduled two days.
fn synth(id: &str, rng: &mut ChaCha8Rng, f: impl Fn(&mut ChaCha8Rng, usize, f64) -> f64) -> Series {
    let history_days = 14;
    let days = history_days + 2;
    let first = at(2, 0) - Duration::days(history_days as i64);
    let mut values = Vec::with_capacity(days * DAY);
    for d in 0..days {
        for k in 0..DAY {
            values.push(f(rng, d, (k * 15) as f64).max(0.0));
        }
    }
    let history = Profile {
        id: id.to_string(),
        start: first,
        resolution_s: 900,
        values: values[..history_days * DAY].to_vec(),
    };
    let stats = backtest_same_as_yesterday(&history).unwrap();
    let forecast = Profile {
        id: id.to_string(),
        start: at(2, 0),
        resolution_s: 900,
        values: values[(history_days - 1) * DAY..(history_days + 1) * DAY].to_vec(),
    };
    let actual = Profile {
        id: format!("{id}_actual"),
        start: at(2, 0),
        resolution_s: 900,
        values: values[history_days * DAY..].to_vec(),
    };
    Series { forecast, actual, stats }
}

/// Thirteen-bus rural feeder: 14 loads (8 controllable), 8 PV systems with
/// 468.2 kWp and four storage units with 311.5 kWh.
fn rural13() {
    let dir = out_dir().join("rural13");
    fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20240802);
    let buses: Vec<u32> = (2..=14).collect();
    let branches = [
        (2, 3), (3, 4), (4, 5), (5, 6), (6, 7),
        (2, 8), (8, 9), (9, 10), (8, 11), (11, 12),
        (2, 13), (13, 14),
    ];
    let mut assets = vec![json!({ "kind": "gfr", "id": "gfr", "bus": 2, "rated_kw": 60.0, "buffer_kwh": 10.0 })];
    let mut profiles = Vec::new();

    let storage = [(12, 146.5, 0.1, 0.001), (9, 60.0, 0.2, 0.002), (14, 55.0, 0.3, 0.003), (6, 50.0, 0.4, 0.004)];
    for (bus, cap, c_res, c_use) in storage {
        assets.push(json!({
            "kind": "storage", "id": format!("ess_{bus}"), "bus": bus,
            "max_store_kw": cap * 0.5, "max_dispatch_kw": cap * 0.5, "soc_max_kwh": cap,
            "eta_store": 0.95, "eta_dispatch": 0.95, "eta_preserve": 0.9999,
            "c_res": c_res, "c_use": c_use, "ramp_pu_per_s": 0.5
        }));
    }

    let kwp = [110.0, 85.0, 70.0, 60.0, 48.2, 40.0, 30.0, 25.0];
    let pv_bus = [4, 5, 7, 8, 10, 11, 13, 14];
    let clouds: Vec<f64> = (0..16).map(|_| rng.gen_range(0.55..1.0)).collect();
    for (i, (&p, &bus)) in kwp.iter().zip(&pv_bus).enumerate() {
        let id = format!("pv_{}", i + 1);
        let s = synth(&id, &mut rng, |r, d, m| {
            p * 0.78 * clouds[d] * pv_shape(m) * (1.0 + r.gen_range(-0.12..0.12))
        });
        let f = write_csv(&dir, &s.forecast);
        let a = write_csv(&dir, &s.actual);
        profiles.push(json!({ "id": id, "csv": format!("rural13/{f}") }));
        profiles.push(json!({ "id": s.actual.id, "csv": format!("rural13/{a}") }));
        assets.push(json!({
            "kind": "generator", "id": id, "bus": bus, "c_gen": 0.0, "profile": id,
            "actual_profile": s.actual.id, "rated_kw": p, "ramp_pu_per_s": 0.5,
            "forecast_error": stats_json(&s.stats)
        }));
    }

    // Peak power per load; those below 3 kW are critical.
    let peaks = [2.2, 7.5, 1.8, 4.0, 2.5, 6.0, 1.5, 3.5, 2.8, 5.0, 2.0, 4.5, 3.2, 8.0];
    let load_bus = [3, 3, 4, 5, 6, 7, 8, 9, 10, 10, 11, 12, 13, 14];
    for (i, (&peak, &bus)) in peaks.iter().zip(&load_bus).enumerate() {
        let id = format!("load_{}", i + 1);
        let phase: f64 = rng.gen_range(-0.7..0.7);
        let s = synth(&id, &mut rng, |r, _, m| {
            peak * load_shape((m + phase * 60.0).rem_euclid(1440.0)) / 1.05 * (1.0 + r.gen_range(-0.15..0.15))
        });
        let f = write_csv(&dir, &s.forecast);
        let a = write_csv(&dir, &s.actual);
        profiles.push(json!({ "id": id, "csv": format!("rural13/{f}") }));
        profiles.push(json!({ "id": s.actual.id, "csv": format!("rural13/{a}") }));
        let critical = peak < 3.0;
        let c_shed: f64 = if critical { 0.0 } else { round3(rng.gen_range(0.0..1.0)) };
        assets.push(json!({
            "kind": "load", "id": id, "bus": bus, "critical": critical,
            "c_shed": c_shed, "c_sw": 0.0001, "profile": id,
            "actual_profile": s.actual.id, "forecast_error": stats_json(&s.stats)
        }));
    }

    write_json(
        "rural13.json",
        &json!({
            "name": "rural13",
            "buses": buses.iter().map(|b| json!({ "id": b })).collect::<Vec<_>>(),
            "branches": branches.iter().map(|&(a, b)| json!({
                "from": a, "to": b, "susceptance": 25.0, "flow_limit_kw": 250.0
            })).collect::<Vec<_>>(),
            "assets": assets,
            "profiles": profiles,
            "params": {
                "horizon_intervals": 96, "delta_tau_s": 900, "delta_t_s": 60,
                "power_threshold_kw": 0.5, "suspend_intervals": 15, "start": at(2, 0),
                "message_delay_ms": 100.0, "processing_margin_ms": 500.0
            }
        }),
    );
}

fn main() {
    fs::create_dir_all(out_dir()).unwrap();
    blackstart();
    undersupply();
    rural13();
}
