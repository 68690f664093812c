//! Grid topology, assets, profiles and the DC power flow.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ErrorStats;

pub const DEFAULT_C_FLOW: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Per-unit susceptance; flow = susceptance * (theta_from - theta_to).
    pub susceptance: f64,
    pub flow_limit_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub id: String,
    pub bus: u32,
    #[serde(default)]
    pub critical: bool,
    #[serde(default)]
    pub c_shed: f64,
    #[serde(default)]
    pub c_sw: f64,
    /// Forecast of the intrinsic load (kW).
    pub profile: String,
    /// Realised intrinsic load used by the simulation; defaults to `profile`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast_error: Option<ErrorStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub id: String,
    pub bus: u32,
    #[serde(default)]
    pub c_gen: f64,
    /// Forecast of available generation (kW, non-negative magnitude).
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast_error: Option<ErrorStats>,
    /// Nameplate power used as the ramp-rate base; defaults to the profile peak.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rated_kw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_pu_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    pub id: String,
    pub bus: u32,
    pub max_store_kw: f64,
    pub max_dispatch_kw: f64,
    #[serde(default)]
    pub soc_min_kwh: f64,
    pub soc_max_kwh: f64,
    #[serde(default = "one")]
    pub eta_preserve: f64,
    #[serde(default = "one")]
    pub eta_store: f64,
    #[serde(default = "one")]
    pub eta_dispatch: f64,
    /// Mandatory in-flow, kWh per scheduling interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflow_profile: Option<String>,
    /// Mandatory out-flow, kWh per scheduling interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outflow_profile: Option<String>,
    #[serde(default)]
    pub c_res: f64,
    #[serde(default)]
    pub c_use: f64,
    /// SoC at the start of islanded operation; defaults to the scheduled reservation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_soc_kwh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_pu_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u32>,
}

impl StorageSpec {
    pub fn rated_kw(&self) -> f64 {
        self.max_store_kw.max(self.max_dispatch_kw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfrSpec {
    pub id: String,
    pub bus: u32,
    pub rated_kw: f64,
    #[serde(default)]
    pub buffer_kwh: f64,
    /// V0 of the loading value curve V0 * (exp(alpha * |p| / S) - 1).
    #[serde(default = "default_value_scale")]
    pub value_scale: f64,
    /// alpha of the loading value curve.
    #[serde(default = "default_value_exponent")]
    pub value_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u32>,
}

fn one() -> f64 {
    1.0
}
fn default_value_scale() -> f64 {
    1.0
}
fn default_value_exponent() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Asset {
    Load(LoadSpec),
    Generator(GeneratorSpec),
    Storage(StorageSpec),
    Gfr(GfrSpec),
}

impl Asset {
    pub fn id(&self) -> &str {
        match self {
            Asset::Load(a) => &a.id,
            Asset::Generator(a) => &a.id,
            Asset::Storage(a) => &a.id,
            Asset::Gfr(a) => &a.id,
        }
    }

    pub fn bus(&self) -> u32 {
        match self {
            Asset::Load(a) => a.bus,
            Asset::Generator(a) => a.bus,
            Asset::Storage(a) => a.bus,
            Asset::Gfr(a) => a.bus,
        }
    }

    fn explicit_priority(&self) -> Option<u32> {
        match self {
            Asset::Load(a) => a.priority,
            Asset::Generator(a) => a.priority,
            Asset::Storage(a) => a.priority,
            Asset::Gfr(a) => a.priority,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Asset::Load(_) => "load",
            Asset::Generator(_) => "generator",
            Asset::Storage(_) => "storage",
            Asset::Gfr(_) => "gfr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub id: String,
    pub start: NaiveDateTime,
    pub resolution_s: u32,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub horizon_intervals: usize,
    pub delta_tau_s: u32,
    pub delta_t_s: u32,
    pub power_threshold_kw: f64,
    pub suspend_intervals: u32,
    /// Start of the scheduling horizon and of islanded operation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDateTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_flow: Option<f64>,
    /// Length of an islanded run; defaults to the scheduling horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_duration_s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_delay_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processing_margin_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub assets: Vec<Asset>,
    pub profiles: Vec<Profile>,
    pub params: Params,
}

/// Profile entry as written in a scenario file: inline values or a CSV file
/// path relative to the scenario.
#[derive(Deserialize)]
#[serde(untagged)]
enum ProfileEntry {
    Inline(Profile),
    Csv { id: String, csv: String },
}

#[derive(Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    assets: Vec<Asset>,
    profiles: Vec<ProfileEntry>,
    params: Params,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut profiles = Vec::with_capacity(file.profiles.len());
    for entry in file.profiles {
        profiles.push(match entry {
            ProfileEntry::Inline(p) => p,
            ProfileEntry::Csv { id, csv } => read_profile_csv(&id, base.join(csv))?,
        });
    }
    let scenario = Scenario {
        name: file.name,
        buses: file.buses,
        branches: file.branches,
        assets: file.assets,
        profiles,
        params: file.params,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn parse_scenario(json: &str) -> Result<Scenario> {
    let scenario: Scenario = serde_json::from_str(json).map_err(|e| Error::Parse {
        context: "scenario".into(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads a `timestamp,value` CSV with a header row.
pub fn read_profile_csv(id: &str, path: impl AsRef<Path>) -> Result<Profile> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut stamps = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        let line = i + 2;
        let bad = |m: String| Error::Parse {
            context: format!("{}:{line}", path.display()),
            message: m,
        };
        let ts = rec.get(0).ok_or_else(|| bad("missing timestamp".into()))?;
        let ts = parse_timestamp(ts.trim()).map_err(|e| bad(e.to_string()))?;
        let v: f64 = rec
            .get(1)
            .ok_or_else(|| bad("missing value".into()))?
            .trim()
            .parse()
            .map_err(|e| bad(format!("value: {e}")))?;
        stamps.push(ts);
        values.push(v);
    }
    if stamps.len() < 2 {
        return Err(Error::Profile(format!(
            "{}: need at least two samples",
            path.display()
        )));
    }
    let res = (stamps[1] - stamps[0]).num_seconds();
    if res <= 0 {
        return Err(Error::Profile(format!(
            "{}: timestamps must increase",
            path.display()
        )));
    }
    for (i, w) in stamps.windows(2).enumerate() {
        if (w[1] - w[0]).num_seconds() != res {
            return Err(Error::Profile(format!(
                "{}: gap or irregular step at line {}",
                path.display(),
                i + 3
            )));
        }
    }
    Ok(Profile {
        id: id.to_string(),
        start: stamps[0],
        resolution_s: res as u32,
        values,
    })
}

fn parse_timestamp(s: &str) -> std::result::Result<NaiveDateTime, chrono::ParseError> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let invalid = |m: String| Err(Error::Validation(m));
        if p.horizon_intervals == 0 {
            return invalid("horizon_intervals must be positive".into());
        }
        if p.delta_tau_s == 0 || p.delta_t_s == 0 {
            return invalid("delta_tau_s and delta_t_s must be positive".into());
        }
        if p.delta_t_s > p.delta_tau_s {
            return invalid(format!(
                "delta_t_s ({}) exceeds delta_tau_s ({})",
                p.delta_t_s, p.delta_tau_s
            ));
        }
        if !(p.power_threshold_kw >= 0.0) {
            return invalid("power_threshold_kw must be >= 0".into());
        }
        if let Some(c) = p.c_flow {
            if !(c >= 0.0) {
                return invalid("c_flow must be >= 0".into());
            }
        }

        let mut bus_ids = BTreeSet::new();
        for b in &self.buses {
            if !bus_ids.insert(b.id) {
                return invalid(format!("duplicate bus {}", b.id));
            }
        }
        if bus_ids.is_empty() {
            return invalid("no buses".into());
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !bus_ids.contains(&end) {
                    return invalid(format!(
                        "branch {}-{} references missing bus {end}",
                        br.from, br.to
                    ));
                }
            }
            if br.from == br.to {
                return invalid(format!("branch {}-{} is a self-loop", br.from, br.to));
            }
            if !(br.susceptance > 0.0) || !(br.flow_limit_kw > 0.0) {
                return invalid(format!(
                    "branch {}-{} needs positive susceptance and flow limit",
                    br.from, br.to
                ));
            }
        }
        if !self.is_connected() {
            return invalid("branch graph is not connected".into());
        }

        let profile_ids: BTreeSet<&str> = self.profiles.iter().map(|p| p.id.as_str()).collect();
        if profile_ids.len() != self.profiles.len() {
            return invalid("duplicate profile id".into());
        }
        for prof in &self.profiles {
            if prof.resolution_s == 0 || prof.values.is_empty() {
                return invalid(format!("profile {} is empty or has zero resolution", prof.id));
            }
            if prof.values.iter().any(|v| !v.is_finite()) {
                return invalid(format!("profile {} has non-finite values", prof.id));
            }
        }

        let mut asset_ids = BTreeSet::new();
        let mut gfrs = 0;
        for a in &self.assets {
            let id = a.id();
            if !asset_ids.insert(id) {
                return invalid(format!("duplicate asset id {id}"));
            }
            if !bus_ids.contains(&a.bus()) {
                return invalid(format!("asset {id} references missing bus {}", a.bus()));
            }
            let need_profile = |pid: &str| -> Result<()> {
                if profile_ids.contains(pid) {
                    Ok(())
                } else {
                    Err(Error::Validation(format!(
                        "asset {id} references missing profile {pid}"
                    )))
                }
            };
            let bad = |what: &str| Err(Error::Validation(format!("asset {id}: {what}")));
            match a {
                Asset::Load(l) => {
                    need_profile(&l.profile)?;
                    if let Some(ap) = &l.actual_profile {
                        need_profile(ap)?;
                    }
                    if !(l.c_shed >= 0.0 && l.c_sw >= 0.0) {
                        return bad("costs must be >= 0");
                    }
                    if let Some(s) = &l.forecast_error {
                        s.check(p.delta_tau_s).map_err(|e| {
                            Error::Validation(format!("asset {id}: forecast_error: {e}"))
                        })?;
                    }
                }
                Asset::Generator(g) => {
                    need_profile(&g.profile)?;
                    if let Some(ap) = &g.actual_profile {
                        need_profile(ap)?;
                    }
                    if !(g.c_gen >= 0.0) {
                        return bad("c_gen must be >= 0");
                    }
                    if matches!(g.rated_kw, Some(r) if !(r > 0.0)) {
                        return bad("rated_kw must be positive");
                    }
                    if matches!(g.ramp_pu_per_s, Some(r) if !(r > 0.0)) {
                        return bad("ramp_pu_per_s must be positive");
                    }
                    if let Some(s) = &g.forecast_error {
                        s.check(p.delta_tau_s).map_err(|e| {
                            Error::Validation(format!("asset {id}: forecast_error: {e}"))
                        })?;
                    }
                }
                Asset::Storage(s) => {
                    for pid in [&s.inflow_profile, &s.outflow_profile].into_iter().flatten() {
                        need_profile(pid)?;
                    }
                    for eta in [s.eta_preserve, s.eta_store, s.eta_dispatch] {
                        if !(eta > 0.0 && eta <= 1.0) {
                            return bad("efficiencies must lie in (0, 1]");
                        }
                    }
                    if !(s.soc_min_kwh >= 0.0 && s.soc_min_kwh <= s.soc_max_kwh) {
                        return bad("need 0 <= soc_min_kwh <= soc_max_kwh");
                    }
                    if !(s.max_store_kw >= 0.0 && s.max_dispatch_kw >= 0.0) {
                        return bad("power limits must be >= 0");
                    }
                    if !(s.c_res >= 0.0 && s.c_use >= 0.0) {
                        return bad("costs must be >= 0");
                    }
                    if let Some(soc) = s.initial_soc_kwh {
                        if !(soc >= s.soc_min_kwh && soc <= s.soc_max_kwh) {
                            return bad("initial_soc_kwh outside SoC bounds");
                        }
                    }
                    if matches!(s.ramp_pu_per_s, Some(r) if !(r > 0.0)) {
                        return bad("ramp_pu_per_s must be positive");
                    }
                }
                Asset::Gfr(g) => {
                    gfrs += 1;
                    if !(g.rated_kw > 0.0) {
                        return bad("rated_kw must be positive");
                    }
                    if !(g.buffer_kwh >= 0.0 && g.value_scale > 0.0 && g.value_exponent > 0.0) {
                        return bad("buffer, value_scale and value_exponent must be positive");
                    }
                }
            }
        }
        if gfrs != 1 {
            return invalid(format!("exactly one gfr asset required, found {gfrs}"));
        }
        let mut prios = BTreeSet::new();
        for i in 0..self.assets.len() {
            if !prios.insert(self.priority(i)) {
                return invalid(format!(
                    "asset {} has a duplicate priority {}",
                    self.assets[i].id(),
                    self.priority(i)
                ));
            }
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let adj = self.bus_adjacency();
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Adjacency by bus position (index into `buses`).
    pub fn bus_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for br in &self.branches {
            if let (Some(a), Some(b)) = (self.bus_index(br.from), self.bus_index(br.to)) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        adj
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Effective priority of asset `i`: explicit, or 1-based position.
    pub fn priority(&self, i: usize) -> u32 {
        self.assets[i].explicit_priority().unwrap_or(i as u32 + 1)
    }

    pub fn profile(&self, id: &str) -> Result<&Profile> {
        self.profiles
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::Profile(format!("unknown profile {id}")))
    }

    pub fn asset(&self, id: &str) -> Option<&Asset> {
        self.assets.iter().find(|a| a.id() == id)
    }

    pub fn gfr(&self) -> &GfrSpec {
        self.assets
            .iter()
            .find_map(|a| match a {
                Asset::Gfr(g) => Some(g),
                _ => None,
            })
            .expect("validated scenario has a gfr")
    }

    pub fn assets_at(&self, bus: u32) -> Vec<&str> {
        self.assets
            .iter()
            .filter(|a| a.bus() == bus)
            .map(|a| a.id())
            .collect()
    }

    /// Start of the horizon: `params.start` or the earliest profile start.
    pub fn start(&self) -> NaiveDateTime {
        self.params.start.unwrap_or_else(|| {
            self.profiles
                .iter()
                .map(|p| p.start)
                .min()
                .unwrap_or_default()
        })
    }

    pub fn c_flow(&self) -> f64 {
        self.params.c_flow.unwrap_or(DEFAULT_C_FLOW)
    }

    pub fn loads(&self) -> impl Iterator<Item = &LoadSpec> {
        self.assets.iter().filter_map(|a| match a {
            Asset::Load(l) => Some(l),
            _ => None,
        })
    }

    pub fn generators(&self) -> impl Iterator<Item = &GeneratorSpec> {
        self.assets.iter().filter_map(|a| match a {
            Asset::Generator(g) => Some(g),
            _ => None,
        })
    }

    pub fn storages(&self) -> impl Iterator<Item = &StorageSpec> {
        self.assets.iter().filter_map(|a| match a {
            Asset::Storage(s) => Some(s),
            _ => None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

impl Profile {
    pub fn end(&self) -> NaiveDateTime {
        self.start + chrono::Duration::seconds(self.resolution_s as i64 * self.values.len() as i64)
    }

    fn offset_s(&self, t: NaiveDateTime) -> i64 {
        (t - self.start).num_seconds()
    }

    /// Mean over `[t0, t0 + duration_s)`, treating samples as constant over
    /// their interval.
    pub fn window_mean(&self, t0: NaiveDateTime, duration_s: u32) -> Result<f64> {
        let a = self.offset_s(t0);
        let b = a + duration_s as i64;
        let res = self.resolution_s as i64;
        if a < 0 || b > res * self.values.len() as i64 || duration_s == 0 {
            return Err(Error::Profile(format!(
                "profile {} does not cover {t0} + {duration_s} s",
                self.id
            )));
        }
        let mut acc = 0.0;
        let mut t = a;
        while t < b {
            let i = (t / res) as usize;
            let seg_end = ((i as i64 + 1) * res).min(b);
            acc += self.values[i] * (seg_end - t) as f64;
            t = seg_end;
        }
        Ok(acc / duration_s as f64)
    }

    /// `n` consecutive interval means of length `step_s` starting at `t0`.
    pub fn window_means(&self, t0: NaiveDateTime, step_s: u32, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|k| {
                self.window_mean(
                    t0 + chrono::Duration::seconds(k as i64 * step_s as i64),
                    step_s,
                )
            })
            .collect()
    }

    /// Same profile at resolution `step_s`: quadratic interpolation when
    /// refining, interval means when coarsening.
    pub fn at_resolution(&self, step_s: u32, clamp_non_negative: bool) -> Result<Profile> {
        if step_s == 0 {
            return Err(Error::Profile("zero target resolution".into()));
        }
        if step_s == self.resolution_s {
            return Ok(self.clone());
        }
        if step_s < self.resolution_s {
            return interpolate_profile(self, step_s, clamp_non_negative);
        }
        if !step_s.is_multiple_of(self.resolution_s) {
            return Err(Error::Profile(format!(
                "profile {}: {} s is not a multiple of {} s",
                self.id, step_s, self.resolution_s
            )));
        }
        let k = (step_s / self.resolution_s) as usize;
        let values = self
            .values
            .chunks_exact(k)
            .map(|c| c.iter().sum::<f64>() / k as f64)
            .collect();
        Ok(Profile {
            id: self.id.clone(),
            start: self.start,
            resolution_s: step_s,
            values,
        })
    }

    /// Value of the sample covering `t`.
    pub fn value_at(&self, t: NaiveDateTime) -> Result<f64> {
        let off = self.offset_s(t);
        let i = off.div_euclid(self.resolution_s as i64);
        if off < 0 || i as usize >= self.values.len() {
            return Err(Error::Profile(format!("profile {} does not cover {t}", self.id)));
        }
        Ok(self.values[i as usize])
    }

    /// Seconds since midnight of the first sample.
    pub fn start_second_of_day(&self) -> u32 {
        self.start.num_seconds_from_midnight()
    }
}

/// Quadratic through three unit-spaced knots starting at `a`, evaluated at `u`.
fn lagrange3(y: &[f64], a: usize, u: f64) -> f64 {
    let s = u - a as f64;
    y[a] * (s - 1.0) * (s - 2.0) / 2.0 - y[a + 1] * s * (s - 2.0) + y[a + 2] * s * (s - 1.0) / 2.0
}

fn interp_at(y: &[f64], u: f64) -> f64 {
    let n = y.len();
    match n {
        1 => return y[0],
        2 => return y[0] + (y[1] - y[0]) * u,
        _ => {}
    }
    let i = (u.floor() as usize).min(n - 1);
    if i >= n - 1 {
        return lagrange3(y, n - 3, u);
    }
    // Average of the quadratics centred left and right of the segment; both
    // pass through the segment's knots and reproduce quadratics exactly.
    let mut acc = 0.0;
    let mut count = 0.0;
    if i >= 1 {
        acc += lagrange3(y, i - 1, u);
        count += 1.0;
    }
    if i + 2 < n {
        acc += lagrange3(y, i, u);
        count += 1.0;
    }
    acc / count
}

/// Piecewise-quadratic interpolation onto a finer grid. Output has
/// `len * (resolution / target)` samples covering the same time span; source
/// knots are reproduced exactly.
pub fn interpolate_profile(p: &Profile, target_s: u32, clamp_non_negative: bool) -> Result<Profile> {
    if target_s == 0 || !p.resolution_s.is_multiple_of(target_s) {
        return Err(Error::Profile(format!(
            "target resolution {target_s} s does not divide {} s",
            p.resolution_s
        )));
    }
    let k = (p.resolution_s / target_s) as usize;
    if k == 1 {
        return Ok(p.clone());
    }
    let mut values = Vec::with_capacity(p.values.len() * k);
    for i in 0..p.values.len() {
        values.push(p.values[i]);
        for j in 1..k {
            let u = i as f64 + j as f64 / k as f64;
            let v = interp_at(&p.values, u);
            values.push(if clamp_non_negative { v.max(0.0) } else { v });
        }
    }
    Ok(Profile {
        id: p.id.clone(),
        start: p.start,
        resolution_s: target_s,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlow {
    /// Voltage angle per bus, in `scenario.buses` order.
    pub angles: Vec<f64>,
    /// Flow per branch (from -> to positive), in `scenario.branches` order.
    pub flows_kw: Vec<f64>,
    /// Injections after the slack absorbed the residual.
    pub injections_kw: Vec<f64>,
}

/// DC power flow. `injections` are net injections (generation positive) per
/// bus id; the slack bus takes whatever balances the rest.
pub fn dc_power_flow(
    scenario: &Scenario,
    injections: &BTreeMap<u32, f64>,
    slack: u32,
) -> Result<PowerFlow> {
    let n = scenario.buses.len();
    let slack_idx = scenario
        .bus_index(slack)
        .ok_or_else(|| Error::PowerFlow(format!("unknown slack bus {slack}")))?;
    if !scenario.is_connected() {
        return Err(Error::PowerFlow("disconnected graph".into()));
    }
    let mut inj = vec![0.0; n];
    for (&bus, &v) in injections {
        let i = scenario
            .bus_index(bus)
            .ok_or_else(|| Error::PowerFlow(format!("injection at unknown bus {bus}")))?;
        inj[i] += v;
    }
    let others: f64 = (0..n).filter(|&i| i != slack_idx).map(|i| inj[i]).sum();
    inj[slack_idx] = -others;

    let reduced: Vec<usize> = (0..n).filter(|&i| i != slack_idx).collect();
    let pos = |i: usize| reduced.iter().position(|&r| r == i);
    let m = reduced.len();
    let mut angles = vec![0.0; n];
    if m > 0 {
        let mut b = DMatrix::<f64>::zeros(m, m);
        for br in &scenario.branches {
            let (i, j) = (
                scenario.bus_index(br.from).unwrap(),
                scenario.bus_index(br.to).unwrap(),
            );
            let (pi, pj) = (pos(i), pos(j));
            if let Some(pi) = pi {
                b[(pi, pi)] += br.susceptance;
            }
            if let Some(pj) = pj {
                b[(pj, pj)] += br.susceptance;
            }
            if let (Some(pi), Some(pj)) = (pi, pj) {
                b[(pi, pj)] -= br.susceptance;
                b[(pj, pi)] -= br.susceptance;
            }
        }
        let rhs = DVector::from_iterator(m, reduced.iter().map(|&i| inj[i]));
        let theta = b
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::PowerFlow("singular susceptance matrix".into()))?;
        for (k, &i) in reduced.iter().enumerate() {
            angles[i] = theta[k];
        }
    }
    let flows_kw = scenario
        .branches
        .iter()
        .map(|br| {
            let i = scenario.bus_index(br.from).unwrap();
            let j = scenario.bus_index(br.to).unwrap();
            br.susceptance * (angles[i] - angles[j])
        })
        .collect();
    Ok(PowerFlow {
        angles,
        flows_kw,
        injections_kw: inj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> NaiveDateTime {
        NaiveDateTime::parse_from_str("2024-08-02T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap()
    }

    fn prof(values: Vec<f64>, res: u32) -> Profile {
        Profile {
            id: "p".into(),
            start: t0(),
            resolution_s: res,
            values,
        }
    }

    #[test]
    fn constant_profile_is_a_fixed_point() {
        let out = interpolate_profile(&prof(vec![5.0; 3], 900), 60, true).unwrap();
        assert_eq!(out.values.len(), 45);
        assert!(out.values.iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn interpolant_passes_through_knots() {
        let out = interpolate_profile(&prof(vec![0.0, 4.0, 0.0], 900), 60, true).unwrap();
        assert_eq!(out.values[15], 4.0);
        assert!(out.values.iter().all(|&v| (0.0..=4.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn quadratic_trend_is_reproduced() {
        let out = interpolate_profile(&prof(vec![0.0, 1.0, 4.0, 9.0], 900), 60, false).unwrap();
        for (k, v) in out.values.iter().enumerate().take(46) {
            let u = k as f64 / 15.0;
            assert!((v - u * u).abs() < 1e-9, "k={k} v={v}");
        }
    }

    #[test]
    fn interpolation_rejects_non_divisible_resolution() {
        assert!(interpolate_profile(&prof(vec![1.0, 2.0], 900), 7, false).is_err());
    }

    #[test]
    fn window_mean_averages_partial_samples() {
        let p = prof(vec![1.0, 3.0], 60);
        assert_eq!(p.window_mean(t0(), 120).unwrap(), 2.0);
        let m = p.window_mean(t0() + chrono::Duration::seconds(30), 60).unwrap();
        assert_eq!(m, 2.0);
        assert!(p.window_mean(t0(), 180).is_err());
    }

    #[test]
    fn coarsening_takes_block_means() {
        let p = prof(vec![1.0, 3.0, 5.0, 7.0], 60);
        assert_eq!(p.at_resolution(120, false).unwrap().values, vec![2.0, 6.0]);
    }
}
