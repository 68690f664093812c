//! Islanded operation: one max/min consensus iteration per control interval,
//! with assets ramping at one-second resolution in between.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::agents::{
    apply_activation, compute_request, compute_response, AgentKind, AgentState, Context, EssParams,
    FlexVector, GenParams, GfrParams, LoadParams,
};
use crate::consensus::{
    default_iter_max, feasible_delta_t, graph_diameter, max_consensus, min_consensus, CommGraph, Message,
    MessageSink,
};
use crate::error::{Error, Result};
use crate::grid::{Asset, Profile, Scenario};
use crate::scheduler::ScheduleSolution;

const BALANCE_TOL_KW: f64 = 1e-6;
const SOC_TOL_KWH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub delta_t_s: u32,
    pub start: NaiveDateTime,
    pub intervals: u64,
    pub threshold_kw: f64,
    pub suspend_intervals: u64,
    /// Time from measurement to activation: the two consensus phases.
    pub latency_s: f64,
    pub iter_max: Option<usize>,
    /// Overrides every asset's ramp rate when set.
    pub ramp_pu_per_s: Option<f64>,
    pub initial_loads_connected: bool,
    /// Recorded for reproducibility; the simulation itself is deterministic.
    pub seed: u64,
}

impl SimConfig {
    /// Defaults from the scenario parameters; `latency_s` is the feasible
    /// interval for the graph's diameter and the configured delays.
    pub fn from_scenario(scenario: &Scenario, graph: &CommGraph) -> Result<Self> {
        let p = &scenario.params;
        let duration = p
            .sim_duration_s
            .unwrap_or(p.horizon_intervals as u64 * p.delta_tau_s as u64);
        let diam = graph_diameter(graph)?;
        let latency_ms = feasible_delta_t(
            diam,
            p.message_delay_ms.unwrap_or(0.0),
            p.processing_margin_ms.unwrap_or(0.0),
        );
        Ok(SimConfig {
            delta_t_s: p.delta_t_s,
            start: scenario.start(),
            intervals: duration / p.delta_t_s as u64,
            threshold_kw: p.power_threshold_kw,
            suspend_intervals: p.suspend_intervals as u64,
            latency_s: latency_ms / 1000.0,
            iter_max: None,
            ramp_pu_per_s: None,
            initial_loads_connected: false,
            seed: 0,
        })
    }

    pub fn with_delta_t(mut self, delta_t_s: u32, duration_s: u64) -> Self {
        self.delta_t_s = delta_t_s;
        self.intervals = duration_s / delta_t_s as u64;
        self
    }

    pub fn is_feasible(&self) -> bool {
        self.latency_s <= self.delta_t_s as f64
    }
}

/// Moves `current` toward `target` by at most `ramp * rated * dt_s`.
/// `None` or an infinite ramp reaches the target at once.
pub fn apply_ramp_rates(current: f64, target: f64, ramp_pu_per_s: Option<f64>, dt_s: f64, rated_kw: f64) -> f64 {
    match ramp_pu_per_s {
        Some(r) if r.is_finite() => {
            let step = r * rated_kw * dt_s;
            current + (target - current).clamp(-step, step)
        }
        _ => target,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Winner {
    pub owner: String,
    pub power_kw: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssRow {
    pub soc_start_kwh: f64,
    pub soc_kwh: f64,
    pub store_kwh: f64,
    pub dispatch_kwh: f64,
    pub inflow_kwh: f64,
    pub outflow_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub interval: u64,
    /// Seconds from the start of the run.
    pub t_s: u64,
    /// Interval averages.
    pub gfr_kw: f64,
    pub shed_kw: f64,
    pub curtailed_kw: f64,
    /// Interval-average power of every asset, scenario order, GFR included.
    pub asset_kw: Vec<f64>,
    /// Connection state of each load at the end of the interval.
    pub load_connected: Vec<bool>,
    pub load_connected_s: Vec<f64>,
    pub ess: Vec<EssRow>,
    pub request: Option<Winner>,
    pub response: Option<Winner>,
    pub activated: bool,
    pub anomalies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub start: NaiveDateTime,
    pub delta_t_s: u32,
    pub asset_ids: Vec<String>,
    pub load_ids: Vec<String>,
    pub ess_ids: Vec<String>,
    pub ess_columns: Vec<String>,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Physical {
    power_kw: f64,
    setpoint_kw: f64,
    connected: bool,
    suspended_until: Option<u64>,
    soc_kwh: f64,
}

/// Per-interval exogenous inputs at the control resolution.
#[derive(Debug, Clone, PartialEq)]
enum Exogenous {
    None,
    Load(Vec<f64>),
    Gen(Vec<f64>),
    Ess { inflow_kwh: Vec<f64>, outflow_kwh: Vec<f64> },
}

#[derive(Debug, Default)]
struct Accumulator {
    energy_kwh: Vec<f64>,
    connected_s: Vec<f64>,
    shed_kwh: f64,
    curtailed_kwh: f64,
    store_kwh: Vec<f64>,
    dispatch_kwh: Vec<f64>,
    gfr_peak_kw: f64,
}

pub struct Simulation<'a> {
    scenario: &'a Scenario,
    schedule: &'a ScheduleSolution,
    config: SimConfig,
    graph: CommGraph,
    iter_max: usize,
    interval: u64,
    state: Vec<Physical>,
    exo: Vec<Exogenous>,
    preserve: Vec<f64>,
    rounds_sent: usize,
}

fn sample(profile: &Profile, start: NaiveDateTime, dt_s: u32, n: u64, clamp: bool) -> Result<Vec<f64>> {
    let res = profile.resolution_s;
    let p = if res.is_multiple_of(dt_s) || dt_s.is_multiple_of(res) {
        profile.at_resolution(dt_s, clamp)?
    } else {
        return Err(Error::Profile(format!(
            "profile {} resolution {res} s is incompatible with a {dt_s} s control interval",
            profile.id
        )));
    };
    (0..n)
        .map(|k| p.value_at(start + Duration::seconds(k as i64 * dt_s as i64)))
        .collect()
}

impl<'a> Simulation<'a> {
    pub fn new(
        scenario: &'a Scenario,
        schedule: &'a ScheduleSolution,
        graph: CommGraph,
        config: SimConfig,
    ) -> Result<Self> {
        if graph.len() != scenario.assets.len() {
            return Err(Error::Graph(format!(
                "communication graph has {} agents, scenario has {} assets",
                graph.len(),
                scenario.assets.len()
            )));
        }
        if config.delta_t_s == 0 {
            return Err(Error::Validation("control interval must be positive".into()));
        }
        let iter_max = match config.iter_max {
            Some(i) => i,
            None => default_iter_max(&graph)?,
        };
        let dt = config.delta_t_s;
        let n = config.intervals;
        let dtau = scenario.params.delta_tau_s as f64;
        let mut exo = Vec::new();
        let mut state = Vec::new();
        let mut preserve = Vec::new();
        for a in &scenario.assets {
            let mut phys = Physical {
                power_kw: 0.0,
                setpoint_kw: 0.0,
                connected: true,
                suspended_until: None,
                soc_kwh: 0.0,
            };
            let e = match a {
                Asset::Gfr(_) => Exogenous::None,
                Asset::Load(l) => {
                    let pid = l.actual_profile.as_ref().unwrap_or(&l.profile);
                    phys.connected = l.critical || config.initial_loads_connected;
                    Exogenous::Load(sample(scenario.profile(pid)?, config.start, dt, n, true)?)
                }
                Asset::Generator(g) => {
                    let pid = g.actual_profile.as_ref().unwrap_or(&g.profile);
                    Exogenous::Gen(sample(scenario.profile(pid)?, config.start, dt, n, true)?)
                }
                Asset::Storage(s) => {
                    phys.soc_kwh = s
                        .initial_soc_kwh
                        .or_else(|| schedule.soc_reference(&s.id, config.start))
                        .unwrap_or(s.soc_min_kwh)
                        .clamp(s.soc_min_kwh, s.soc_max_kwh);
                    // Flow profiles hold energy per scheduling interval.
                    let flow = |pid: &Option<String>| -> Result<Vec<f64>> {
                        match pid {
                            None => Ok(vec![0.0; n as usize]),
                            Some(pid) => Ok(sample(scenario.profile(pid)?, config.start, dt, n, true)?
                                .into_iter()
                                .map(|e| e * dt as f64 / dtau)
                                .collect()),
                        }
                    };
                    Exogenous::Ess {
                        inflow_kwh: flow(&s.inflow_profile)?,
                        outflow_kwh: flow(&s.outflow_profile)?,
                    }
                }
            };
            preserve.push(match a {
                Asset::Storage(s) => s.eta_preserve.powf(dt as f64 / dtau),
                _ => 1.0,
            });
            exo.push(e);
            state.push(phys);
        }
        let mut sim = Simulation {
            scenario,
            schedule,
            config,
            graph,
            iter_max,
            interval: 0,
            state,
            exo,
            preserve,
            rounds_sent: 0,
        };
        if n > 0 {
            sim.update_exogenous();
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn iter_max(&self) -> usize {
        self.iter_max
    }

    pub fn is_done(&self) -> bool {
        self.interval >= self.config.intervals
    }

    fn k(&self) -> usize {
        self.interval as usize
    }

    fn time(&self, offset_s: f64) -> NaiveDateTime {
        self.config.start
            + Duration::milliseconds(((self.interval as f64 * self.config.delta_t_s as f64 + offset_s) * 1000.0).round() as i64)
    }

    fn intrinsic(&self, i: usize) -> f64 {
        match &self.exo[i] {
            Exogenous::Load(v) => v[self.k()],
            _ => 0.0,
        }
    }

    fn available(&self, i: usize) -> f64 {
        match &self.exo[i] {
            Exogenous::Gen(v) => v[self.k()],
            _ => 0.0,
        }
    }

    /// Loads take their new demand, generators are capped by availability.
    fn update_exogenous(&mut self) {
        for i in 0..self.state.len() {
            match &self.scenario.assets[i] {
                Asset::Load(_) => {
                    let d = self.intrinsic(i);
                    let s = &mut self.state[i];
                    s.power_kw = if s.connected { d } else { 0.0 };
                }
                Asset::Generator(_) => {
                    let cap = -self.available(i);
                    let s = &mut self.state[i];
                    s.power_kw = s.power_kw.max(cap).min(0.0);
                }
                _ => {}
            }
        }
        self.rebalance();
    }

    fn gfr_index(&self) -> usize {
        self.scenario
            .assets
            .iter()
            .position(|a| matches!(a, Asset::Gfr(_)))
            .expect("validated scenario has a gfr")
    }

    fn rebalance(&mut self) {
        let g = self.gfr_index();
        let others: f64 = self
            .state
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != g)
            .map(|(_, s)| s.power_kw)
            .sum();
        self.state[g].power_kw = -others;
        self.state[g].setpoint_kw = -others;
    }

    fn ramp_of(&self, i: usize) -> Option<f64> {
        self.config.ramp_pu_per_s.or(match &self.scenario.assets[i] {
            Asset::Generator(g) => g.ramp_pu_per_s,
            Asset::Storage(s) => s.ramp_pu_per_s,
            _ => None,
        })
    }

    fn rated_of(&self, i: usize) -> f64 {
        match &self.scenario.assets[i] {
            Asset::Generator(g) => g.rated_kw.unwrap_or_else(|| match &self.exo[i] {
                Exogenous::Gen(v) => v.iter().copied().fold(0.0, f64::max),
                _ => 0.0,
            }),
            Asset::Storage(s) => s.rated_kw(),
            _ => 0.0,
        }
    }

    /// Integrates `duration_s` seconds in sub-steps of at most one second.
    fn advance(&mut self, duration_s: f64, acc: &mut Accumulator) {
        let mut left = duration_s;
        let assets = &self.scenario.assets;
        while left > 1e-9 {
            let h_s = left.min(1.0);
            let h = h_s / 3600.0;
            for i in 0..self.state.len() {
                match &assets[i] {
                    Asset::Generator(_) => {
                        let cap = -self.available(i);
                        let target = self.state[i].setpoint_kw.max(cap).min(0.0);
                        let p = apply_ramp_rates(self.state[i].power_kw, target, self.ramp_of(i), h_s, self.rated_of(i));
                        self.state[i].power_kw = p.max(cap).min(0.0);
                    }
                    Asset::Storage(s) => {
                        let target = self.state[i].setpoint_kw;
                        let ramped =
                            apply_ramp_rates(self.state[i].power_kw, target, self.ramp_of(i), h_s, self.rated_of(i));
                        let st = &mut self.state[i];
                        let p = if ramped > 0.0 {
                            ramped.min((s.soc_max_kwh - st.soc_kwh).max(0.0) / (s.eta_store * h))
                        } else {
                            ramped.max(-(st.soc_kwh - s.soc_min_kwh).max(0.0) * s.eta_dispatch / h)
                        };
                        st.power_kw = p;
                        if p > 0.0 {
                            st.soc_kwh += s.eta_store * p * h;
                            acc.store_kwh[i] += p * h;
                        } else {
                            st.soc_kwh += p * h / s.eta_dispatch;
                            acc.dispatch_kwh[i] -= p * h;
                        }
                    }
                    _ => {}
                }
            }
            self.rebalance();
            for i in 0..self.state.len() {
                acc.energy_kwh[i] += self.state[i].power_kw * h;
                match &assets[i] {
                    Asset::Load(l) => {
                        if self.state[i].connected {
                            acc.connected_s[i] += h_s;
                        } else if !l.critical {
                            acc.shed_kwh += self.intrinsic(i) * h;
                        }
                    }
                    Asset::Generator(_) => {
                        acc.curtailed_kwh += (self.available(i) + self.state[i].power_kw).max(0.0) * h;
                    }
                    Asset::Gfr(_) => {
                        acc.gfr_peak_kw = acc.gfr_peak_kw.max(self.state[i].power_kw.abs());
                    }
                    _ => {}
                }
            }
            left -= h_s;
        }
    }

    fn agent_states(&self) -> Vec<AgentState> {
        let dt = self.config.delta_t_s;
        let t_now = self.time(0.0);
        // Storage aims at the next boundary of the schedule's intervals.
        let elapsed = (t_now - self.schedule.start).num_milliseconds() as f64 / 1000.0;
        let dtau = self.schedule.delta_tau_s.max(1) as f64;
        let boundary = ((elapsed / dtau).floor() + 1.0) * dtau;
        let target_in_s = (boundary - elapsed).max(dt as f64);
        let t_next = self.time(target_in_s);
        self.scenario
            .assets
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let st = &self.state[i];
                let kind = match a {
                    Asset::Gfr(g) => AgentKind::Gfr(GfrParams {
                        rated_kw: g.rated_kw,
                        value_scale: g.value_scale,
                        value_exponent: g.value_exponent,
                    }),
                    Asset::Load(l) => AgentKind::Load(LoadParams {
                        critical: l.critical,
                        c_shed: l.c_shed,
                        c_sw: l.c_sw,
                        intrinsic_kw: self.intrinsic(i),
                        connected: st.connected,
                    }),
                    Asset::Generator(g) => AgentKind::Gen(GenParams {
                        c_gen: g.c_gen,
                        available_kw: self.available(i),
                    }),
                    Asset::Storage(s) => {
                        let reference = |t| self.schedule.soc_reference(&s.id, t).unwrap_or(s.soc_min_kwh);
                        AgentKind::Ess(EssParams {
                            max_store_kw: s.max_store_kw,
                            max_dispatch_kw: s.max_dispatch_kw,
                            soc_min_kwh: s.soc_min_kwh,
                            soc_max_kwh: s.soc_max_kwh,
                            eta_store: s.eta_store,
                            eta_dispatch: s.eta_dispatch,
                            c_res: s.c_res,
                            c_use: s.c_use,
                            soc_kwh: st.soc_kwh,
                            schedule_now_kwh: reference(t_now),
                            schedule_next_kwh: reference(t_next),
                            target_in_s,
                            delta_t_s: dt as f64,
                        })
                    }
                };
                AgentState {
                    id: i,
                    name: a.id().to_string(),
                    priority: self.scenario.priority(i),
                    kind,
                    power_kw: st.power_kw,
                    setpoint_kw: st.setpoint_kw,
                    suspended_until: st.suspended_until,
                }
            })
            .collect()
    }

    /// Runs one control interval. Messages of both consensus phases go to
    /// `sink`, numbered consecutively over the run.
    pub fn step(&mut self, sink: Option<&mut dyn MessageSink>) -> TraceRow {
        let n = self.state.len();
        let dt = self.config.delta_t_s as f64;
        let dtau = self.scenario.params.delta_tau_s as f64;
        let mut acc = Accumulator {
            energy_kwh: vec![0.0; n],
            connected_s: vec![0.0; n],
            store_kwh: vec![0.0; n],
            dispatch_kwh: vec![0.0; n],
            ..Default::default()
        };
        let mut anomalies = Vec::new();

        // Storage losses and exogenous flows enter at the start of the interval.
        let mut soc_start = vec![0.0; n];
        let mut flows = vec![(0.0, 0.0); n];
        for i in 0..n {
            soc_start[i] = self.state[i].soc_kwh;
            if let Exogenous::Ess {
                inflow_kwh,
                outflow_kwh,
            } = &self.exo[i]
            {
                let (fi, fo) = (inflow_kwh[self.k()], outflow_kwh[self.k()]);
                flows[i] = (fi, fo);
                self.state[i].soc_kwh = self.preserve[i] * self.state[i].soc_kwh + fi - fo;
            }
        }
        let _ = dtau;

        let ctx = Context {
            interval: self.interval,
            delta_t_s: dt,
            threshold_kw: self.config.threshold_kw,
            suspend_intervals: self.config.suspend_intervals,
        };
        let mut agents = self.agent_states();
        let requests: Vec<FlexVector> = agents.iter().map(|a| compute_request(a, &ctx)).collect();
        let mut off = OffsetSink {
            inner: sink,
            offset: self.rounds_sent,
        };
        let max_out = max_consensus(&self.graph, &requests, self.iter_max, off.as_sink());
        self.rounds_sent += max_out.rounds;
        let mut matched = None;
        if let Some(req) = max_out.winner {
            let responses: Vec<FlexVector> = agents.iter().map(|a| compute_response(a, &req, &ctx)).collect();
            off.offset = self.rounds_sent;
            let min_out = min_consensus(&self.graph, &req, &responses, self.iter_max, off.as_sink());
            self.rounds_sent += min_out.rounds;
            matched = min_out.winner.map(|resp| (req, resp));
        }

        let latency = self.config.latency_s.clamp(0.0, dt);
        self.advance(latency, &mut acc);
        let mut activated = false;
        if let Some((req, resp)) = &matched {
            let report = apply_activation(&mut agents, req, resp, &ctx);
            for (id, want, got) in report.clamped {
                anomalies.push(format!(
                    "setpoint of {} clamped from {want:.3} to {got:.3} kW",
                    self.scenario.assets[id].id()
                ));
            }
            for owner in [req.owner, resp.owner] {
                let a = &agents[owner];
                let demand = self.intrinsic(owner);
                let st = &mut self.state[owner];
                st.suspended_until = a.suspended_until;
                match &a.kind {
                    AgentKind::Load(l) => {
                        st.connected = l.connected;
                        st.power_kw = if l.connected { demand } else { 0.0 };
                        st.setpoint_kw = st.power_kw;
                    }
                    AgentKind::Gen(_) | AgentKind::Ess(_) => st.setpoint_kw = a.setpoint_kw,
                    AgentKind::Gfr(_) => {}
                }
            }
            self.rebalance();
            activated = true;
        }
        self.advance(dt - latency, &mut acc);

        let gfr = self.gfr_index();
        let rated = self.scenario.gfr().rated_kw;
        if acc.gfr_peak_kw > rated {
            anomalies.push(format!("gfr loading {:.3} kW exceeds its rating", acc.gfr_peak_kw));
        }
        let dt_h = dt / 3600.0;
        let asset_kw: Vec<f64> = acc.energy_kwh.iter().map(|e| e / dt_h).collect();
        let mut load_connected = Vec::new();
        let mut load_connected_s = Vec::new();
        let mut ess = Vec::new();
        for (i, a) in self.scenario.assets.iter().enumerate() {
            match a {
                Asset::Load(_) => {
                    load_connected.push(self.state[i].connected);
                    load_connected_s.push(acc.connected_s[i]);
                }
                Asset::Storage(s) => {
                    let soc = self.state[i].soc_kwh;
                    if soc < s.soc_min_kwh - SOC_TOL_KWH || soc > s.soc_max_kwh + SOC_TOL_KWH {
                        anomalies.push(format!("{} SoC {soc:.6} kWh outside its bounds", s.id));
                    }
                    ess.push(EssRow {
                        soc_start_kwh: soc_start[i],
                        soc_kwh: soc,
                        store_kwh: acc.store_kwh[i],
                        dispatch_kwh: acc.dispatch_kwh[i],
                        inflow_kwh: flows[i].0,
                        outflow_kwh: flows[i].1,
                    });
                }
                _ => {}
            }
        }
        let winner = |v: &FlexVector| Winner {
            owner: self.scenario.assets[v.owner].id().to_string(),
            power_kw: v.power_kw,
            value: v.value,
        };
        let row = TraceRow {
            interval: self.interval,
            t_s: self.interval * self.config.delta_t_s as u64,
            gfr_kw: asset_kw[gfr],
            shed_kw: acc.shed_kwh / dt_h,
            curtailed_kw: acc.curtailed_kwh / dt_h,
            asset_kw,
            load_connected,
            load_connected_s,
            ess,
            request: max_out.winner.as_ref().map(winner),
            response: matched.as_ref().map(|(_, r)| winner(r)),
            activated,
            anomalies,
        };
        self.interval += 1;
        if !self.is_done() {
            self.update_exogenous();
        }
        row
    }

    pub fn new_trace(&self) -> SimTrace {
        let mut load_ids = Vec::new();
        let mut ess_ids = Vec::new();
        let mut buses = Vec::new();
        for a in &self.scenario.assets {
            match a {
                Asset::Load(l) => load_ids.push(l.id.clone()),
                Asset::Storage(s) => {
                    ess_ids.push(s.id.clone());
                    buses.push(s.bus);
                }
                _ => {}
            }
        }
        let ess_columns = ess_ids
            .iter()
            .zip(&buses)
            .map(|(id, b)| {
                if buses.iter().filter(|x| *x == b).count() > 1 {
                    format!("ess_{b}_{id}_soc_kwh")
                } else {
                    format!("ess_{b}_soc_kwh")
                }
            })
            .collect();
        SimTrace {
            start: self.config.start,
            delta_t_s: self.config.delta_t_s,
            asset_ids: self.scenario.assets.iter().map(|a| a.id().to_string()).collect(),
            load_ids,
            ess_ids,
            ess_columns,
            rows: Vec::new(),
        }
    }

    pub fn run_with(&mut self, mut sink: Option<&mut dyn MessageSink>) -> SimTrace {
        let mut trace = self.new_trace();
        while !self.is_done() {
            let s: Option<&mut dyn MessageSink> = match sink {
                Some(ref mut s) => Some(&mut **s),
                None => None,
            };
            trace.rows.push(self.step(s));
        }
        trace
    }
}

/// Renumbers rounds so a log covering many intervals stays monotone.
struct OffsetSink<'s, 'o> {
    inner: Option<&'s mut (dyn MessageSink + 'o)>,
    offset: usize,
}

impl OffsetSink<'_, '_> {
    fn as_sink(&mut self) -> Option<&mut dyn MessageSink> {
        if self.inner.is_some() {
            Some(self)
        } else {
            None
        }
    }
}

impl MessageSink for OffsetSink<'_, '_> {
    fn send(&mut self, m: &Message) {
        if let Some(s) = self.inner.as_deref_mut() {
            let mut m = m.clone();
            m.round += self.offset;
            s.send(&m);
        }
    }
}

/// Runs the whole configured period.
pub fn run(scenario: &Scenario, schedule: &ScheduleSolution, graph: CommGraph, config: SimConfig) -> Result<SimTrace> {
    let mut sim = Simulation::new(scenario, schedule, graph, config)?;
    Ok(sim.run_with(None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub intervals: usize,
    pub duration_s: f64,
    pub shed_kwh: f64,
    pub curtailed_kwh: f64,
    pub gfr_mean_kw: f64,
    /// Spread of the running GFR energy integral (max minus min, from zero).
    pub gfr_energy_envelope_kwh: f64,
    pub load_downtime_s: BTreeMap<String, f64>,
    pub activations: usize,
    pub unanswered_requests: usize,
    pub anomalies: usize,
}

pub fn record_metrics(trace: &SimTrace) -> Summary {
    let dt_s = trace.delta_t_s as f64;
    let dt_h = dt_s / 3600.0;
    let mut running = 0.0;
    let (mut lo, mut hi) = (0.0_f64, 0.0_f64);
    let mut gfr_sum = 0.0;
    let mut downtime: BTreeMap<String, f64> = trace.load_ids.iter().map(|id| (id.clone(), 0.0)).collect();
    let mut summary = Summary {
        intervals: trace.rows.len(),
        duration_s: dt_s * trace.rows.len() as f64,
        shed_kwh: 0.0,
        curtailed_kwh: 0.0,
        gfr_mean_kw: 0.0,
        gfr_energy_envelope_kwh: 0.0,
        load_downtime_s: BTreeMap::new(),
        activations: 0,
        unanswered_requests: 0,
        anomalies: 0,
    };
    for row in &trace.rows {
        summary.shed_kwh += row.shed_kw * dt_h;
        summary.curtailed_kwh += row.curtailed_kw * dt_h;
        gfr_sum += row.gfr_kw;
        running += row.gfr_kw * dt_h;
        lo = lo.min(running);
        hi = hi.max(running);
        for (id, s) in trace.load_ids.iter().zip(&row.load_connected_s) {
            *downtime.get_mut(id).expect("load id") += dt_s - s;
        }
        summary.activations += row.activated as usize;
        summary.unanswered_requests += (row.request.is_some() && row.response.is_none()) as usize;
        summary.anomalies += row.anomalies.len();
    }
    if !trace.rows.is_empty() {
        summary.gfr_mean_kw = gfr_sum / trace.rows.len() as f64;
    }
    summary.gfr_energy_envelope_kwh = hi - lo;
    summary.load_downtime_s = downtime;
    summary
}

impl SimTrace {
    /// `t,gfr_kw,shed_kw,curtailed_kw,ess_<bus>_soc_kwh...,winner_req_owner,winner_resp_owner`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let err = |e: csv::Error| Error::Validation(format!("writing trace: {e}"));
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "gfr_kw".into(), "shed_kw".into(), "curtailed_kw".into()];
        header.extend(self.ess_columns.iter().cloned());
        header.push("winner_req_owner".into());
        header.push("winner_resp_owner".into());
        wr.write_record(&header).map_err(err)?;
        for row in &self.rows {
            let mut rec = vec![
                row.t_s.to_string(),
                row.gfr_kw.to_string(),
                row.shed_kw.to_string(),
                row.curtailed_kw.to_string(),
            ];
            rec.extend(row.ess.iter().map(|e| e.soc_kwh.to_string()));
            rec.push(row.request.as_ref().map(|w| w.owner.clone()).unwrap_or_default());
            rec.push(row.response.as_ref().map(|w| w.owner.clone()).unwrap_or_default());
            wr.write_record(&rec).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::Validation(format!("writing trace: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    /// (request owner, response owner) per interval; `None` marks no request
    /// or no response.
    pub fn winner_pairs(&self) -> Vec<(Option<&str>, Option<&str>)> {
        self.rows
            .iter()
            .map(|r| {
                (
                    r.request.as_ref().map(|w| w.owner.as_str()),
                    r.response.as_ref().map(|w| w.owner.as_str()),
                )
            })
            .collect()
    }
}

/// Power balance, SoC replay and storage limits over a trace. Returns one
/// message per violation.
pub fn check_conservation(scenario: &Scenario, trace: &SimTrace) -> Vec<String> {
    let mut out = Vec::new();
    let dt_h = trace.delta_t_s as f64 / 3600.0;
    let dtau = scenario.params.delta_tau_s as f64;
    let storages: Vec<_> = trace
        .ess_ids
        .iter()
        .map(|id| match scenario.asset(id) {
            Some(Asset::Storage(s)) => s.clone(),
            _ => panic!("trace storage {id} missing from scenario"),
        })
        .collect();
    let ess_index: Vec<usize> = trace
        .ess_ids
        .iter()
        .map(|id| trace.asset_ids.iter().position(|a| a == id).expect("asset"))
        .collect();
    for row in &trace.rows {
        let sum: f64 = row.asset_kw.iter().sum();
        if sum.abs() > BALANCE_TOL_KW {
            out.push(format!("interval {}: power imbalance {sum:e} kW", row.interval));
        }
        for ((s, e), &ai) in storages.iter().zip(&row.ess).zip(&ess_index) {
            let keep = s.eta_preserve.powf(trace.delta_t_s as f64 / dtau);
            let replay = keep * e.soc_start_kwh + s.eta_store * e.store_kwh - e.dispatch_kwh / s.eta_dispatch
                + e.inflow_kwh
                - e.outflow_kwh;
            if (replay - e.soc_kwh).abs() > SOC_TOL_KWH {
                out.push(format!(
                    "interval {}: {} SoC {} kWh, replay gives {replay}",
                    row.interval, s.id, e.soc_kwh
                ));
            }
            if e.soc_kwh < s.soc_min_kwh - SOC_TOL_KWH || e.soc_kwh > s.soc_max_kwh + SOC_TOL_KWH {
                out.push(format!("interval {}: {} SoC {} kWh out of bounds", row.interval, s.id, e.soc_kwh));
            }
            let p = row.asset_kw[ai];
            let net = (e.store_kwh - e.dispatch_kwh) / dt_h;
            if (p - net).abs() > BALANCE_TOL_KW {
                out.push(format!("interval {}: {} power {p} kW does not match its energy", row.interval, s.id));
            }
            if e.store_kwh > s.max_store_kw * dt_h + SOC_TOL_KWH || e.dispatch_kwh > s.max_dispatch_kw * dt_h + SOC_TOL_KWH {
                out.push(format!("interval {}: {} exceeds its power rating", row.interval, s.id));
            }
        }
    }
    out
}
