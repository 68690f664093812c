//! Storage reservation scheduling: a chance-constrained DC-OPF MILP over the
//! islanded horizon, and the receding-horizon loop around it.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ConservativeBounds;
use crate::grid::{Scenario, StorageSpec};
use crate::milp::{self, LinearModel, Outcome, SolveOptions};

/// Objective weight on energy left in storage at the end of the horizon.
/// Large enough that a zero terminal SoC is chosen whenever it is feasible.
pub const TERMINAL_PENALTY_PER_KWH: f64 = 1e4;

#[derive(Debug, Clone)]
pub struct StorageVars {
    pub id: String,
    pub bus: u32,
    /// SoC at interval boundaries 0..=H; index 0 is the reservation.
    pub soc: Vec<usize>,
    pub store: Vec<usize>,
    pub dispatch: Vec<usize>,
    pub inflow_kwh: Vec<f64>,
    pub outflow_kwh: Vec<f64>,
    pub spec: StorageSpec,
}

#[derive(Debug, Clone)]
pub struct GeneratorVars {
    pub id: String,
    pub bus: u32,
    pub c_gen: f64,
    pub output: Vec<usize>,
    pub upper_kw: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadVars {
    pub id: String,
    pub bus: u32,
    pub critical: bool,
    pub c_shed: f64,
    pub c_sw: f64,
    pub initial_state: bool,
    pub intrinsic_kw: Vec<f64>,
    /// Connection state columns; `None` for critical loads (always on).
    pub state: Option<Vec<usize>>,
    pub switch: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct BranchVars {
    pub from: u32,
    pub to: u32,
    pub limit_kw: f64,
    pub forward: Vec<usize>,
    pub backward: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SchedulingProblem {
    pub model: LinearModel,
    pub start: NaiveDateTime,
    pub first_interval: usize,
    pub delta_tau_s: u32,
    pub horizon: usize,
    pub confidence: f64,
    pub c_flow: f64,
    pub storage: Vec<StorageVars>,
    pub generators: Vec<GeneratorVars>,
    pub loads: Vec<LoadVars>,
    pub branches: Vec<BranchVars>,
    /// Angle column per bus (scenario order) and interval; `None` at the slack.
    pub angles: Vec<Vec<Option<usize>>>,
    /// Terminal SoC is penalised instead of pinned to zero.
    pub terminal_relaxed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ProblemOptions {
    /// Load connection state before the first interval; loads not listed are
    /// taken as connected.
    pub initial_load_state: BTreeMap<String, bool>,
}

impl SchedulingProblem {
    pub fn delta_tau_h(&self) -> f64 {
        self.delta_tau_s as f64 / 3600.0
    }

    pub fn binary_count(&self) -> usize {
        self.model.integer_columns().len()
    }

    /// Replaces the zero terminal SoC by a penalty on whatever is left.
    pub fn relax_terminal(&mut self) {
        for s in &self.storage {
            let col = &mut self.model.columns[*s.soc.last().unwrap()];
            col.lower = s.spec.soc_min_kwh;
            col.upper = s.spec.soc_max_kwh;
            col.cost = TERMINAL_PENALTY_PER_KWH;
        }
        self.terminal_relaxed = true;
    }
}

pub fn build_problem(scenario: &Scenario, bounds: &ConservativeBounds, t: usize) -> Result<SchedulingProblem> {
    build_problem_with(scenario, bounds, t, &ProblemOptions::default())
}

pub fn build_problem_with(
    scenario: &Scenario,
    bounds: &ConservativeBounds,
    t: usize,
    opts: &ProblemOptions,
) -> Result<SchedulingProblem> {
    let dtau = scenario.params.delta_tau_s;
    let h = bounds.horizon();
    if h == 0 {
        return Err(Error::Schedule("bounds cover no intervals".into()));
    }
    if bounds.delta_tau_s != dtau {
        return Err(Error::Schedule("bounds resolution differs from the scenario".into()));
    }
    let start = scenario.start() + Duration::seconds(t as i64 * dtau as i64);
    if bounds.start != start {
        return Err(Error::Schedule(format!(
            "bounds start at {} but interval {t} starts at {start}",
            bounds.start
        )));
    }
    let hours = dtau as f64 / 3600.0;
    let mut m = LinearModel::default();

    let mut storage = Vec::new();
    for s in scenario.storages() {
        let flow = |pid: &Option<String>| -> Result<Vec<f64>> {
            match pid {
                None => Ok(vec![0.0; h]),
                Some(pid) => {
                    let p = scenario.profile(pid)?;
                    if p.resolution_s != dtau {
                        return Err(Error::Schedule(format!(
                            "flow profile {pid} must have the scheduling resolution"
                        )));
                    }
                    p.window_means(start, dtau, h)
                }
            }
        };
        let inflow = flow(&s.inflow_profile)?;
        let outflow = flow(&s.outflow_profile)?;
        let soc: Vec<usize> = (0..=h)
            .map(|k| {
                let cost = if k == 0 { s.c_res } else { 0.0 };
                // The final boundary starts pinned to zero (no energy left over).
                let upper = if k == h { 0.0 } else { s.soc_max_kwh };
                m.add_column(format!("soc[{}][{k}]", s.id), s.soc_min_kwh, upper, cost)
            })
            .collect();
        let store: Vec<usize> = (0..h)
            .map(|k| {
                m.add_column(
                    format!("store[{}][{k}]", s.id),
                    0.0,
                    s.max_store_kw * hours,
                    s.c_use * s.eta_store,
                )
            })
            .collect();
        let dispatch: Vec<usize> = (0..h)
            .map(|k| {
                m.add_column(
                    format!("dispatch[{}][{k}]", s.id),
                    0.0,
                    s.max_dispatch_kw * hours,
                    s.c_use / s.eta_dispatch,
                )
            })
            .collect();
        for k in 0..h {
            m.add_equality(
                format!("soc_recursion[{}][{k}]", s.id),
                inflow[k] - outflow[k],
                vec![
                    (soc[k + 1], 1.0),
                    (soc[k], -s.eta_preserve),
                    (store[k], -s.eta_store),
                    (dispatch[k], 1.0 / s.eta_dispatch),
                ],
            );
        }
        storage.push(StorageVars {
            id: s.id.clone(),
            bus: s.bus,
            soc,
            store,
            dispatch,
            inflow_kwh: inflow,
            outflow_kwh: outflow,
            spec: s.clone(),
        });
    }

    let mut generators = Vec::new();
    for g in scenario.generators() {
        let upper = bounds
            .generation
            .get(&g.id)
            .ok_or_else(|| Error::Schedule(format!("no generation bound for {}", g.id)))?;
        if upper.len() != h {
            return Err(Error::Schedule(format!("bound length mismatch for {}", g.id)));
        }
        let output = (0..h)
            .map(|k| m.add_column(format!("gen[{}][{k}]", g.id), 0.0, upper[k], g.c_gen * hours))
            .collect();
        generators.push(GeneratorVars {
            id: g.id.clone(),
            bus: g.bus,
            c_gen: g.c_gen,
            output,
            upper_kw: upper.clone(),
        });
    }

    let mut loads = Vec::new();
    for l in scenario.loads() {
        let intrinsic = bounds
            .load
            .get(&l.id)
            .ok_or_else(|| Error::Schedule(format!("no load bound for {}", l.id)))?;
        if intrinsic.len() != h {
            return Err(Error::Schedule(format!("bound length mismatch for {}", l.id)));
        }
        let initial = opts.initial_load_state.get(&l.id).copied().unwrap_or(true);
        let (state, switch) = if l.critical {
            (None, None)
        } else {
            let mut st = Vec::with_capacity(h);
            let mut sw = Vec::with_capacity(h);
            for k in 0..h {
                // shed cost c_shed * l * (1 - s): constant part to the offset
                let shed = l.c_shed * intrinsic[k] * hours;
                m.objective_offset += shed;
                st.push(m.add_binary(format!("state[{}][{k}]", l.id), -shed));
                sw.push(m.add_column(format!("switch[{}][{k}]", l.id), 0.0, f64::INFINITY, l.c_sw));
            }
            for k in 0..h {
                // switch >= |s_k - s_{k-1}|
                let (prev_col, prev_const) = if k == 0 {
                    (None, if initial { 1.0 } else { 0.0 })
                } else {
                    (Some(st[k - 1]), 0.0)
                };
                let mut up = vec![(sw[k], 1.0), (st[k], -1.0)];
                let mut down = vec![(sw[k], 1.0), (st[k], 1.0)];
                if let Some(p) = prev_col {
                    up.push((p, 1.0));
                    down.push((p, -1.0));
                }
                m.add_constraint(format!("switch_up[{}][{k}]", l.id), -prev_const, f64::INFINITY, up);
                m.add_constraint(format!("switch_down[{}][{k}]", l.id), prev_const, f64::INFINITY, down);
            }
            (Some(st), Some(sw))
        };
        loads.push(LoadVars {
            id: l.id.clone(),
            bus: l.bus,
            critical: l.critical,
            c_shed: l.c_shed,
            c_sw: l.c_sw,
            initial_state: initial,
            intrinsic_kw: intrinsic.clone(),
            state,
            switch,
        });
    }

    let c_flow = scenario.c_flow();
    let mut branches = Vec::new();
    for br in &scenario.branches {
        let forward = (0..h)
            .map(|k| m.add_column(format!("flow+[{}-{}][{k}]", br.from, br.to), 0.0, br.flow_limit_kw, c_flow))
            .collect();
        let backward = (0..h)
            .map(|k| m.add_column(format!("flow-[{}-{}][{k}]", br.from, br.to), 0.0, br.flow_limit_kw, c_flow))
            .collect();
        branches.push(BranchVars {
            from: br.from,
            to: br.to,
            limit_kw: br.flow_limit_kw,
            forward,
            backward,
        });
    }

    let slack = scenario.gfr().bus;
    let angles: Vec<Vec<Option<usize>>> = scenario
        .buses
        .iter()
        .map(|b| {
            (0..h)
                .map(|k| {
                    if b.id == slack || scenario.branches.is_empty() {
                        None
                    } else {
                        Some(m.add_column(
                            format!("theta[{}][{k}]", b.id),
                            f64::NEG_INFINITY,
                            f64::INFINITY,
                            0.0,
                        ))
                    }
                })
                .collect()
        })
        .collect();

    for (bi, br) in branches.iter().enumerate() {
        let b = scenario.branches[bi].susceptance;
        let from = scenario.bus_index(br.from).unwrap();
        let to = scenario.bus_index(br.to).unwrap();
        for k in 0..h {
            let mut terms = vec![(br.forward[k], 1.0), (br.backward[k], -1.0)];
            if let Some(a) = angles[from][k] {
                terms.push((a, -b));
            }
            if let Some(a) = angles[to][k] {
                terms.push((a, b));
            }
            m.add_equality(format!("flow_def[{}-{}][{k}]", br.from, br.to), 0.0, terms);
        }
    }

    // Nodal balance (kW): outgoing - incoming flow = g - l + (dispatch - store) / dtau
    for bus in &scenario.buses {
        for k in 0..h {
            let mut terms = Vec::new();
            let mut rhs = 0.0;
            for br in &branches {
                if br.from == bus.id {
                    terms.push((br.forward[k], 1.0));
                    terms.push((br.backward[k], -1.0));
                }
                if br.to == bus.id {
                    terms.push((br.forward[k], -1.0));
                    terms.push((br.backward[k], 1.0));
                }
            }
            for g in generators.iter().filter(|g| g.bus == bus.id) {
                terms.push((g.output[k], -1.0));
            }
            for l in loads.iter().filter(|l| l.bus == bus.id) {
                match &l.state {
                    Some(st) => terms.push((st[k], l.intrinsic_kw[k])),
                    None => rhs -= l.intrinsic_kw[k],
                }
            }
            for s in storage.iter().filter(|s| s.bus == bus.id) {
                terms.push((s.dispatch[k], -1.0 / hours));
                terms.push((s.store[k], 1.0 / hours));
            }
            m.add_equality(format!("balance[{}][{k}]", bus.id), rhs, terms);
        }
    }

    let mut problem = SchedulingProblem {
        model: m,
        start,
        first_interval: t,
        delta_tau_s: dtau,
        horizon: h,
        confidence: bounds.confidence,
        c_flow,
        storage,
        generators,
        loads,
        branches,
        angles,
        terminal_relaxed: false,
    };
    if problem.storage.iter().any(|s| s.spec.soc_min_kwh > 0.0) {
        problem.relax_terminal();
    }
    Ok(problem)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub c_gen: f64,
    pub c_ess: f64,
    pub c_load: f64,
    pub c_pf: f64,
    pub terminal_penalty: f64,
    pub total: f64,
    pub unserved_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSchedule {
    pub id: String,
    pub bus: u32,
    pub soc_kwh: Vec<f64>,
    pub store_kwh: Vec<f64>,
    pub dispatch_kwh: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSchedule {
    pub id: String,
    pub bus: u32,
    pub critical: bool,
    pub initial_state: bool,
    pub intrinsic_kw: Vec<f64>,
    pub state: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSchedule {
    pub id: String,
    pub bus: u32,
    pub gen_kw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSchedule {
    pub from: u32,
    pub to: u32,
    pub flow_kw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSolution {
    pub start: NaiveDateTime,
    pub delta_tau_s: u32,
    pub horizon_intervals: usize,
    pub confidence: f64,
    pub objective: f64,
    pub mip_gap: f64,
    pub costs: CostBreakdown,
    pub storage: Vec<StorageSchedule>,
    pub loads: Vec<LoadSchedule>,
    pub generators: Vec<GeneratorSchedule>,
    pub flows: Vec<FlowSchedule>,
}

impl ScheduleSolution {
    /// A schedule that reserves nothing.
    pub fn empty(start: NaiveDateTime, delta_tau_s: u32) -> Self {
        ScheduleSolution {
            start,
            delta_tau_s,
            horizon_intervals: 0,
            confidence: 0.5,
            objective: 0.0,
            mip_gap: 0.0,
            costs: CostBreakdown::default(),
            storage: Vec::new(),
            loads: Vec::new(),
            generators: Vec::new(),
            flows: Vec::new(),
        }
    }

    pub fn storage(&self, id: &str) -> Option<&StorageSchedule> {
        self.storage.iter().find(|s| s.id == id)
    }

    pub fn reserved_kwh(&self, id: &str) -> Option<f64> {
        self.storage(id).map(|s| s.soc_kwh[0])
    }

    pub fn total_reserved_kwh(&self) -> f64 {
        self.storage.iter().map(|s| s.soc_kwh[0]).sum()
    }

    /// Scheduled SoC of `id` at `t`, linear between interval boundaries and
    /// held beyond either end. `None` when the asset is not scheduled.
    pub fn soc_reference(&self, id: &str, t: NaiveDateTime) -> Option<f64> {
        let s = self.storage(id)?;
        let x = (t - self.start).num_milliseconds() as f64 / 1000.0 / self.delta_tau_s as f64;
        let last = s.soc_kwh.len() - 1;
        if x <= 0.0 {
            return Some(s.soc_kwh[0]);
        }
        if x >= last as f64 {
            return Some(s.soc_kwh[last]);
        }
        let i = x.floor() as usize;
        let f = x - i as f64;
        Some(s.soc_kwh[i] + f * (s.soc_kwh[i + 1] - s.soc_kwh[i]))
    }

    pub fn shed_kwh(&self) -> f64 {
        self.costs.unserved_kwh
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            context: "schedule".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// `asset,interval,soc_kwh,state,gen_kw`; storage rows cover the H+1
    /// boundaries, loads and generators the H intervals.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Schedule(e.to_string());
        wr.write_record(["asset", "interval", "soc_kwh", "state", "gen_kw"])
            .map_err(err)?;
        for s in &self.storage {
            for (k, v) in s.soc_kwh.iter().enumerate() {
                wr.write_record([s.id.clone(), k.to_string(), v.to_string(), String::new(), String::new()])
                    .map_err(err)?;
            }
        }
        for l in &self.loads {
            for (k, v) in l.state.iter().enumerate() {
                wr.write_record([l.id.clone(), k.to_string(), String::new(), v.to_string(), String::new()])
                    .map_err(err)?;
            }
        }
        for g in &self.generators {
            for (k, v) in g.gen_kw.iter().enumerate() {
                wr.write_record([g.id.clone(), k.to_string(), String::new(), String::new(), v.to_string()])
                    .map_err(err)?;
            }
        }
        wr.flush().map_err(|e| Error::Schedule(e.to_string()))
    }
}

/// Recomputes every cost term from the schedule arrays.
pub fn cost_report(scenario: &Scenario, sol: &ScheduleSolution) -> CostBreakdown {
    let hours = sol.delta_tau_s as f64 / 3600.0;
    let mut c = CostBreakdown::default();
    for g in &sol.generators {
        if let Some(crate::grid::Asset::Generator(spec)) = scenario.asset(&g.id) {
            c.c_gen += g.gen_kw.iter().map(|v| spec.c_gen * v * hours).sum::<f64>();
        }
    }
    for s in &sol.storage {
        if let Some(crate::grid::Asset::Storage(spec)) = scenario.asset(&s.id) {
            c.c_ess += spec.c_res * s.soc_kwh[0];
            c.c_ess += s
                .store_kwh
                .iter()
                .zip(&s.dispatch_kwh)
                .map(|(st, d)| spec.c_use * (spec.eta_store * st + d / spec.eta_dispatch))
                .sum::<f64>();
            c.terminal_penalty += TERMINAL_PENALTY_PER_KWH * s.soc_kwh.last().copied().unwrap_or(0.0);
        }
    }
    for l in &sol.loads {
        if l.critical {
            continue;
        }
        if let Some(crate::grid::Asset::Load(spec)) = scenario.asset(&l.id) {
            let mut prev = if l.initial_state { 1.0 } else { 0.0 };
            for (k, &s) in l.state.iter().enumerate() {
                let s = s as f64;
                let shed = (1.0 - s) * l.intrinsic_kw[k] * hours;
                c.unserved_kwh += shed;
                c.c_load += spec.c_shed * shed + spec.c_sw * (s - prev).abs();
                prev = s;
            }
        }
    }
    let c_flow = scenario.c_flow();
    c.c_pf = sol
        .flows
        .iter()
        .flat_map(|f| f.flow_kw.iter())
        .map(|f| c_flow * f.abs())
        .sum();
    c.total = c.c_gen + c.c_ess + c.c_load + c.c_pf + c.terminal_penalty;
    c
}

fn extract(p: &SchedulingProblem, x: &[f64], objective: f64, mip_gap: f64) -> ScheduleSolution {
    let storage = p
        .storage
        .iter()
        .map(|s| StorageSchedule {
            id: s.id.clone(),
            bus: s.bus,
            soc_kwh: s.soc.iter().map(|&j| x[j]).collect(),
            store_kwh: s.store.iter().map(|&j| x[j]).collect(),
            dispatch_kwh: s.dispatch.iter().map(|&j| x[j]).collect(),
        })
        .collect();
    let loads = p
        .loads
        .iter()
        .map(|l| LoadSchedule {
            id: l.id.clone(),
            bus: l.bus,
            critical: l.critical,
            initial_state: l.initial_state,
            intrinsic_kw: l.intrinsic_kw.clone(),
            state: match &l.state {
                Some(st) => st.iter().map(|&j| x[j].round() as u8).collect(),
                None => vec![1; p.horizon],
            },
        })
        .collect();
    let generators = p
        .generators
        .iter()
        .map(|g| GeneratorSchedule {
            id: g.id.clone(),
            bus: g.bus,
            gen_kw: g.output.iter().map(|&j| x[j]).collect(),
        })
        .collect();
    let flows = p
        .branches
        .iter()
        .map(|b| FlowSchedule {
            from: b.from,
            to: b.to,
            flow_kw: b
                .forward
                .iter()
                .zip(&b.backward)
                .map(|(&f, &r)| x[f] - x[r])
                .collect(),
        })
        .collect();
    ScheduleSolution {
        start: p.start,
        delta_tau_s: p.delta_tau_s,
        horizon_intervals: p.horizon,
        confidence: p.confidence,
        objective,
        mip_gap,
        costs: CostBreakdown::default(),
        storage,
        loads,
        generators,
        flows,
    }
}

/// Solves the problem; if the zero terminal SoC makes it infeasible, retries
/// once with the terminal condition relaxed to a penalty.
pub fn solve(scenario: &Scenario, p: &SchedulingProblem, opts: &SolveOptions) -> Result<ScheduleSolution> {
    let finish = |p: &SchedulingProblem, s: milp::MilpSolution| {
        let mut sol = extract(p, &s.values, s.objective, s.mip_gap);
        sol.costs = cost_report(scenario, &sol);
        sol
    };
    match milp::solve(&p.model, opts) {
        Ok(s) => Ok(finish(p, s)),
        Err((Outcome::Infeasible, _)) if !p.terminal_relaxed && !p.storage.is_empty() => {
            let mut relaxed = p.clone();
            relaxed.relax_terminal();
            match milp::solve(&relaxed.model, opts) {
                Ok(s) => {
                    log::warn!("zero terminal SoC infeasible; solved with a terminal penalty");
                    Ok(finish(&relaxed, s))
                }
                Err((Outcome::Infeasible, _)) => Err(Error::Infeasible(diagnose_infeasibility(p))),
                Err(e) => Err(milp::solver_error(e)),
            }
        }
        Err((Outcome::Infeasible, _)) => Err(Error::Infeasible(diagnose_infeasibility(p))),
        Err(e) => Err(milp::solver_error(e)),
    }
}

/// Cheap necessary-condition checks that point at likely causes when the
/// solver reports infeasibility.
pub fn diagnose_infeasibility(p: &SchedulingProblem) -> Vec<String> {
    let hours = p.delta_tau_h();
    let mut out = Vec::new();
    let critical_at = |k: usize, bus: Option<u32>| -> f64 {
        p.loads
            .iter()
            .filter(|l| l.critical && bus.is_none_or(|b| l.bus == b))
            .map(|l| l.intrinsic_kw[k])
            .sum()
    };
    for k in 0..p.horizon {
        let supply: f64 = p.generators.iter().map(|g| g.upper_kw[k]).sum::<f64>()
            + p.storage.iter().map(|s| s.spec.max_dispatch_kw).sum::<f64>();
        let need = critical_at(k, None);
        if need > supply + 1e-9 {
            out.push(format!(
                "interval {k}: critical load {need:.3} kW exceeds generation plus dispatch capability {supply:.3} kW"
            ));
        }
    }
    let energy_need: f64 = (0..p.horizon).map(|k| critical_at(k, None) * hours).sum();
    let energy_avail: f64 = p
        .generators
        .iter()
        .map(|g| g.upper_kw.iter().sum::<f64>() * hours)
        .sum::<f64>()
        + p.storage
            .iter()
            .map(|s| {
                (s.spec.soc_max_kwh - s.spec.soc_min_kwh) * s.spec.eta_dispatch
                    + s.inflow_kwh.iter().sum::<f64>()
                    - s.outflow_kwh.iter().sum::<f64>()
            })
            .sum::<f64>();
    if energy_need > energy_avail + 1e-9 {
        out.push(format!(
            "critical energy {energy_need:.3} kWh exceeds usable generation and storage {energy_avail:.3} kWh"
        ));
    }
    let buses: std::collections::BTreeSet<u32> = p.loads.iter().map(|l| l.bus).collect();
    for bus in buses {
        let import: f64 = p
            .branches
            .iter()
            .filter(|b| b.from == bus || b.to == bus)
            .map(|b| b.limit_kw)
            .sum();
        for k in 0..p.horizon {
            let local: f64 = p
                .generators
                .iter()
                .filter(|g| g.bus == bus)
                .map(|g| g.upper_kw[k])
                .sum::<f64>()
                + p.storage
                    .iter()
                    .filter(|s| s.bus == bus)
                    .map(|s| s.spec.max_dispatch_kw)
                    .sum::<f64>();
            let need = critical_at(k, Some(bus));
            if !p.branches.is_empty() && need > local + import + 1e-9 {
                out.push(format!(
                    "bus {bus} interval {k}: critical load {need:.3} kW exceeds local supply plus branch limits {:.3} kW",
                    local + import
                ));
                break;
            }
        }
    }
    for s in &p.storage {
        let mandatory: f64 = s.inflow_kwh.iter().sum::<f64>() - s.outflow_kwh.iter().sum::<f64>();
        let drain = s.spec.max_dispatch_kw * hours * p.horizon as f64 / s.spec.eta_dispatch;
        if mandatory > drain + s.spec.soc_max_kwh {
            out.push(format!(
                "storage {}: mandatory in-flow {mandatory:.3} kWh cannot be dispatched before the terminal condition",
                s.id
            ));
        }
    }
    if out.is_empty() {
        out.push("no single cause identified; check bounds, SoC limits and flow limits".into());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageControl {
    pub id: String,
    pub store_kwh: f64,
    pub dispatch_kwh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcState {
    /// Scheduling interval index the state refers to.
    pub t: usize,
    pub solution: Option<ScheduleSolution>,
    pub measured_soc_kwh: BTreeMap<String, f64>,
    pub control: Vec<StorageControl>,
    /// Set when the latest re-solve failed and the previous schedule is reused.
    pub fallback: bool,
}

impl MpcState {
    pub fn new(t: usize, measured_soc_kwh: BTreeMap<String, f64>) -> Self {
        MpcState {
            t,
            solution: None,
            measured_soc_kwh,
            control: Vec::new(),
            fallback: false,
        }
    }
}

/// Re-solves the horizon starting at `t` and derives the grid-connected
/// store/dispatch control that steers each measured SoC toward its fresh
/// reservation within one interval, limited by the storage power ratings.
pub fn mpc_step(
    state: &MpcState,
    scenario: &Scenario,
    bounds: &ConservativeBounds,
    t: usize,
    opts: &SolveOptions,
) -> Result<MpcState> {
    let fresh = build_problem(scenario, bounds, t).and_then(|p| solve(scenario, &p, opts));
    let (solution, fallback) = match fresh {
        Ok(s) => (s, false),
        Err(e) => match &state.solution {
            Some(prev) => {
                log::warn!("re-solve at interval {t} failed ({e}); keeping previous schedule");
                (prev.clone(), true)
            }
            None => return Err(e),
        },
    };
    let hours = scenario.params.delta_tau_s as f64 / 3600.0;
    let mut control = Vec::new();
    for s in scenario.storages() {
        let measured = state
            .measured_soc_kwh
            .get(&s.id)
            .copied()
            .unwrap_or(s.soc_min_kwh);
        let target = solution.reserved_kwh(&s.id).unwrap_or(s.soc_min_kwh);
        let delta = target - s.eta_preserve * measured;
        let (store, dispatch) = if delta >= 0.0 {
            ((delta / s.eta_store).min(s.max_store_kw * hours), 0.0)
        } else {
            (0.0, (-delta * s.eta_dispatch).min(s.max_dispatch_kw * hours))
        };
        control.push(StorageControl {
            id: s.id.clone(),
            store_kwh: store,
            dispatch_kwh: dispatch,
        });
    }
    Ok(MpcState {
        t,
        solution: Some(solution),
        measured_soc_kwh: state.measured_soc_kwh.clone(),
        control,
        fallback,
    })
}

/// SoC after applying the state's control for one interval without
/// disturbance.
pub fn propagate_soc(scenario: &Scenario, state: &MpcState) -> BTreeMap<String, f64> {
    let mut out = state.measured_soc_kwh.clone();
    for c in &state.control {
        if let Some(crate::grid::Asset::Storage(s)) = scenario.asset(&c.id) {
            let m = out.get(&c.id).copied().unwrap_or(s.soc_min_kwh);
            let next = s.eta_preserve * m + s.eta_store * c.store_kwh - c.dispatch_kwh / s.eta_dispatch;
            out.insert(c.id.clone(), next.clamp(s.soc_min_kwh, s.soc_max_kwh));
        }
    }
    out
}
