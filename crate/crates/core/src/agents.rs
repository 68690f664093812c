//! Agent-side logic: flexibility requests and responses, their valuation and
//! activation.

use serde::{Deserialize, Serialize};

pub type AgentId = usize;

/// A power change with its value. Zero power means "nothing offered".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlexVector {
    pub power_kw: f64,
    pub value: f64,
    pub owner: AgentId,
    pub priority: u32,
}

impl FlexVector {
    pub fn none(owner: AgentId, priority: u32) -> Self {
        FlexVector {
            power_kw: 0.0,
            value: 0.0,
            owner,
            priority,
        }
    }

    pub fn is_none(&self) -> bool {
        self.power_kw == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GfrParams {
    pub rated_kw: f64,
    pub value_scale: f64,
    pub value_exponent: f64,
}

impl GfrParams {
    /// Value of the GFR's loading, V0 * (exp(alpha * |p| / S) - 1).
    pub fn loading_value(&self, p_kw: f64) -> f64 {
        self.value_scale * ((self.value_exponent * p_kw.abs() / self.rated_kw).exp() - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadParams {
    pub critical: bool,
    pub c_shed: f64,
    pub c_sw: f64,
    /// Current intrinsic demand (kW).
    pub intrinsic_kw: f64,
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub c_gen: f64,
    /// Currently available generation (kW, non-negative).
    pub available_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssParams {
    pub max_store_kw: f64,
    pub max_dispatch_kw: f64,
    pub soc_min_kwh: f64,
    pub soc_max_kwh: f64,
    pub eta_store: f64,
    pub eta_dispatch: f64,
    pub c_res: f64,
    pub c_use: f64,
    pub soc_kwh: f64,
    /// Scheduled SoC now and at the target time `target_in_s` ahead.
    pub schedule_now_kwh: f64,
    pub schedule_next_kwh: f64,
    pub target_in_s: f64,
    /// Control interval; bounds the power that keeps the SoC within limits.
    pub delta_t_s: f64,
}

impl EssParams {
    fn dt_h(&self) -> f64 {
        self.delta_t_s / 3600.0
    }

    /// Charging power that stays within the SoC bound over one interval.
    pub fn charge_limit_kw(&self) -> f64 {
        let dt_h = self.dt_h();
        let energy = (self.soc_max_kwh - self.soc_kwh).max(0.0) / (self.eta_store * dt_h);
        self.max_store_kw.min(energy)
    }

    /// Discharging power that stays within the SoC bound over one interval.
    pub fn discharge_limit_kw(&self) -> f64 {
        let dt_h = self.dt_h();
        let energy = (self.soc_kwh - self.soc_min_kwh).max(0.0) * self.eta_dispatch / dt_h;
        self.max_dispatch_kw.min(energy)
    }

    /// SoC above the schedule: the reservation term no longer applies.
    pub fn has_surplus(&self) -> bool {
        self.soc_kwh > self.schedule_now_kwh + 1e-9
    }

    /// Power that reaches the scheduled SoC at the target time.
    pub fn optimal_power_kw(&self) -> f64 {
        let dt_h = self.target_in_s.max(self.delta_t_s) / 3600.0;
        let delta = self.schedule_next_kwh - self.soc_kwh;
        let p = if delta >= 0.0 {
            delta / (self.eta_store * dt_h)
        } else {
            delta * self.eta_dispatch / dt_h
        };
        p.clamp(-self.discharge_limit_kw(), self.charge_limit_kw())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentKind {
    Gfr(GfrParams),
    Load(LoadParams),
    Gen(GenParams),
    Ess(EssParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub name: String,
    pub priority: u32,
    pub kind: AgentKind,
    /// Measured power p^t (kW, consumption positive).
    pub power_kw: f64,
    /// Commanded power for GEN/ESS; loads follow their connection state.
    pub setpoint_kw: f64,
    /// First control interval in which the agent participates again.
    pub suspended_until: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Context {
    pub interval: u64,
    pub delta_t_s: f64,
    pub threshold_kw: f64,
    pub suspend_intervals: u64,
}

impl AgentState {
    pub fn is_suspended(&self, interval: u64) -> bool {
        self.suspended_until.is_some_and(|u| interval < u)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            AgentKind::Gfr(_) => "gfr",
            AgentKind::Load(_) => "load",
            AgentKind::Gen(_) => "generator",
            AgentKind::Ess(_) => "storage",
        }
    }

    /// Desired power p^o.
    pub fn optimal_power(&self) -> f64 {
        match &self.kind {
            AgentKind::Gfr(_) => 0.0,
            AgentKind::Load(l) => l.intrinsic_kw,
            AgentKind::Gen(g) => {
                if g.c_gen > 0.0 {
                    0.0
                } else {
                    self.power_kw
                }
            }
            AgentKind::Ess(e) => e.optimal_power_kw(),
        }
    }

    fn none(&self) -> FlexVector {
        FlexVector::none(self.id, self.priority)
    }

    fn vector(&self, power_kw: f64, value: f64) -> FlexVector {
        FlexVector {
            power_kw,
            value,
            owner: self.id,
            priority: self.priority,
        }
    }
}

/// Value of changing the agent's power from p^t to p^t - `x` (so `x > 0`
/// frees power for the rest of the grid). Positive values are improvements.
pub fn value_of(a: &AgentState, x: f64) -> f64 {
    let p = a.power_kw;
    let p_new = p - x;
    match &a.kind {
        AgentKind::Gfr(g) => g.loading_value(p) - g.loading_value(p_new),
        AgentKind::Load(l) => {
            if p_new > p {
                l.c_shed * x.abs() - l.c_sw
            } else if p_new < p {
                -(l.c_shed * x.abs() + l.c_sw)
            } else {
                0.0
            }
        }
        AgentKind::Gen(g) => {
            if p_new > p {
                g.c_gen * x.abs()
            } else {
                -g.c_gen * x.abs()
            }
        }
        AgentKind::Ess(e) => {
            // Usage cost follows throughput; the reservation value rewards
            // moves toward the scheduled power while the SoC is not above
            // the schedule.
            let p_opt = e.optimal_power_kw();
            let usage = -e.c_use * (p_new.abs() - p.abs());
            let reservation = if e.has_surplus() {
                0.0
            } else {
                e.c_res * ((p - p_opt).abs() - (p_new - p_opt).abs())
            };
            usage + reservation
        }
    }
}

pub fn compute_request(a: &AgentState, ctx: &Context) -> FlexVector {
    if a.is_suspended(ctx.interval) {
        return a.none();
    }
    let p = a.power_kw;
    let (r, v) = match &a.kind {
        AgentKind::Gfr(_) => {
            let r = -p;
            (r, value_of(a, -r))
        }
        AgentKind::Load(l) => {
            if l.critical {
                return a.none();
            }
            let r = l.intrinsic_kw - p;
            (r, value_of(a, -r))
        }
        AgentKind::Gen(g) => {
            if g.c_gen <= 0.0 {
                return a.none();
            }
            let r = 0.0 - p;
            (r, value_of(a, -r))
        }
        AgentKind::Ess(e) => {
            if e.soc_kwh < e.soc_min_kwh - 1e-9 || e.soc_kwh > e.soc_max_kwh + 1e-9 {
                return a.none();
            }
            let r = e.optimal_power_kw() - p;
            if r < 0.0 {
                // Above schedule: ask for charging power at no value.
                (e.charge_limit_kw() - p, 0.0)
            } else {
                (r, value_of(a, -r))
            }
        }
    };
    if r.abs() < ctx.threshold_kw || r == 0.0 || v < 0.0 || !v.is_finite() {
        return a.none();
    }
    a.vector(r, v)
}

pub fn compute_response(a: &AgentState, request: &FlexVector, ctx: &Context) -> FlexVector {
    if request.is_none() || request.owner == a.id || a.is_suspended(ctx.interval) {
        return a.none();
    }
    let r = request.power_kw;
    let p = a.power_kw;
    let offer = match &a.kind {
        AgentKind::Gfr(_) => return a.none(),
        AgentKind::Load(l) => {
            if l.critical {
                return a.none();
            }
            if r > 0.0 {
                p
            } else {
                p - l.intrinsic_kw
            }
        }
        AgentKind::Gen(g) => {
            if r > 0.0 {
                (p + g.available_kw).min(r)
            } else {
                p.max(r)
            }
        }
        AgentKind::Ess(e) => {
            if r > 0.0 {
                if e.soc_kwh <= e.soc_min_kwh + 1e-9 && p <= 0.0 {
                    return a.none();
                }
                let lower = e.optimal_power_kw().max(-e.discharge_limit_kw());
                (p - lower).min(r)
            } else {
                if e.soc_kwh >= e.soc_max_kwh - 1e-9 && p >= 0.0 {
                    return a.none();
                }
                (p - e.charge_limit_kw()).max(r)
            }
        }
    };
    if offer * r <= 0.0 || offer.abs() < ctx.threshold_kw {
        return a.none();
    }
    let v = value_of(a, offer);
    if request.value + v < 0.0 || !v.is_finite() {
        return a.none();
    }
    a.vector(offer, v)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivationReport {
    /// Agents whose commanded setpoint had to be clamped, with the
    /// requested and applied values.
    pub clamped: Vec<(AgentId, f64, f64)>,
}

fn set_power(a: &mut AgentState, target: f64, report: &mut ActivationReport) {
    let (lo, hi) = match &a.kind {
        AgentKind::Gen(g) => (-g.available_kw, 0.0),
        AgentKind::Ess(e) => (-e.max_dispatch_kw, e.max_store_kw),
        _ => return,
    };
    let applied = target.clamp(lo, hi);
    if (applied - target).abs() > 1e-9 {
        report.clamped.push((a.id, target, applied));
    }
    a.setpoint_kw = applied;
}

fn toggle_load(a: &mut AgentState, connect: bool, ctx: &Context) {
    if let AgentKind::Load(l) = &mut a.kind {
        l.connected = connect;
        a.power_kw = if connect { l.intrinsic_kw } else { 0.0 };
        a.setpoint_kw = a.power_kw;
        a.suspended_until = Some(ctx.interval + 1 + ctx.suspend_intervals);
    }
}

/// Activates a matched request/response pair. Loads switch at once and are
/// suspended; GEN/ESS receive new setpoints that the simulation ramps to.
/// The request owner, if continuously controllable, only moves by the
/// response's power.
pub fn apply_activation(
    agents: &mut [AgentState],
    request: &FlexVector,
    response: &FlexVector,
    ctx: &Context,
) -> ActivationReport {
    let mut report = ActivationReport::default();
    if request.is_none() || response.is_none() {
        return report;
    }
    let moved = response.power_kw;
    if let Some(a) = agents.iter_mut().find(|a| a.id == response.owner) {
        match a.kind {
            AgentKind::Load(_) => toggle_load(a, moved < 0.0, ctx),
            AgentKind::Gen(_) | AgentKind::Ess(_) => {
                let target = a.power_kw - moved;
                set_power(a, target, &mut report);
            }
            AgentKind::Gfr(_) => {}
        }
    }
    if let Some(a) = agents.iter_mut().find(|a| a.id == request.owner) {
        match a.kind {
            AgentKind::Load(_) => toggle_load(a, request.power_kw > 0.0, ctx),
            AgentKind::Gen(_) | AgentKind::Ess(_) => {
                let target = a.power_kw + moved;
                set_power(a, target, &mut report);
            }
            AgentKind::Gfr(_) => {}
        }
    }
    report
}
