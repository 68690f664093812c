//! C interface to islandctl. Objects are opaque handles created and freed
//! through this API; every fallible call returns an `IslandctlStatus` and
//! leaves a message for `islandctl_last_error_message`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use islandctl::consensus::{feasible_delta_t, CommGraph};
use islandctl::forecast::{conservative_bounds, scenario_error_stats, Forecasts};
use islandctl::grid::{load_scenario, Scenario};
use islandctl::scheduler::{build_problem, solve, ScheduleSolution};
use islandctl::sim::{record_metrics, run, SimConfig, SimTrace};
use islandctl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IslandctlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Infeasible = 6,
    Solver = 7,
    Internal = 8,
}

pub struct IslandctlScenario(Scenario);
pub struct IslandctlSchedule(ScheduleSolution);
pub struct IslandctlTrace(SimTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> IslandctlStatus {
    match e {
        Error::Io { .. } => IslandctlStatus::Io,
        Error::Parse { .. } => IslandctlStatus::Parse,
        Error::Validation(_) | Error::Profile(_) | Error::Graph(_) => IslandctlStatus::Validation,
        Error::Infeasible(_) => IslandctlStatus::Infeasible,
        Error::Solver(_) => IslandctlStatus::Solver,
        _ => IslandctlStatus::Internal,
    }
}

type Outcome = Result<(), (IslandctlStatus, String)>;

fn fail<T>(status: IslandctlStatus, msg: impl Into<String>) -> Result<T, (IslandctlStatus, String)> {
    Err((status, msg.into()))
}

fn lib_err(e: Error) -> (IslandctlStatus, String) {
    (status_of(&e), e.to_string())
}

fn guard(f: impl FnOnce() -> Outcome) -> IslandctlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IslandctlStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            IslandctlStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<String, (IslandctlStatus, String)> {
    if p.is_null() {
        return fail(IslandctlStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s.to_owned()),
        Err(_) => fail(IslandctlStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (IslandctlStatus, String)> {
    p.as_ref()
        .map_or_else(|| fail(IslandctlStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Outcome {
    if out.is_null() {
        return fail(IslandctlStatus::NullPointer, "output pointer is null");
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Outcome {
    if out.is_null() {
        return fail(IslandctlStatus::NullPointer, "output pointer is null");
    }
    let c = CString::new(s).map_err(|_| (IslandctlStatus::Internal, "string contains NUL".to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn islandctl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn islandctl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn islandctl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_scenario_load(
    path: *const c_char,
    out: *mut *mut IslandctlScenario,
) -> IslandctlStatus {
    guard(|| {
        let path = path_arg(path)?;
        let sc = load_scenario(path).map_err(lib_err)?;
        put(out, IslandctlScenario(sc))
    })
}

/// # Safety
/// `s` must come from `islandctl_scenario_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn islandctl_scenario_free(s: *mut IslandctlScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of assets in the scenario.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn islandctl_scenario_asset_count(s: *const IslandctlScenario) -> usize {
    s.as_ref().map_or(0, |s| s.0.assets.len())
}

/// Solves the storage reservation schedule at confidence level `confidence`.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_schedule_solve(
    scenario: *const IslandctlScenario,
    confidence: f64,
    out: *mut *mut IslandctlSchedule,
) -> IslandctlStatus {
    guard(|| {
        let sc = &deref(scenario, "scenario")?.0;
        if !(confidence > 0.0 && confidence < 1.0) {
            return fail(IslandctlStatus::InvalidArgument, "confidence must lie in (0, 1)");
        }
        let f = Forecasts::from_scenario(sc, 0, sc.params.horizon_intervals).map_err(lib_err)?;
        let b = conservative_bounds(&f, &scenario_error_stats(sc), confidence).map_err(lib_err)?;
        let p = build_problem(sc, &b, 0).map_err(lib_err)?;
        let sol = solve(sc, &p, &Default::default()).map_err(lib_err)?;
        put(out, IslandctlSchedule(sol))
    })
}

/// Reads a schedule previously written as JSON.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_schedule_load(
    path: *const c_char,
    out: *mut *mut IslandctlSchedule,
) -> IslandctlStatus {
    guard(|| {
        let path = path_arg(path)?;
        let s = ScheduleSolution::load(path).map_err(lib_err)?;
        put(out, IslandctlSchedule(s))
    })
}

/// A schedule that reserves nothing, aligned with the scenario start.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_schedule_empty(
    scenario: *const IslandctlScenario,
    out: *mut *mut IslandctlSchedule,
) -> IslandctlStatus {
    guard(|| {
        let sc = &deref(scenario, "scenario")?.0;
        put(out, IslandctlSchedule(ScheduleSolution::empty(sc.start(), sc.params.delta_tau_s)))
    })
}

/// # Safety
/// `s` must be a live schedule handle; `objective` and `reserved_kwh` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_schedule_totals(
    s: *const IslandctlSchedule,
    objective: *mut f64,
    reserved_kwh: *mut f64,
) -> IslandctlStatus {
    guard(|| {
        let s = &deref(s, "schedule")?.0;
        if objective.is_null() || reserved_kwh.is_null() {
            return fail(IslandctlStatus::NullPointer, "output pointer is null");
        }
        *objective = s.objective;
        *reserved_kwh = s.total_reserved_kwh();
        Ok(())
    })
}

/// Schedule as JSON; free the result with `islandctl_string_free`.
///
/// # Safety
/// `s` must be a live schedule handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_schedule_to_json(
    s: *const IslandctlSchedule,
    out: *mut *mut c_char,
) -> IslandctlStatus {
    guard(|| {
        let s = &deref(s, "schedule")?.0;
        put_string(out, s.to_json())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn islandctl_schedule_free(s: *mut IslandctlSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Simulates islanded operation with the scenario's own settings.
///
/// # Safety
/// `scenario` and `schedule` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_island_run(
    scenario: *const IslandctlScenario,
    schedule: *const IslandctlSchedule,
    out: *mut *mut IslandctlTrace,
) -> IslandctlStatus {
    guard(|| {
        let sc = &deref(scenario, "scenario")?.0;
        let sched = &deref(schedule, "schedule")?.0;
        let g = CommGraph::from_scenario(sc).map_err(lib_err)?;
        let cfg = SimConfig::from_scenario(sc, &g).map_err(lib_err)?;
        let trace = run(sc, sched, g, cfg).map_err(lib_err)?;
        put(out, IslandctlTrace(trace))
    })
}

/// Number of control intervals in the trace.
///
/// # Safety
/// `t` must be a live trace handle.
#[no_mangle]
pub unsafe extern "C" fn islandctl_trace_len(t: *const IslandctlTrace) -> usize {
    t.as_ref().map_or(0, |t| t.0.rows.len())
}

/// Mean GFR power of control interval `index`.
///
/// # Safety
/// `t` must be a live trace handle; `gfr_kw` must be writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_trace_gfr_kw(
    t: *const IslandctlTrace,
    index: usize,
    gfr_kw: *mut f64,
) -> IslandctlStatus {
    guard(|| {
        let t = &deref(t, "trace")?.0;
        let row = match t.rows.get(index) {
            Some(r) => r,
            None => return fail(IslandctlStatus::InvalidArgument, format!("index {index} out of range")),
        };
        if gfr_kw.is_null() {
            return fail(IslandctlStatus::NullPointer, "output pointer is null");
        }
        *gfr_kw = row.gfr_kw;
        Ok(())
    })
}

/// Shed and curtailed energy over the whole trace.
///
/// # Safety
/// `t` must be a live trace handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_trace_energy(
    t: *const IslandctlTrace,
    shed_kwh: *mut f64,
    curtailed_kwh: *mut f64,
) -> IslandctlStatus {
    guard(|| {
        let t = &deref(t, "trace")?.0;
        if shed_kwh.is_null() || curtailed_kwh.is_null() {
            return fail(IslandctlStatus::NullPointer, "output pointer is null");
        }
        let s = record_metrics(t);
        *shed_kwh = s.shed_kwh;
        *curtailed_kwh = s.curtailed_kwh;
        Ok(())
    })
}

/// Trace as CSV; free the result with `islandctl_string_free`.
///
/// # Safety
/// `t` must be a live trace handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn islandctl_trace_to_csv(t: *const IslandctlTrace, out: *mut *mut c_char) -> IslandctlStatus {
    guard(|| {
        let t = &deref(t, "trace")?.0;
        let csv = t.to_csv_string().map_err(lib_err)?;
        put_string(out, csv)
    })
}

/// # Safety
/// `t` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn islandctl_trace_free(t: *mut IslandctlTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Minimal control interval in milliseconds for a communication graph of the
/// given diameter; negative on invalid input.
#[no_mangle]
pub extern "C" fn islandctl_feasible_delta_t_ms(diameter: usize, delay_ms: f64, margin_ms: f64) -> f64 {
    if diameter == 0 || !(delay_ms > 0.0) || !(margin_ms >= 0.0) {
        set_error("diameter and delay must be positive and the margin non-negative");
        return -1.0;
    }
    feasible_delta_t(diameter, delay_ms, margin_ms)
}
