//! Command-line front end: `schedule`, `island` and `feasibility`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consensus::{feasible_delta_t, graph_diameter, CommGraph, JsonLines};
use crate::error::Error;
use crate::forecast::{conservative_bounds, scenario_error_stats, Forecasts};
use crate::grid::{load_scenario, Scenario};
use crate::milp::SolveOptions;
use crate::scheduler::{build_problem, cost_report, solve, ScheduleSolution};
use crate::sim::{record_metrics, SimConfig, Simulation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "islandctl", version, about = "Microgrid storage scheduling and islanded control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reserve storage energy for an islanding event over the horizon.
    Schedule(ScheduleArgs),
    /// Simulate islanded operation against a schedule.
    Island(IslandArgs),
    /// Minimal control interval for a communication graph.
    Feasibility(FeasibilityArgs),
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Probability that the reservation covers the forecast error.
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    /// Comma-separated confidence levels solved in parallel.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    /// Horizon in scheduling intervals.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Relative MIP gap at which the solver stops.
    #[arg(long, default_value_t = 1e-4)]
    pub mip_gap: f64,
    /// Solver time limit in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IslandArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Schedule JSON written by `schedule`.
    #[arg(long)]
    pub schedule: PathBuf,
    /// Control interval in seconds.
    #[arg(long)]
    pub delta_t: Option<u32>,
    /// Simulated period in seconds.
    #[arg(long)]
    pub duration: Option<u64>,
    /// Communication graph as a JSON edge list; defaults to the grid topology.
    #[arg(long)]
    pub comm_graph: Option<PathBuf>,
    /// Recorded in the run manifest.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run even if the control interval is shorter than the consensus needs.
    #[arg(long)]
    pub force: bool,
    /// Also write every consensus message as JSON lines.
    #[arg(long)]
    pub message_log: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeasibilityArgs {
    /// Communication graph diameter in hops.
    #[arg(long)]
    pub diameter: usize,
    /// One-hop message delay in milliseconds.
    #[arg(long)]
    pub delay_ms: f64,
    /// Processing margin per control interval in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub margin_ms: f64,
    /// Control interval to check, in seconds.
    #[arg(long)]
    pub delta_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub created_at: String,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes via a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn manifest(self, command: &str, config: serde_json::Value, inputs: &[&Path]) -> anyhow::Result<()> {
        let mut m = RunManifest {
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        for p in inputs {
            m.inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        for p in &self.written {
            m.outputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let text = serde_json::to_string_pretty(&m)?;
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())
    }
}

/// One resolved setting and where it came from.
fn report(name: &str, value: impl std::fmt::Display, source: &str) {
    eprintln!("  {name} = {value} ({source})");
}

fn pick<T: Copy + std::fmt::Display>(name: &str, cli: Option<T>, scenario: Option<T>, default: T) -> T {
    let (v, src) = match (cli, scenario) {
        (Some(v), _) => (v, "flag"),
        (None, Some(v)) => (v, "scenario"),
        (None, None) => (default, "default"),
    };
    report(name, v, src);
    v
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Infeasible(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Infeasible(_)) => Failure::Infeasible(e),
            _ => Failure::Usage(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

fn schedule_one(
    scenario: &Scenario,
    confidence: f64,
    opts: &SolveOptions,
) -> crate::error::Result<ScheduleSolution> {
    let h = scenario.params.horizon_intervals;
    let forecasts = Forecasts::from_scenario(scenario, 0, h)?;
    let bounds = conservative_bounds(&forecasts, &scenario_error_stats(scenario), confidence)?;
    let problem = build_problem(scenario, &bounds, 0)?;
    solve(scenario, &problem, opts)
}

fn check_confidence(c: f64) -> anyhow::Result<()> {
    if !(c > 0.0 && c < 1.0) {
        bail!("confidence must lie strictly between 0 and 1, got {c}");
    }
    Ok(())
}

fn threads() -> Option<usize> {
    std::env::var("ISLANDCTL_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

fn cmd_schedule(args: &ScheduleArgs) -> Result<(), Failure> {
    let mut scenario = load_scenario(&args.scenario)?;
    eprintln!("schedule configuration:");
    let h = pick(
        "horizon_intervals",
        args.horizon,
        Some(scenario.params.horizon_intervals),
        96,
    );
    if h == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("horizon must be positive")));
    }
    scenario.params.horizon_intervals = h;
    report("delta_tau_s", scenario.params.delta_tau_s, "scenario");
    report("mip_gap", args.mip_gap, "flag");
    let opts = SolveOptions {
        mip_rel_gap: args.mip_gap,
        time_limit_s: args.time_limit,
    };
    let mut out = Outputs::new(&args.out)?;
    let config;
    if let Some(levels) = &args.sweep {
        if levels.is_empty() {
            return Err(Failure::Usage(anyhow::anyhow!("--sweep needs at least one level")));
        }
        for &c in levels {
            check_confidence(c)?;
        }
        report("sweep", format!("{levels:?}"), "flag");
        let solve_all = || -> Vec<_> {
            levels
                .par_iter()
                .map(|&c| schedule_one(&scenario, c, &opts))
                .collect()
        };
        let results = match threads() {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Usage(e.into()))?
                .install(solve_all),
            None => solve_all(),
        };
        let mut table = String::from("confidence,total_cost,reserved_kwh,shed_kwh,c_gen,c_ess,c_load,c_pf\n");
        for (c, r) in levels.iter().zip(results) {
            let sol = r?;
            let costs = cost_report(&scenario, &sol);
            table.push_str(&format!(
                "{c},{},{},{},{},{},{},{}\n",
                costs.total,
                sol.total_reserved_kwh(),
                sol.shed_kwh(),
                costs.c_gen,
                costs.c_ess,
                costs.c_load,
                costs.c_pf
            ));
            out.write(&format!("schedule_{c}.json"), sol.to_json().as_bytes())?;
        }
        print!("{table}");
        out.write("sweep.csv", table.as_bytes())?;
        config = serde_json::json!({ "sweep": levels, "horizon_intervals": h, "mip_gap": args.mip_gap });
    } else {
        check_confidence(args.confidence)?;
        report("confidence", args.confidence, "flag");
        let sol = schedule_one(&scenario, args.confidence, &opts)?;
        let costs = cost_report(&scenario, &sol);
        out.write("schedule.json", sol.to_json().as_bytes())?;
        let mut csv = Vec::new();
        sol.write_csv(&mut csv)?;
        out.write("schedule.csv", &csv)?;
        out.write(
            "cost_report.json",
            serde_json::to_string_pretty(&costs).map_err(anyhow::Error::from)?.as_bytes(),
        )?;
        println!(
            "total cost {:.6}, reserved {:.3} kWh, planned shed {:.3} kWh",
            costs.total,
            sol.total_reserved_kwh(),
            sol.shed_kwh()
        );
        for s in &sol.storage {
            println!("  {} (bus {}): {:.3} kWh", s.id, s.bus, s.soc_kwh[0]);
        }
        config = serde_json::json!({ "confidence": args.confidence, "horizon_intervals": h, "mip_gap": args.mip_gap });
    }
    out.manifest("schedule", config, &[&args.scenario])?;
    Ok(())
}

fn cmd_island(args: &IslandArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let schedule = ScheduleSolution::load(&args.schedule)?;
    let graph = match &args.comm_graph {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            CommGraph::from_json(&scenario, &text)?
        }
        None => CommGraph::from_scenario(&scenario)?,
    };
    let mut config = SimConfig::from_scenario(&scenario, &graph)?;
    eprintln!("island configuration:");
    let dt = pick(
        "delta_t_s",
        args.delta_t,
        Some(scenario.params.delta_t_s),
        60,
    );
    if dt == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--delta-t must be positive")));
    }
    let default_duration = scenario.params.horizon_intervals as u64 * scenario.params.delta_tau_s as u64;
    let duration = pick(
        "duration_s",
        args.duration,
        scenario.params.sim_duration_s,
        default_duration,
    );
    config = config.with_delta_t(dt, duration);
    config.seed = pick("seed", args.seed, None, 0);
    report("threshold_kw", config.threshold_kw, "scenario");
    report("suspend_intervals", config.suspend_intervals, "scenario");
    report(
        "comm_graph",
        args.comm_graph
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "grid topology".into()),
        if args.comm_graph.is_some() { "flag" } else { "default" },
    );
    let diam = graph_diameter(&graph)?;
    report("consensus_latency_s", config.latency_s, "derived");
    if !config.is_feasible() {
        let msg = format!(
            "control interval {dt} s is shorter than the {} s the consensus needs (diameter {diam})",
            config.latency_s
        );
        if !args.force {
            return Err(Failure::Infeasible(anyhow::anyhow!(msg)));
        }
        log::warn!("{msg}; continuing because of --force");
    }

    let mut out = Outputs::new(&args.out)?;
    let mut sim = Simulation::new(&scenario, &schedule, graph, config.clone())?;
    let trace = if args.message_log {
        let mut sink = JsonLines::new(Vec::new());
        let trace = sim.run_with(Some(&mut sink));
        if let Some(e) = sink.error.take() {
            return Err(Failure::Usage(e.into()));
        }
        out.write("messages.jsonl", &sink.into_inner())?;
        trace
    } else {
        sim.run_with(None)
    };
    let summary = record_metrics(&trace);
    out.write("trace.csv", trace.to_csv_string()?.as_bytes())?;
    out.write(
        "summary.json",
        serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?.as_bytes(),
    )?;
    println!(
        "{} intervals, shed {:.3} kWh, curtailed {:.3} kWh, gfr mean {:.4} kW, envelope {:.4} kWh",
        summary.intervals,
        summary.shed_kwh,
        summary.curtailed_kwh,
        summary.gfr_mean_kw,
        summary.gfr_energy_envelope_kwh
    );
    let resolved = serde_json::to_value(&config).map_err(anyhow::Error::from)?;
    let mut inputs: Vec<&Path> = vec![&args.scenario, &args.schedule];
    if let Some(p) = &args.comm_graph {
        inputs.push(p);
    }
    out.manifest("island", resolved, &inputs)?;
    Ok(())
}

fn cmd_feasibility(args: &FeasibilityArgs) -> Result<(), Failure> {
    if args.diameter == 0 || !(args.delay_ms > 0.0) || !(args.margin_ms >= 0.0) {
        return Err(Failure::Usage(anyhow::anyhow!(
            "diameter and delay must be positive and the margin non-negative"
        )));
    }
    let min_ms = feasible_delta_t(args.diameter, args.delay_ms, args.margin_ms);
    println!("minimal control interval: {min_ms} ms");
    if let Some(dt) = args.delta_t {
        if !(dt > 0.0) {
            return Err(Failure::Usage(anyhow::anyhow!("--delta-t must be positive")));
        }
        let dt_ms = dt * 1000.0;
        let verdict = if dt_ms == min_ms {
            "feasible (boundary)"
        } else if dt_ms > min_ms {
            "feasible"
        } else {
            "infeasible"
        };
        println!("{dt} s: {verdict}");
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Schedule(a) => cmd_schedule(a),
        Command::Island(a) => cmd_island(a),
        Command::Feasibility(a) => cmd_feasibility(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
        Err(Failure::Infeasible(e)) => {
            eprintln!("infeasible: {e:#}");
            EXIT_INFEASIBLE
        }
    }
}
