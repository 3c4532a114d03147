//! `tramsim` — command-line front end for the simulation library.
//!
//! A thin shell: every subcommand is a direct wrapper around library calls
//! and produces identical results to using the library programmatically.
//!
//! Exit codes: `0` success, `2` unreadable/invalid input, `3` a run ended in
//! a safety fault.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use tramsim_core::sim::{
    self, load_scenario, EventPayload, MetricsReport, RunOptions, Scenario,
};
use tramsim_core::track_map::{build_map, read_trajectory_csv, InfrastructureElement};
use tramsim_core::TrackMapF64;

const EXIT_INPUT: u8 = 2;
const EXIT_SAFETY_FAULT: u8 = 3;

/// Deterministic scenario simulator for an autonomous tram stack.
#[derive(Parser)]
#[command(name = "tramsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track-map tools.
    #[command(subcommand)]
    Map(MapCommand),
    /// Check a scenario file and list every problem found.
    Validate {
        /// Scenario JSON file.
        scenario: PathBuf,
    },
    /// Run scenarios; each writes `events.jsonl` and `report.json`.
    Run(RunArgs),
    /// Print the metrics summary of an event log as JSON.
    Report {
        /// Event log (`events.jsonl`) produced by `run`.
        log: PathBuf,
        /// Also export the per-tick time series as CSV with the fixed
        /// columns `tick,t_s,s_m,speed_mps,mal_limit_s,bell`.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MapCommand {
    /// Build a track map from a trajectory CSV and an elements JSON array.
    Build {
        /// Reference trajectory CSV with header `x_m,y_m` (extra columns
        /// ignored).
        trajectory: PathBuf,
        /// JSON array of infrastructure elements (platforms, signals,
        /// crossings, speed limits, grid separators).
        elements: PathBuf,
        /// Polyline simplification tolerance in meters (> 0).
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        /// Output map JSON file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON files. With more than one, each run writes into
    /// `<out>/<scenario-stem>/` instead of `<out>/`.
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    /// Seed override. Priority: this flag, then the scenario's `seed`,
    /// then the `TRAM_SIM_SEED` environment variable, then 1.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Force conservative free-space mode (no effect on scenarios without a
    /// free-space stage).
    #[arg(long)]
    conservative_freespace: bool,
    /// Run up to N scenarios in parallel (each is internally sequential).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    env_logger::init();
    let result = match Cli::parse().command {
        Command::Map(MapCommand::Build {
            trajectory,
            elements,
            tolerance,
            out,
        }) => cmd_map_build(&trajectory, &elements, tolerance, &out).map(|()| ExitCode::SUCCESS),
        Command::Validate { scenario } => cmd_validate(&scenario).map(|()| ExitCode::SUCCESS),
        Command::Run(args) => cmd_run(&args),
        Command::Report { log, csv } => cmd_report(&log, csv.as_deref()).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|message| {
        eprintln!("error: {message}");
        ExitCode::from(EXIT_INPUT)
    })
}

fn read_file(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

// ---- map build ----

fn cmd_map_build(
    trajectory: &Path,
    elements: &Path,
    tolerance: f64,
    out: &Path,
) -> Result<(), String> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(format!("--tolerance must be > 0, got {tolerance}"));
    }
    let file = fs::File::open(trajectory)
        .map_err(|e| format!("cannot read {}: {e}", trajectory.display()))?;
    let points = read_trajectory_csv::<f64>(std::io::BufReader::new(file))
        .map_err(|e| format!("{}: {e}", trajectory.display()))?;

    let elements_text = read_file(elements)?;
    // serde_json errors carry "at line N column M".
    let element_list: Vec<InfrastructureElement<f64>> = serde_json::from_str(&elements_text)
        .map_err(|e| format!("{}: invalid JSON: {e}", elements.display()))?;
    let n_elements = element_list.len();

    let map = build_map(&points, tolerance, element_list).map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(&map).expect("map serializes");
    write_file(out, &(json + "\n"))?;

    let kept = map.points().len();
    let reduction = 100.0 * (1.0 - kept as f64 / points.len() as f64);
    println!(
        "map: {} trajectory points -> {} ({:.1}% reduction), length {:.2} m, {} elements -> {}",
        points.len(),
        kept,
        reduction,
        map.length(),
        n_elements,
        out.display()
    );
    Ok(())
}

// ---- validate ----

fn cmd_validate(path: &Path) -> Result<(), String> {
    // `load_scenario` already runs the semantic validation; its error lists
    // one issue per offending JSON path.
    let (scenario, map) = load_scenario(path).map_err(|e| format!("{}: {e}", path.display()))?;
    println!(
        "OK: {} ({:.0} s at dt {} s, track {:.1} m, {} actors, {} signal programs)",
        display_name(&scenario, path),
        scenario.duration_s,
        scenario.dt_s,
        map.length(),
        scenario.actors.len(),
        scenario.signal_programs.len()
    );
    Ok(())
}

fn display_name(scenario: &Scenario, path: &Path) -> String {
    if scenario.name.is_empty() {
        path.display().to_string()
    } else {
        scenario.name.clone()
    }
}

// ---- run ----

struct RunJob {
    label: String,
    scenario: Scenario,
    map: TrackMapF64,
    opts: RunOptions,
    out_dir: PathBuf,
}

struct RunOutcome {
    report: MetricsReport,
    fault: Option<String>,
    halted: bool,
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode, String> {
    if args.jobs == 0 {
        return Err("--jobs must be >= 1".into());
    }
    let env_seed = env_seed()?;

    // Load and validate every scenario before writing anything, so a
    // malformed input never leaves partial outputs behind.
    let mut jobs = Vec::new();
    let mut dirs_taken = std::collections::BTreeSet::new();
    for path in &args.scenarios {
        let (scenario, map) =
            load_scenario(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let out_dir = if args.scenarios.len() == 1 {
            args.out.clone()
        } else {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
            args.out.join(stem)
        };
        if !dirs_taken.insert(out_dir.clone()) {
            return Err(format!(
                "two scenarios would write to {}; rename one",
                out_dir.display()
            ));
        }
        let opts = RunOptions {
            seed: args.seed.or(scenario.seed).or(env_seed),
            conservative_free_space: args.conservative_freespace.then_some(true),
        };
        jobs.push(RunJob {
            label: display_name(&scenario, path),
            scenario,
            map,
            opts,
            out_dir,
        });
    }

    let results: Vec<Mutex<Option<Result<RunOutcome, String>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                *results[i].lock().unwrap() = Some(execute_job(job));
            });
        }
    });

    let mut any_fault = false;
    for (job, slot) in jobs.iter().zip(&results) {
        let outcome = slot
            .lock()
            .unwrap()
            .take()
            .expect("every job ran")
            .map_err(|e| format!("{}: {e}", job.label))?;
        let r = &outcome.report;
        println!(
            "{}: seed {}, {} ticks ({:.1} s), final s {:.2} m at {:.2} m/s, \
             {} anomalies -> {}",
            job.label,
            r.seed,
            r.ticks,
            r.duration_s,
            r.final_s_m,
            r.final_speed_mps,
            r.anomalies,
            job.out_dir.display()
        );
        if outcome.halted {
            any_fault = true;
            println!(
                "  safety fault: {}",
                outcome.fault.as_deref().unwrap_or("(unrecorded)")
            );
        }
    }
    Ok(if any_fault {
        ExitCode::from(EXIT_SAFETY_FAULT)
    } else {
        ExitCode::SUCCESS
    })
}

fn execute_job(job: &RunJob) -> Result<RunOutcome, String> {
    let output = sim::run(&job.scenario, &job.map, &job.opts);
    fs::create_dir_all(&job.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", job.out_dir.display()))?;
    write_file(&job.out_dir.join("events.jsonl"), &sim::to_jsonl(&output.events))?;
    let report_json =
        serde_json::to_string_pretty(&output.report).expect("report serializes");
    write_file(&job.out_dir.join("report.json"), &(report_json + "\n"))?;
    let fault = output.events.iter().find_map(|e| match &e.payload {
        EventPayload::Fault(f) => Some(format!("{}: {}", f.fault, f.message)),
        _ => None,
    });
    Ok(RunOutcome {
        report: output.report,
        fault,
        halted: output.halted,
    })
}

/// Lowest-priority seed source: the `TRAM_SIM_SEED` environment variable.
fn env_seed() -> Result<Option<u64>, String> {
    match std::env::var("TRAM_SIM_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| format!("TRAM_SIM_SEED must be an unsigned integer, got `{v}`")),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err("TRAM_SIM_SEED is not valid unicode".into())
        }
    }
}

// ---- report ----

fn cmd_report(log_path: &Path, csv_out: Option<&Path>) -> Result<(), String> {
    let text = read_file(log_path)?;
    // Parse errors name the offending 1-based line.
    let events =
        sim::parse_jsonl(&text).map_err(|e| format!("{}: {e}", log_path.display()))?;

    let report = events
        .iter()
        .rev()
        .find_map(|e| match &e.payload {
            EventPayload::Report(r) => Some(r.clone()),
            _ => None,
        })
        .unwrap_or_else(|| summarize_ticks(&events));
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );

    if let Some(path) = csv_out {
        let rows = export_csv(&events, path)?;
        eprintln!("csv: {rows} rows -> {}", path.display());
    }
    Ok(())
}

/// Fallback summary for logs without a report record (e.g. truncated or
/// empty): zero-duration metrics plus whatever the tick records show.
fn summarize_ticks(events: &[sim::Event]) -> MetricsReport {
    let mut report = MetricsReport::new("(no report record)", 0);
    for event in events {
        if let EventPayload::Tick(t) = &event.payload {
            report.ticks += 1;
            report.duration_s = event.t_s;
            report.final_s_m = t.s_m;
            report.final_speed_mps = t.speed_mps;
        }
    }
    report
}

fn export_csv(events: &[sim::Event], path: &Path) -> Result<usize, String> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    let io_err = |e: csv::Error| format!("cannot write {}: {e}", path.display());
    writer
        .write_record(["tick", "t_s", "s_m", "speed_mps", "mal_limit_s", "bell"])
        .map_err(io_err)?;
    let mut rows = 0;
    for event in events {
        if let EventPayload::Tick(t) = &event.payload {
            writer
                .write_record(&[
                    event.tick.to_string(),
                    event.t_s.to_string(),
                    t.s_m.to_string(),
                    t.speed_mps.to_string(),
                    t.mal_limit_s.to_string(),
                    t.bell.to_string(),
                ])
                .map_err(io_err)?;
            rows += 1;
        }
    }
    writer
        .flush()
        .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(rows)
}
