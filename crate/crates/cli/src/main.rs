use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use quadmapf::ccbs::{ccbs_solve, Limits, SolveError, SolverStats};
use quadmapf::executor::Method;
use quadmapf::flightsim::{load_sim_config, run_execution, RunReport, SimConfig};
use quadmapf::plan::{load_plans, save_plans, validate, PlanSet, DEFAULT_SAMPLING_DT};
use quadmapf::world::{load_instance, Instance};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Exit statuses, one per failure class.
mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const NO_SOLUTION: u8 = 2;
    pub const LIMIT: u8 = 3;
    pub const INVALID: u8 = 4;
    pub const SIM_FAILED: u8 = 5;
}

#[derive(Parser)]
#[command(
    name = "quadmapf",
    version,
    about = "Plan, validate and simulate quadcopter MAPF runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance and write the plan file.
    Plan {
        #[arg(long)]
        instance: PathBuf,
        /// Plan file to write; solver stats go next to it as `<stem>.stats.json`.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Check a plan file against an instance.
    Validate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        plans: PathBuf,
    },
    /// Fly a plan file in the simulator and write logs and error reports.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        plans: PathBuf,
        #[arg(long, default_value = "bll")]
        method: Method,
        #[command(flatten)]
        sim: SimArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan and simulate every instance in a directory with every method.
    Bench {
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long, default_value_t = 1)]
        repetitions: u64,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        limits: LimitArgs,
        /// Output directory for `summary.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct LimitArgs {
    /// Planner wall-time limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    expansions_limit: Option<usize>,
}

impl LimitArgs {
    fn limits(&self) -> anyhow::Result<Limits> {
        let mut limits = Limits::default();
        if let Some(s) = self.time_limit {
            limits.max_time = Duration::try_from_secs_f64(s)
                .with_context(|| format!("invalid --time-limit {s}"))?;
        }
        if let Some(n) = self.expansions_limit {
            limits.max_expansions = n;
        }
        Ok(limits)
    }
}

#[derive(Args)]
struct SimArgs {
    /// Simulator config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SimArgs {
    fn config(&self) -> anyhow::Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_sim_config(path)?,
            None => SimConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// An error carrying the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: exit::USAGE,
            error: e.into(),
        }
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Plan {
            instance,
            out,
            limits,
        } => cmd_plan(&instance, &out, &limits),
        Command::Validate { instance, plans } => cmd_validate(&instance, &plans),
        Command::Simulate {
            instance,
            plans,
            method,
            sim,
            out,
        } => cmd_simulate(&instance, &plans, method, &sim, &out),
        Command::Bench {
            scenarios,
            repetitions,
            sim,
            limits,
            out,
        } => cmd_bench(&scenarios, repetitions, &sim, &limits, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

#[derive(Serialize)]
struct PlanStats<'a> {
    status: &'a str,
    cost: Option<f64>,
    makespan: Option<f64>,
    #[serde(flatten)]
    stats: &'a SolverStats,
}

fn stats_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "plans".into());
    out.with_file_name(format!("{stem}.stats.json"))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_plan(instance: &Path, out: &Path, limits: &LimitArgs) -> CmdResult {
    let inst = load_instance(instance)?;
    let solved = ccbs_solve(&inst, &limits.limits()?);
    let (status, stats, cost, makespan) = match &solved {
        Ok(s) => ("solved", &s.stats, Some(s.cost), Some(s.makespan)),
        Err(SolveError::NoSolution(_, stats)) => ("no_solution", stats, None, None),
        Err(SolveError::LimitExceeded(stats)) => ("limit_exceeded", stats, None, None),
    };
    let summary = PlanStats {
        status,
        cost,
        makespan,
        stats,
    };
    write_json(&stats_path(out), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    match solved {
        Ok(s) => {
            save_plans(&s.plans, out)?;
            Ok(())
        }
        Err(e @ SolveError::NoSolution(..)) => Err(fail(exit::NO_SOLUTION, e.into())),
        Err(e @ SolveError::LimitExceeded(_)) => Err(fail(exit::LIMIT, e.into())),
    }
}

/// Plans that belong to `inst` and pass the analytic and sampled checks.
fn checked_plans(inst: &Instance, plans_path: &Path, print: bool) -> Result<PlanSet, Failure> {
    let plans = load_plans(plans_path)?;
    plans
        .check_against(inst)
        .map_err(|e| fail(exit::INVALID, e.into()))?;
    let report = validate(&plans, &inst.world, DEFAULT_SAMPLING_DT)
        .map_err(|e| fail(exit::INVALID, e.into()))?;
    if print || !report.ok {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    if !report.ok {
        return Err(fail(
            exit::INVALID,
            anyhow::anyhow!("{} violation(s)", report.violations.len()),
        ));
    }
    Ok(plans)
}

fn cmd_validate(instance: &Path, plans: &Path) -> CmdResult {
    let inst = load_instance(instance)?;
    checked_plans(&inst, plans, true).map(|_| ())
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct Input {
    path: String,
    sha256: String,
}

impl Input {
    fn of(path: &Path) -> anyhow::Result<Self> {
        Ok(Input {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    method: Method,
    instance: Input,
    plans: Input,
    config_file: Option<Input>,
    config: SimConfig,
    config_hash: String,
    success: bool,
    /// Output file name to sha256.
    outputs: Vec<(String, String)>,
}

fn cmd_simulate(
    instance: &Path,
    plans_path: &Path,
    method: Method,
    sim: &SimArgs,
    out: &Path,
) -> CmdResult {
    let inst = load_instance(instance)?;
    let cfg = sim.config()?;
    let plans = checked_plans(&inst, plans_path, false)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let run = run_execution(&plans, method, &cfg)?;
    let report = RunReport::new(&run, &cfg)?;
    let files = ["pose_log.csv", "error_report.json", "error_series.csv"];
    run.log.save_csv(out.join(files[0]))?;
    write_json(&out.join(files[1]), &report)?;
    let mut series = Vec::new();
    report.actual.write_series_csv(&mut series)?;
    fs::write(out.join(files[2]), series)?;

    let mut outputs = Vec::new();
    for f in files {
        outputs.push((f.to_string(), sha256_file(&out.join(f))?));
    }
    let manifest = Manifest {
        tool: "quadmapf",
        version: env!("CARGO_PKG_VERSION"),
        method,
        instance: Input::of(instance)?,
        plans: Input::of(plans_path)?,
        config_file: sim.config.as_deref().map(Input::of).transpose()?,
        config_hash: cfg.hash(),
        config: cfg,
        success: run.success,
        outputs,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    println!(
        "{method}: success {} avg error {:.4} m max error {:.4} m",
        run.success, report.actual.avg_error, report.actual.max_error
    );
    if !run.success {
        return Err(fail(
            exit::SIM_FAILED,
            anyhow::anyhow!("run did not finish by t = {:.2} s", run.end_time),
        ));
    }
    Ok(())
}

/// One row of the bench summary.
#[derive(Default)]
struct BenchRow {
    scenario: String,
    method: String,
    agents: usize,
    plan_status: String,
    cost: Option<f64>,
    makespan: Option<f64>,
    plan_time_s: f64,
    expansions: usize,
    runs: u64,
    successes: u64,
    avg_errors: Vec<f64>,
    max_errors: Vec<f64>,
    note: String,
}

const SUMMARY_HEADER: &str = "scenario,method,agents,plan_status,cost,makespan,plan_time_s,expansions,runs,successes,success_rate,avg_error_mean,max_error_mean,max_error_worst,note";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl BenchRow {
    fn csv(&self) -> String {
        let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let worst = self.max_errors.iter().copied().reduce(f64::max);
        let rate = (self.runs > 0).then(|| self.successes as f64 / self.runs as f64);
        format!(
            "{},{},{},{},{},{},{:.6},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.method,
            self.agents,
            self.plan_status,
            opt(self.cost),
            opt(self.makespan),
            self.plan_time_s,
            self.expansions,
            self.runs,
            self.successes,
            opt(rate),
            opt(mean(&self.avg_errors)),
            opt(mean(&self.max_errors)),
            opt(worst),
            self.note.replace([',', '\n'], ";"),
        )
    }
}

fn scenario_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "json"));
    files.sort();
    if files.is_empty() {
        bail!("no scenario files (*.json) in {}", dir.display());
    }
    Ok(files)
}

fn bench_scenario(
    path: &Path,
    repetitions: u64,
    base: &SimConfig,
    limits: &Limits,
) -> Vec<BenchRow> {
    let scenario = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let rows_for = |template: BenchRow| {
        Method::ALL
            .iter()
            .map(|m| BenchRow {
                method: m.to_string(),
                scenario: scenario.clone(),
                plan_status: template.plan_status.clone(),
                note: template.note.clone(),
                agents: template.agents,
                ..BenchRow::default()
            })
            .collect::<Vec<_>>()
    };
    let inst = match load_instance(path) {
        Ok(inst) => inst,
        Err(e) => {
            log::warn!("{scenario}: {e}");
            return rows_for(BenchRow {
                plan_status: "invalid_instance".into(),
                note: e.to_string(),
                ..BenchRow::default()
            });
        }
    };
    let agents = inst.agents.len();
    let sol = match ccbs_solve(&inst, limits) {
        Ok(sol) => sol,
        Err(e) => {
            log::warn!("{scenario}: {e}");
            let status = match e {
                SolveError::NoSolution(..) => "no_solution",
                SolveError::LimitExceeded(_) => "limit_exceeded",
            };
            return rows_for(BenchRow {
                plan_status: status.into(),
                note: e.to_string(),
                agents,
                ..BenchRow::default()
            });
        }
    };
    Method::ALL
        .iter()
        .map(|&method| {
            let mut row = BenchRow {
                scenario: scenario.clone(),
                method: method.to_string(),
                agents,
                plan_status: "solved".into(),
                cost: Some(sol.cost),
                makespan: Some(sol.makespan),
                plan_time_s: sol.stats.wall_time_s,
                expansions: sol.stats.expansions,
                ..BenchRow::default()
            };
            for rep in 0..repetitions {
                let cfg = SimConfig {
                    seed: base.seed + rep,
                    ..base.clone()
                };
                row.runs += 1;
                let report = run_execution(&sol.plans, method, &cfg)
                    .and_then(|run| RunReport::new(&run, &cfg));
                match report {
                    Ok(r) => {
                        row.successes += u64::from(r.success);
                        row.avg_errors.push(r.actual.avg_error);
                        row.max_errors.push(r.actual.max_error);
                    }
                    Err(e) => {
                        log::warn!("{scenario}/{method} seed {}: {e}", cfg.seed);
                        let _ = write!(row.note, "seed {}: {e} ", cfg.seed);
                    }
                }
            }
            row
        })
        .collect()
}

fn cmd_bench(
    dir: &Path,
    repetitions: u64,
    sim: &SimArgs,
    limits: &LimitArgs,
    out: &Path,
) -> CmdResult {
    if repetitions == 0 {
        return Err(anyhow::anyhow!("--repetitions must be at least 1").into());
    }
    let files = scenario_files(dir)?;
    let cfg = sim.config()?;
    let limits = limits.limits()?;
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for path in &files {
        for row in bench_scenario(path, repetitions, &cfg, &limits) {
            println!(
                "{} {}: {} {}/{} runs succeeded",
                row.scenario, row.method, row.plan_status, row.successes, row.runs
            );
            text.push_str(&row.csv());
            text.push('\n');
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let summary = out.join("summary.csv");
    fs::write(&summary, text).with_context(|| format!("writing {}", summary.display()))?;
    Ok(())
}
