//! Deterministic multi-vehicle flight simulation.
//!
//! Each vehicle is a point mass whose velocity follows the commanded
//! velocity through a first-order lag. Position setpoints and high-level
//! gotos become velocity commands through a proportional controller that
//! acts on the *estimated* position, so localization noise feeds back into
//! the flight. All randomness comes from per-vehicle ChaCha streams derived
//! from one seed.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::{
    make_executor, Command, CommandKind, CommandRecord, ExecConfig, ExecEvent, Method,
    VehicleEndpoint, VllAdvance,
};
use crate::geometry::Vec3;
use crate::plan::PlanSet;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("config syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("cannot access {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("pose log is empty")]
    EmptyLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integration step in seconds.
    pub tick: f64,
    pub log_period: f64,
    /// Velocity time constant.
    pub tau: f64,
    /// Proportional gain from position error to commanded velocity.
    pub gain: f64,
    pub max_speed: f64,
    pub noise_sigma: f64,
    /// Delay between issuing a command and the vehicle acting on it.
    pub latency: f64,
    pub seed: u64,
    pub arena_min: [f64; 3],
    pub arena_max: [f64; 3],
    /// BLL/VLL command period.
    pub command_period: f64,
    /// Rate at which a high-level goto is refined on board, in Hz.
    pub onboard_rate: f64,
    pub box_half_width: f64,
    pub vll_advance: VllAdvance,
    /// Cruise speed for VLL; the agent's planning speed when unset.
    pub cruise_speed: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tick: 0.01,
            log_period: 0.01,
            tau: 0.3,
            gain: 2.0,
            max_speed: 1.0,
            noise_sigma: 0.05,
            latency: 0.02,
            seed: 0,
            arena_min: [0.0; 3],
            arena_max: [2.0; 3],
            command_period: 0.05,
            onboard_rate: 100.0,
            box_half_width: 0.10,
            vll_advance: VllAdvance::AtScheduledTime,
            cruise_speed: None,
        }
    }
}

impl SimConfig {
    /// A near-ideal vehicle: no noise, no latency, a stiff controller and
    /// fast dynamics. Executed plans should track their references closely.
    pub fn ideal() -> Self {
        SimConfig {
            tick: 0.001,
            tau: 0.01,
            gain: 100.0,
            noise_sigma: 0.0,
            latency: 0.0,
            command_period: 0.01,
            box_half_width: 0.01,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("tick", self.tick),
            ("log_period", self.log_period),
            ("tau", self.tau),
            ("gain", self.gain),
            ("max_speed", self.max_speed),
            ("command_period", self.command_period),
            ("onboard_rate", self.onboard_rate),
            ("box_half_width", self.box_half_width),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("latency", self.latency)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if let Some(c) = self.cruise_speed {
            if !(c.is_finite() && c > 0.0) {
                return Err(SimError::Config(format!(
                    "cruise_speed must be positive, got {c}"
                )));
            }
        }
        if (0..3).any(|k| !(self.arena_min[k] < self.arena_max[k])) {
            return Err(SimError::Config("arena_min must be below arena_max".into()));
        }
        let ratio = self.log_period / self.tick;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(SimError::Config(format!(
                "log_period {} must be a positive multiple of tick {}",
                self.log_period, self.tick
            )));
        }
        Ok(())
    }

    fn ticks_per_log(&self) -> u64 {
        (self.log_period / self.tick).round() as u64
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn exec_config(&self, speed: f64) -> ExecConfig {
        ExecConfig {
            period: self.command_period,
            box_half_width: self.box_half_width,
            cruise_speed: self.cruise_speed.unwrap_or(speed),
            vll_advance: self.vll_advance,
        }
    }
}

pub fn parse_sim_config(text: &str) -> Result<SimConfig, SimError> {
    let cfg: SimConfig = serde_json::from_str(text).map_err(|e| SimError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_sim_config(path: impl AsRef<Path>) -> Result<SimConfig, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_sim_config(&text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl VehicleState {
    pub fn at_rest(position: Vec3) -> Self {
        VehicleState {
            position,
            velocity: Vec3::zeros(),
        }
    }
}

/// The command a vehicle is currently acting on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActiveCommand {
    Hold {
        target: Vec3,
    },
    Velocity {
        velocity: Vec3,
    },
    Goto {
        origin: Vec3,
        target: Vec3,
        start: f64,
        duration: f64,
    },
}

impl ActiveCommand {
    /// Position reference at time `t`, if the command has one. Gotos are
    /// refined at `rate` Hz along the straight line from their origin.
    pub fn reference(&self, t: f64, rate: f64) -> Option<Vec3> {
        match *self {
            ActiveCommand::Hold { target } => Some(target),
            ActiveCommand::Velocity { .. } => None,
            ActiveCommand::Goto {
                origin,
                target,
                start,
                duration,
            } => {
                let elapsed = ((t - start) * rate + 1e-9).floor() / rate;
                let s = (elapsed / duration).clamp(0.0, 1.0);
                Some(origin + (target - origin) * s)
            }
        }
    }

    /// Takes over from `previous` when `command` is applied at time `now`.
    pub fn from_command(
        command: &Command,
        previous: &ActiveCommand,
        now: f64,
        estimate: Vec3,
        rate: f64,
    ) -> Self {
        match command.kind {
            CommandKind::PositionSetpoint { target } => ActiveCommand::Hold { target },
            CommandKind::VelocitySetpoint { velocity } => ActiveCommand::Velocity { velocity },
            CommandKind::HighLevelGoto { target, duration } => ActiveCommand::Goto {
                origin: previous.reference(now, rate).unwrap_or(estimate),
                target,
                start: now,
                duration,
            },
        }
    }
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Velocity the vehicle is asked to fly at time `t` given its position
/// estimate.
pub fn commanded_velocity(
    active: &ActiveCommand,
    t: f64,
    estimate: &Vec3,
    cfg: &SimConfig,
) -> Vec3 {
    match active {
        ActiveCommand::Velocity { velocity } => clamp_norm(*velocity, cfg.max_speed),
        other => {
            let r = other
                .reference(t, cfg.onboard_rate)
                .expect("position-type command");
            clamp_norm((r - estimate) * cfg.gain, cfg.max_speed)
        }
    }
}

/// Advances one vehicle by `dt` with a constant commanded velocity. The
/// first-order lag is integrated exactly.
pub fn vehicle_step(state: &VehicleState, commanded: &Vec3, tau: f64, dt: f64) -> VehicleState {
    let decay = (-dt / tau).exp();
    let dv = state.velocity - commanded;
    VehicleState {
        position: state.position + commanded * dt + dv * (tau * (1.0 - decay)),
        velocity: commanded + dv * decay,
    }
}

/// Actual position plus independent zero-mean Gaussian noise per axis.
pub fn localize(actual: &Vec3, sigma: f64, rng: &mut ChaCha8Rng) -> Vec3 {
    if sigma == 0.0 {
        return *actual;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    actual + Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
}

/// Independent noise stream for one vehicle.
pub fn vehicle_rng(seed: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub t: f64,
    pub agent: usize,
    pub actual: Vec3,
    pub estimated: Vec3,
    pub planned: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseLog {
    pub records: Vec<PoseRecord>,
}

impl PoseLog {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "t,agent,ax,ay,az,ex,ey,ez,px,py,pz")?;
        for r in &self.records {
            let (a, e, p) = (r.actual, r.estimated, r.planned);
            writeln!(
                out,
                "{:.3},{},{},{},{},{},{},{},{},{},{}",
                r.t, r.agent, a.x, a.y, a.z, e.x, e.y, e.z, p.x, p.y, p.z
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let path = path.as_ref();
        let io = |source| SimError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        self.write_csv(&mut out).map_err(io)?;
        out.flush().map_err(io)
    }
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub method: Method,
    pub log: PoseLog,
    pub success: bool,
    pub end_time: f64,
    pub commands: Vec<CommandRecord>,
    pub events: Vec<(usize, ExecEvent)>,
    /// Logged samples whose actual position left the arena.
    pub arena_excursions: usize,
}

struct SimEndpoint {
    clock: f64,
    estimate: Vec3,
    outbox: Vec<Command>,
}

impl VehicleEndpoint for SimEndpoint {
    fn send(&mut self, command: Command) {
        self.outbox.push(command);
    }
    fn estimated_position(&self) -> Vec3 {
        self.estimate
    }
    fn clock(&self) -> f64 {
        self.clock
    }
    fn delay(&mut self, _dt: f64) {}
}

fn within_box(a: &Vec3, b: &Vec3, half: f64) -> bool {
    (a - b).iter().all(|d| d.abs() <= half)
}

/// Flies every plan with its own executor against a shared simulated clock.
///
/// The run ends successfully once every executor has finished and every
/// vehicle is inside the goal box. It fails if that has not happened by
/// twice the makespan plus ten seconds; the partial log is still returned.
pub fn run_execution(plans: &PlanSet, method: Method, cfg: &SimConfig) -> Result<SimRun, SimError> {
    cfg.validate()?;
    let n = plans.plans.len();
    let mut executors: Vec<_> = plans
        .plans
        .iter()
        .zip(&plans.bodies)
        .map(|(p, b)| make_executor(method, p, &cfg.exec_config(b.speed)))
        .collect();
    let mut states: Vec<_> = plans
        .plans
        .iter()
        .map(|p| VehicleState::at_rest(p.start()))
        .collect();
    let mut active: Vec<_> = plans
        .plans
        .iter()
        .map(|p| ActiveCommand::Hold { target: p.start() })
        .collect();
    let mut rngs: Vec<_> = plans
        .plans
        .iter()
        .map(|p| vehicle_rng(cfg.seed, p.agent))
        .collect();
    let mut queues: Vec<VecDeque<Command>> = vec![VecDeque::new(); n];

    let per_log = cfg.ticks_per_log();
    let cap = 2.0 * plans.makespan() + 10.0;
    let mut log = PoseLog::default();
    let mut commands = Vec::new();
    let mut arena_excursions = 0;
    let arena_min = Vec3::from(cfg.arena_min);
    let arena_max = Vec3::from(cfg.arena_max);

    let mut step: u64 = 0;
    let (success, end_time) = loop {
        let t = step as f64 * cfg.tick;
        let estimates: Vec<Vec3> = states
            .iter()
            .zip(rngs.iter_mut())
            .map(|(s, rng)| localize(&s.position, cfg.noise_sigma, rng))
            .collect();

        for i in 0..n {
            let mut ep = SimEndpoint {
                clock: t,
                estimate: estimates[i],
                outbox: Vec::new(),
            };
            executors[i].step(&mut ep);
            for c in ep.outbox {
                commands.push(CommandRecord::new(plans.plans[i].agent, &c));
                queues[i].push_back(c);
            }
            let mut newest = None;
            while queues[i]
                .front()
                .is_some_and(|c| c.issue_time + cfg.latency <= t + 1e-9)
            {
                newest = queues[i].pop_front();
            }
            if let Some(c) = newest {
                active[i] =
                    ActiveCommand::from_command(&c, &active[i], t, estimates[i], cfg.onboard_rate);
            }
        }

        if step.is_multiple_of(per_log) {
            let t_log = (step / per_log) as f64 * cfg.log_period;
            for (i, plan) in plans.plans.iter().enumerate() {
                let actual = states[i].position;
                if (0..3).any(|k| actual[k] < arena_min[k] || actual[k] > arena_max[k]) {
                    arena_excursions += 1;
                }
                log.records.push(PoseRecord {
                    t: t_log,
                    agent: plan.agent,
                    actual,
                    estimated: estimates[i],
                    planned: plan.position_at(t_log),
                });
            }
        }

        let done = executors.iter().all(|e| e.is_finished())
            && states
                .iter()
                .zip(&plans.plans)
                .all(|(s, p)| within_box(&s.position, &p.goal(), cfg.box_half_width));
        if done {
            break (true, t);
        }
        if t >= cap {
            log::warn!("{method}: vehicles did not settle by t = {t:.2}");
            break (false, t);
        }

        for i in 0..n {
            let v = commanded_velocity(&active[i], t, &estimates[i], cfg);
            states[i] = vehicle_step(&states[i], &v, cfg.tau, cfg.tick);
        }
        step += 1;
    };
    if arena_excursions > 0 {
        log::warn!("{method}: {arena_excursions} logged samples outside the arena");
    }

    let events = executors
        .iter()
        .zip(&plans.plans)
        .flat_map(|(e, p)| e.events().iter().map(move |ev| (p.agent, ev.clone())))
        .collect();
    Ok(SimRun {
        method,
        log,
        success,
        end_time,
        commands,
        events,
        arena_excursions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorBasis {
    ActualVsPlanned,
    EstimatedVsPlanned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentError {
    pub agent: usize,
    pub max_error: f64,
    pub avg_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub basis: ErrorBasis,
    pub per_agent: Vec<AgentError>,
    pub max_error: f64,
    /// Mean over every logged sample of every agent.
    pub avg_error: f64,
    #[serde(skip)]
    pub series: Vec<(f64, usize, f64)>,
}

impl ErrorReport {
    pub fn write_series_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "t,agent,error")?;
        for (t, agent, e) in &self.series {
            writeln!(out, "{t:.3},{agent},{e}")?;
        }
        Ok(())
    }
}

/// Per-agent and aggregate tracking error. Samples are evenly spaced in
/// time, so the plain mean is the time average.
pub fn error_metrics(log: &PoseLog, basis: ErrorBasis) -> Result<ErrorReport, SimError> {
    if log.records.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let series: Vec<(f64, usize, f64)> = log
        .records
        .iter()
        .map(|r| {
            let from = match basis {
                ErrorBasis::ActualVsPlanned => r.actual,
                ErrorBasis::EstimatedVsPlanned => r.estimated,
            };
            (r.t, r.agent, (from - r.planned).norm())
        })
        .collect();
    let mut agents: Vec<usize> = series.iter().map(|s| s.1).collect();
    agents.sort_unstable();
    agents.dedup();
    let per_agent = agents
        .iter()
        .map(|&agent| {
            let errs: Vec<f64> = series
                .iter()
                .filter(|s| s.1 == agent)
                .map(|s| s.2)
                .collect();
            AgentError {
                agent,
                max_error: errs.iter().copied().fold(0.0, f64::max),
                avg_error: errs.iter().sum::<f64>() / errs.len() as f64,
            }
        })
        .collect();
    let max_error = series.iter().map(|s| s.2).fold(0.0, f64::max);
    let avg_error = series.iter().map(|s| s.2).sum::<f64>() / series.len() as f64;
    Ok(ErrorReport {
        basis,
        per_agent,
        max_error,
        avg_error,
        series,
    })
}

/// Everything written to `error_report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub success: bool,
    pub end_time: f64,
    pub arena_excursions: usize,
    pub actual: ErrorReport,
    pub estimated: ErrorReport,
}

impl RunReport {
    pub fn new(run: &SimRun, cfg: &SimConfig) -> Result<Self, SimError> {
        Ok(RunReport {
            method: run.method,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            success: run.success,
            end_time: run.end_time,
            arena_excursions: run.arena_excursions,
            actual: error_metrics(&run.log, ErrorBasis::ActualVsPlanned)?,
            estimated: error_metrics(&run.log, ErrorBasis::EstimatedVsPlanned)?,
        })
    }
}
