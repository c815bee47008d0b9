//! Turning timed plans into flight commands.
//!
//! Three command generators are provided:
//!
//! * **BHL**: one high-level "go to target within duration" command per plan
//!   segment, refined into setpoints on board.
//! * **BLL**: position setpoints streamed at a fixed period, linearly
//!   interpolated along the current segment.
//! * **VLL**: velocity commands that steer toward the active waypoint until
//!   the estimate enters a box around it.
//!
//! Executors are written against [`VehicleEndpoint`] so they can drive a
//! simulator or a hardware adapter. In a lockstep simulation each executor
//! is polled once per tick through [`Executor::step`].

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::plan::{TimedPlan, Waypoint};

/// Slack when comparing scheduled times against a tick-driven clock.
const CLOCK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CommandKind {
    HighLevelGoto { target: Vec3, duration: f64 },
    PositionSetpoint { target: Vec3 },
    VelocitySetpoint { velocity: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub issue_time: f64,
    pub kind: CommandKind,
}

impl Command {
    pub fn position(issue_time: f64, target: Vec3) -> Self {
        Command {
            issue_time,
            kind: CommandKind::PositionSetpoint { target },
        }
    }
}

pub trait VehicleEndpoint {
    fn send(&mut self, command: Command);
    fn estimated_position(&self) -> Vec3;
    fn clock(&self) -> f64;
    /// Blocks for `dt` seconds of the endpoint's clock. Lockstep simulators
    /// advance the clock themselves and may treat this as a no-op.
    fn delay(&mut self, dt: f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bhl,
    Bll,
    Vll,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Bhl, Method::Bll, Method::Vll];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Bhl => "bhl",
            Method::Bll => "bll",
            Method::Vll => "vll",
        })
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bhl" => Ok(Method::Bhl),
            "bll" => Ok(Method::Bll),
            "vll" => Ok(Method::Vll),
            other => Err(format!(
                "unknown method {other:?} (expected bhl, bll or vll)"
            )),
        }
    }
}

/// When VLL moves on from a waypoint whose box it has entered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VllAdvance {
    /// As soon as the box is entered.
    Immediate,
    /// Hover in the box until the waypoint's scheduled time.
    #[default]
    AtScheduledTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecConfig {
    /// Command period for BLL and VLL.
    pub period: f64,
    pub box_half_width: f64,
    pub cruise_speed: f64,
    pub vll_advance: VllAdvance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecEvent {
    /// The clock was already past the end of the plan at the first step.
    StartedLate { clock: f64, plan_end: f64 },
    /// VLL moved on from waypoint `index`.
    Advanced { index: usize, clock: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecStatus {
    Running,
    Finished,
}

pub trait Executor {
    /// Emits whatever commands are due at the endpoint's current clock.
    fn step(&mut self, endpoint: &mut dyn VehicleEndpoint) -> ExecStatus;
    fn is_finished(&self) -> bool;
    fn events(&self) -> &[ExecEvent];
}

pub fn make_executor(method: Method, plan: &TimedPlan, config: &ExecConfig) -> Box<dyn Executor> {
    match method {
        Method::Bhl => Box::new(BhlExecutor::new(plan)),
        Method::Bll => Box::new(BllExecutor::new(plan, config.period)),
        Method::Vll => Box::new(VllExecutor::new(plan, config)),
    }
}

/// Line-by-line transcription of the BLL loop for an endpoint whose
/// `delay` advances its clock. After the last waypoint a final setpoint at
/// the goal is sent so the vehicle holds there.
pub fn bll_execute<E: VehicleEndpoint + ?Sized>(
    plan: &TimedPlan,
    endpoint: &mut E,
    period: f64,
) -> Vec<ExecEvent> {
    let mut events = Vec::new();
    if endpoint.clock() > plan.arrival() {
        events.push(ExecEvent::StartedLate {
            clock: endpoint.clock(),
            plan_end: plan.arrival(),
        });
        log::warn!("agent {}: clock already past the plan end", plan.agent);
    }
    let mut last = plan.waypoints[0];
    for wp in &plan.waypoints {
        let d = wp.t - last.t;
        let v = if d > 0.0 {
            (wp.pos - last.pos) / d
        } else {
            Vec3::zeros()
        };
        while endpoint.clock() < wp.t {
            let now = endpoint.clock();
            let t_r = now - last.t;
            endpoint.send(Command::position(now, last.pos + v * t_r));
            endpoint.delay(period);
        }
        last = *wp;
    }
    endpoint.send(Command::position(endpoint.clock(), last.pos));
    events
}

/// BLL as a polled state machine; emits the same setpoints as
/// [`bll_execute`] when polled at every clock value it would have visited.
#[derive(Debug, Clone)]
pub struct BllExecutor {
    waypoints: Vec<Waypoint>,
    period: f64,
    next: usize,
    last: Waypoint,
    next_due: f64,
    started: bool,
    finished: bool,
    events: Vec<ExecEvent>,
}

impl BllExecutor {
    pub fn new(plan: &TimedPlan, period: f64) -> Self {
        BllExecutor {
            waypoints: plan.waypoints.clone(),
            period,
            next: 0,
            last: plan.waypoints[0],
            next_due: f64::NEG_INFINITY,
            started: false,
            finished: false,
            events: Vec::new(),
        }
    }
}

impl Executor for BllExecutor {
    fn step(&mut self, endpoint: &mut dyn VehicleEndpoint) -> ExecStatus {
        if self.finished {
            return ExecStatus::Finished;
        }
        let now = endpoint.clock();
        if !self.started {
            self.started = true;
            let end = self.waypoints.last().expect("nonempty plan").t;
            if now > end {
                self.events.push(ExecEvent::StartedLate {
                    clock: now,
                    plan_end: end,
                });
            }
        }
        if now + CLOCK_EPS < self.next_due {
            return ExecStatus::Running;
        }
        while let Some(wp) = self.waypoints.get(self.next) {
            if now < wp.t {
                let v = (wp.pos - self.last.pos) / (wp.t - self.last.t);
                endpoint.send(Command::position(
                    now,
                    self.last.pos + v * (now - self.last.t),
                ));
                self.next_due = now + self.period;
                return ExecStatus::Running;
            }
            self.last = *wp;
            self.next += 1;
        }
        endpoint.send(Command::position(now, self.last.pos));
        self.finished = true;
        ExecStatus::Finished
    }

    fn is_finished(&self) -> bool {
        self.finished
    }

    fn events(&self) -> &[ExecEvent] {
        &self.events
    }
}

/// One high-level goto per segment, issued at the segment's start time.
#[derive(Debug, Clone)]
pub struct BhlExecutor {
    waypoints: Vec<Waypoint>,
    next_segment: usize,
    started: bool,
    events: Vec<ExecEvent>,
}

impl BhlExecutor {
    pub fn new(plan: &TimedPlan) -> Self {
        BhlExecutor {
            waypoints: plan.waypoints.clone(),
            next_segment: 0,
            started: false,
            events: Vec::new(),
        }
    }
}

impl Executor for BhlExecutor {
    fn step(&mut self, endpoint: &mut dyn VehicleEndpoint) -> ExecStatus {
        let now = endpoint.clock();
        if !self.started {
            self.started = true;
            let end = self.waypoints.last().expect("nonempty plan").t;
            if now > end {
                self.events.push(ExecEvent::StartedLate {
                    clock: now,
                    plan_end: end,
                });
            }
        }
        while self.next_segment + 1 < self.waypoints.len()
            && now + CLOCK_EPS >= self.waypoints[self.next_segment].t
        {
            let (a, b) = (
                self.waypoints[self.next_segment],
                self.waypoints[self.next_segment + 1],
            );
            endpoint.send(Command {
                issue_time: now,
                kind: CommandKind::HighLevelGoto {
                    target: b.pos,
                    duration: b.t - a.t,
                },
            });
            self.next_segment += 1;
        }
        if self.is_finished() {
            ExecStatus::Finished
        } else {
            ExecStatus::Running
        }
    }

    fn is_finished(&self) -> bool {
        self.next_segment + 1 >= self.waypoints.len()
    }

    fn events(&self) -> &[ExecEvent] {
        &self.events
    }
}

/// One VLL decision: `true` when `estimated` lies in the closed box of
/// half-width `box_half_width` around the target (with a zero-velocity
/// command), otherwise a cruise-speed velocity toward the target.
pub fn vll_step(
    estimated: &Vec3,
    target: &Vec3,
    box_half_width: f64,
    cruise_speed: f64,
) -> (CommandKind, bool) {
    let delta = target - estimated;
    if delta.iter().all(|d| d.abs() <= box_half_width) {
        return (
            CommandKind::VelocitySetpoint {
                velocity: Vec3::zeros(),
            },
            true,
        );
    }
    let velocity = delta / delta.norm() * cruise_speed;
    (CommandKind::VelocitySetpoint { velocity }, false)
}

#[derive(Debug, Clone)]
pub struct VllExecutor {
    waypoints: Vec<Waypoint>,
    config: ExecConfig,
    next: usize,
    next_due: f64,
    events: Vec<ExecEvent>,
}

impl VllExecutor {
    pub fn new(plan: &TimedPlan, config: &ExecConfig) -> Self {
        VllExecutor {
            waypoints: plan.waypoints.clone(),
            config: *config,
            next: 0,
            next_due: f64::NEG_INFINITY,
            events: Vec::new(),
        }
    }

    pub fn active_waypoint(&self) -> Option<&Waypoint> {
        self.waypoints.get(self.next)
    }
}

impl Executor for VllExecutor {
    fn step(&mut self, endpoint: &mut dyn VehicleEndpoint) -> ExecStatus {
        let now = endpoint.clock();
        if now + CLOCK_EPS < self.next_due {
            return self.status();
        }
        self.next_due = now + self.config.period;
        let est = endpoint.estimated_position();
        let cfg = &self.config;
        while let Some(wp) = self.waypoints.get(self.next) {
            let (kind, inside) = vll_step(&est, &wp.pos, cfg.box_half_width, cfg.cruise_speed);
            let may_leave = match cfg.vll_advance {
                VllAdvance::Immediate => true,
                VllAdvance::AtScheduledTime => now + CLOCK_EPS >= wp.t,
            };
            if inside && may_leave {
                log::debug!("vll: reached waypoint {} at {now}", self.next);
                self.events.push(ExecEvent::Advanced {
                    index: self.next,
                    clock: now,
                });
                self.next += 1;
                continue;
            }
            endpoint.send(Command {
                issue_time: now,
                kind,
            });
            return ExecStatus::Running;
        }
        // Station-keeping on the goal once every waypoint is consumed.
        let goal = self.waypoints.last().expect("nonempty plan").pos;
        let (kind, _) = vll_step(&est, &goal, cfg.box_half_width, cfg.cruise_speed);
        endpoint.send(Command {
            issue_time: now,
            kind,
        });
        ExecStatus::Finished
    }

    fn is_finished(&self) -> bool {
        self.next >= self.waypoints.len()
    }

    fn events(&self) -> &[ExecEvent] {
        &self.events
    }
}

impl VllExecutor {
    fn status(&self) -> ExecStatus {
        if self.is_finished() {
            ExecStatus::Finished
        } else {
            ExecStatus::Running
        }
    }
}

/// One line of a command trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub agent: usize,
    pub issue_time: f64,
    pub variant: String,
    pub payload: Vec<f64>,
}

impl CommandRecord {
    pub fn new(agent: usize, command: &Command) -> Self {
        let (variant, payload) = match command.kind {
            CommandKind::HighLevelGoto { target, duration } => (
                "high_level_goto",
                vec![target.x, target.y, target.z, duration],
            ),
            CommandKind::PositionSetpoint { target } => {
                ("position_setpoint", vec![target.x, target.y, target.z])
            }
            CommandKind::VelocitySetpoint { velocity } => (
                "velocity_setpoint",
                vec![velocity.x, velocity.y, velocity.z],
            ),
        };
        CommandRecord {
            agent,
            issue_time: command.issue_time,
            variant: variant.into(),
            payload,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_command_trace(
    records: &[CommandRecord],
    path: impl AsRef<Path>,
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
