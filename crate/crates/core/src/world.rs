//! Grid instances: a 3D occupancy grid embedded in metric space plus the
//! agents that fly in it.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CylinderBody, Vec3};

pub const DEFAULT_CELL_SIZE: f64 = 0.5;
pub const DEFAULT_SPEED: f64 = 0.5;

/// Integer grid coordinate `(i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell(pub [i32; 3]);

impl Cell {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Cell([i, j, k])
    }

    pub fn offset(&self, d: [i32; 3]) -> Cell {
        Cell([self.0[0] + d[0], self.0[1] + d[1], self.0[2] + d[2]])
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[default]
    #[serde(rename = "face-6")]
    Face6,
    /// Face neighbors plus the four diagonals in the horizontal plane.
    #[serde(rename = "face+planar-diag-10")]
    PlanarDiagonal10,
    #[serde(rename = "full-26")]
    Full26,
}

impl Connectivity {
    pub fn offsets(&self) -> Vec<[i32; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    let keep = match self {
                        Connectivity::Face6 => nonzero == 1,
                        Connectivity::PlanarDiagonal10 => nonzero == 1 || (nonzero == 2 && dz == 0),
                        Connectivity::Full26 => nonzero >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("cell {0} is outside the grid")]
    OutOfBounds(Cell),
    #[error("cell {0} is an obstacle")]
    Blocked(Cell),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    dims: [usize; 3],
    cell_size: f64,
    obstacles: BTreeSet<Cell>,
    connectivity: Connectivity,
    blocked: Vec<bool>,
}

impl GridWorld {
    pub fn new(
        dims: [usize; 3],
        cell_size: f64,
        obstacles: impl IntoIterator<Item = Cell>,
        connectivity: Connectivity,
    ) -> Result<Self, WorldError> {
        if dims.iter().any(|&d| d == 0 || d > i32::MAX as usize) {
            return Err(WorldError::InvalidGrid(format!(
                "dims {dims:?} must all be >= 1"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(WorldError::InvalidGrid(format!(
                "cell_size {cell_size} must be > 0"
            )));
        }
        let total = dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .filter(|&n| n <= 1 << 26)
            .ok_or_else(|| WorldError::InvalidGrid(format!("dims {dims:?} too large")))?;
        let mut world = GridWorld {
            dims,
            cell_size,
            obstacles: BTreeSet::new(),
            connectivity,
            blocked: vec![false; total],
        };
        for c in obstacles {
            if !world.in_bounds(c) {
                return Err(WorldError::InvalidGrid(format!(
                    "obstacle {c} is outside the grid"
                )));
            }
            let idx = world.index(c);
            world.blocked[idx] = true;
            world.obstacles.insert(c);
        }
        Ok(world)
    }

    /// Obstacle-free grid with default cell size and face connectivity.
    pub fn open(dims: [usize; 3]) -> Self {
        GridWorld::new(dims, DEFAULT_CELL_SIZE, [], Connectivity::Face6).expect("valid dims")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn obstacles(&self) -> impl Iterator<Item = &Cell> {
        self.obstacles.iter()
    }

    pub fn num_cells(&self) -> usize {
        self.blocked.len()
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0.iter()
            .zip(self.dims)
            .all(|(&v, d)| v >= 0 && (v as usize) < d)
    }

    /// Row-major index of an in-bounds cell.
    pub fn index(&self, c: Cell) -> usize {
        let [i, j, k] = c.0.map(|v| v as usize);
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let i = index % self.dims[0];
        let j = (index / self.dims[0]) % self.dims[1];
        let k = index / (self.dims[0] * self.dims[1]);
        Cell::new(i as i32, j as i32, k as i32)
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.blocked[self.index(c)]
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells()).map(|i| self.cell_at(i))
    }

    /// Metric position of the cell center.
    pub fn position(&self, c: Cell) -> Vec3 {
        let [i, j, k] = c.0.map(|v| (v as f64 + 0.5) * self.cell_size);
        Vec3::new(i, j, k)
    }

    /// The cell whose center is at `p` (within 1e-9 m), if any.
    pub fn cell_of(&self, p: &Vec3) -> Option<Cell> {
        let mut idx = [0i32; 3];
        for (axis, v) in p.iter().enumerate() {
            let f = v / self.cell_size - 0.5;
            let r = f.round();
            if !r.is_finite() || (f - r).abs() * self.cell_size > 1e-9 {
                return None;
            }
            idx[axis] = r as i32;
        }
        let c = Cell(idx);
        self.in_bounds(c).then_some(c)
    }

    /// Cells touched by the straight segment between the centers of two
    /// cells that differ by at most one along each axis: the whole box
    /// spanned by the two cells.
    fn swept_cells(&self, from: Cell, d: [i32; 3]) -> impl Iterator<Item = Cell> {
        let range = |v: i32| {
            if v == 0 {
                0..=0
            } else if v > 0 {
                0..=1
            } else {
                -1..=0
            }
        };
        let (rx, ry, rz) = (range(d[0]), range(d[1]), range(d[2]));
        rz.flat_map(move |z| {
            let rx = rx.clone();
            ry.clone()
                .flat_map(move |y| rx.clone().map(move |x| from.offset([x, y, z])))
        })
    }

    /// Free cells reachable in one move from `cell`, without corner cutting.
    pub fn neighbors(&self, cell: Cell) -> Result<Vec<Cell>, WorldError> {
        if !self.in_bounds(cell) {
            return Err(WorldError::OutOfBounds(cell));
        }
        if !self.is_free(cell) {
            return Err(WorldError::Blocked(cell));
        }
        Ok(self
            .connectivity
            .offsets()
            .into_iter()
            .filter(|&d| self.swept_cells(cell, d).all(|c| self.is_free(c)))
            .map(|d| cell.offset(d))
            .collect())
    }

    /// Whether `to` is a valid single move from `from` under this world's
    /// connectivity.
    pub fn is_move(&self, from: Cell, to: Cell) -> bool {
        if !self.is_free(from) || !self.is_free(to) || from == to {
            return false;
        }
        let d = [
            to.0[0] - from.0[0],
            to.0[1] - from.0[1],
            to.0[2] - from.0[2],
        ];
        self.connectivity.offsets().contains(&d)
            && self.swept_cells(from, d).all(|c| self.is_free(c))
    }

    pub fn distance(&self, a: Cell, b: Cell) -> f64 {
        (self.position(a) - self.position(b)).norm()
    }

    /// The action of flying `from -> to` at `speed`; a wait if the cells are
    /// equal, with zero duration left for the caller to choose.
    pub fn move_action(&self, from: Cell, to: Cell, speed: f64) -> MoveAction {
        MoveAction {
            from,
            to,
            duration: self.distance(from, to) / speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveAction {
    pub from: Cell,
    pub to: Cell,
    pub duration: f64,
}

impl MoveAction {
    pub fn is_wait(&self) -> bool {
        self.from == self.to
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: usize,
    pub start: Cell,
    pub goal: Cell,
    pub body: CylinderBody,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub world: GridWorld,
    pub agents: Vec<AgentSpec>,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl InstanceError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        InstanceError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for InstanceError {
    fn from(e: serde_json::Error) -> Self {
        InstanceError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

fn default_cell_size() -> f64 {
    DEFAULT_CELL_SIZE
}
fn default_radius() -> f64 {
    CylinderBody::default().radius
}
fn default_height() -> f64 {
    CylinderBody::default().height
}
fn default_speed() -> f64 {
    DEFAULT_SPEED
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    dims: [usize; 3],
    #[serde(default = "default_cell_size")]
    cell_size: f64,
    #[serde(default)]
    obstacles: Vec<Cell>,
    #[serde(default)]
    connectivity: Connectivity,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    id: usize,
    start: Cell,
    goal: Cell,
    #[serde(default = "default_radius")]
    radius: f64,
    #[serde(default = "default_height")]
    height: f64,
    #[serde(default = "default_speed")]
    speed: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    grid: GridFile,
    agents: Vec<AgentFile>,
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_instance(&text)
}

pub fn save_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let path = path.as_ref();
    std::fs::write(path, instance.to_json()).map_err(|source| InstanceError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Parses and fully validates an instance document.
pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let file: InstanceFile = serde_json::from_str(text)?;
    let world = GridWorld::new(
        file.grid.dims,
        file.grid.cell_size,
        file.grid.obstacles.iter().copied(),
        file.grid.connectivity,
    )
    .map_err(|e| InstanceError::invalid("grid", e.to_string()))?;

    let mut agents: Vec<AgentSpec> = Vec::with_capacity(file.agents.len());
    for a in &file.agents {
        let field = |name: &str| format!("agents[id={}].{name}", a.id);
        let body = CylinderBody::new(a.radius, a.height)
            .map_err(|e| InstanceError::invalid(field("body"), e.to_string()))?;
        if !(a.speed > 0.0 && a.speed.is_finite()) {
            return Err(InstanceError::invalid(
                field("speed"),
                format!("{} must be > 0", a.speed),
            ));
        }
        for (name, c) in [("start", a.start), ("goal", a.goal)] {
            if !world.in_bounds(c) {
                return Err(InstanceError::invalid(
                    field(name),
                    format!("agent {} {name} {c} is outside the grid", a.id),
                ));
            }
            if !world.is_free(c) {
                return Err(InstanceError::invalid(
                    field(name),
                    format!("agent {} {name} {c} is on an obstacle", a.id),
                ));
            }
        }
        agents.push(AgentSpec {
            id: a.id,
            start: a.start,
            goal: a.goal,
            body,
            speed: a.speed,
        });
    }
    agents.sort_by_key(|a| a.id);
    for (expected, a) in agents.iter().enumerate() {
        if a.id != expected {
            let message = if expected > 0 && agents[expected - 1].id == a.id {
                format!("duplicate agent id {}", a.id)
            } else {
                format!("agent ids must be contiguous from 0; missing {expected}")
            };
            return Err(InstanceError::invalid("agents", message));
        }
    }
    for (i, a) in agents.iter().enumerate() {
        for b in &agents[i + 1..] {
            if a.start == b.start {
                return Err(InstanceError::invalid(
                    "agents",
                    format!("agents {} and {} share start {}", a.id, b.id, a.start),
                ));
            }
            if a.goal == b.goal {
                return Err(InstanceError::invalid(
                    "agents",
                    format!("agents {} and {} share goal {}", a.id, b.id, a.goal),
                ));
            }
        }
    }
    Ok(Instance { world, agents })
}

impl Instance {
    /// Canonical JSON form: agents sorted by id, obstacles sorted, all keys
    /// present.
    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            grid: GridFile {
                dims: self.world.dims,
                cell_size: self.world.cell_size,
                obstacles: self.world.obstacles.iter().copied().collect(),
                connectivity: self.world.connectivity,
            },
            agents: self
                .agents
                .iter()
                .map(|a| AgentFile {
                    id: a.id,
                    start: a.start,
                    goal: a.goal,
                    radius: a.body.radius,
                    height: a.body.height,
                    speed: a.speed,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("instance serializes");
        s.push('\n');
        s
    }

    pub fn bodies(&self) -> Vec<CylinderBody> {
        self.agents.iter().map(|a| a.body).collect()
    }
}
