//! Continuous-time multi-agent path finding for cylindrical agents on 3D
//! grids, and a deterministic simulator that flies the resulting plans with
//! simulated quadcopters.
//!
//! The pipeline is: [`world`] instance -> [`ccbs`] (with [`sipp`] as the
//! single-agent planner and [`geometry`] for conflicts) -> [`plan`] files ->
//! [`executor`] command generation -> [`flightsim`] tracking error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ccbs;
pub mod executor;
pub mod flightsim;
pub mod geometry;
pub mod plan;
pub mod sipp;
pub mod world;

pub use geometry::{CylinderBody, Interval, LinearMotion, Vec3};
pub use plan::{PlanSet, TimedPlan, Waypoint};
pub use world::{AgentSpec, Cell, Connectivity, GridWorld, Instance};
