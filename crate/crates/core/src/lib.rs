//! Simulation, design search and learned in-flight attitude control for a
//! jumping quadruped with five-bar legs.
//!
//! Module map, bottom-up:
//! - [`geom`]: quaternions and mass properties
//! - [`linkage`]: five-bar leg kinematics and the knee spring
//! - [`robot`]: design parameters to a physical model, collision proxies
//! - [`servo`]: saturated PD motor model
//! - [`flight`]: momentum-conserving flight-phase attitude dynamics and test rigs
//! - [`jump`]: planar stance and ballistic jump simulation
//! - [`primitives`]: open-loop reorientation strokes
//! - [`designopt`]: grid search with weighted scoring
//! - [`rlenv`]: the attitude-control environment
//! - [`ppo`]: network, GAE and the PPO learner
//! - [`eval`]: scripted scenarios for trained policies
//! - [`config`]: TOML run configuration
//! - [`trace`]: per-tick CSV logging

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod designopt;
pub mod error;
pub mod eval;
pub mod flight;
pub mod geom;
pub mod jump;
pub mod linkage;
pub mod ppo;
pub mod primitives;
pub mod rlenv;
pub mod robot;
pub mod servo;
pub mod trace;

pub use error::{Error, Result};
pub use config::RunConfig;
pub use flight::{Axis, FlightConfig, Mode, SimState};
pub use geom::{Inertia, Quat, Vec3};
pub use linkage::{JointLimits, LegGeometry};
pub use ppo::{Checkpoint, PpoConfig};
pub use rlenv::{Env, EnvConfig};
pub use robot::{DesignParams, MotorSpec, RobotModel};
