//! Deterministic tick-based 2D world.
//!
//! The world hosts three kinds of scenario: household navigation, tabletop
//! block manipulation and an orchard route with obstacles. Everything in this
//! crate is a pure function of the world state and the commands applied to it;
//! trigonometry goes through `libm` so trajectories (and the golden state
//! hashes derived from them) do not depend on the platform's math library.

pub mod checkers;
pub mod geometry;
pub mod manip;
pub mod orchard;
pub mod sensor;
pub mod world;

pub use checkers::{check_sorted, check_stacked, check_swapped, CheckResult, Grouping};
pub use geometry::{Aabb, Vec2};
pub use manip::{ManipCommand, ManipError, ManipOk};
pub use orchard::{
    plan_detour, AnomalyNotice, ObstacleKind, Resolution, ResolutionEffect, Tractor, TractorState,
};
pub use sensor::{CameraObservation, Detection, SensorModel};
pub use world::{
    NavGoal, NavState, NavStatus, Pose2D, RunStatus, Wall, World, WorldError, WorldEvent,
    WorldFile, WorldObject,
};
