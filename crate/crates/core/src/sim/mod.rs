//! Deterministic grid-world apartment.

pub mod grid;
pub mod scenario;
pub mod sensing;
pub mod skills;
pub mod world;

pub use grid::{shortest_path, Cell, GridMap, Heading, Occupancy};
pub use scenario::{Scenario, ScenarioError, ROBOT};
pub use sensing::{classify_movable, ground_map_diff, sense_ground, SensorFrame};
pub use skills::register_sim_skills;
pub use world::{Command, Injection, SimConfig, World, WorldAccess, WorldError, WorldEvent, WorldEventRecord};
