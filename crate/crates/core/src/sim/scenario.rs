use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grid::{Cell, GridMap, Heading, Occupancy};
use super::world::{Injection, ObjectModel, PersonModel, RobotState, Room, SimConfig, World};
use crate::kb::{Attribute, EntityId, EntityKind, KnowledgeBase, INSTANCE_OF, SUBCLASS_OF};
use crate::skill::Tick;

pub const ROBOT: &str = "robot";

/// Concepts every scenario starts with, as (name, parent).
const BASE_CONCEPTS: [(&str, Option<&str>); 7] = [
    ("thing", None),
    ("object", Some("thing")),
    ("location", Some("thing")),
    ("room", Some("location")),
    ("furniture", Some("location")),
    ("agent", Some("thing")),
    ("person", Some("agent")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Cell,
    pub max: Cell,
}

impl Rect {
    pub fn cells(self) -> impl Iterator<Item = Cell> {
        (self.min.y..=self.max.y).flat_map(move |y| (self.min.x..=self.max.x).map(move |x| Cell::new(x, y)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    #[serde(default = "default_region_category")]
    pub category: String,
    pub min: Cell,
    pub max: Cell,
    pub anchor: Cell,
}

fn default_region_category() -> String {
    "room".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    #[serde(default = "default_parent")]
    pub parent: String,
}

fn default_parent() -> String {
    "object".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub category: String,
    /// Absolute footprint; the first cell is the anchor.
    pub cells: Vec<Cell>,
    #[serde(default)]
    pub curved_surface: bool,
    #[serde(default)]
    pub dof: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonSpec {
    pub name: String,
    pub cell: Cell,
    #[serde(default)]
    pub waypoints: Vec<Cell>,
    #[serde(default)]
    pub exit_at_end: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub cell: Cell,
    #[serde(default)]
    pub heading: Heading,
}

/// Injection addressed by entity name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InjectionSpec {
    Tap { tick: Tick },
    MoveObject { tick: Tick, object: String, to: Cell },
    Waypoints { tick: Tick, person: String, waypoints: Vec<Cell> },
    Engage { tick: Tick, person: String, #[serde(default = "yes")] engaged: bool },
}

fn yes() -> bool {
    true
}

impl InjectionSpec {
    pub fn tick(&self) -> Tick {
        match self {
            InjectionSpec::Tap { tick }
            | InjectionSpec::MoveObject { tick, .. }
            | InjectionSpec::Waypoints { tick, .. }
            | InjectionSpec::Engage { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub walls: Vec<Rect>,
    #[serde(default)]
    pub regions: Vec<RegionSpec>,
    #[serde(default)]
    pub categories: Vec<CategorySpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub people: Vec<PersonSpec>,
    pub robot: RobotSpec,
    #[serde(default)]
    pub injections: Vec<InjectionSpec>,
    #[serde(default)]
    pub sim: SimConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Builds the world and a knowledge base holding the concept network,
    /// one instance per region/object/person, and the initial situated facts.
    pub fn build(&self) -> Result<(World, KnowledgeBase), ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);
        if self.width < 3 || self.height < 3 {
            return Err(invalid("grid must be at least 3x3".into()));
        }
        let mut kb = KnowledgeBase::new();
        let concept = |kb: &mut KnowledgeBase, name: &str| {
            kb.upsert_entity(EntityKind::Concept, name)
                .map_err(|e| invalid(e.to_string()))
        };
        let mut edges = Vec::new();
        for (name, parent) in BASE_CONCEPTS {
            let id = concept(&mut kb, name)?;
            if let Some(p) = parent {
                edges.push((id, p.to_string()));
            }
        }
        for c in &self.categories {
            let id = concept(&mut kb, &c.name)?;
            edges.push((id, c.parent.clone()));
        }
        for (id, parent) in edges {
            let p = kb
                .lookup(EntityKind::Concept, &parent)
                .ok_or_else(|| invalid(format!("unknown parent category {parent:?}")))?;
            kb.assert_attr(Attribute::new(id, SUBCLASS_OF, p))
                .map_err(|e| invalid(e.to_string()))?;
        }
        let instance = |kb: &mut KnowledgeBase, name: &str, class: &str| -> Result<EntityId, ScenarioError> {
            let c = kb
                .lookup(EntityKind::Concept, class)
                .ok_or_else(|| invalid(format!("unknown category {class:?} for {name:?}")))?;
            if kb.lookup(EntityKind::Instance, name).is_some() {
                return Err(invalid(format!("duplicate name {name:?}")));
            }
            let id = kb
                .upsert_entity(EntityKind::Instance, name)
                .map_err(|e| invalid(e.to_string()))?;
            kb.assert_attr(Attribute::new(id, INSTANCE_OF, c))
                .map_err(|e| invalid(e.to_string()))?;
            Ok(id)
        };

        let robot_id = instance(&mut kb, ROBOT, "agent")?;
        let mut grid = GridMap::new(self.width, self.height);
        for w in &self.walls {
            for c in w.cells() {
                grid.set(c, Occupancy::Static);
            }
        }
        let robot = RobotState {
            entity: robot_id,
            cell: self.robot.cell,
            heading: self.robot.heading,
            holding: None,
            head_target: None,
        };
        if !grid.is_free(robot.cell) {
            return Err(invalid(format!("robot start {} is not free", robot.cell)));
        }
        let mut world = World::new(grid, robot, self.seed, self.sim);

        for r in &self.regions {
            let class = kb
                .lookup(EntityKind::Concept, &r.category)
                .ok_or_else(|| invalid(format!("unknown category {:?}", r.category)))?;
            let location = kb.lookup(EntityKind::Concept, "location").expect("base concept");
            if !kb.is_a(class, location).unwrap_or(false) {
                return Err(invalid(format!("region {:?} is not a location", r.name)));
            }
            let id = instance(&mut kb, &r.name, &r.category)?;
            world.add_room(Room {
                entity: id,
                name: r.name.clone(),
                min: r.min,
                max: r.max,
                anchor: r.anchor,
            });
        }
        for r in &world.rooms {
            if world.room_of(r.anchor).map(|x| x.entity) != Some(r.entity) || !world.grid.is_free(r.anchor) {
                return Err(invalid(format!("anchor of {:?} must be a free cell that resolves to it", r.name)));
            }
        }

        for o in &self.objects {
            let object = kb.lookup(EntityKind::Concept, "object").expect("base concept");
            let class = kb
                .lookup(EntityKind::Concept, &o.category)
                .ok_or_else(|| invalid(format!("unknown category {:?}", o.category)))?;
            if !kb.is_a(class, object).unwrap_or(false) {
                return Err(invalid(format!("category {:?} is not an object category", o.category)));
            }
            let Some(&anchor) = o.cells.first() else {
                return Err(invalid(format!("object {:?} has an empty footprint", o.name)));
            };
            if !connected(&o.cells) {
                return Err(invalid(format!("object {:?} footprint is not connected", o.name)));
            }
            let id = instance(&mut kb, &o.name, &o.category)?;
            world
                .add_object(ObjectModel {
                    id,
                    name: o.name.clone(),
                    shape: o.cells.iter().map(|c| Cell::new(c.x - anchor.x, c.y - anchor.y)).collect(),
                    anchor: Some(anchor),
                    curved_surface: o.curved_surface,
                    dof: o.dof,
                    holder: None,
                })
                .map_err(|e| invalid(e.to_string()))?;
        }

        for p in &self.people {
            if !world.is_open(p.cell) {
                return Err(invalid(format!("person {:?} starts on an occupied cell", p.name)));
            }
            if let Some(c) = p.waypoints.iter().find(|c| !world.grid.in_bounds(**c)) {
                return Err(invalid(format!("waypoint {c} of {:?} out of bounds", p.name)));
            }
            let id = instance(&mut kb, &p.name, "person")?;
            world.add_person(PersonModel {
                id,
                name: p.name.clone(),
                cell: Some(p.cell),
                waypoints: p.waypoints.iter().copied().collect(),
                exit_at_end: p.exit_at_end,
                engaged: false,
                holding: Vec::new(),
            });
        }

        for inj in &self.injections {
            let resolve = |name: &str| {
                kb.lookup(EntityKind::Instance, name)
                    .ok_or_else(|| invalid(format!("injection names unknown entity {name:?}")))
            };
            let injection = match inj {
                InjectionSpec::Tap { .. } => Injection::Tap,
                InjectionSpec::MoveObject { object, to, .. } => Injection::MoveObject {
                    object: resolve(object)?,
                    to: *to,
                },
                InjectionSpec::Waypoints { person, waypoints, .. } => Injection::Waypoints {
                    person: resolve(person)?,
                    waypoints: waypoints.clone(),
                },
                InjectionSpec::Engage { person, engaged, .. } => Injection::Engage {
                    person: resolve(person)?,
                    engaged: *engaged,
                },
            };
            world
                .inject(inj.tick(), injection)
                .map_err(|e| invalid(e.to_string()))?;
        }

        world.sync_kb(&mut kb);
        Ok((world, kb))
    }
}

fn connected(cells: &[Cell]) -> bool {
    let mut seen = vec![cells[0]];
    let mut stack = vec![cells[0]];
    while let Some(c) = stack.pop() {
        for n in c.neighbors() {
            if cells.contains(&n) && !seen.contains(&n) {
                seen.push(n);
                stack.push(n);
            }
        }
    }
    seen.len() == cells.iter().collect::<std::collections::BTreeSet<_>>().len()
}
