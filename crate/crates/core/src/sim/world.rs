use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grid::{Cell, GridMap, Heading, Occupancy};
use crate::kb::{Attribute, EntityId, KnowledgeBase, Value};
use crate::skill::{Environment, Tick};

pub const AT: &str = "at";
pub const HOLDING: &str = "holding";
pub const HANDEMPTY: &str = "handempty";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("illegal move: {0}")]
    IllegalMove(String),
    #[error("illegal action: {0}")]
    IllegalAction(String),
    #[error("bad event: {0}")]
    BadEvent(String),
}

/// Named rectangular region (inclusive bounds) with a navigation anchor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Room {
    pub entity: EntityId,
    pub name: String,
    pub min: Cell,
    pub max: Cell,
    pub anchor: Cell,
}

impl Room {
    pub fn contains(&self, c: Cell) -> bool {
        c.x >= self.min.x && c.x <= self.max.x && c.y >= self.min.y && c.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ObjectModel {
    pub id: EntityId,
    pub name: String,
    /// Footprint offsets relative to the anchor; the first is `(0,0)`.
    pub shape: Vec<Cell>,
    /// `None` while the object is held.
    pub anchor: Option<Cell>,
    pub curved_surface: bool,
    pub dof: u32,
    pub holder: Option<EntityId>,
}

impl ObjectModel {
    pub fn footprint(&self) -> BTreeSet<Cell> {
        self.footprint_at_anchor().unwrap_or_default()
    }

    fn footprint_at_anchor(&self) -> Option<BTreeSet<Cell>> {
        let anchor = self.anchor?;
        Some(self.shape.iter().map(|o| anchor.offset(*o)).collect())
    }

    pub fn cells_if_anchored(&self, anchor: Cell) -> Vec<Cell> {
        self.shape.iter().map(|o| anchor.offset(*o)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct PersonModel {
    pub id: EntityId,
    pub name: String,
    /// `None` once the person has left the map.
    pub cell: Option<Cell>,
    pub waypoints: VecDeque<Cell>,
    pub exit_at_end: bool,
    pub engaged: bool,
    pub holding: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct RobotState {
    pub entity: EntityId,
    pub cell: Cell,
    pub heading: Heading,
    pub holding: Option<EntityId>,
    pub head_target: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Move { heading: Heading },
    Rotate { heading: Heading },
    Grasp { object: EntityId },
    Release { object: EntityId, cell: Cell },
    HandOver { object: EntityId, person: EntityId },
    TrackHead { target: Option<EntityId> },
    Speak { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Injection {
    Tap,
    MoveObject { object: EntityId, to: Cell },
    Waypoints { person: EntityId, waypoints: Vec<Cell> },
    Engage { person: EntityId, engaged: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldEvent {
    Tap,
    ObjectMoved { object: EntityId, to: Cell },
    InjectionSkipped { reason: String },
    PersonRerouted { person: EntityId },
    PersonExited { person: EntityId },
    EngagementChanged { person: EntityId, engaged: bool },
    Spoke { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct WorldEventRecord {
    pub tick: Tick,
    #[serde(flatten)]
    pub event: WorldEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimConfig {
    pub visibility_radius: u32,
    pub follow_distance: u32,
    /// Ticks `detect_target` searches before giving up.
    pub redetect_budget: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            visibility_radius: 12,
            follow_distance: 2,
            redetect_budget: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub grid: GridMap,
    pub rooms: Vec<Room>,
    pub objects: BTreeMap<EntityId, ObjectModel>,
    pub people: Vec<PersonModel>,
    pub robot: RobotState,
    pub tick: Tick,
    pub seed: u64,
    pub config: SimConfig,
    injections: BTreeMap<Tick, Vec<Injection>>,
    taps: VecDeque<Tick>,
    engagements: VecDeque<(EntityId, Tick)>,
    speech: Vec<(Tick, String)>,
    pending_events: Vec<WorldEvent>,
}

pub struct StepResult {
    pub events: Vec<WorldEventRecord>,
    pub rejected: Vec<(usize, WorldError)>,
}

impl World {
    pub fn new(grid: GridMap, robot: RobotState, seed: u64, config: SimConfig) -> Self {
        World {
            grid,
            rooms: Vec::new(),
            objects: BTreeMap::new(),
            people: Vec::new(),
            robot,
            tick: 0,
            seed,
            config,
            injections: BTreeMap::new(),
            taps: VecDeque::new(),
            engagements: VecDeque::new(),
            speech: Vec::new(),
            pending_events: Vec::new(),
        }
    }

    pub fn add_room(&mut self, room: Room) {
        self.rooms.push(room);
    }

    /// Places a new object; fails if any footprint cell is not free.
    pub fn add_object(&mut self, object: ObjectModel) -> Result<(), WorldError> {
        let anchor = object
            .anchor
            .ok_or_else(|| WorldError::BadEvent(format!("object {} has no anchor", object.name)))?;
        for c in object.cells_if_anchored(anchor) {
            if !self.grid.is_free(c) || self.person_at(c).is_some() || self.robot.cell == c {
                return Err(WorldError::BadEvent(format!(
                    "object {} overlaps occupied cell {c}",
                    object.name
                )));
            }
        }
        for c in object.cells_if_anchored(anchor) {
            self.grid.set(c, Occupancy::Object(object.id));
        }
        self.objects.insert(object.id, object);
        Ok(())
    }

    pub fn add_person(&mut self, person: PersonModel) {
        self.people.push(person);
    }

    pub fn room(&self, id: EntityId) -> Option<&Room> {
        self.rooms.iter().find(|r| r.entity == id)
    }

    pub fn room_of(&self, c: Cell) -> Option<&Room> {
        self.rooms.iter().find(|r| r.contains(c))
    }

    pub fn person(&self, id: EntityId) -> Option<&PersonModel> {
        self.people.iter().find(|p| p.id == id)
    }

    pub fn person_at(&self, c: Cell) -> Option<&PersonModel> {
        self.people.iter().find(|p| p.cell == Some(c))
    }

    /// Free of walls, objects, people and the robot.
    pub fn is_open(&self, c: Cell) -> bool {
        self.grid.is_free(c) && self.person_at(c).is_none() && self.robot.cell != c
    }

    /// Cell the robot may move into.
    pub fn passable(&self, c: Cell) -> bool {
        self.grid.is_free(c) && self.person_at(c).is_none()
    }

    pub fn speech(&self) -> &[(Tick, String)] {
        &self.speech
    }

    /// Queues an injection for `tick`, which must lie in the future.
    pub fn inject(&mut self, tick: Tick, injection: Injection) -> Result<(), WorldError> {
        if tick <= self.tick {
            return Err(WorldError::BadEvent(format!(
                "tick {tick} is not after the current tick {}",
                self.tick
            )));
        }
        match &injection {
            Injection::Tap => {}
            Injection::MoveObject { object, to } => {
                let obj = self
                    .objects
                    .get(object)
                    .ok_or_else(|| WorldError::BadEvent(format!("unknown object {object}")))?;
                for c in obj.cells_if_anchored(*to) {
                    let own = self.grid.get(c) == Some(Occupancy::Object(*object));
                    if !own && !self.is_open(c) {
                        return Err(WorldError::BadEvent(format!("target cell {c} is occupied")));
                    }
                }
            }
            Injection::Waypoints { person, waypoints } => {
                self.person(*person)
                    .ok_or_else(|| WorldError::BadEvent(format!("unknown person {person}")))?;
                if let Some(c) = waypoints.iter().find(|c| !self.grid.in_bounds(**c)) {
                    return Err(WorldError::BadEvent(format!("waypoint {c} out of bounds")));
                }
            }
            Injection::Engage { person, .. } => {
                self.person(*person)
                    .ok_or_else(|| WorldError::BadEvent(format!("unknown person {person}")))?;
            }
        }
        self.injections.entry(tick).or_default().push(injection);
        Ok(())
    }

    pub fn take_tap(&mut self) -> Option<Tick> {
        self.taps.pop_front()
    }

    pub fn take_engagement(&mut self) -> Option<(EntityId, Tick)> {
        self.engagements.pop_front()
    }

    /// Applies one robot command immediately.
    pub fn apply(&mut self, command: &Command) -> Result<(), WorldError> {
        match command {
            Command::Move { heading } => {
                let to = self.robot.cell.step(*heading);
                if !self.passable(to) {
                    return Err(WorldError::IllegalMove(format!("cell {to} is occupied")));
                }
                self.robot.cell = to;
                self.robot.heading = *heading;
            }
            Command::Rotate { heading } => self.robot.heading = *heading,
            Command::Grasp { object } => {
                if self.robot.holding.is_some() {
                    return Err(WorldError::IllegalAction("hands are full".into()));
                }
                let robot_cell = self.robot.cell;
                let obj = self
                    .objects
                    .get_mut(object)
                    .ok_or_else(|| WorldError::IllegalAction(format!("unknown object {object}")))?;
                let cells = obj.footprint();
                if obj.holder.is_some() || !cells.iter().any(|c| c.manhattan(robot_cell) == 1) {
                    return Err(WorldError::IllegalAction(format!("{} is out of reach", obj.name)));
                }
                obj.anchor = None;
                obj.holder = Some(self.robot.entity);
                for c in cells {
                    self.grid.set(c, Occupancy::Free);
                }
                self.robot.holding = Some(*object);
            }
            Command::Release { object, cell } => {
                if self.robot.holding != Some(*object) {
                    return Err(WorldError::IllegalAction("not holding that object".into()));
                }
                if cell.manhattan(self.robot.cell) != 1 {
                    return Err(WorldError::IllegalAction(format!("cell {cell} is out of reach")));
                }
                let obj = &self.objects[object];
                let cells = obj.cells_if_anchored(*cell);
                if !cells.iter().all(|c| self.is_open(*c)) {
                    return Err(WorldError::IllegalAction(format!("no room at {cell}")));
                }
                for c in &cells {
                    self.grid.set(*c, Occupancy::Object(*object));
                }
                let obj = self.objects.get_mut(object).expect("held object");
                obj.anchor = Some(*cell);
                obj.holder = None;
                self.robot.holding = None;
            }
            Command::HandOver { object, person } => {
                if self.robot.holding != Some(*object) {
                    return Err(WorldError::IllegalAction("not holding that object".into()));
                }
                let robot_cell = self.robot.cell;
                let p = self
                    .people
                    .iter_mut()
                    .find(|p| p.id == *person)
                    .ok_or_else(|| WorldError::IllegalAction(format!("unknown person {person}")))?;
                match p.cell {
                    Some(c) if c.manhattan(robot_cell) <= 1 => {}
                    _ => return Err(WorldError::IllegalAction(format!("{} is out of reach", p.name))),
                }
                p.holding.push(*object);
                self.objects.get_mut(object).expect("held object").holder = Some(*person);
                self.robot.holding = None;
            }
            Command::TrackHead { target } => self.robot.head_target = *target,
            Command::Speak { text } => {
                self.speech.push((self.tick, text.clone()));
                self.pending_events.push(WorldEvent::Spoke { text: text.clone() });
            }
        }
        Ok(())
    }

    /// Applies `commands` in order, then advances to the next tick.
    pub fn step(&mut self, commands: &[Command]) -> StepResult {
        let mut rejected = Vec::new();
        for (i, cmd) in commands.iter().enumerate() {
            if let Err(e) = self.apply(cmd) {
                rejected.push((i, e));
            }
        }
        let next = self.tick + 1;
        let events = self.advance_to(next);
        StepResult { events, rejected }
    }

    /// Fires injections due at `tick` and moves scripted people one cell.
    pub fn advance_to(&mut self, tick: Tick) -> Vec<WorldEventRecord> {
        self.tick = tick;
        let mut events: Vec<WorldEvent> = std::mem::take(&mut self.pending_events);
        for injection in self.injections.remove(&tick).unwrap_or_default() {
            events.push(self.apply_injection(injection));
        }
        for i in 0..self.people.len() {
            if let Some(ev) = self.move_person(i) {
                events.push(ev);
            }
        }
        if let Some(target) = self.robot.head_target {
            if !self.person_visible(target) {
                self.robot.head_target = None;
            }
        }
        events
            .into_iter()
            .map(|event| WorldEventRecord { tick, event })
            .collect()
    }

    fn apply_injection(&mut self, injection: Injection) -> WorldEvent {
        match injection {
            Injection::Tap => {
                self.taps.push_back(self.tick);
                WorldEvent::Tap
            }
            Injection::MoveObject { object, to } => {
                let obj = &self.objects[&object];
                if obj.holder.is_some() {
                    return WorldEvent::InjectionSkipped {
                        reason: format!("{} is held", obj.name),
                    };
                }
                let old = obj.footprint();
                let new = obj.cells_if_anchored(to);
                let clear = new.iter().all(|c| {
                    old.contains(c) || self.is_open(*c)
                });
                if !clear {
                    return WorldEvent::InjectionSkipped {
                        reason: format!("target {to} became occupied"),
                    };
                }
                for c in old {
                    self.grid.set(c, Occupancy::Free);
                }
                for c in new {
                    self.grid.set(c, Occupancy::Object(object));
                }
                self.objects.get_mut(&object).expect("object").anchor = Some(to);
                WorldEvent::ObjectMoved { object, to }
            }
            Injection::Waypoints { person, waypoints } => {
                let p = self.people.iter_mut().find(|p| p.id == person).expect("person");
                p.waypoints = waypoints.into();
                WorldEvent::PersonRerouted { person }
            }
            Injection::Engage { person, engaged } => {
                let tick = self.tick;
                let p = self.people.iter_mut().find(|p| p.id == person).expect("person");
                p.engaged = engaged;
                if engaged {
                    self.engagements.push_back((person, tick));
                }
                WorldEvent::EngagementChanged { person, engaged }
            }
        }
    }

    /// One cell towards the next waypoint, x before y; waits when blocked.
    fn move_person(&mut self, idx: usize) -> Option<WorldEvent> {
        let cur = self.people[idx].cell?;
        while self.people[idx].waypoints.front() == Some(&cur) {
            self.people[idx].waypoints.pop_front();
        }
        let Some(&target) = self.people[idx].waypoints.front() else {
            if self.people[idx].exit_at_end {
                self.people[idx].cell = None;
                return Some(WorldEvent::PersonExited {
                    person: self.people[idx].id,
                });
            }
            return None;
        };
        let next = if target.x != cur.x {
            Cell::new(cur.x + (target.x - cur.x).signum(), cur.y)
        } else {
            Cell::new(cur.x, cur.y + (target.y - cur.y).signum())
        };
        if self.is_open(next) {
            self.people[idx].cell = Some(next);
            if next == target {
                self.people[idx].waypoints.pop_front();
            }
        }
        None
    }

    /// Line-of-sight visibility within the configured radius.
    pub fn can_see(&self, target: Cell) -> bool {
        super::sensing::visible_from(&self.grid, self.robot.cell, self.config.visibility_radius, target)
    }

    pub fn person_visible(&self, person: EntityId) -> bool {
        self.person(person)
            .and_then(|p| p.cell)
            .is_some_and(|c| self.can_see(c))
    }

    /// Rewrites the situated `at`/`holding`/`handempty` facts from ground truth.
    pub fn sync_kb(&self, kb: &mut KnowledgeBase) {
        let robot = self.robot.entity;
        let located = |kb: &mut KnowledgeBase, who: EntityId, cell: Option<Cell>| {
            kb.clear_attr(who, AT);
            if let Some(room) = cell.and_then(|c| self.room_of(c)) {
                kb.assert_attr(Attribute::new(who, AT, room.entity))
                    .expect("room entity");
            }
        };
        located(kb, robot, Some(self.robot.cell));
        kb.clear_attr(robot, HOLDING);
        kb.clear_attr(robot, HANDEMPTY);
        match self.robot.holding {
            Some(obj) => kb.assert_attr(Attribute::new(robot, HOLDING, obj)).expect("object"),
            None => kb
                .assert_attr(Attribute::new(robot, HANDEMPTY, Value::truth()))
                .expect("robot"),
        }
        for obj in self.objects.values() {
            located(kb, obj.id, obj.anchor);
        }
        for p in &self.people {
            located(kb, p.id, p.cell);
            kb.clear_attr(p.id, HOLDING);
            for obj in &p.holding {
                kb.assert_attr(Attribute::new(p.id, HOLDING, *obj)).expect("object");
            }
        }
    }

    /// Hash over every piece of mutable world state.
    pub fn state_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.grid.hash(&mut h);
        self.objects.hash(&mut h);
        self.people.hash(&mut h);
        self.robot.hash(&mut h);
        self.tick.hash(&mut h);
        self.seed.hash(&mut h);
        self.taps.hash(&mut h);
        self.speech.hash(&mut h);
        h.finish()
    }
}

/// Gives skills access to the simulated world inside a larger environment.
pub trait WorldAccess {
    fn world(&self) -> &World;
    fn world_mut(&mut self) -> &mut World;
}

impl WorldAccess for World {
    fn world(&self) -> &World {
        self
    }

    fn world_mut(&mut self) -> &mut World {
        self
    }
}

impl Environment for World {
    type Event = WorldEventRecord;

    fn advance(&mut self, tick: Tick) -> Vec<WorldEventRecord> {
        self.advance_to(tick)
    }

    fn settle(&mut self, kb: &mut KnowledgeBase) {
        self.sync_kb(kb);
    }
}
