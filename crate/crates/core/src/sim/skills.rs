//! Skills acting on the simulated world.

use super::grid::{shortest_path, Cell, GridMap};
use super::sensing::{classify_movable, ground_map_diff, sense_ground};
use super::world::{Command, World, WorldAccess, AT, HOLDING};
use crate::kb::{Attribute, EntityId, Value};
use crate::skill::{
    Environment, ParamKind, Runtime, Skill, SkillDescriptor, SkillError, SkillOutcome, StepContext, Step,
};

/// Ticks a blocked navigation waits for a person to clear the way.
const BLOCKED_PATIENCE: u32 = 20;
/// Upper bound on approach moves towards a person.
const APPROACH_LIMIT: u32 = 400;

fn fail(reason: impl Into<String>) -> Step {
    Step::Finished(SkillOutcome::Failed(reason.into()))
}

fn succeed(payload: Vec<Attribute>) -> Step {
    Step::Finished(SkillOutcome::Succeeded(payload))
}

fn arg<E>(cx: &StepContext<'_, E>, name: &str) -> EntityId {
    cx.goal.entity(name).expect("validated entity argument")
}

enum Progress {
    Arrived,
    Moved,
    Blocked,
    NoPath,
}

/// Moves the robot one cell along a shortest path to a goal cell. Static
/// cells and objects are obstacles; a person on the next cell makes the
/// robot wait.
fn advance_towards(world: &mut World, is_goal: impl Fn(Cell) -> bool, avoid_people: bool) -> Progress {
    let start = world.robot.cell;
    if is_goal(start) {
        return Progress::Arrived;
    }
    let path = {
        let w = &*world;
        let passable = |c: Cell| w.grid.is_free(c) && (!avoid_people || w.person_at(c).is_none());
        shortest_path(&w.grid, start, &is_goal, passable)
    };
    let Some(path) = path else {
        return Progress::NoPath;
    };
    let next = path[0];
    let heading = start.heading_to(next).expect("adjacent path cell");
    match world.apply(&Command::Move { heading }) {
        Ok(()) if is_goal(next) => Progress::Arrived,
        Ok(()) => Progress::Moved,
        Err(_) => Progress::Blocked,
    }
}

pub struct NavigateTo {
    blocked: u32,
}

impl<E: WorldAccess> Skill<E> for NavigateTo {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let dest = arg(cx, "destination");
        let world = cx.env.world_mut();
        let Some(room) = world.room(dest) else {
            return fail("unknown destination");
        };
        let anchor = room.anchor;
        let robot = world.robot.entity;
        match advance_towards(world, |c| c == anchor, false) {
            Progress::Arrived => succeed(vec![Attribute::new(robot, AT, dest)]),
            Progress::Moved => {
                self.blocked = 0;
                Step::Running
            }
            Progress::Blocked => {
                self.blocked += 1;
                if self.blocked > BLOCKED_PATIENCE {
                    return fail("path blocked");
                }
                cx.feedback("waiting for the way to clear");
                Step::Running
            }
            Progress::NoPath => fail("no path"),
        }
    }
}

pub struct PickObject;

impl<E: WorldAccess> Skill<E> for PickObject {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let object = arg(cx, "object");
        let world = cx.env.world_mut();
        let robot = world.robot.entity;
        match world.robot.holding {
            Some(h) if h == object => return succeed(vec![Attribute::new(robot, HOLDING, object)]),
            Some(_) => return fail("hands full"),
            None => {}
        }
        let Some(obj) = world.objects.get(&object) else {
            return fail("unknown object");
        };
        let footprint = obj.footprint();
        let obj_room = footprint.first().and_then(|c| world.room_of(*c)).map(|r| r.entity);
        let robot_room = world.room_of(world.robot.cell).cloned();
        let Some(room) = robot_room.filter(|r| Some(r.entity) == obj_room) else {
            return fail("object not here");
        };
        let reach = |c: Cell| room.contains(c) && footprint.iter().any(|f| f.manhattan(c) == 1);
        if reach(world.robot.cell) {
            return match world.apply(&Command::Grasp { object }) {
                Ok(()) => succeed(vec![Attribute::new(robot, HOLDING, object)]),
                Err(e) => fail(e.to_string()),
            };
        }
        match advance_towards(world, |c| reach(c) && room.contains(c), true) {
            Progress::NoPath => fail("object unreachable"),
            _ => Step::Running,
        }
    }
}

/// Cells in the robot's region not reserved as a navigation anchor.
fn can_drop(world: &World, room: EntityId, cells: &[Cell]) -> bool {
    cells.iter().all(|c| {
        world.is_open(*c)
            && world.room_of(*c).map(|r| r.entity) == Some(room)
            && world.rooms.iter().all(|r| r.anchor != *c)
    })
}

pub struct PlaceObject;

impl<E: WorldAccess> Skill<E> for PlaceObject {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let object = arg(cx, "object");
        let world = cx.env.world_mut();
        if world.robot.holding != Some(object) {
            return fail("not holding the object");
        }
        let Some(room) = world.room_of(world.robot.cell).map(|r| r.entity) else {
            return fail("not in a known location");
        };
        let obj = &world.objects[&object];
        let spot = world
            .robot
            .cell
            .neighbors()
            .find(|c| can_drop(world, room, &obj.cells_if_anchored(*c)));
        let Some(cell) = spot else {
            return fail("no free spot");
        };
        match world.apply(&Command::Release { object, cell }) {
            Ok(()) => succeed(vec![Attribute::new(object, AT, room)]),
            Err(e) => fail(e.to_string()),
        }
    }
}

/// Walks up to a person; `Some(step)` ends the approach.
fn approach_person(world: &mut World, person: EntityId, moves: &mut u32) -> Option<Step> {
    let Some(cell) = world.person(person).and_then(|p| p.cell) else {
        return Some(fail("person not found"));
    };
    if world.robot.cell.manhattan(cell) == 1 {
        return None;
    }
    *moves += 1;
    if *moves > APPROACH_LIMIT {
        return Some(fail("person unreachable"));
    }
    match advance_towards(world, |c| c.manhattan(cell) == 1, true) {
        Progress::NoPath => Some(fail("person unreachable")),
        _ => Some(Step::Running),
    }
}

pub struct HandOver {
    moves: u32,
}

impl<E: WorldAccess> Skill<E> for HandOver {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let object = arg(cx, "object");
        let person = arg(cx, "person");
        let world = cx.env.world_mut();
        if world.robot.holding != Some(object) {
            return fail("not holding the object");
        }
        if let Some(step) = approach_person(world, person, &mut self.moves) {
            return step;
        }
        match world.apply(&Command::HandOver { object, person }) {
            Ok(()) => succeed(vec![Attribute::new(person, HOLDING, object)]),
            Err(e) => fail(e.to_string()),
        }
    }
}

pub struct Speak;

impl<E: WorldAccess> Skill<E> for Speak {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let text = cx.goal.text("text").unwrap_or_default().to_string();
        match cx.env.world_mut().apply(&Command::Speak { text }) {
            Ok(()) => succeed(Vec::new()),
            Err(e) => fail(e.to_string()),
        }
    }
}

/// Simulated clock: the day starts at 08:00 and one tick is one minute.
pub fn clock_text(tick: u64) -> String {
    let minutes = 8 * 60 + tick;
    format!("{:02}:{:02}", (minutes / 60) % 24, minutes % 60)
}

pub struct AnswerQuestion {
    moves: u32,
}

impl<E: WorldAccess> Skill<E> for AnswerQuestion {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let person = arg(cx, "person");
        let question = cx.goal.text("question").unwrap_or_default().to_string();
        let tick = cx.tick;
        let world = cx.env.world_mut();
        if let Some(step) = approach_person(world, person, &mut self.moves) {
            return step;
        }
        let text = match question.as_str() {
            "time" => format!("It is {}.", clock_text(tick)),
            other => format!("I do not know the answer to {other}."),
        };
        match world.apply(&Command::Speak { text }) {
            Ok(()) => succeed(Vec::new()),
            Err(e) => fail(e.to_string()),
        }
    }
}

pub struct DetectTarget {
    misses: u32,
}

impl<E: WorldAccess> Skill<E> for DetectTarget {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let target = arg(cx, "target");
        let world = cx.env.world();
        if world.person_visible(target) {
            return succeed(Vec::new());
        }
        self.misses += 1;
        if self.misses >= world.config.redetect_budget {
            return fail("target not found");
        }
        cx.feedback(format!("searching ({} misses)", self.misses));
        Step::Running
    }
}

pub struct TrackHead;

impl<E: WorldAccess> Skill<E> for TrackHead {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let target = arg(cx, "target");
        let world = cx.env.world_mut();
        if !world.person_visible(target) {
            return fail("target not visible");
        }
        match world.apply(&Command::TrackHead { target: Some(target) }) {
            Ok(()) => succeed(Vec::new()),
            Err(e) => fail(e.to_string()),
        }
    }
}

/// Keeps within follow distance of a visible person; never succeeds.
pub struct NavigateToTarget;

impl<E: WorldAccess> Skill<E> for NavigateToTarget {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let target = arg(cx, "target");
        let world = cx.env.world_mut();
        if !world.person_visible(target) {
            return fail("target lost");
        }
        let cell = world.person(target).and_then(|p| p.cell).expect("visible person");
        let reach = world.config.follow_distance.max(1);
        match advance_towards(world, |c| c.manhattan(cell) <= reach && c != cell, true) {
            Progress::NoPath => fail("target unreachable"),
            _ => Step::Running,
        }
    }
}

pub struct TapDetector;

impl<E: WorldAccess> Skill<E> for TapDetector {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        match cx.env.world_mut().take_tap() {
            Some(at) => {
                cx.feedback(format!("tap at tick {at}"));
                succeed(Vec::new())
            }
            None => Step::Running,
        }
    }
}

pub struct EngagementDetector;

impl<E: WorldAccess> Skill<E> for EngagementDetector {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        match cx.env.world_mut().take_engagement() {
            Some((person, _)) => succeed(vec![Attribute::new(person, "engaged", Value::truth())]),
            None => Step::Running,
        }
    }
}

pub struct FindObject;

impl<E: WorldAccess> Skill<E> for FindObject {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let category = arg(cx, "category");
        let world = cx.env.world_mut();
        let Some(room) = world.room_of(world.robot.cell).map(|r| r.entity) else {
            return fail("not in a known location");
        };
        let found = world.objects.values().find(|o| {
            let cells = o.footprint();
            cx.kb.is_a(o.id, category).unwrap_or(false)
                && cells.iter().any(|c| world.can_see(*c))
                && cells.first().and_then(|c| world.room_of(*c)).map(|r| r.entity) == Some(room)
        });
        let Some(found) = found.map(|o| (o.id, o.name.clone())) else {
            return fail(format!("no {} here", cx.kb.name_of(category)));
        };
        let _ = world.apply(&Command::Speak {
            text: format!("I found the {}.", found.1),
        });
        succeed(vec![Attribute::new(found.0, AT, room)])
    }
}

/// Long-running placeholder used while the executive waits for events.
pub struct Idle;

impl<E> Skill<E> for Idle {
    fn step(&mut self, _cx: &mut StepContext<'_, E>) -> Step {
        Step::Running
    }
}

pub const GROUND_CHANGES: &str = "ground_changes";

/// Records the ground map once, then compares every tick's sensor frame
/// with it; succeeds on the first tick that shows a change.
pub struct GroundChangeMonitor {
    baseline: Option<GridMap>,
}

impl<E: WorldAccess> Skill<E> for GroundChangeMonitor {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let world = cx.env.world();
        let Some(baseline) = &self.baseline else {
            self.baseline = Some(world.grid.clone());
            return Step::Running;
        };
        let clusters = ground_map_diff(baseline, &sense_ground(world));
        if clusters.is_empty() {
            return Step::Running;
        }
        let robot = world.robot.entity;
        for c in &clusters {
            let cells: Vec<String> = c.iter().map(ToString::to_string).collect();
            cx.feedback(format!("changed cells {}", cells.join(" ")));
        }
        succeed(vec![Attribute::new(robot, GROUND_CHANGES, clusters.len() as f64)])
    }
}

pub const MOVABLE: &str = "movable";

/// Classifies every visible object by its movability metadata.
pub struct MovableScan;

impl<E: WorldAccess> Skill<E> for MovableScan {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        let world = cx.env.world();
        let payload = world
            .objects
            .values()
            .filter(|o| o.footprint().iter().any(|c| world.can_see(*c)))
            .map(|o| {
                let verdict = if classify_movable(o) { "true" } else { "false" };
                Attribute::new(o.id, MOVABLE, verdict)
            })
            .collect();
        succeed(payload)
    }
}

/// Descriptors of every simulated skill, in registration order.
pub fn descriptors() -> Vec<SkillDescriptor> {
    use ParamKind::*;
    vec![
        SkillDescriptor::new("navigate_to").param("destination", LocationRef),
        SkillDescriptor::new("pick_object").param("object", EntityRef),
        SkillDescriptor::new("place_object").param("object", EntityRef),
        SkillDescriptor::new("hand_over").param("object", EntityRef).param("person", PersonRef),
        SkillDescriptor::new("speak").param("text", Text),
        SkillDescriptor::new("answer_question").param("person", PersonRef).param("question", Text),
        SkillDescriptor::new("detect_target").param("target", PersonRef),
        SkillDescriptor::new("track_head").param("target", PersonRef),
        SkillDescriptor::new("navigate_to_target").param("target", PersonRef),
        SkillDescriptor::new("tap_detector"),
        SkillDescriptor::new("engagement_detector"),
        SkillDescriptor::new("find_object").param("category", EntityRef),
        SkillDescriptor::new("idle"),
        SkillDescriptor::new("ground_change_monitor"),
        SkillDescriptor::new("movable_scan"),
    ]
}

fn behavior<E: WorldAccess + 'static>(name: &str) -> fn() -> Box<dyn Skill<E>> {
    match name {
        "navigate_to" => || Box::new(NavigateTo { blocked: 0 }),
        "pick_object" => || Box::new(PickObject),
        "place_object" => || Box::new(PlaceObject),
        "hand_over" => || Box::new(HandOver { moves: 0 }),
        "speak" => || Box::new(Speak),
        "answer_question" => || Box::new(AnswerQuestion { moves: 0 }),
        "detect_target" => || Box::new(DetectTarget { misses: 0 }),
        "track_head" => || Box::new(TrackHead),
        "navigate_to_target" => || Box::new(NavigateToTarget),
        "tap_detector" => || Box::new(TapDetector),
        "engagement_detector" => || Box::new(EngagementDetector),
        "find_object" => || Box::new(FindObject),
        "idle" => || Box::new(Idle),
        "ground_change_monitor" => || Box::new(GroundChangeMonitor { baseline: None }),
        "movable_scan" => || Box::new(MovableScan),
        other => unreachable!("no behavior for {other}"),
    }
}

pub fn register_sim_skills<E>(rt: &mut Runtime<E>) -> Result<(), SkillError>
where
    E: Environment + WorldAccess + 'static,
{
    for desc in descriptors() {
        let make = behavior::<E>(&desc.name);
        rt.register_skill(desc, move |_| make())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{EntityKind, KnowledgeBase};
    use crate::sim::Scenario;
    use crate::skill::{ArgValue, Supervisor, SkillGoal};

    const FLAT: &str = r#"{
        "name": "flat", "seed": 3, "width": 14, "height": 9,
        "walls": [{"min": [7, 1], "max": [7, 5]}],
        "regions": [
            {"name": "kitchen", "min": [1, 1], "max": [6, 7], "anchor": [3, 4]},
            {"name": "hall", "min": [7, 1], "max": [12, 7], "anchor": [10, 4]}
        ],
        "categories": [{"name": "drink"}],
        "objects": [{"name": "coke", "category": "drink", "cells": [[2, 2]], "curved_surface": true}],
        "people": [{"name": "alice", "cell": [11, 6]}],
        "robot": {"cell": [10, 4]}
    }"#;

    fn runtime() -> Runtime<World> {
        let (world, kb) = Scenario::from_json(FLAT).unwrap().build().unwrap();
        let mut rt = Runtime::new(world, kb);
        register_sim_skills(&mut rt).unwrap();
        rt
    }

    fn id(kb: &KnowledgeBase, name: &str) -> EntityId {
        kb.lookup(EntityKind::Instance, name).unwrap()
    }

    fn goal(rt: &Runtime<World>, skill: &str, args: &[(&str, &str)]) -> SkillGoal {
        args.iter().fold(SkillGoal::new(skill, Supervisor::Reactive), |g, (k, v)| {
            g.arg(*k, ArgValue::Entity(id(rt.kb(), v)))
        })
    }

    #[test]
    fn navigation_takes_path_length_ticks() {
        let mut rt = runtime();
        let world = rt.env();
        let anchor = Cell::new(3, 4);
        let l = shortest_path(&world.grid, world.robot.cell, |c| c == anchor, |c| world.grid.is_free(c))
            .unwrap()
            .len() as u64;
        let h = rt.dispatch(goal(&rt, "navigate_to", &[("destination", "kitchen")])).unwrap();
        let out = rt.await_outcome(h.id, 100).unwrap();
        assert!(out.is_success());
        assert_eq!(rt.outcome_tick(h.id), Some(l));
        assert_eq!(rt.env().robot.cell, anchor);
    }

    #[test]
    fn cancel_freezes_pose() {
        let mut rt = runtime();
        let h = rt.dispatch(goal(&rt, "navigate_to", &[("destination", "kitchen")])).unwrap();
        for _ in 0..3 {
            rt.tick();
        }
        rt.cancel(h.id).unwrap();
        let before = rt.env().robot.cell;
        rt.tick();
        assert_eq!(rt.outcome(h.id).unwrap(), Some(&SkillOutcome::Preempted));
        rt.tick();
        assert_eq!(rt.env().robot.cell, before);
    }

    #[test]
    fn pick_then_place_round_trips_footprint() {
        let mut rt = runtime();
        let coke = id(rt.kb(), "coke");
        let robot = id(rt.kb(), "robot");
        let h = rt.dispatch(goal(&rt, "pick_object", &[("object", "coke")])).unwrap();
        assert_eq!(
            rt.await_outcome(h.id, 50).unwrap(),
            SkillOutcome::Failed("object not here".into())
        );
        let h = rt.dispatch(goal(&rt, "navigate_to", &[("destination", "kitchen")])).unwrap();
        rt.await_outcome(h.id, 100).unwrap();
        let h = rt.dispatch(goal(&rt, "pick_object", &[("object", "coke")])).unwrap();
        assert_eq!(
            rt.await_outcome(h.id, 50).unwrap(),
            SkillOutcome::Succeeded(vec![Attribute::new(robot, HOLDING, coke)])
        );
        assert!(rt.env().objects[&coke].footprint().is_empty());
        assert!(rt.env().grid.cells().all(|(_, o)| o != crate::sim::Occupancy::Object(coke)));
        let h = rt.dispatch(goal(&rt, "place_object", &[("object", "coke")])).unwrap();
        assert!(rt.await_outcome(h.id, 5).unwrap().is_success());
        assert_eq!(rt.env().objects[&coke].footprint().len(), 1);
        rt.tick();
        let kitchen = id(rt.kb(), "kitchen");
        assert!(rt.kb().holds(&Attribute::new(coke, AT, kitchen)));
    }

    #[test]
    fn tap_detector_reports_injected_tap() {
        let mut rt = runtime();
        rt.env_mut().inject(5, super::super::Injection::Tap).unwrap();
        let h = rt.dispatch(SkillGoal::new("tap_detector", Supervisor::Reactive)).unwrap();
        assert!(rt.await_outcome(h.id, 20).unwrap().is_success());
        assert_eq!(rt.outcome_tick(h.id), Some(5));
    }

    #[test]
    fn detect_target_gives_up_after_budget() {
        let mut rt = runtime();
        // alice is in the hall, the robot too; move the robot out of sight first
        let h = rt.dispatch(goal(&rt, "navigate_to", &[("destination", "kitchen")])).unwrap();
        rt.await_outcome(h.id, 100).unwrap();
        let h = rt.dispatch(goal(&rt, "detect_target", &[("target", "alice")])).unwrap();
        let start = rt.now();
        let out = rt.await_outcome(h.id, 20).unwrap();
        if rt.env().person_visible(id(rt.kb(), "alice")) {
            assert!(out.is_success());
        } else {
            assert_eq!(out, SkillOutcome::Failed("target not found".into()));
            assert_eq!(rt.outcome_tick(h.id), Some(start + 3));
        }
    }
}
