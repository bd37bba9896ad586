//! Composition root: simulator, skills, executive, planner and dialog wired
//! into one session driven tick by tick.

pub mod env;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use env::{register_skills, CommandBoard, CommandDialog, OperatorIo, SimEnv, PROMPT};

use crate::deliberative::{Domain, GoalEpisode};
use crate::dialog::{Language, Speaker};
use crate::executive::{ExecutiveStatus, Executive, MachineSet};
use crate::sim::{Cell, Heading, Injection, Occupancy, Scenario};
use crate::skill::{Runtime, SkillOutcome, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{file}: {diagnostic}")]
pub struct ConfigError {
    pub file: String,
    pub diagnostic: String,
}

impl ConfigError {
    fn new(file: &str, diagnostic: impl fmt::Display) -> Self {
        ConfigError {
            file: file.to_string(),
            diagnostic: diagnostic.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum InputError {
    #[error("not accepting input: tap the robot first")]
    NotAcceptingInput,
}

/// A configuration file's name (for diagnostics) and contents.
#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub text: String,
}

impl Source {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(&name, e))?;
        Ok(Source { name, text })
    }

    pub fn inline(name: &str, text: &str) -> Self {
        Source {
            name: name.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigPaths {
    pub scenario: PathBuf,
    pub grammar: PathBuf,
    pub tasks: PathBuf,
    pub domain: PathBuf,
    pub machines: PathBuf,
}

impl ConfigPaths {
    /// The shipped file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        ConfigPaths {
            scenario: dir.join("apartment.scenario.json"),
            grammar: dir.join("gpsr.grammar"),
            tasks: dir.join("tasks.json"),
            domain: dir.join("domain.json"),
            machines: dir.join("machines.json"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sources {
    pub scenario: Source,
    pub grammar: Source,
    pub tasks: Source,
    pub domain: Source,
    pub machines: Source,
}

impl Sources {
    pub fn read(paths: &ConfigPaths) -> Result<Self, ConfigError> {
        Ok(Sources {
            scenario: Source::read(&paths.scenario)?,
            grammar: Source::read(&paths.grammar)?,
            tasks: Source::read(&paths.tasks)?,
            domain: Source::read(&paths.domain)?,
            machines: Source::read(&paths.machines)?,
        })
    }
}

/// One line of the session trace and of the live event stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub tick: Tick,
    pub kind: String,
    pub path: String,
    pub detail: serde_json::Value,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t", self.tick, self.path, self.kind)?;
        match &self.detail {
            serde_json::Value::String(s) => f.write_str(s),
            other => write!(f, "{other}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    pub tick: Tick,
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanView {
    pub goal: String,
    /// 1-based number of the newest plan; 0 before the first.
    pub plan: usize,
    pub steps: Vec<String>,
    pub current: Option<usize>,
    pub replans: usize,
    /// Milestones of this goal, none referring past `plan`.
    pub milestones: Vec<serde_json::Value>,
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoomView {
    pub name: String,
    pub min: Cell,
    pub max: Cell,
    pub anchor: Cell,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RobotView {
    pub cell: Cell,
    pub heading: Heading,
    pub holding: Option<String>,
    pub head_target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ObjectView {
    pub name: String,
    pub cells: Vec<Cell>,
    pub holder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PersonView {
    pub name: String,
    pub cell: Option<Cell>,
    pub engaged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorldView {
    pub width: usize,
    pub height: usize,
    pub static_cells: Vec<Cell>,
    pub rooms: Vec<RoomView>,
    pub robot: RobotView,
    pub objects: Vec<ObjectView>,
    pub people: Vec<PersonView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionState {
    pub scenario: String,
    pub tick: Tick,
    pub status: ExecutiveStatus,
    pub path: String,
    pub listening: bool,
    pub plan: Option<PlanView>,
    pub transcript: Vec<TranscriptEntry>,
    pub world: WorldView,
}

/// Timed operator input for headless runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptInput {
    /// Applied when the session clock reads `tick`, before the next tick.
    Tap { tick: Tick },
    Say { tick: Tick, text: String },
}

impl ScriptInput {
    pub fn tick(&self) -> Tick {
        match self {
            ScriptInput::Tap { tick } | ScriptInput::Say { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub ticks: Tick,
    #[serde(default)]
    pub inputs: Vec<ScriptInput>,
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

struct PlanTracker {
    view: PlanView,
    live: bool,
}

pub struct System {
    rt: Runtime<SimEnv>,
    exec: Executive,
    lang: Arc<Language>,
    scenario: String,
    outbox: Vec<EventRecord>,
    trace_seen: usize,
    speech_seen: usize,
    transcript: Vec<TranscriptEntry>,
    plan: Option<PlanTracker>,
}

fn fault(file: &Source, e: impl fmt::Display) -> ConfigError {
    ConfigError::new(&file.name, e)
}

impl System {
    pub fn load(paths: &ConfigPaths) -> Result<Self, ConfigError> {
        System::from_sources(&Sources::read(paths)?)
    }

    /// Builds the world, skills, language, domain and executive, then starts
    /// the top machine.
    pub fn from_sources(src: &Sources) -> Result<Self, ConfigError> {
        let scenario = Scenario::from_json(&src.scenario.text).map_err(|e| fault(&src.scenario, e))?;
        let (world, mut kb) = scenario.build().map_err(|e| fault(&src.scenario, e))?;
        let domain = Domain::from_json(&src.domain.text, &mut kb).map_err(|e| fault(&src.domain, e))?;
        let lang = Language::load(&src.grammar.text, &src.tasks.text, &kb).map_err(|e| {
            let file = match e {
                crate::dialog::LanguageError::Grammar(_) => &src.grammar,
                _ => &src.tasks,
            };
            fault(file, e)
        })?;
        let lang = Arc::new(lang);
        let mut rt = Runtime::new(SimEnv::new(world), kb);
        register_skills(&mut rt, lang.clone()).expect("built-in skills register once");
        rt.close_registration();
        domain
            .check_skills(|s| rt.descriptor(s).is_some())
            .map_err(|e| fault(&src.domain, e))?;
        let set = MachineSet::from_json(&src.machines.text).map_err(|e| fault(&src.machines, e))?;
        let exec = Executive::new(set, &rt)
            .map_err(|e| fault(&src.machines, e))?
            .with_domain(Arc::new(domain));
        let mut system = System {
            rt,
            exec,
            lang,
            scenario: scenario.name.clone(),
            outbox: Vec::new(),
            trace_seen: 0,
            speech_seen: 0,
            transcript: Vec::new(),
            plan: None,
        };
        system
            .exec
            .start(&mut system.rt)
            .map_err(|e| fault(&src.machines, e))?;
        system.collect_exec();
        Ok(system)
    }

    pub fn runtime(&self) -> &Runtime<SimEnv> {
        &self.rt
    }

    pub fn executive(&self) -> &Executive {
        &self.exec
    }

    pub fn language(&self) -> &Language {
        &self.lang
    }

    pub fn now(&self) -> Tick {
        self.rt.now()
    }

    pub fn is_listening(&self) -> bool {
        self.rt.env().io.is_listening()
    }

    /// Operator text for the command dialog; read on the next tick.
    pub fn handle_utterance(&mut self, text: &str) -> Result<(), InputError> {
        if self.rt.env_mut().io.offer(text) {
            Ok(())
        } else {
            let record = self.record("rejected", serde_json::json!({ "text": text, "error": "not_accepting_input" }));
            self.outbox.push(record);
            Err(InputError::NotAcceptingInput)
        }
    }

    /// Same path as a physical tap: the simulator sees it on the next tick.
    pub fn handle_tap(&mut self) {
        let next = self.rt.now() + 1;
        self.rt
            .env_mut()
            .world
            .inject(next, Injection::Tap)
            .expect("next tick is in the future");
    }

    fn record(&self, kind: &str, detail: serde_json::Value) -> EventRecord {
        EventRecord {
            tick: self.rt.now(),
            kind: kind.into(),
            path: self.exec.path(),
            detail,
        }
    }

    fn collect_exec(&mut self) {
        let fresh: Vec<_> = self.exec.trace()[self.trace_seen..].to_vec();
        self.trace_seen = self.exec.trace().len();
        for r in fresh {
            let detail = match r.kind.as_str() {
                "milestone" => serde_json::from_str(&r.detail).expect("milestone json"),
                _ => serde_json::Value::String(r.detail),
            };
            if r.kind == "delegate" {
                self.plan = Some(PlanTracker {
                    view: PlanView {
                        goal: detail.as_str().unwrap_or_default().to_string(),
                        plan: 0,
                        steps: Vec::new(),
                        current: None,
                        replans: 0,
                        milestones: Vec::new(),
                        outcome: None,
                    },
                    live: true,
                });
            }
            if r.kind == "milestone" {
                if let Some(t) = &mut self.plan {
                    t.view.milestones.push(detail.clone());
                }
            }
            self.outbox.push(EventRecord {
                tick: r.tick,
                kind: r.kind,
                path: r.path,
                detail,
            });
        }
    }

    fn track_plan(&mut self) {
        let Some(tracker) = &mut self.plan else { return };
        if !tracker.live {
            return;
        }
        let view = &mut tracker.view;
        let episode: Option<&GoalEpisode> = self
            .exec
            .active_episode()
            .or_else(|| self.exec.episodes().last());
        let Some(ep) = episode else { return };
        if ep.plans().len() > view.plan {
            let plan = ep.plans().last().expect("plan");
            let steps: Vec<String> = plan.steps.iter().map(|s| s.name.clone()).collect();
            view.plan = ep.plans().len();
            view.steps = steps.clone();
            view.replans = ep.replans();
            let detail = serde_json::json!({ "plan": view.plan, "steps": steps, "cost": plan.cost });
            let record = EventRecord {
                tick: self.rt.now(),
                kind: "plan".into(),
                path: self.exec.path(),
                detail,
            };
            self.outbox.push(record);
        }
        let view = &mut self.plan.as_mut().expect("tracker").view;
        view.current = ep.execution().and_then(|x| x.current_step());
        if self.exec.active_episode().is_none() {
            let tracker = self.plan.as_mut().expect("tracker");
            tracker.live = false;
            tracker.view.current = None;
            tracker.view.outcome = Some(
                match tracker.view.milestones.last().and_then(|m| m.get("kind")).and_then(|k| k.as_str()) {
                    Some("goal_achieved") => "achieved",
                    Some("goal_abandoned") => "abandoned",
                    _ => "preempted",
                }
                .to_string(),
            );
        }
    }

    /// Advances the whole system by one tick and returns the records it
    /// produced, in order.
    pub fn tick(&mut self) -> Vec<EventRecord> {
        let report = self.rt.tick();
        for ev in &report.events {
            let detail = serde_json::to_value(&ev.event).expect("world events serialize");
            let r = self.record("world", detail);
            self.outbox.push(r);
        }
        for id in &report.activated {
            let goal = self.rt.goal(*id).map(|g| g.describe(self.rt.kb())).unwrap_or_default();
            let r = self.record("skill_start", serde_json::Value::String(format!("{id} {goal}")));
            self.outbox.push(r);
        }
        for f in &report.feedback {
            let r = self.record("feedback", serde_json::Value::String(format!("{} {}", f.invocation, f.note)));
            self.outbox.push(r);
        }
        for o in &report.outcomes {
            let detail = match &o.outcome {
                SkillOutcome::Failed(reason) => format!("{} {} failed: {reason}", o.invocation, o.skill),
                other => format!("{} {} {}", o.invocation, o.skill, other.label()),
            };
            let r = self.record("skill_outcome", serde_json::Value::String(detail));
            self.outbox.push(r);
        }
        self.collect_speech();
        if let Some(agenda) = self.rt.env_mut().board.agenda.take() {
            self.exec.set_agenda(agenda);
        }
        self.exec.step(&mut self.rt, &report);
        self.collect_exec();
        self.track_plan();
        std::mem::take(&mut self.outbox)
    }

    fn collect_speech(&mut self) {
        let mut turns: Vec<TranscriptEntry> = self
            .rt
            .env_mut()
            .io
            .take_heard()
            .into_iter()
            .map(|(tick, t)| TranscriptEntry {
                tick,
                speaker: t.speaker,
                text: t.text,
            })
            .collect();
        let speech = self.rt.env().world.speech();
        turns.extend(speech[self.speech_seen..].iter().map(|(tick, text)| TranscriptEntry {
            tick: *tick,
            speaker: Speaker::Robot,
            text: text.clone(),
        }));
        self.speech_seen = speech.len();
        // operator input is read before the robot answers in the same tick
        turns.sort_by_key(|t| (t.tick, t.speaker == Speaker::Robot));
        for t in turns {
            let kind = match t.speaker {
                Speaker::Robot => "say",
                Speaker::Operator => "hear",
            };
            let r = self.record(kind, serde_json::Value::String(t.text.clone()));
            self.outbox.push(r);
            self.transcript.push(t);
        }
    }

    /// Records produced since the last tick (start-up, rejected input).
    pub fn take_pending(&mut self) -> Vec<EventRecord> {
        std::mem::take(&mut self.outbox)
    }

    pub fn state(&self) -> SessionState {
        let world = &self.rt.env().world;
        let kb = self.rt.kb();
        let name = |e| kb.name_of(e).to_string();
        let plan = self.plan.as_ref().map(|t| {
            let mut v = t.view.clone();
            let limit = v.plan;
            v.milestones
                .retain(|m| m.get("plan").and_then(|p| p.as_u64()).is_some_and(|p| p as usize <= limit));
            v
        });
        SessionState {
            scenario: self.scenario.clone(),
            tick: self.rt.now(),
            status: self.exec.status().clone(),
            path: self.exec.path(),
            listening: self.is_listening(),
            plan,
            transcript: self.transcript.clone(),
            world: WorldView {
                width: world.grid.width(),
                height: world.grid.height(),
                static_cells: world
                    .grid
                    .cells()
                    .filter(|(_, o)| *o == Occupancy::Static)
                    .map(|(c, _)| c)
                    .collect(),
                rooms: world
                    .rooms
                    .iter()
                    .map(|r| RoomView {
                        name: r.name.clone(),
                        min: r.min,
                        max: r.max,
                        anchor: r.anchor,
                    })
                    .collect(),
                robot: RobotView {
                    cell: world.robot.cell,
                    heading: world.robot.heading,
                    holding: world.robot.holding.map(name),
                    head_target: world.robot.head_target.map(name),
                },
                objects: world
                    .objects
                    .values()
                    .map(|o| ObjectView {
                        name: o.name.clone(),
                        cells: o.footprint().into_iter().collect(),
                        holder: o.holder.map(name),
                    })
                    .collect(),
                people: world
                    .people
                    .iter()
                    .map(|p| PersonView {
                        name: p.name.clone(),
                        cell: p.cell,
                        engaged: p.engaged,
                    })
                    .collect(),
            },
        }
    }

    /// Runs a script headlessly and returns every record, start-up included.
    pub fn run_script(&mut self, script: &Script) -> Vec<EventRecord> {
        let mut out = self.take_pending();
        let mut inputs: Vec<&ScriptInput> = script.inputs.iter().collect();
        inputs.sort_by_key(|i| i.tick());
        let mut next = 0;
        let end = self.rt.now() + script.ticks;
        while self.rt.now() < end {
            while next < inputs.len() && inputs[next].tick() <= self.rt.now() {
                match inputs[next] {
                    ScriptInput::Tap { .. } => self.handle_tap(),
                    ScriptInput::Say { text, .. } => {
                        let _ = self.handle_utterance(text);
                    }
                }
                next += 1;
            }
            out.extend(self.take_pending());
            out.extend(self.tick());
            if !self.exec.is_running() {
                break;
            }
        }
        out
    }
}

/// Trace text, one record per line.
pub fn trace_text(records: &[EventRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}
