//! Skill pool and the tick loop that drives it.
//!
//! A skill is a cooperative step function. The [`Runtime`] owns the
//! environment, the knowledge base and every invocation; callers talk to it
//! through [`Runtime::dispatch`], [`Runtime::cancel`] and
//! [`Runtime::await_outcome`], which are serialized through an internal
//! command queue drained at the start of each tick.
//!
//! Timing, with `now` the last completed tick:
//!
//! * a goal dispatched at `now = t` is activated and stepped for the first
//!   time during tick `t + 1`;
//! * a cancel requested at `now = c` turns an unfinished invocation into
//!   `Preempted` during tick `c + 1`, before the skill steps again.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{Attribute, EntityId, KnowledgeBase};

pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    EntityRef,
    LocationRef,
    PersonRef,
    Text,
    Number,
}

impl ParamKind {
    fn accepts(self, value: &ArgValue) -> bool {
        matches!(
            (self, value),
            (
                ParamKind::EntityRef | ParamKind::LocationRef | ParamKind::PersonRef,
                ArgValue::Entity(_)
            ) | (ParamKind::Text, ArgValue::Text(_))
                | (ParamKind::Number, ArgValue::Number(_))
        )
    }

    pub fn is_entity(self) -> bool {
        matches!(
            self,
            ParamKind::EntityRef | ParamKind::LocationRef | ParamKind::PersonRef
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillDescriptor {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub cancellable: bool,
}

impl SkillDescriptor {
    pub fn new(name: impl Into<String>) -> Self {
        SkillDescriptor {
            name: name.into(),
            params: Vec::new(),
            cancellable: true,
        }
    }

    pub fn param(mut self, name: impl Into<String>, kind: ParamKind) -> Self {
        self.params.push(ParamSpec {
            name: name.into(),
            kind,
        });
        self
    }

    pub fn kind_of(&self, param: &str) -> Option<ParamKind> {
        self.params.iter().find(|p| p.name == param).map(|p| p.kind)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Entity(EntityId),
    Number(f64),
    Text(String),
}

impl PartialEq for ArgValue {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ArgValue::Entity(a), ArgValue::Entity(b)) => a == b,
            (ArgValue::Number(a), ArgValue::Number(b)) => a.to_bits() == b.to_bits(),
            (ArgValue::Text(a), ArgValue::Text(b)) => a == b,
            _ => false,
        }
    }
}

impl ArgValue {
    pub fn as_entity(&self) -> Option<EntityId> {
        match self {
            ArgValue::Entity(e) => Some(*e),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ArgValue::Text(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            ArgValue::Number(n) => Some(*n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervisor {
    Reactive,
    Deliberative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillGoal {
    pub skill: String,
    pub args: BTreeMap<String, ArgValue>,
    pub supervisor: Supervisor,
}

impl SkillGoal {
    pub fn new(skill: impl Into<String>, supervisor: Supervisor) -> Self {
        SkillGoal {
            skill: skill.into(),
            args: BTreeMap::new(),
            supervisor,
        }
    }

    pub fn arg(mut self, name: impl Into<String>, value: ArgValue) -> Self {
        self.args.insert(name.into(), value);
        self
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.args.get(name).and_then(ArgValue::as_entity)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.args.get(name).and_then(ArgValue::as_text)
    }

    /// Renders `skill(arg=value, ...)` with entity names resolved through `kb`.
    pub fn describe(&self, kb: &KnowledgeBase) -> String {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|(k, v)| match v {
                ArgValue::Entity(e) => format!("{k}={}", kb.name_of(*e)),
                ArgValue::Number(n) => format!("{k}={n}"),
                ArgValue::Text(t) => format!("{k}={t:?}"),
            })
            .collect();
        format!("{}({})", self.skill, args.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InvocationId(pub u64);

impl fmt::Display for InvocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "inv{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillFeedback {
    pub invocation: InvocationId,
    pub note: String,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "lowercase")]
pub enum SkillOutcome {
    Succeeded(Vec<Attribute>),
    Failed(String),
    Preempted,
}

impl SkillOutcome {
    /// Transition label used by state machines.
    pub fn label(&self) -> &'static str {
        match self {
            SkillOutcome::Succeeded(_) => "succeeded",
            SkillOutcome::Failed(_) => "failed",
            SkillOutcome::Preempted => "preempted",
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, SkillOutcome::Succeeded(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvocationState {
    Pending,
    Active,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InvocationHandle {
    pub id: InvocationId,
    pub skill: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkillError {
    #[error("skill {0:?} is already registered")]
    DuplicateSkill(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("registration is closed once the runtime has started ticking")]
    RegistrationClosed,
    #[error("unknown skill {0:?}")]
    UnknownSkill(String),
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
    #[error("unexpected parameter {0:?}")]
    UnexpectedParameter(String),
    #[error("parameter {0:?} has the wrong kind")]
    KindMismatch(String),
    #[error("unknown invocation {0}")]
    UnknownInvocation(InvocationId),
    #[error("skill {0:?} cannot be cancelled")]
    NotCancellable(String),
    #[error("timed out waiting for {0}")]
    Timeout(InvocationId),
}

/// World the skills act on. `advance` runs at the start of each tick,
/// `settle` after every skill has stepped.
pub trait Environment {
    type Event: Clone + fmt::Debug;

    fn advance(&mut self, tick: Tick) -> Vec<Self::Event>;

    fn settle(&mut self, _kb: &mut KnowledgeBase) {}
}

impl Environment for () {
    type Event = ();

    fn advance(&mut self, _tick: Tick) -> Vec<()> {
        Vec::new()
    }
}

pub enum Step {
    Running,
    Finished(SkillOutcome),
}

pub struct StepContext<'a, E> {
    pub env: &'a mut E,
    pub kb: &'a mut KnowledgeBase,
    pub tick: Tick,
    pub goal: &'a SkillGoal,
    pub invocation: InvocationId,
    feedback: &'a mut Vec<SkillFeedback>,
}

impl<E> StepContext<'_, E> {
    pub fn feedback(&mut self, note: impl Into<String>) {
        self.feedback.push(SkillFeedback {
            invocation: self.invocation,
            note: note.into(),
            tick: self.tick,
        });
    }
}

pub trait Skill<E>: Send {
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step;

    /// Called once when the invocation is preempted.
    fn cancelled(&mut self, _cx: &mut StepContext<'_, E>) {}
}

impl<E, F> Skill<E> for F
where
    F: FnMut(&mut StepContext<'_, E>) -> Step + Send,
{
    fn step(&mut self, cx: &mut StepContext<'_, E>) -> Step {
        self(cx)
    }
}

pub type SkillFactory<E> = Box<dyn Fn(&SkillGoal) -> Box<dyn Skill<E>> + Send>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeRecord {
    pub invocation: InvocationId,
    pub skill: String,
    pub supervisor: Supervisor,
    pub outcome: SkillOutcome,
    pub tick: Tick,
}

#[derive(Debug, Clone)]
pub struct TickReport<Ev> {
    pub tick: Tick,
    pub events: Vec<Ev>,
    pub activated: Vec<InvocationId>,
    pub outcomes: Vec<OutcomeRecord>,
    pub feedback: Vec<SkillFeedback>,
}

impl<Ev> TickReport<Ev> {
    pub fn outcome_of(&self, id: InvocationId) -> Option<&OutcomeRecord> {
        self.outcomes.iter().find(|o| o.invocation == id)
    }
}

struct Registered<E> {
    descriptor: SkillDescriptor,
    factory: SkillFactory<E>,
}

struct Invocation<E> {
    handle: InvocationHandle,
    goal: SkillGoal,
    state: InvocationState,
    behavior: Box<dyn Skill<E>>,
    dispatched_at: Tick,
    cancel_acked_at: Option<Tick>,
    outcome: Option<(SkillOutcome, Tick)>,
    fault: Option<String>,
    feedback: Vec<SkillFeedback>,
}

enum Command {
    Activate(InvocationId),
    Cancel(InvocationId),
}

pub struct Runtime<E: Environment> {
    env: E,
    kb: KnowledgeBase,
    registry: BTreeMap<String, Registered<E>>,
    invocations: BTreeMap<InvocationId, Invocation<E>>,
    queue: VecDeque<Command>,
    faults: HashMap<String, VecDeque<String>>,
    routed: BTreeMap<Supervisor, Vec<SkillFeedback>>,
    now: Tick,
    next_id: u64,
    open: bool,
}

impl<E: Environment> Runtime<E> {
    pub fn new(env: E, kb: KnowledgeBase) -> Self {
        Runtime {
            env,
            kb,
            registry: BTreeMap::new(),
            invocations: BTreeMap::new(),
            queue: VecDeque::new(),
            faults: HashMap::new(),
            routed: BTreeMap::new(),
            now: 0,
            next_id: 1,
            open: true,
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn env_mut(&mut self) -> &mut E {
        &mut self.env
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn kb_mut(&mut self) -> &mut KnowledgeBase {
        &mut self.kb
    }

    pub fn register_skill<F>(&mut self, descriptor: SkillDescriptor, factory: F) -> Result<(), SkillError>
    where
        F: Fn(&SkillGoal) -> Box<dyn Skill<E>> + Send + 'static,
    {
        if !self.open {
            return Err(SkillError::RegistrationClosed);
        }
        if descriptor.name.trim().is_empty() {
            return Err(SkillError::InvalidDescriptor("empty skill name".into()));
        }
        for (i, p) in descriptor.params.iter().enumerate() {
            if p.name.is_empty() {
                return Err(SkillError::InvalidDescriptor("empty parameter name".into()));
            }
            if descriptor.params[..i].iter().any(|q| q.name == p.name) {
                return Err(SkillError::InvalidDescriptor(format!(
                    "duplicate parameter {:?}",
                    p.name
                )));
            }
        }
        if self.registry.contains_key(&descriptor.name) {
            return Err(SkillError::DuplicateSkill(descriptor.name));
        }
        self.registry.insert(
            descriptor.name.clone(),
            Registered {
                descriptor,
                factory: Box::new(factory),
            },
        );
        Ok(())
    }

    pub fn close_registration(&mut self) {
        self.open = false;
    }

    pub fn descriptor(&self, skill: &str) -> Option<&SkillDescriptor> {
        self.registry.get(skill).map(|r| &r.descriptor)
    }

    pub fn skills(&self) -> impl Iterator<Item = &SkillDescriptor> {
        self.registry.values().map(|r| &r.descriptor)
    }

    pub fn validate_goal(&self, goal: &SkillGoal) -> Result<(), SkillError> {
        let reg = self
            .registry
            .get(&goal.skill)
            .ok_or_else(|| SkillError::UnknownSkill(goal.skill.clone()))?;
        for p in &reg.descriptor.params {
            match goal.args.get(&p.name) {
                None => return Err(SkillError::MissingParameter(p.name.clone())),
                Some(v) if !p.kind.accepts(v) => {
                    return Err(SkillError::KindMismatch(p.name.clone()))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = goal
            .args
            .keys()
            .find(|k| reg.descriptor.kind_of(k).is_none())
        {
            return Err(SkillError::UnexpectedParameter(extra.clone()));
        }
        Ok(())
    }

    /// Queues a new invocation; it starts stepping on the next tick.
    pub fn dispatch(&mut self, goal: SkillGoal) -> Result<InvocationHandle, SkillError> {
        self.validate_goal(&goal)?;
        let reg = &self.registry[&goal.skill];
        let behavior = (reg.factory)(&goal);
        let id = InvocationId(self.next_id);
        self.next_id += 1;
        let handle = InvocationHandle {
            id,
            skill: goal.skill.clone(),
        };
        let fault = self
            .faults
            .get_mut(&goal.skill)
            .and_then(VecDeque::pop_front);
        self.invocations.insert(
            id,
            Invocation {
                handle: handle.clone(),
                goal,
                state: InvocationState::Pending,
                behavior,
                dispatched_at: self.now,
                cancel_acked_at: None,
                outcome: None,
                fault,
                feedback: Vec::new(),
            },
        );
        self.queue.push_back(Command::Activate(id));
        Ok(handle)
    }

    /// Requests preemption. Idempotent on finished invocations.
    pub fn cancel(&mut self, id: InvocationId) -> Result<(), SkillError> {
        let inv = self
            .invocations
            .get_mut(&id)
            .ok_or(SkillError::UnknownInvocation(id))?;
        if inv.state == InvocationState::Done || inv.cancel_acked_at.is_some() {
            return Ok(());
        }
        if !self.registry[&inv.goal.skill].descriptor.cancellable {
            return Err(SkillError::NotCancellable(inv.goal.skill.clone()));
        }
        inv.cancel_acked_at = Some(self.now);
        self.queue.push_back(Command::Cancel(id));
        Ok(())
    }

    /// Makes the next dispatched invocation of `skill` fail on its first step.
    pub fn fail_next(&mut self, skill: &str, reason: impl Into<String>) {
        self.faults
            .entry(skill.to_string())
            .or_default()
            .push_back(reason.into());
    }

    pub fn state(&self, id: InvocationId) -> Result<InvocationState, SkillError> {
        self.invocations
            .get(&id)
            .map(|i| i.state)
            .ok_or(SkillError::UnknownInvocation(id))
    }

    pub fn outcome(&self, id: InvocationId) -> Result<Option<&SkillOutcome>, SkillError> {
        self.invocations
            .get(&id)
            .map(|i| i.outcome.as_ref().map(|(o, _)| o))
            .ok_or(SkillError::UnknownInvocation(id))
    }

    pub fn outcome_tick(&self, id: InvocationId) -> Option<Tick> {
        self.invocations.get(&id)?.outcome.as_ref().map(|(_, t)| *t)
    }

    pub fn dispatched_at(&self, id: InvocationId) -> Option<Tick> {
        self.invocations.get(&id).map(|i| i.dispatched_at)
    }

    pub fn cancel_acked_at(&self, id: InvocationId) -> Option<Tick> {
        self.invocations.get(&id)?.cancel_acked_at
    }

    pub fn goal(&self, id: InvocationId) -> Option<&SkillGoal> {
        self.invocations.get(&id).map(|i| &i.goal)
    }

    pub fn handle(&self, id: InvocationId) -> Option<&InvocationHandle> {
        self.invocations.get(&id).map(|i| &i.handle)
    }

    pub fn feedback_of(&self, id: InvocationId) -> &[SkillFeedback] {
        self.invocations
            .get(&id)
            .map(|i| i.feedback.as_slice())
            .unwrap_or(&[])
    }

    /// Feedback routed to `supervisor` since the last drain.
    pub fn drain_feedback(&mut self, supervisor: Supervisor) -> Vec<SkillFeedback> {
        self.routed.remove(&supervisor).unwrap_or_default()
    }

    pub fn active_invocations(&self) -> impl Iterator<Item = &InvocationHandle> {
        self.invocations
            .values()
            .filter(|i| i.state != InvocationState::Done)
            .map(|i| &i.handle)
    }

    pub fn tick(&mut self) -> TickReport<E::Event> {
        self.open = false;
        self.now += 1;
        let tick = self.now;
        let events = self.env.advance(tick);
        let mut report = TickReport {
            tick,
            events,
            activated: Vec::new(),
            outcomes: Vec::new(),
            feedback: Vec::new(),
        };

        while let Some(cmd) = self.queue.pop_front() {
            match cmd {
                Command::Activate(id) => {
                    let inv = self.invocations.get_mut(&id).expect("queued invocation");
                    if inv.state == InvocationState::Pending {
                        inv.state = InvocationState::Active;
                        report.activated.push(id);
                    }
                }
                Command::Cancel(id) => {
                    let inv = self.invocations.get_mut(&id).expect("queued invocation");
                    if inv.state == InvocationState::Done {
                        continue;
                    }
                    let mut fb = Vec::new();
                    let mut cx = StepContext {
                        env: &mut self.env,
                        kb: &mut self.kb,
                        tick,
                        goal: &inv.goal,
                        invocation: id,
                        feedback: &mut fb,
                    };
                    if inv.state == InvocationState::Active {
                        inv.behavior.cancelled(&mut cx);
                    }
                    inv.feedback.extend(fb.iter().cloned());
                    report.feedback.extend(fb);
                    Self::finish(inv, SkillOutcome::Preempted, tick, &mut report);
                }
            }
        }

        let active: Vec<InvocationId> = self
            .invocations
            .iter()
            .filter(|(_, i)| i.state == InvocationState::Active)
            .map(|(id, _)| *id)
            .collect();
        for id in active {
            let inv = self.invocations.get_mut(&id).expect("active invocation");
            let step = if let Some(reason) = inv.fault.take() {
                Step::Finished(SkillOutcome::Failed(reason))
            } else {
                let mut fb = Vec::new();
                let mut cx = StepContext {
                    env: &mut self.env,
                    kb: &mut self.kb,
                    tick,
                    goal: &inv.goal,
                    invocation: id,
                    feedback: &mut fb,
                };
                let step = inv.behavior.step(&mut cx);
                inv.feedback.extend(fb.iter().cloned());
                report.feedback.extend(fb);
                step
            };
            if let Step::Finished(outcome) = step {
                Self::finish(inv, outcome, tick, &mut report);
            }
        }

        self.env.settle(&mut self.kb);
        for fb in &report.feedback {
            let sup = self.invocations[&fb.invocation].goal.supervisor;
            self.routed.entry(sup).or_default().push(fb.clone());
        }
        report
    }

    fn finish(inv: &mut Invocation<E>, outcome: SkillOutcome, tick: Tick, report: &mut TickReport<E::Event>) {
        debug_assert!(inv.outcome.is_none(), "outcome emitted twice");
        inv.state = InvocationState::Done;
        inv.outcome = Some((outcome.clone(), tick));
        report.outcomes.push(OutcomeRecord {
            invocation: inv.handle.id,
            skill: inv.goal.skill.clone(),
            supervisor: inv.goal.supervisor,
            outcome,
            tick,
        });
    }

    /// Ticks until the invocation has an outcome or `timeout` ticks elapse.
    pub fn await_outcome(&mut self, id: InvocationId, timeout: Tick) -> Result<SkillOutcome, SkillError> {
        let mut waited = 0;
        loop {
            if let Some(outcome) = self.outcome(id)? {
                return Ok(outcome.clone());
            }
            if waited >= timeout {
                return Err(SkillError::Timeout(id));
            }
            self.tick();
            waited += 1;
        }
    }
}
