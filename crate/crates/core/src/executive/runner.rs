use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::template::{Directive, Scope};
use super::{
    Defect, MachineDef, MachineSet, StateDef, StateNode, ABANDONED, ACHIEVED, AGENDA, DONE, FAILED, PREEMPTED,
    SUCCEEDED,
};
use crate::deliberative::{Domain, EpisodeStatus, GoalEpisode, Milestone};
use crate::kb::EntityId;
use crate::skill::{Environment, InvocationId, Runtime, SkillGoal, SkillOutcome, Supervisor, Tick, TickReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    /// Replans allowed per delegation unless the state overrides it.
    pub budget: u32,
    pub horizon: usize,
    /// Guards against transition loops that never wait on a skill.
    pub max_transitions: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            budget: 3,
            horizon: 12,
            max_transitions: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ExecError {
    #[error("invalid machine: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidMachine(Vec<Defect>),
    #[error("unknown skill {0:?}")]
    UnknownSkill(String),
    #[error("state {state:?} has no transition for {label:?}")]
    UnhandledOutcome { state: String, label: String },
    #[error("more than {limit} transitions in one tick at {path}")]
    TransitionLimit { path: String, limit: usize },
    #[error("timed out after {0} ticks")]
    Timeout(Tick),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum ExecutiveStatus {
    NotStarted,
    Running,
    Finished(String),
    Faulted(ExecError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub tick: Tick,
    pub path: String,
    pub kind: String,
    pub detail: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.tick, self.path, self.kind, self.detail)
    }
}

enum Activity {
    Idle,
    Skill(InvocationId),
    Delegate(Box<GoalEpisode>),
}

struct Frame {
    machine: MachineDef,
    state: String,
    activity: Activity,
}

struct Monitor {
    goal: SkillGoal,
    event: String,
    current: Option<InvocationId>,
}

enum Next {
    Enter,
    Label(String),
}

/// Runs a [`MachineSet`] against a skill runtime. Call [`Executive::start`]
/// once, then [`Executive::step`] with every tick report.
pub struct Executive {
    set: MachineSet,
    table: BTreeMap<String, MachineDef>,
    domain: Option<Arc<Domain>>,
    config: ExecConfig,
    stack: Vec<Frame>,
    status: ExecutiveStatus,
    monitors: Vec<Monitor>,
    events: VecDeque<String>,
    agenda: Vec<Directive>,
    vars: BTreeMap<String, EntityId>,
    draining: Vec<GoalEpisode>,
    history: Vec<GoalEpisode>,
    trace: Vec<TraceRecord>,
    milestones_tx: Sender<Milestone>,
    milestones_rx: Receiver<Milestone>,
}

fn referenced_skills(set: &MachineSet) -> impl Iterator<Item = &str> {
    let states = set.machines.iter().flat_map(|m| m.states.values());
    let skills = states.filter_map(|s| match &s.node {
        StateNode::Skill { skill, .. } => Some(skill.as_str()),
        _ => None,
    });
    skills.chain(set.monitors.iter().map(|m| m.skill.as_str()))
}

impl Executive {
    /// Validates `set` and checks that every referenced skill is registered.
    pub fn new<E: Environment>(set: MachineSet, rt: &Runtime<E>) -> Result<Self, ExecError> {
        let defects = set.validate();
        if !defects.is_empty() {
            return Err(ExecError::InvalidMachine(defects));
        }
        if let Some(missing) = referenced_skills(&set).find(|s| rt.descriptor(s).is_none()) {
            return Err(ExecError::UnknownSkill(missing.to_string()));
        }
        Ok(Self::new_unchecked(set))
    }

    /// Skips validation; missing transitions surface at runtime as
    /// [`ExecError::UnhandledOutcome`].
    pub fn new_unchecked(set: MachineSet) -> Self {
        let (tx, rx) = channel();
        Executive {
            table: set.table(),
            set,
            domain: None,
            config: ExecConfig::default(),
            stack: Vec::new(),
            status: ExecutiveStatus::NotStarted,
            monitors: Vec::new(),
            events: VecDeque::new(),
            agenda: Vec::new(),
            vars: BTreeMap::new(),
            draining: Vec::new(),
            history: Vec::new(),
            trace: Vec::new(),
            milestones_tx: tx,
            milestones_rx: rx,
        }
    }

    pub fn with_domain(mut self, domain: Arc<Domain>) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn with_config(mut self, config: ExecConfig) -> Self {
        self.config = config;
        self
    }

    pub fn status(&self) -> &ExecutiveStatus {
        &self.status
    }

    pub fn is_running(&self) -> bool {
        self.status == ExecutiveStatus::Running
    }

    pub fn machines(&self) -> &MachineSet {
        &self.set
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|r| format!("{r}\n")).collect()
    }

    /// `machine.state` for every active frame, outermost first.
    pub fn path(&self) -> String {
        let parts: Vec<String> = self
            .stack
            .iter()
            .map(|f| format!("{}.{}", f.machine.id, f.state))
            .collect();
        parts.join("/")
    }

    pub fn active_skill(&self) -> Option<InvocationId> {
        match self.stack.last().map(|f| &f.activity) {
            Some(Activity::Skill(id)) => Some(*id),
            _ => None,
        }
    }

    pub fn active_episode(&self) -> Option<&GoalEpisode> {
        match self.stack.last().map(|f| &f.activity) {
            Some(Activity::Delegate(ep)) => Some(ep),
            _ => None,
        }
    }

    /// Finished delegations, oldest first.
    pub fn episodes(&self) -> &[GoalEpisode] {
        &self.history
    }

    pub fn monitor_invocations(&self) -> Vec<InvocationId> {
        self.monitors.iter().filter_map(|m| m.current).collect()
    }

    pub fn set_var(&mut self, name: impl Into<String>, entity: EntityId) {
        self.vars.insert(name.into(), entity);
    }

    /// Directives run by the next entry into a `$agenda` state.
    pub fn set_agenda(&mut self, agenda: Vec<Directive>) {
        self.agenda = agenda;
    }

    pub fn agenda(&self) -> &[Directive] {
        &self.agenda
    }

    /// Queues an event; it is routed at the end of the next [`Executive::step`].
    pub fn enqueue(&mut self, event: impl Into<String>) {
        self.events.push_back(event.into());
    }

    fn record<E: Environment>(&mut self, rt: &Runtime<E>, kind: &str, detail: impl Into<String>) {
        self.trace.push(TraceRecord {
            tick: rt.now(),
            path: self.path(),
            kind: kind.to_string(),
            detail: detail.into(),
        });
    }

    fn fault<E: Environment>(&mut self, rt: &Runtime<E>, error: ExecError) {
        self.record(rt, "fault", error.to_string());
        self.status = ExecutiveStatus::Faulted(error);
    }

    /// Dispatches `goal` outside any machine and converts each successful
    /// outcome into `event`.
    pub fn bind_monitor<E: Environment>(
        &mut self,
        rt: &mut Runtime<E>,
        goal: SkillGoal,
        event: impl Into<String>,
    ) -> Result<(), ExecError> {
        if rt.descriptor(&goal.skill).is_none() {
            return Err(ExecError::UnknownSkill(goal.skill));
        }
        self.monitors.push(Monitor {
            goal,
            event: event.into(),
            current: None,
        });
        if self.status != ExecutiveStatus::NotStarted {
            let i = self.monitors.len() - 1;
            self.dispatch_monitor(rt, i);
        }
        Ok(())
    }

    fn dispatch_monitor<E: Environment>(&mut self, rt: &mut Runtime<E>, i: usize) {
        let goal = self.monitors[i].goal.clone();
        match rt.dispatch(goal) {
            Ok(h) => self.monitors[i].current = Some(h.id),
            Err(e) => {
                let detail = format!("{}: {e}", self.monitors[i].goal.skill);
                self.record(rt, "monitor_error", detail);
            }
        }
    }

    /// Binds the file's monitors and enters the top machine.
    pub fn start<E: Environment>(&mut self, rt: &mut Runtime<E>) -> Result<(), ExecError> {
        if self.status != ExecutiveStatus::NotStarted {
            return Ok(());
        }
        for spec in self.set.monitors.clone() {
            let scope = Scope {
                kb: rt.kb(),
                bindings: &BTreeMap::new(),
                vars: &self.vars,
            };
            let goal = scope
                .skill_goal(rt.descriptor(&spec.skill), &spec.skill, &spec.args, Supervisor::Reactive)
                .map_err(|_| ExecError::UnknownSkill(spec.skill.clone()))?;
            self.bind_monitor(rt, goal, spec.event)?;
        }
        let top = self
            .table
            .get(&self.set.top)
            .cloned()
            .ok_or_else(|| ExecError::InvalidMachine(vec![Defect::UnknownMachine { name: self.set.top.clone() }]))?;
        self.status = ExecutiveStatus::Running;
        for i in 0..self.monitors.len() {
            self.dispatch_monitor(rt, i);
        }
        self.stack.push(Frame {
            state: top.initial.clone(),
            machine: top,
            activity: Activity::Idle,
        });
        self.drive(rt, Next::Enter);
        Ok(())
    }

    fn drive<E: Environment>(&mut self, rt: &mut Runtime<E>, first: Next) {
        let mut next = Some(first);
        let mut left = self.config.max_transitions;
        while let Some(n) = next.take() {
            if !self.is_running() {
                return;
            }
            if left == 0 {
                let error = ExecError::TransitionLimit {
                    path: self.path(),
                    limit: self.config.max_transitions,
                };
                return self.fault(rt, error);
            }
            left -= 1;
            let result = match n {
                Next::Enter => self.enter(rt),
                Next::Label(label) => self.apply(rt, label),
            };
            match result {
                Ok(n) => next = n,
                Err(e) => return self.fault(rt, e),
            }
        }
    }

    fn apply<E: Environment>(&mut self, rt: &mut Runtime<E>, label: String) -> Result<Option<Next>, ExecError> {
        let frame = self.stack.last_mut().expect("running executive has a frame");
        let state = frame.machine.states.get(&frame.state);
        let Some(target) = state.and_then(|s| s.on.get(&label)).cloned() else {
            return Err(ExecError::UnhandledOutcome {
                state: frame.state.clone(),
                label,
            });
        };
        self.record(rt, "transition", format!("{label} -> {target}"));
        let frame = self.stack.last_mut().expect("frame");
        frame.state = target;
        frame.activity = Activity::Idle;
        Ok(Some(Next::Enter))
    }

    fn enter<E: Environment>(&mut self, rt: &mut Runtime<E>) -> Result<Option<Next>, ExecError> {
        let frame = self.stack.last().expect("running executive has a frame");
        let Some(def) = frame.machine.states.get(&frame.state) else {
            return Err(ExecError::InvalidMachine(vec![Defect::MissingTarget {
                machine: frame.machine.id.clone(),
                state: frame.state.clone(),
                label: String::new(),
                target: frame.state.clone(),
            }]));
        };
        match def.node.clone() {
            StateNode::Terminal { label } => {
                self.record(rt, "terminal", &label);
                self.stack.pop();
                if self.stack.is_empty() {
                    self.status = ExecutiveStatus::Finished(label);
                    return Ok(None);
                }
                Ok(Some(Next::Label(label)))
            }
            StateNode::Skill { skill, args, bindings } => {
                let scope = Scope {
                    kb: rt.kb(),
                    bindings: &bindings,
                    vars: &self.vars,
                };
                let dispatched = scope
                    .skill_goal(rt.descriptor(&skill), &skill, &args, Supervisor::Reactive)
                    .map_err(|e| e.to_string())
                    .and_then(|goal| {
                        let text = goal.describe(rt.kb());
                        rt.dispatch(goal).map(|h| (h.id, text)).map_err(|e| e.to_string())
                    });
                match dispatched {
                    Ok((id, text)) => {
                        self.record(rt, "dispatch", text);
                        self.stack.last_mut().expect("frame").activity = Activity::Skill(id);
                        Ok(None)
                    }
                    Err(e) => {
                        self.record(rt, "error", e);
                        Ok(Some(Next::Label(FAILED.into())))
                    }
                }
            }
            StateNode::Machine { machine } => {
                let def = if machine == AGENDA {
                    agenda_machine(&self.agenda, self.config.budget)
                } else {
                    self.table
                        .get(&machine)
                        .cloned()
                        .ok_or_else(|| ExecError::InvalidMachine(vec![Defect::UnknownMachine { name: machine }]))?
                };
                self.stack.push(Frame {
                    state: def.initial.clone(),
                    machine: def,
                    activity: Activity::Idle,
                });
                Ok(Some(Next::Enter))
            }
            StateNode::Delegate {
                goal,
                budget,
                horizon,
                bindings,
            } => {
                let Some(domain) = self.domain.clone() else {
                    self.record(rt, "error", "no planning domain");
                    return Ok(Some(Next::Label(ABANDONED.into())));
                };
                let scope = Scope {
                    kb: rt.kb(),
                    bindings: &bindings,
                    vars: &self.vars,
                };
                let goal = match scope.goal(&goal) {
                    Ok(g) => g,
                    Err(e) => {
                        self.record(rt, "error", e.to_string());
                        return Ok(Some(Next::Label(ABANDONED.into())));
                    }
                };
                self.record(rt, "delegate", goal.display(rt.kb()));
                let mut episode = GoalEpisode::new(
                    goal,
                    domain,
                    budget.unwrap_or(self.config.budget),
                    horizon.unwrap_or(self.config.horizon),
                    self.milestones_tx.clone(),
                );
                match episode.poll(rt) {
                    Some(status) => {
                        self.history.push(episode);
                        self.drain_milestones(rt);
                        self.record(rt, "outcome", episode_label(&status));
                        Ok(Some(Next::Label(episode_label(&status).into())))
                    }
                    None => {
                        self.stack.last_mut().expect("frame").activity = Activity::Delegate(Box::new(episode));
                        Ok(None)
                    }
                }
            }
        }
    }

    fn drain_milestones<E: Environment>(&mut self, rt: &Runtime<E>) {
        while let Ok(m) = self.milestones_rx.try_recv() {
            let detail = serde_json::to_string(&m).expect("milestones serialize");
            self.record(rt, "milestone", detail);
        }
    }

    /// Consumes one tick's outcomes, advances delegations and routes queued
    /// events.
    pub fn step<E: Environment>(&mut self, rt: &mut Runtime<E>, report: &TickReport<E::Event>) {
        for o in report.outcomes.iter().filter(|o| o.supervisor == Supervisor::Reactive) {
            if let Some(i) = self.monitors.iter().position(|m| m.current == Some(o.invocation)) {
                self.monitors[i].current = None;
                match &o.outcome {
                    SkillOutcome::Succeeded(_) => {
                        let event = self.monitors[i].event.clone();
                        self.record(rt, "event", &event);
                        self.events.push_back(event);
                        self.dispatch_monitor(rt, i);
                    }
                    SkillOutcome::Failed(reason) => {
                        let detail = format!("{}: {reason}", o.skill);
                        self.record(rt, "monitor_error", detail);
                        self.dispatch_monitor(rt, i);
                    }
                    SkillOutcome::Preempted => {}
                }
                continue;
            }
            if !self.is_running() || self.active_skill() != Some(o.invocation) {
                self.record(rt, "stale", format!("{} {} {}", o.invocation, o.skill, o.outcome.label()));
                continue;
            }
            self.stack.last_mut().expect("frame").activity = Activity::Idle;
            let detail = match &o.outcome {
                SkillOutcome::Failed(reason) => format!("{} {FAILED}: {reason}", o.skill),
                other => format!("{} {}", o.skill, other.label()),
            };
            self.record(rt, "outcome", detail);
            self.drive(rt, Next::Label(o.outcome.label().to_string()));
        }

        if self.is_running() {
            let polled = match self.stack.last_mut().map(|f| &mut f.activity) {
                Some(Activity::Delegate(ep)) => ep.poll(rt),
                _ => None,
            };
            if let Some(status) = polled {
                let frame = self.stack.last_mut().expect("frame");
                if let Activity::Delegate(ep) = std::mem::replace(&mut frame.activity, Activity::Idle) {
                    self.history.push(*ep);
                }
                self.drain_milestones(rt);
                self.record(rt, "outcome", episode_label(&status));
                self.drive(rt, Next::Label(episode_label(&status).to_string()));
            }
        }

        let mut still = Vec::new();
        for mut ep in std::mem::take(&mut self.draining) {
            match ep.poll(rt) {
                Some(_) => self.history.push(ep),
                None => still.push(ep),
            }
        }
        self.draining = still;
        self.drain_milestones(rt);

        while let Some(event) = self.events.pop_front() {
            self.preempt(rt, &event);
        }
    }

    /// Routes `event` through the preemption rules now. The innermost active
    /// frame of the rule's scope jumps to the target state after its activity
    /// (and any nested one) is cancelled.
    pub fn preempt<E: Environment>(&mut self, rt: &mut Runtime<E>, event: &str) {
        let rule = self
            .set
            .preemptions
            .iter()
            .find(|r| r.event == event && self.stack.iter().any(|f| f.machine.id == r.scope))
            .cloned();
        let Some(rule) = rule.filter(|_| self.is_running()) else {
            self.record(rt, "dropped", event);
            return;
        };
        let depth = self
            .stack
            .iter()
            .rposition(|f| f.machine.id == rule.scope)
            .expect("scope is on the stack");
        let mut errors = Vec::new();
        for frame in &mut self.stack[depth..] {
            match std::mem::replace(&mut frame.activity, Activity::Idle) {
                Activity::Idle => {}
                Activity::Skill(id) => {
                    if let Err(e) = rt.cancel(id) {
                        errors.push(e.to_string());
                    }
                }
                Activity::Delegate(mut ep) => {
                    ep.cancel(rt);
                    self.draining.push(*ep);
                }
            }
        }
        for e in errors {
            self.record(rt, "error", e);
        }
        self.stack.truncate(depth + 1);
        self.record(rt, "preempt", format!("{event} -> {}", rule.target));
        self.stack.last_mut().expect("scope frame").state = rule.target;
        self.drive(rt, Next::Enter);
    }

    /// Ticks the runtime until the top machine terminates.
    pub fn run<E: Environment>(&mut self, rt: &mut Runtime<E>, max_ticks: Tick) -> Result<String, ExecError> {
        self.start(rt)?;
        let deadline = rt.now() + max_ticks;
        loop {
            match &self.status {
                ExecutiveStatus::Finished(label) => return Ok(label.clone()),
                ExecutiveStatus::Faulted(e) => return Err(e.clone()),
                _ => {}
            }
            if rt.now() >= deadline {
                return Err(ExecError::Timeout(max_ticks));
            }
            let report = rt.tick();
            self.step(rt, &report);
        }
    }
}

fn episode_label(status: &EpisodeStatus) -> &'static str {
    match status {
        EpisodeStatus::Achieved => ACHIEVED,
        EpisodeStatus::Abandoned(_) => ABANDONED,
        EpisodeStatus::Preempted => PREEMPTED,
    }
}

/// Chains the directives: each step advances on success, any failure ends in
/// `failed`, preemption in `preempted`, and the last step in `done`.
fn agenda_machine(agenda: &[Directive], budget: u32) -> MachineDef {
    let terminal = |label: &str| StateDef {
        node: StateNode::Terminal { label: label.into() },
        on: BTreeMap::new(),
    };
    let mut states = BTreeMap::from([
        (DONE.to_string(), terminal(DONE)),
        (FAILED.to_string(), terminal(FAILED)),
        (PREEMPTED.to_string(), terminal(PREEMPTED)),
    ]);
    let name = |i: usize| {
        if i < agenda.len() {
            format!("step{i}")
        } else {
            DONE.to_string()
        }
    };
    for (i, d) in agenda.iter().enumerate() {
        let (node, ok, bad) = match d.clone() {
            Directive::Skill { skill, args, bindings } => (StateNode::Skill { skill, args, bindings }, SUCCEEDED, FAILED),
            Directive::Goal { goal, bindings } => (
                StateNode::Delegate {
                    goal,
                    budget: Some(budget),
                    horizon: None,
                    bindings,
                },
                ACHIEVED,
                ABANDONED,
            ),
        };
        let on = BTreeMap::from([
            (ok.to_string(), name(i + 1)),
            (bad.to_string(), FAILED.to_string()),
            (PREEMPTED.to_string(), PREEMPTED.to_string()),
        ]);
        states.insert(name(i), StateDef { node, on });
    }
    MachineDef {
        id: AGENDA.to_string(),
        initial: name(0),
        states,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::KnowledgeBase;
    use crate::skill::{SkillDescriptor, Step, StepContext};

    /// Taps scheduled at fixed ticks.
    #[derive(Default)]
    struct Taps {
        at: Vec<Tick>,
        pending: bool,
    }

    impl Environment for Taps {
        type Event = ();

        fn advance(&mut self, tick: Tick) -> Vec<()> {
            if self.at.contains(&tick) {
                self.pending = true;
            }
            Vec::new()
        }
    }

    fn runtime(taps: &[Tick]) -> Runtime<Taps> {
        let env = Taps {
            at: taps.to_vec(),
            pending: false,
        };
        let mut rt = Runtime::new(env, KnowledgeBase::new());
        rt.register_skill(SkillDescriptor::new("wave"), |_| {
            let mut n = 0;
            Box::new(move |_: &mut StepContext<'_, Taps>| {
                n += 1;
                if n == 2 {
                    Step::Finished(SkillOutcome::Succeeded(vec![]))
                } else {
                    Step::Running
                }
            })
        })
        .unwrap();
        rt.register_skill(SkillDescriptor::new("stumble"), |_| {
            Box::new(|_: &mut StepContext<'_, Taps>| Step::Finished(SkillOutcome::Failed("tripped".into())))
        })
        .unwrap();
        rt.register_skill(SkillDescriptor::new("wait"), |_| {
            Box::new(|_: &mut StepContext<'_, Taps>| Step::Running)
        })
        .unwrap();
        rt.register_skill(SkillDescriptor::new("tap_detector"), |_| {
            Box::new(|cx: &mut StepContext<'_, Taps>| {
                if std::mem::take(&mut cx.env.pending) {
                    Step::Finished(SkillOutcome::Succeeded(vec![]))
                } else {
                    Step::Running
                }
            })
        })
        .unwrap();
        rt
    }

    fn set(json: serde_json::Value) -> MachineSet {
        serde_json::from_value(json).unwrap()
    }

    fn wave() -> MachineSet {
        set(serde_json::json!({
            "top": "main",
            "machines": [{"id": "main", "initial": "S0", "states": {
                "S0": {"kind": "skill", "skill": "wave", "on": {"succeeded": "T", "failed": "F"}},
                "T": {"kind": "terminal", "label": "done"},
                "F": {"kind": "terminal", "label": "failed"}
            }}]
        }))
    }

    #[test]
    fn single_skill_machine_reaches_done() {
        let mut rt = runtime(&[]);
        let mut ex = Executive::new(wave(), &rt).unwrap();
        assert_eq!(ex.run(&mut rt, 10), Ok("done".into()));
        let dispatches = ex.trace().iter().filter(|r| r.kind == "dispatch").count();
        assert_eq!(dispatches, 1);
        assert_eq!(ex.trace()[0].to_string(), "0\tmain.S0\tdispatch\twave()");
    }

    #[test]
    fn relaxed_machine_reports_unhandled_outcome() {
        let mut rt = runtime(&[]);
        let mut s = wave();
        let states = &mut s.machines[0].states;
        states.get_mut("S0").unwrap().node = StateNode::Skill {
            skill: "stumble".into(),
            args: BTreeMap::new(),
            bindings: BTreeMap::new(),
        };
        states.get_mut("S0").unwrap().on.remove("failed");
        assert!(matches!(Executive::new(s.clone(), &rt), Err(ExecError::InvalidMachine(_))));
        let mut ex = Executive::new_unchecked(s);
        assert_eq!(
            ex.run(&mut rt, 10),
            Err(ExecError::UnhandledOutcome {
                state: "S0".into(),
                label: "failed".into()
            })
        );
    }

    #[test]
    fn submachine_terminal_drives_parent() {
        let mut rt = runtime(&[]);
        let s = set(serde_json::json!({
            "top": "outer",
            "machines": [
                {"id": "outer", "initial": "inner", "states": {
                    "inner": {"kind": "machine", "machine": "greet", "on": {"ok": "after", "bad": "F"}},
                    "after": {"kind": "skill", "skill": "wave", "on": {"succeeded": "T", "failed": "F"}},
                    "T": {"kind": "terminal", "label": "done"},
                    "F": {"kind": "terminal", "label": "failed"}}},
                {"id": "greet", "initial": "w", "states": {
                    "w": {"kind": "skill", "skill": "wave", "on": {"succeeded": "ok", "failed": "bad"}},
                    "ok": {"kind": "terminal", "label": "ok"},
                    "bad": {"kind": "terminal", "label": "bad"}}}
            ]
        }));
        let mut ex = Executive::new(s, &rt).unwrap();
        ex.start(&mut rt).unwrap();
        assert_eq!(ex.path(), "outer.inner/greet.w");
        assert_eq!(ex.run(&mut rt, 10), Ok("done".into()));
        assert!(ex.trace().iter().any(|r| r.path == "outer.inner" && r.detail == "ok -> after"));
    }

    #[test]
    fn unknown_skills_are_rejected() {
        let rt = runtime(&[]);
        let mut s = wave();
        s.machines[0].states.get_mut("S0").unwrap().node = StateNode::Skill {
            skill: "juggle".into(),
            args: BTreeMap::new(),
            bindings: BTreeMap::new(),
        };
        assert_eq!(Executive::new(s, &rt).err(), Some(ExecError::UnknownSkill("juggle".into())));
        let mut rt = runtime(&[]);
        let mut ex = Executive::new(wave(), &rt).unwrap();
        let goal = SkillGoal::new("juggle", Supervisor::Reactive);
        assert_eq!(ex.bind_monitor(&mut rt, goal, "x"), Err(ExecError::UnknownSkill("juggle".into())));
    }

    fn guarded() -> MachineSet {
        set(serde_json::json!({
            "top": "main",
            "machines": [
                {"id": "main", "initial": "work", "states": {
                    "work": {"kind": "skill", "skill": "wait", "on": {"succeeded": "T", "failed": "T", "preempted": "T"}},
                    "dialog": {"kind": "machine", "machine": "talk", "on": {"done": "T"}},
                    "T": {"kind": "terminal", "label": "done"}}},
                {"id": "talk", "initial": "listen", "states": {
                    "listen": {"kind": "skill", "skill": "wave", "on": {"succeeded": "D", "failed": "D"}},
                    "D": {"kind": "terminal", "label": "done"}}}
            ],
            "preemptions": [{"event": "wrist_tap", "target": "dialog", "scope": "main"}],
            "monitors": [{"skill": "tap_detector", "event": "wrist_tap"}]
        }))
    }

    #[test]
    fn tap_preempts_into_dialog() {
        let mut rt = runtime(&[40]);
        let mut ex = Executive::new(guarded(), &rt).unwrap();
        ex.start(&mut rt).unwrap();
        let work = ex.active_skill().unwrap();
        while rt.now() < 40 {
            let r = rt.tick();
            ex.step(&mut rt, &r);
        }
        let event = ex.trace().iter().find(|r| r.kind == "event").unwrap();
        assert!(event.tick <= 41);
        assert_eq!(ex.path(), "main.dialog/talk.listen");
        let r = rt.tick();
        assert_eq!(r.outcome_of(work).unwrap().outcome, SkillOutcome::Preempted);
        ex.step(&mut rt, &r);
        assert!(ex.trace().iter().any(|r| r.kind == "stale"));
        assert_eq!(ex.run(&mut rt, 10), Ok("done".into()));
    }

    #[test]
    fn two_taps_give_two_events_in_order() {
        let mut rt = runtime(&[5, 15]);
        let mut ex = Executive::new_unchecked(set(serde_json::json!({
            "top": "m",
            "machines": [{"id": "m", "initial": "w", "states": {
                "w": {"kind": "skill", "skill": "wait", "on": {}}}}]
        })));
        ex.start(&mut rt).unwrap();
        ex.bind_monitor(&mut rt, SkillGoal::new("tap_detector", Supervisor::Reactive), "wrist_tap")
            .unwrap();
        for _ in 0..20 {
            let r = rt.tick();
            ex.step(&mut rt, &r);
        }
        let ticks: Vec<Tick> = ex.trace().iter().filter(|r| r.kind == "event").map(|r| r.tick).collect();
        assert_eq!(ticks, vec![5, 15]);
        let dropped = ex.trace().iter().filter(|r| r.kind == "dropped").count();
        assert_eq!(dropped, 2);
        assert_eq!(ex.path(), "m.w");
    }

    #[test]
    fn agenda_chains_directives() {
        let def = agenda_machine(&[], 3);
        assert_eq!(def.initial, DONE);
        let d = Directive::Skill {
            skill: "wave".into(),
            args: BTreeMap::new(),
            bindings: BTreeMap::new(),
        };
        let def = agenda_machine(&[d.clone(), d], 3);
        assert_eq!(def.states["step0"].on[SUCCEEDED], "step1");
        assert_eq!(def.states["step1"].on[SUCCEEDED], DONE);
    }
}
