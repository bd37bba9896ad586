//! Memoryless behavior trees whose actions are skill invocations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{EntityId, KnowledgeBase};
use crate::sim::{Cell, WorldAccess};
use crate::skill::{ArgValue, Environment, InvocationId, Runtime, SkillGoal, SkillOutcome, Supervisor, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

impl TickStatus {
    pub fn letter(self) -> char {
        match self {
            TickStatus::Success => 'S',
            TickStatus::Failure => 'F',
            TickStatus::Running => 'R',
        }
    }
}

pub type Check<E> = Box<dyn Fn(&E, &KnowledgeBase) -> bool + Send>;

pub enum Node<E> {
    Sequence { name: String, children: Vec<Node<E>> },
    Fallback { name: String, children: Vec<Node<E>> },
    Action { name: String, goal: SkillGoal },
    Condition { name: String, check: Check<E> },
}

impl<E> Node<E> {
    pub fn sequence(name: &str, children: Vec<Node<E>>) -> Self {
        Node::Sequence {
            name: name.into(),
            children,
        }
    }

    pub fn fallback(name: &str, children: Vec<Node<E>>) -> Self {
        Node::Fallback {
            name: name.into(),
            children,
        }
    }

    pub fn action(name: &str, goal: SkillGoal) -> Self {
        Node::Action { name: name.into(), goal }
    }

    pub fn condition(name: &str, check: impl Fn(&E, &KnowledgeBase) -> bool + Send + 'static) -> Self {
        Node::Condition {
            name: name.into(),
            check: Box::new(check),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Node::Sequence { name, .. }
            | Node::Fallback { name, .. }
            | Node::Action { name, .. }
            | Node::Condition { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("invalid tree: {0}")]
    InvalidTree(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Census {
    pub sequences: usize,
    pub fallbacks: usize,
    pub actions: usize,
    pub conditions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TickLog {
    pub tick: Tick,
    pub status: TickStatus,
    /// Nodes in visiting order with the status each returned.
    pub visits: Vec<(String, TickStatus)>,
    pub dispatched: Vec<String>,
    pub cancelled: Vec<String>,
}

impl fmt::Display for TickLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let visits: Vec<String> = self.visits.iter().map(|(n, s)| format!("{n}={}", s.letter())).collect();
        write!(f, "{}\t{}", self.tick, visits.join(" "))?;
        if !self.dispatched.is_empty() {
            write!(f, "\tdispatch={}", self.dispatched.join(","))?;
        }
        if !self.cancelled.is_empty() {
            write!(f, "\tcancel={}", self.cancelled.join(","))?;
        }
        Ok(())
    }
}

/// Running-action bookkeeping, indexed by pre-order position.
#[derive(Default, Clone, Copy)]
struct Slot {
    invocation: Option<InvocationId>,
    touched: bool,
}

pub struct BehaviorTree<E> {
    root: Node<E>,
    slots: Vec<Slot>,
}

fn count<E>(node: &Node<E>, c: &mut Census) {
    match node {
        Node::Sequence { children, .. } => {
            c.sequences += 1;
            children.iter().for_each(|n| count(n, c));
        }
        Node::Fallback { children, .. } => {
            c.fallbacks += 1;
            children.iter().for_each(|n| count(n, c));
        }
        Node::Action { .. } => c.actions += 1,
        Node::Condition { .. } => c.conditions += 1,
    }
}

fn size<E>(node: &Node<E>) -> usize {
    match node {
        Node::Sequence { children, .. } | Node::Fallback { children, .. } => 1 + children.iter().map(size).sum::<usize>(),
        _ => 1,
    }
}

struct TickCx<'a, E: Environment> {
    rt: &'a mut Runtime<E>,
    slots: &'a mut [Slot],
    log: &'a mut TickLog,
}

impl<E: Environment> TickCx<'_, E> {
    fn tick(&mut self, node: &Node<E>, index: usize) -> TickStatus {
        let status = match node {
            Node::Sequence { children, .. } | Node::Fallback { children, .. } => {
                let stop_on = match node {
                    Node::Sequence { .. } => TickStatus::Success,
                    _ => TickStatus::Failure,
                };
                let mut status = stop_on;
                let mut child = index + 1;
                for c in children {
                    status = self.tick(c, child);
                    if status != stop_on {
                        break;
                    }
                    child += size(c);
                }
                status
            }
            Node::Condition { check, .. } => {
                if check(self.rt.env(), self.rt.kb()) {
                    TickStatus::Success
                } else {
                    TickStatus::Failure
                }
            }
            Node::Action { name, goal } => {
                let slot = &mut self.slots[index];
                slot.touched = true;
                match slot.invocation {
                    None => match self.rt.dispatch(goal.clone()) {
                        Ok(h) => {
                            slot.invocation = Some(h.id);
                            self.log.dispatched.push(name.clone());
                            TickStatus::Running
                        }
                        Err(_) => TickStatus::Failure,
                    },
                    Some(id) => match self.rt.outcome(id).ok().flatten() {
                        None => TickStatus::Running,
                        Some(outcome) => {
                            let s = match outcome {
                                SkillOutcome::Succeeded(_) => TickStatus::Success,
                                SkillOutcome::Failed(_) | SkillOutcome::Preempted => TickStatus::Failure,
                            };
                            slot.invocation = None;
                            s
                        }
                    },
                }
            }
        };
        self.log.visits.push((node.name().to_string(), status));
        status
    }
}

fn actions<'a, E>(node: &'a Node<E>, index: usize, out: &mut Vec<(usize, &'a str)>) {
    match node {
        Node::Sequence { children, .. } | Node::Fallback { children, .. } => {
            let mut i = index + 1;
            for c in children {
                actions(c, i, out);
                i += size(c);
            }
        }
        Node::Action { name, .. } => out.push((index, name)),
        Node::Condition { .. } => {}
    }
}

impl<E: Environment> BehaviorTree<E> {
    pub fn new(root: Node<E>) -> Result<Self, TreeError> {
        fn check<E>(n: &Node<E>) -> Result<(), TreeError> {
            match n {
                Node::Sequence { name, children } | Node::Fallback { name, children } => {
                    if children.is_empty() {
                        return Err(TreeError::InvalidTree(format!("composite {name:?} has no children")));
                    }
                    children.iter().try_for_each(check)
                }
                _ => Ok(()),
            }
        }
        check(&root)?;
        let slots = vec![Slot::default(); size(&root)];
        Ok(BehaviorTree { root, slots })
    }

    /// Checks that every action names a registered skill.
    pub fn validate(&self, rt: &Runtime<E>) -> Result<(), TreeError> {
        fn goals<'a, E>(n: &'a Node<E>, out: &mut Vec<&'a SkillGoal>) {
            match n {
                Node::Sequence { children, .. } | Node::Fallback { children, .. } => {
                    children.iter().for_each(|c| goals(c, out))
                }
                Node::Action { goal, .. } => out.push(goal),
                Node::Condition { .. } => {}
            }
        }
        let mut gs = Vec::new();
        goals(&self.root, &mut gs);
        for g in gs {
            rt.validate_goal(g)
                .map_err(|e| TreeError::InvalidTree(format!("action {}: {e}", g.skill)))?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Node<E> {
        &self.root
    }

    pub fn census(&self) -> Census {
        let mut c = Census::default();
        count(&self.root, &mut c);
        c
    }

    /// One memoryless pass from the root. Running actions that this pass did
    /// not reach are cancelled.
    pub fn tick(&mut self, rt: &mut Runtime<E>) -> TickLog {
        let mut log = TickLog {
            tick: rt.now(),
            status: TickStatus::Failure,
            visits: Vec::new(),
            dispatched: Vec::new(),
            cancelled: Vec::new(),
        };
        for s in &mut self.slots {
            s.touched = false;
        }
        let mut cx = TickCx {
            rt,
            slots: &mut self.slots,
            log: &mut log,
        };
        log.status = cx.tick(&self.root, 0);
        let mut acts = Vec::new();
        actions(&self.root, 0, &mut acts);
        for (i, name) in acts {
            let slot = &mut self.slots[i];
            if !slot.touched {
                if let Some(id) = slot.invocation.take() {
                    if rt.outcome(id).ok().flatten().is_none() && rt.cancel(id).is_ok() {
                        log.cancelled.push(name.to_string());
                    }
                }
            }
        }
        log
    }

    /// Cancels every running action.
    pub fn halt(&mut self, rt: &mut Runtime<E>) {
        for slot in &mut self.slots {
            if let Some(id) = slot.invocation.take() {
                let _ = rt.cancel(id);
            }
        }
    }
}

/// Detect, track with the head, then approach:
///
/// ```text
/// Sequence follow
/// ├── Fallback acquire
/// │   ├── Condition target_visible
/// │   └── Action detect_target
/// └── Sequence pursue
///     ├── Fallback track
///     │   ├── Condition target_tracked
///     │   └── Action track_head
///     └── Action navigate_to_target
/// ```
pub fn person_following_tree<E: Environment + WorldAccess>(target: EntityId) -> BehaviorTree<E> {
    let goal = |skill: &str| SkillGoal::new(skill, Supervisor::Reactive).arg("target", ArgValue::Entity(target));
    let root = Node::sequence(
        "follow",
        vec![
            Node::fallback(
                "acquire",
                vec![
                    Node::condition("target_visible", move |e: &E, _| e.world().person_visible(target)),
                    Node::action("detect_target", goal("detect_target")),
                ],
            ),
            Node::sequence(
                "pursue",
                vec![
                    Node::fallback(
                        "track",
                        vec![
                            Node::condition("target_tracked", move |e: &E, _| {
                                let w = e.world();
                                w.robot.head_target == Some(target) && w.person_visible(target)
                            }),
                            Node::action("track_head", goal("track_head")),
                        ],
                    ),
                    Node::action("navigate_to_target", goal("navigate_to_target")),
                ],
            ),
        ],
    );
    BehaviorTree::new(root).expect("static tree is well formed")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FollowTick {
    #[serde(flatten)]
    pub log: TickLog,
    pub robot: Cell,
    pub person: Option<Cell>,
}

/// Ticks the tree once now and once after every runtime tick, stopping
/// after `max_ticks` tree ticks or when the root stops running.
pub fn run_following<E: Environment + WorldAccess>(
    rt: &mut Runtime<E>,
    tree: &mut BehaviorTree<E>,
    target: EntityId,
    max_ticks: usize,
) -> Vec<FollowTick> {
    let mut out = Vec::new();
    for i in 0..max_ticks {
        if i > 0 {
            rt.tick();
        }
        let log = tree.tick(rt);
        let world = rt.env().world();
        let done = log.status != TickStatus::Running;
        out.push(FollowTick {
            robot: world.robot.cell,
            person: world.person(target).and_then(|p| p.cell),
            log,
        });
        if done {
            tree.halt(rt);
            break;
        }
    }
    tree.halt(rt);
    out
}

/// Tree file node, for trees defined outside code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeSpec {
    Sequence { name: String, children: Vec<TreeSpec> },
    Fallback { name: String, children: Vec<TreeSpec> },
    Action {
        name: String,
        skill: String,
        #[serde(default)]
        args: BTreeMap<String, serde_json::Value>,
    },
    Condition { name: String, check: String },
}

impl TreeSpec {
    /// Builds a tree, taking conditions by name from `checks` and resolving
    /// action arguments against the runtime's skill descriptors.
    pub fn build<E: Environment>(
        &self,
        rt: &Runtime<E>,
        checks: &mut BTreeMap<String, Check<E>>,
    ) -> Result<BehaviorTree<E>, TreeError> {
        let root = self.node(rt, checks)?;
        let tree = BehaviorTree::new(root)?;
        tree.validate(rt)?;
        Ok(tree)
    }

    fn node<E: Environment>(
        &self,
        rt: &Runtime<E>,
        checks: &mut BTreeMap<String, Check<E>>,
    ) -> Result<Node<E>, TreeError> {
        let children = |cs: &[TreeSpec], checks: &mut BTreeMap<String, Check<E>>| {
            cs.iter().map(|c| c.node(rt, checks)).collect::<Result<Vec<_>, _>>()
        };
        Ok(match self {
            TreeSpec::Sequence { name, children: cs } => Node::sequence(name, children(cs, checks)?),
            TreeSpec::Fallback { name, children: cs } => Node::fallback(name, children(cs, checks)?),
            TreeSpec::Action { name, skill, args } => {
                let scope = crate::executive::template_scope(rt.kb());
                let goal = scope
                    .skill_goal(rt.descriptor(skill), skill, args, Supervisor::Reactive)
                    .map_err(|e| TreeError::InvalidTree(format!("action {name}: {e}")))?;
                Node::action(name, goal)
            }
            TreeSpec::Condition { name, check } => {
                let f = checks
                    .remove(check)
                    .ok_or_else(|| TreeError::InvalidTree(format!("unknown condition {check:?}")))?;
                Node::Condition {
                    name: name.clone(),
                    check: f,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skill::{SkillDescriptor, Step, StepContext};

    fn runtime() -> Runtime<()> {
        let mut rt = Runtime::new((), KnowledgeBase::new());
        rt.register_skill(SkillDescriptor::new("ok"), |_| {
            Box::new(|_: &mut StepContext<'_, ()>| Step::Finished(SkillOutcome::Succeeded(vec![])))
        })
        .unwrap();
        rt.register_skill(SkillDescriptor::new("spin"), |_| {
            Box::new(|_: &mut StepContext<'_, ()>| Step::Running)
        })
        .unwrap();
        rt
    }

    fn act(name: &str) -> Node<()> {
        Node::action(name, SkillGoal::new(name, Supervisor::Reactive))
    }

    #[test]
    fn fallback_runs_action_until_success() {
        let mut rt = runtime();
        let mut t = BehaviorTree::new(Node::fallback("f", vec![Node::condition("no", |_, _| false), act("ok")])).unwrap();
        let first = t.tick(&mut rt);
        assert_eq!(first.status, TickStatus::Running);
        assert_eq!(first.dispatched, vec!["ok"]);
        rt.tick();
        assert_eq!(t.tick(&mut rt).status, TickStatus::Success);
    }

    #[test]
    fn sequences_short_circuit() {
        let mut rt = runtime();
        let mut t = BehaviorTree::new(Node::sequence(
            "s",
            vec![Node::condition("a", |_, _| true), Node::condition("b", |_, _| true)],
        ))
        .unwrap();
        assert_eq!(t.tick(&mut rt).status, TickStatus::Success);
        let mut t = BehaviorTree::new(Node::sequence("s", vec![Node::condition("a", |_, _| false), act("ok")])).unwrap();
        let log = t.tick(&mut rt);
        assert_eq!(log.status, TickStatus::Failure);
        assert_eq!(log.to_string(), "0\ta=F s=F");
    }

    #[test]
    fn unreached_running_actions_are_cancelled() {
        let mut rt = runtime();
        let flag = std::sync::Arc::new(std::sync::atomic::AtomicBool::new(false));
        let f = flag.clone();
        let gate = Node::condition("gate", move |_, _| f.load(std::sync::atomic::Ordering::SeqCst));
        let mut t = BehaviorTree::new(Node::fallback("f", vec![gate, act("spin")])).unwrap();
        t.tick(&mut rt);
        rt.tick();
        flag.store(true, std::sync::atomic::Ordering::SeqCst);
        let log = t.tick(&mut rt);
        assert_eq!(log.cancelled, vec!["spin"]);
        let r = rt.tick();
        assert_eq!(r.outcomes[0].outcome, SkillOutcome::Preempted);
    }

    #[test]
    fn empty_composites_are_invalid() {
        assert!(BehaviorTree::<()>::new(Node::sequence("s", vec![])).is_err());
        let rt = runtime();
        let t = BehaviorTree::new(act("nope")).unwrap();
        assert!(t.validate(&rt).is_err());
    }
}
