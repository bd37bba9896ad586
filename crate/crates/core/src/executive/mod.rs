//! Hierarchical state machines that sequence skills, delegate goals and
//! preempt on events.

mod runner;
mod template;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use runner::{ExecConfig, ExecError, Executive, ExecutiveStatus, TraceRecord};
pub use template::{Directive, TemplateError};
pub(crate) use template::template_scope;

use crate::kb::EntityId;

/// Name of the submachine built from the compiled command at entry time.
pub const AGENDA: &str = "$agenda";

pub const SUCCEEDED: &str = "succeeded";
pub const FAILED: &str = "failed";
pub const PREEMPTED: &str = "preempted";
pub const ACHIEVED: &str = "achieved";
pub const ABANDONED: &str = "abandoned";
pub const DONE: &str = "done";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateNode {
    Skill {
        skill: String,
        #[serde(default)]
        args: BTreeMap<String, serde_json::Value>,
        #[serde(skip)]
        bindings: BTreeMap<String, EntityId>,
    },
    Machine {
        machine: String,
    },
    Delegate {
        goal: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<usize>,
        #[serde(skip)]
        bindings: BTreeMap<String, EntityId>,
    },
    Terminal {
        label: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDef {
    #[serde(flatten)]
    pub node: StateNode,
    #[serde(default)]
    pub on: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineDef {
    pub id: String,
    pub initial: String,
    pub states: BTreeMap<String, StateDef>,
}

impl MachineDef {
    pub fn terminals(&self) -> BTreeSet<&str> {
        self.states
            .values()
            .filter_map(|s| match &s.node {
                StateNode::Terminal { label } => Some(label.as_str()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreemptionRule {
    pub event: String,
    pub target: String,
    pub scope: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSpec {
    pub skill: String,
    #[serde(default)]
    pub args: BTreeMap<String, serde_json::Value>,
    pub event: String,
}

/// Contents of a machine definition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSet {
    pub top: String,
    pub machines: Vec<MachineDef>,
    #[serde(default)]
    pub preemptions: Vec<PreemptionRule>,
    #[serde(default)]
    pub monitors: Vec<MonitorSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "defect", rename_all = "snake_case")]
pub enum Defect {
    UnknownMachine { name: String },
    DuplicateMachine { machine: String },
    MissingInitial { machine: String },
    MissingTarget { machine: String, state: String, label: String, target: String },
    MissingTransition { machine: String, state: String, label: String },
    UnexpectedLabel { machine: String, state: String, label: String },
    MissingPreemptedEdge { machine: String, state: String },
    UnreachableTerminal { machine: String },
    NestingCycle { machines: Vec<String> },
    BadPreemptionTarget { event: String, target: String, scope: String },
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::UnknownMachine { name } => write!(f, "unknown machine {name:?}"),
            Defect::DuplicateMachine { machine } => write!(f, "machine {machine:?} defined twice"),
            Defect::MissingInitial { machine } => write!(f, "{machine}: initial state does not exist"),
            Defect::MissingTarget { machine, state, label, target } => {
                write!(f, "{machine}.{state}: {label} leads to missing state {target:?}")
            }
            Defect::MissingTransition { machine, state, label } => {
                write!(f, "{machine}.{state}: no transition for {label:?}")
            }
            Defect::UnexpectedLabel { machine, state, label } => {
                write!(f, "{machine}.{state}: {label:?} can never be emitted")
            }
            Defect::MissingPreemptedEdge { machine, state } => {
                write!(f, "{machine}.{state}: preemptible scope needs a \"preempted\" transition")
            }
            Defect::UnreachableTerminal { machine } => write!(f, "{machine}: no terminal reachable from initial"),
            Defect::NestingCycle { machines } => write!(f, "submachine cycle {}", machines.join(" -> ")),
            Defect::BadPreemptionTarget { event, target, scope } => {
                write!(f, "rule {event}: target {target:?} is not a state of {scope:?}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum MachineError {
    #[error("malformed machine file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid machines: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Defect>),
}

/// Outcome labels a state can emit, given the machine table.
pub fn emittable(node: &StateNode, machines: &BTreeMap<String, MachineDef>) -> Option<BTreeSet<String>> {
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    match node {
        StateNode::Skill { .. } => Some(set(&[SUCCEEDED, FAILED, PREEMPTED])),
        StateNode::Delegate { .. } => Some(set(&[ACHIEVED, ABANDONED, PREEMPTED])),
        StateNode::Machine { machine } if machine == AGENDA => Some(set(&[DONE, FAILED, PREEMPTED])),
        StateNode::Machine { machine } => machines
            .get(machine)
            .map(|m| m.terminals().into_iter().map(String::from).collect()),
        StateNode::Terminal { .. } => Some(BTreeSet::new()),
    }
}

/// Labels that must have a transition. `preempted` is only required in
/// scopes that own preemption rules.
fn required(node: &StateNode, emits: &BTreeSet<String>) -> Vec<String> {
    match node {
        StateNode::Skill { .. } | StateNode::Delegate { .. } => {
            emits.iter().filter(|l| *l != PREEMPTED).cloned().collect()
        }
        _ => emits.iter().cloned().collect(),
    }
}

impl MachineSet {
    pub fn from_json(text: &str) -> Result<Self, MachineError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn table(&self) -> BTreeMap<String, MachineDef> {
        self.machines.iter().map(|m| (m.id.clone(), m.clone())).collect()
    }

    /// Structural checks; an empty list means the set is well formed.
    pub fn validate(&self) -> Vec<Defect> {
        let mut defects = Vec::new();
        let table = self.table();
        let mut seen = BTreeSet::new();
        for m in &self.machines {
            if !seen.insert(&m.id) {
                defects.push(Defect::DuplicateMachine { machine: m.id.clone() });
            }
        }
        if !table.contains_key(&self.top) {
            defects.push(Defect::UnknownMachine { name: self.top.clone() });
        }
        let scoped: BTreeSet<&str> = self.preemptions.iter().map(|r| r.scope.as_str()).collect();
        for m in &self.machines {
            if !m.states.contains_key(&m.initial) {
                defects.push(Defect::MissingInitial { machine: m.id.clone() });
            }
            for (name, state) in &m.states {
                if let StateNode::Machine { machine } = &state.node {
                    if machine != AGENDA && !table.contains_key(machine) {
                        defects.push(Defect::UnknownMachine { name: machine.clone() });
                    }
                }
                let emits = emittable(&state.node, &table).unwrap_or_default();
                for label in required(&state.node, &emits) {
                    if !state.on.contains_key(&label) {
                        defects.push(Defect::MissingTransition {
                            machine: m.id.clone(),
                            state: name.clone(),
                            label,
                        });
                    }
                }
                let preemptible = matches!(state.node, StateNode::Skill { .. } | StateNode::Delegate { .. });
                if preemptible && scoped.contains(m.id.as_str()) && !state.on.contains_key(PREEMPTED) {
                    defects.push(Defect::MissingPreemptedEdge {
                        machine: m.id.clone(),
                        state: name.clone(),
                    });
                }
                for (label, target) in &state.on {
                    if !emits.contains(label) && emittable(&state.node, &table).is_some() {
                        defects.push(Defect::UnexpectedLabel {
                            machine: m.id.clone(),
                            state: name.clone(),
                            label: label.clone(),
                        });
                    }
                    if !m.states.contains_key(target) {
                        defects.push(Defect::MissingTarget {
                            machine: m.id.clone(),
                            state: name.clone(),
                            label: label.clone(),
                            target: target.clone(),
                        });
                    }
                }
            }
            if m.states.contains_key(&m.initial) && !terminal_reachable(m) {
                defects.push(Defect::UnreachableTerminal { machine: m.id.clone() });
            }
        }
        if let Some(cycle) = nesting_cycle(&table) {
            defects.push(Defect::NestingCycle { machines: cycle });
        }
        for r in &self.preemptions {
            let ok = table.get(&r.scope).is_some_and(|m| m.states.contains_key(&r.target));
            if !ok {
                defects.push(Defect::BadPreemptionTarget {
                    event: r.event.clone(),
                    target: r.target.clone(),
                    scope: r.scope.clone(),
                });
            }
        }
        defects
    }
}

fn terminal_reachable(m: &MachineDef) -> bool {
    let mut seen = BTreeSet::from([m.initial.as_str()]);
    let mut queue = VecDeque::from([m.initial.as_str()]);
    while let Some(s) = queue.pop_front() {
        let Some(state) = m.states.get(s) else { continue };
        if matches!(state.node, StateNode::Terminal { .. }) {
            return true;
        }
        for t in state.on.values() {
            if seen.insert(t.as_str()) {
                queue.push_back(t.as_str());
            }
        }
    }
    false
}

fn nesting_cycle(table: &BTreeMap<String, MachineDef>) -> Option<Vec<String>> {
    fn children(m: &MachineDef) -> impl Iterator<Item = &str> {
        m.states.values().filter_map(|s| match &s.node {
            StateNode::Machine { machine } if machine != AGENDA => Some(machine.as_str()),
            _ => None,
        })
    }
    fn visit<'a>(
        id: &'a str,
        table: &'a BTreeMap<String, MachineDef>,
        stack: &mut Vec<&'a str>,
        done: &mut BTreeSet<&'a str>,
    ) -> Option<Vec<String>> {
        if let Some(pos) = stack.iter().position(|s| *s == id) {
            let mut cycle: Vec<String> = stack[pos..].iter().map(|s| s.to_string()).collect();
            cycle.push(id.to_string());
            return Some(cycle);
        }
        if done.contains(id) {
            return None;
        }
        let m = table.get(id)?;
        stack.push(id);
        for c in children(m) {
            if let Some(cycle) = visit(c, table, stack, done) {
                return Some(cycle);
            }
        }
        stack.pop();
        done.insert(id);
        None
    }
    let mut done = BTreeSet::new();
    for id in table.keys() {
        if let Some(c) = visit(id, table, &mut Vec::new(), &mut done) {
            return Some(c);
        }
    }
    None
}
