//! Planning over domain knowledge, monitored execution and replanning.

pub mod domain;
pub mod monitor;
pub mod planner;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kb::{Attribute, EntityId, EntityKind, KnowledgeBase, Value};
use crate::skill::Tick;

pub use domain::{ActionSchema, Domain, DomainError, DomainFile, GroundAction};
pub use monitor::{
    check_effects, run_plan, solve_goal, EffectCheck, EpisodeStatus, ExecStatus, GoalEpisode, PlanExecution,
};
pub use planner::{plan, simulate, Plan, PlanError, PlanResult};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fluent {
    pub name: String,
    pub args: Vec<EntityId>,
}

impl Fluent {
    pub fn new(name: impl Into<String>, args: impl Into<Vec<EntityId>>) -> Self {
        Fluent {
            name: name.into(),
            args: args.into(),
        }
    }

    /// Unary fluents are stored as `subject name "true"`, binary ones as
    /// `subject name object`.
    pub fn to_attribute(&self) -> Option<Attribute> {
        match self.args.as_slice() {
            [s] => Some(Attribute::new(*s, &self.name, Value::truth())),
            [s, o] => Some(Attribute::new(*s, &self.name, *o)),
            _ => None,
        }
    }

    pub fn display(&self, kb: &KnowledgeBase) -> String {
        let args: Vec<&str> = self.args.iter().map(|a| kb.name_of(*a)).collect();
        format!("{}({})", self.name, args.join(","))
    }
}

impl fmt::Display for Fluent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.args.iter().map(ToString::to_string).collect();
        write!(f, "{}({})", self.name, args.join(","))
    }
}

pub type FluentSet = BTreeSet<Fluent>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub fluent: Fluent,
    pub positive: bool,
}

impl Literal {
    pub fn pos(fluent: Fluent) -> Self {
        Literal {
            fluent,
            positive: true,
        }
    }

    pub fn neg(fluent: Fluent) -> Self {
        Literal {
            fluent,
            positive: false,
        }
    }

    pub fn holds(&self, state: &FluentSet) -> bool {
        state.contains(&self.fluent) == self.positive
    }

    pub fn display(&self, kb: &KnowledgeBase) -> String {
        let f = self.fluent.display(kb);
        if self.positive {
            f
        } else {
            format!("!{f}")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub literals: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GoalError {
    #[error("goal must contain at least one literal")]
    Empty,
    #[error("malformed literal {0:?}")]
    Malformed(String),
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
}

impl Goal {
    pub fn new(literals: Vec<Literal>) -> Result<Self, GoalError> {
        if literals.is_empty() {
            return Err(GoalError::Empty);
        }
        Ok(Goal { literals })
    }

    pub fn holds(&self, state: &FluentSet) -> bool {
        self.literals.iter().all(|l| l.holds(state))
    }

    /// Parses `at(coke,kitchen); !holding(robot,coke)` against KB names.
    pub fn parse(kb: &KnowledgeBase, text: &str) -> Result<Self, GoalError> {
        Goal::parse_with(text, |name| kb.find(name))
    }

    /// Like [`Goal::parse`] with a caller-supplied argument resolver.
    pub fn parse_with(text: &str, resolve: impl Fn(&str) -> Option<EntityId>) -> Result<Self, GoalError> {
        let mut literals = Vec::new();
        for raw in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (positive, body) = match raw.strip_prefix('!') {
                Some(rest) => (false, rest.trim()),
                None => match raw.strip_prefix("not ") {
                    Some(rest) => (false, rest.trim()),
                    None => (true, raw),
                },
            };
            let malformed = || GoalError::Malformed(raw.to_string());
            let (name, rest) = body.split_once('(').ok_or_else(malformed)?;
            let inner = rest.strip_suffix(')').ok_or_else(malformed)?;
            let name = name.trim();
            if name.is_empty() {
                return Err(malformed());
            }
            let args = inner
                .split(',')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(|a| resolve(a).ok_or_else(|| GoalError::UnknownEntity(a.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            literals.push(Literal {
                fluent: Fluent::new(name, args),
                positive,
            });
        }
        Goal::new(literals)
    }

    pub fn display(&self, kb: &KnowledgeBase) -> String {
        let parts: Vec<String> = self.literals.iter().map(|l| l.display(kb)).collect();
        parts.join("; ")
    }
}

/// Reads the domain's fluents out of the knowledge base.
pub fn fluents_from_kb(kb: &KnowledgeBase, domain: &Domain) -> FluentSet {
    let mut out = FluentSet::new();
    for (name, arity) in domain.fluent_arities() {
        for attr in kb.query(&crate::kb::QueryPattern::any().name(name)) {
            match (arity, &attr.value) {
                (1, v) if *v == Value::truth() => {
                    out.insert(Fluent::new(name, vec![attr.subject]));
                }
                (2, Value::Entity(o)) => {
                    out.insert(Fluent::new(name, vec![attr.subject, *o]));
                }
                _ => {}
            }
        }
    }
    out
}

/// Only instances are plan objects.
pub(crate) fn is_instance(kb: &KnowledgeBase, id: EntityId) -> bool {
    kb.entity(id).is_some_and(|e| e.kind == EntityKind::Instance)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MilestoneKind {
    ActionCompleted { index: usize },
    ActionFailed { index: usize, reason: String },
    Divergence { index: usize, missing: Vec<String>, extra: Vec<String> },
    PlanCompleted,
    GoalAchieved,
    GoalAbandoned { reason: String },
}

impl MilestoneKind {
    pub fn is_terminal(&self) -> bool {
        matches!(self, MilestoneKind::GoalAchieved | MilestoneKind::GoalAbandoned { .. })
    }
}

/// Progress report sent from the deliberative layer to its supervisor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Milestone {
    pub tick: Tick,
    /// 1-based number of the plan within its goal episode; 0 for
    /// episode-level milestones emitted before any plan exists.
    pub plan: usize,
    #[serde(flatten)]
    pub kind: MilestoneKind,
}
