//! Horizon-bounded uniform-cost search over eagerly grounded actions.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::Serialize;
use thiserror::Error;

use super::{Domain, Fluent, FluentSet, Goal, GroundAction};
use crate::kb::{EntityId, KnowledgeBase};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("parameter {param:?} of action {action:?} has no entities of its type")]
    UngroundableDomain { action: String, param: String },
    #[error("goal refers to unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("horizon must be at least 1")]
    InvalidHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub steps: Vec<GroundAction>,
    pub cost: f64,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum PlanResult {
    Plan(Plan),
    Unsolvable { horizon: usize },
}

impl PlanResult {
    pub fn plan(&self) -> Option<&Plan> {
        match self {
            PlanResult::Plan(p) => Some(p),
            PlanResult::Unsolvable { .. } => None,
        }
    }
}

/// Applies declared effects step by step; `None` if a precondition fails.
pub fn simulate(state: &FluentSet, steps: &[GroundAction]) -> Option<FluentSet> {
    let mut s = state.clone();
    for a in steps {
        let ok = a.pre_pos.iter().all(|f| s.contains(f)) && a.pre_neg.iter().all(|f| !s.contains(f));
        if !ok {
            return None;
        }
        for f in &a.del {
            s.remove(f);
        }
        s.extend(a.add.iter().cloned());
    }
    Some(s)
}

type Bits = Vec<u64>;

struct Interner {
    ids: HashMap<Fluent, usize>,
}

impl Interner {
    fn id(&mut self, f: &Fluent) -> usize {
        let next = self.ids.len();
        *self.ids.entry(f.clone()).or_insert(next)
    }

    fn mask(&mut self, fs: &[Fluent], words: usize) -> Bits {
        let mut b = vec![0u64; words];
        for f in fs {
            let i = self.id(f);
            b[i / 64] |= 1 << (i % 64);
        }
        b
    }
}

struct Compiled {
    pre_pos: Bits,
    pre_neg: Bits,
    add: Bits,
    del: Bits,
    cost: f64,
}

fn subset(a: &Bits, b: &Bits) -> bool {
    a.iter().zip(b).all(|(x, y)| x & y == *x)
}

fn disjoint(a: &Bits, b: &Bits) -> bool {
    a.iter().zip(b).all(|(x, y)| x & y == 0)
}

struct Entry {
    cost: f64,
    seq: Vec<u32>,
    state: usize,
}

impl Entry {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cost.total_cmp(&other.cost).then_with(|| self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// reversed: BinaryHeap is a max-heap
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

/// Finds a minimum-cost plan of at most `horizon` steps. Among equal-cost
/// plans the one whose sequence of ground-action names is lexicographically
/// smallest wins.
pub fn plan(
    kb: &KnowledgeBase,
    domain: &Domain,
    state: &FluentSet,
    goal: &Goal,
    horizon: usize,
) -> Result<PlanResult, PlanError> {
    if horizon == 0 {
        return Err(PlanError::InvalidHorizon);
    }
    for l in &goal.literals {
        if let Some(e) = l.fluent.args.iter().find(|e| kb.entity(**e).is_none()) {
            return Err(PlanError::UnknownEntity(*e));
        }
    }
    let actions = domain
        .ground(kb)
        .map_err(|(action, param)| PlanError::UngroundableDomain { action, param })?;

    let mut interner = Interner { ids: HashMap::new() };
    for f in state.iter().chain(goal.literals.iter().map(|l| &l.fluent)) {
        interner.id(f);
    }
    for a in &actions {
        for f in a.pre_pos.iter().chain(&a.pre_neg).chain(&a.add).chain(&a.del) {
            interner.id(f);
        }
    }
    let words = interner.ids.len().div_ceil(64).max(1);
    let compiled: Vec<Compiled> = actions
        .iter()
        .map(|a| Compiled {
            pre_pos: interner.mask(&a.pre_pos, words),
            pre_neg: interner.mask(&a.pre_neg, words),
            add: interner.mask(&a.add, words),
            del: interner.mask(&a.del, words),
            cost: a.cost,
        })
        .collect();
    let start: Vec<Fluent> = state.iter().cloned().collect();
    let start = interner.mask(&start, words);
    let pos: Vec<Fluent> = goal.literals.iter().filter(|l| l.positive).map(|l| l.fluent.clone()).collect();
    let neg: Vec<Fluent> = goal.literals.iter().filter(|l| !l.positive).map(|l| l.fluent.clone()).collect();
    let goal_pos = interner.mask(&pos, words);
    let goal_neg = interner.mask(&neg, words);

    // A missing positive goal fluent that no action adds is unreachable.
    let mut addable = start.clone();
    for c in &compiled {
        for (w, a) in addable.iter_mut().zip(&c.add) {
            *w |= a;
        }
    }
    if !subset(&goal_pos, &addable) {
        return Ok(PlanResult::Unsolvable { horizon });
    }

    let mut states: Vec<Bits> = Vec::new();
    let mut state_ids: HashMap<Bits, usize> = HashMap::new();
    let mut intern_state = |b: Bits, states: &mut Vec<Bits>| -> usize {
        *state_ids.entry(b.clone()).or_insert_with(|| {
            states.push(b);
            states.len() - 1
        })
    };
    let s0 = intern_state(start, &mut states);
    // shallowest depth at which each state has been expanded
    let mut closed: HashMap<usize, usize> = HashMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(Entry {
        cost: 0.0,
        seq: Vec::new(),
        state: s0,
    });
    while let Some(Entry { cost, seq, state: node }) = heap.pop() {
        let depth = seq.len();
        if closed.get(&node).is_some_and(|d| *d <= depth) {
            continue;
        }
        closed.insert(node, depth);
        let bits = states[node].clone();
        if subset(&goal_pos, &bits) && disjoint(&goal_neg, &bits) {
            let steps: Vec<GroundAction> = seq.iter().map(|i| actions[*i as usize].clone()).collect();
            assert!(
                simulate(state, &steps).is_some_and(|end| goal.holds(&end)),
                "planner emitted an invalid plan"
            );
            return Ok(PlanResult::Plan(Plan { steps, cost }));
        }
        if depth == horizon {
            continue;
        }
        for (i, c) in compiled.iter().enumerate() {
            if !subset(&c.pre_pos, &bits) || !disjoint(&c.pre_neg, &bits) {
                continue;
            }
            let next: Bits = bits
                .iter()
                .zip(&c.del)
                .zip(&c.add)
                .map(|((s, d), a)| (s & !d) | a)
                .collect();
            let id = intern_state(next, &mut states);
            if closed.get(&id).is_some_and(|d| *d <= depth + 1) {
                continue;
            }
            let mut child = seq.clone();
            child.push(i as u32);
            heap.push(Entry {
                cost: cost + c.cost,
                seq: child,
                state: id,
            });
        }
    }
    Ok(PlanResult::Unsolvable { horizon })
}
