//! Spoken-command understanding: grammar, parsing, coreference,
//! clarification and compilation into executive directives.

pub mod generate;
pub mod grammar;
pub mod parse;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate, GenerateError, Generated};
pub use grammar::{Grammar, GrammarError, Rule, Symbol, WildKind};
pub use parse::{parse, resolve_coreferences, tokenize, Lexicon, Mention, ParseError, ParsedCommand};

use crate::executive::Directive;
use crate::kb::{EntityId, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "value", rename_all = "snake_case")]
pub enum Slot {
    Resolved(EntityId),
    /// Pronoun at the given token index, awaiting an antecedent.
    Pronoun { index: usize, kind: WildKind },
    Unresolved(WildKind),
}

impl Slot {
    pub fn entity(&self) -> Option<EntityId> {
        match self {
            Slot::Resolved(entity) => Some(*entity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStep {
    pub task: String,
    pub slots: BTreeMap<String, Slot>,
}

impl TaskStep {
    pub fn new(task: impl Into<String>) -> Self {
        TaskStep {
            task: task.into(),
            slots: BTreeMap::new(),
        }
    }

    pub fn display(&self, kb: &KnowledgeBase) -> String {
        let slots: Vec<String> = self
            .slots
            .iter()
            .map(|(name, s)| match s {
                Slot::Resolved(entity) => format!("{name}={}", kb.name_of(*entity)),
                Slot::Pronoun { index, .. } => format!("{name}=@{index}"),
                Slot::Unresolved(kind) => format!("{name}=?{kind}"),
            })
            .collect();
        format!("{}({})", self.task, slots.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchema {
    /// Phrase substituted for `{verb}` in clarification questions.
    pub verb: String,
    pub slots: BTreeMap<String, WildKind>,
    /// Directives emitted per step; `$slot` refers to the step's fillers.
    pub directives: Vec<Directive>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTable {
    /// Question template per wildcard kind.
    pub clarify: BTreeMap<WildKind, String>,
    pub tasks: BTreeMap<String, TaskSchema>,
}

impl TaskTable {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum LanguageError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("malformed task table: {0}")]
    Json(#[from] serde_json::Error),
    #[error("grammar uses undeclared task type {0:?}")]
    UnknownTaskType(String),
    #[error("task {task}: slot {slot:?} is not declared with kind {kind}")]
    SlotMismatch { task: String, slot: String, kind: WildKind },
    #[error("no clarification template for {0}")]
    MissingTemplate(WildKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("unknown task type {0:?}")]
    UnknownTaskType(String),
    #[error("step {step}: slot {slot:?} is unresolved")]
    UnresolvedSlot { step: usize, slot: String },
}

/// Grammar, task table and vocabulary, checked against each other.
#[derive(Debug, Clone)]
pub struct Language {
    pub grammar: Grammar,
    pub tasks: TaskTable,
    pub lexicon: Lexicon,
}

/// Slot symbols a tagged rule owns, following untagged nonterminals.
fn owned_slots(grammar: &Grammar, rule: &Rule) -> Vec<(String, WildKind)> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut stack: Vec<&Rule> = vec![rule];
    while let Some(r) = stack.pop() {
        for sym in r.alternatives.iter().flatten() {
            match sym {
                Symbol::Wildcard { kind, slot } | Symbol::Pronoun { kind, slot } => out.push((slot.clone(), *kind)),
                Symbol::NonTerminal(n) => {
                    let child = &grammar.rules[n];
                    if child.task.is_none() && seen.insert(n.as_str()) {
                        stack.push(child);
                    }
                }
                Symbol::Word(_) => {}
            }
        }
    }
    out
}

impl Language {
    pub fn new(grammar: Grammar, tasks: TaskTable, lexicon: Lexicon) -> Result<Self, LanguageError> {
        for rule in grammar.rules.values() {
            let Some(task) = &rule.task else { continue };
            let schema = tasks
                .tasks
                .get(task)
                .ok_or_else(|| LanguageError::UnknownTaskType(task.clone()))?;
            for (slot, kind) in owned_slots(&grammar, rule) {
                if schema.slots.get(&slot) != Some(&kind) {
                    return Err(LanguageError::SlotMismatch {
                        task: task.clone(),
                        slot,
                        kind,
                    });
                }
            }
        }
        for schema in tasks.tasks.values() {
            if let Some(kind) = schema.slots.values().find(|k| !tasks.clarify.contains_key(k)) {
                return Err(LanguageError::MissingTemplate(*kind));
            }
        }
        Ok(Language {
            grammar,
            tasks,
            lexicon,
        })
    }

    pub fn load(grammar: &str, tasks: &str, kb: &KnowledgeBase) -> Result<Self, LanguageError> {
        Language::new(Grammar::parse(grammar)?, TaskTable::from_json(tasks)?, Lexicon::from_kb(kb))
    }

    /// Declared slots that no grammar symbol filled become unresolved.
    fn complete(&self, steps: &mut [TaskStep]) {
        for step in steps {
            if let Some(schema) = self.tasks.tasks.get(&step.task) {
                for (slot, kind) in &schema.slots {
                    step.slots.entry(slot.clone()).or_insert(Slot::Unresolved(*kind));
                }
            }
        }
    }

    pub fn parse(&self, sentence: &str) -> Result<ParsedCommand, ParseError> {
        let mut parsed = parse(&self.grammar, &self.lexicon, sentence)?;
        self.complete(&mut parsed.steps);
        Ok(parsed)
    }

    /// Parse followed by coreference resolution.
    pub fn understand(&self, sentence: &str) -> Result<Vec<TaskStep>, ParseError> {
        let mut parsed = self.parse(sentence)?;
        resolve_coreferences(&mut parsed);
        Ok(parsed.steps)
    }

    pub fn generate(&self, seed: u64) -> Result<Generated, GenerateError> {
        let mut g = generate(&self.grammar, &self.lexicon, seed)?;
        self.complete(&mut g.steps);
        Ok(g)
    }

    pub fn question(&self, step: &TaskStep, kind: WildKind) -> String {
        let verb = self.tasks.tasks.get(&step.task).map(|s| s.verb.as_str()).unwrap_or("do");
        self.tasks
            .clarify
            .get(&kind)
            .map(|t| t.replace("{verb}", verb))
            .unwrap_or_else(|| format!("which {kind}?"))
    }

    /// One directive list per step, concatenated in step order. Each
    /// directive is bound to its step's slot fillers.
    pub fn compile(&self, steps: &[TaskStep]) -> Result<Vec<Directive>, CompileError> {
        let mut out = Vec::new();
        for (i, step) in steps.iter().enumerate() {
            let schema = self
                .tasks
                .tasks
                .get(&step.task)
                .ok_or_else(|| CompileError::UnknownTaskType(step.task.clone()))?;
            let mut bindings = BTreeMap::new();
            for (name, slot) in &step.slots {
                let entity = slot.entity().ok_or_else(|| CompileError::UnresolvedSlot {
                    step: i,
                    slot: name.clone(),
                })?;
                bindings.insert(name.clone(), entity);
            }
            for d in &schema.directives {
                let mut d = d.clone();
                match &mut d {
                    Directive::Skill { bindings: b, .. } | Directive::Goal { bindings: b, .. } => {
                        b.extend(bindings.clone());
                    }
                }
                out.push(d);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Robot,
    Operator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", content = "value", rename_all = "snake_case")]
pub enum Clarification {
    Question(String),
    Complete(Vec<TaskStep>),
    Failed,
}

pub const DEFAULT_RETRIES: u32 = 3;

/// Correction dialogue over the unresolved slots of a parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DialogSession {
    pub steps: Vec<TaskStep>,
    pub missing: VecDeque<(usize, String)>,
    pub transcript: Vec<Turn>,
    pub retries_left: u32,
}

impl DialogSession {
    pub fn new(steps: Vec<TaskStep>, retries: u32) -> Self {
        let missing = steps
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                s.slots
                    .iter()
                    .filter(|(_, slot)| slot.entity().is_none())
                    .map(move |(name, _)| (i, name.clone()))
            })
            .collect();
        DialogSession {
            steps,
            missing,
            transcript: Vec::new(),
            retries_left: retries,
        }
    }

    fn head_kind(&self) -> Option<(usize, String, WildKind)> {
        let (i, name) = self.missing.front()?.clone();
        let kind = match self.steps[i].slots[&name] {
            Slot::Unresolved(kind) | Slot::Pronoun { kind, .. } => kind,
            Slot::Resolved(_) => unreachable!("missing queue holds only open slots"),
        };
        Some((i, name, kind))
    }

    fn ask(&mut self, lang: &Language) -> Clarification {
        match self.head_kind() {
            None => Clarification::Complete(self.steps.clone()),
            Some((i, _, kind)) => {
                let q = lang.question(&self.steps[i], kind);
                self.transcript.push(Turn {
                    speaker: Speaker::Robot,
                    text: q.clone(),
                });
                Clarification::Question(q)
            }
        }
    }

    /// Without an answer, asks about the first open slot. An answer is read
    /// strictly as a filler for that slot; unmatched answers use up retries.
    pub fn clarify(&mut self, lang: &Language, answer: Option<&str>) -> Clarification {
        if self.retries_left == 0 {
            return Clarification::Failed;
        }
        let Some(answer) = answer else {
            return self.ask(lang);
        };
        self.transcript.push(Turn {
            speaker: Speaker::Operator,
            text: answer.to_string(),
        });
        let Some((i, name, kind)) = self.head_kind() else {
            return Clarification::Complete(self.steps.clone());
        };
        match lang.lexicon.find_filler(kind, answer) {
            Some(entity) => {
                self.steps[i].slots.insert(name, Slot::Resolved(entity));
                self.missing.pop_front();
            }
            None => {
                self.retries_left -= 1;
                if self.retries_left == 0 {
                    return Clarification::Failed;
                }
            }
        }
        self.ask(lang)
    }
}
