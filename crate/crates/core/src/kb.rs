//! Entity/attribute store holding the concept network and situated state.
//!
//! Every layer reads and writes the same store: the executive records task
//! level facts, the planner snapshots it as its initial state and skills (or
//! the simulator's perception sync) update it as the world changes.
//!
//! Attributes are set-valued triples `(subject, name, value)`. Results are
//! always ordered by subject id, then attribute name, then insertion order,
//! so two stores with identical contents answer queries identically.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INSTANCE_OF: &str = "instance_of";
pub const SUBCLASS_OF: &str = "subclass_of";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Concept,
    Instance,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Concept => "concept",
            EntityKind::Instance => "instance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Value {
    Entity(EntityId),
    Number(f64),
    Text(String),
}

impl Value {
    pub fn as_entity(&self) -> Option<EntityId> {
        match self {
            Value::Entity(id) => Some(*id),
            _ => None,
        }
    }

    fn type_tag(&self) -> &'static str {
        match self {
            Value::Entity(_) => "entity",
            Value::Number(_) => "number",
            Value::Text(_) => "text",
        }
    }
}

// Numbers compare by bit pattern so that values can live in hashed sets.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Entity(a), Value::Entity(b)) => a == b,
            (Value::Number(a), Value::Number(b)) => a.to_bits() == b.to_bits(),
            (Value::Text(a), Value::Text(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Value::Entity(id) => id.hash(state),
            Value::Number(n) => n.to_bits().hash(state),
            Value::Text(t) => t.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Entity(id) => write!(f, "{id}"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Text(t) => write!(f, "{t:?}"),
        }
    }
}

impl From<EntityId> for Value {
    fn from(id: EntityId) -> Self {
        Value::Entity(id)
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::Number(n)
    }
}

impl From<&str> for Value {
    fn from(t: &str) -> Self {
        Value::Text(t.to_string())
    }
}

impl Value {
    /// Value used for unary facts such as `handempty(robot)`.
    pub fn truth() -> Self {
        Value::Text("true".into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub subject: EntityId,
    pub name: String,
    pub value: Value,
}

impl Attribute {
    pub fn new(subject: EntityId, name: impl Into<String>, value: impl Into<Value>) -> Self {
        Attribute {
            subject,
            name: name.into(),
            value: value.into(),
        }
    }
}

/// Single-triple pattern; `None` positions are wildcards.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryPattern {
    pub subject: Option<EntityId>,
    pub name: Option<String>,
    pub value: Option<Value>,
}

impl QueryPattern {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn subject(mut self, id: EntityId) -> Self {
        self.subject = Some(id);
        self
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn value(mut self, value: impl Into<Value>) -> Self {
        self.value = Some(value.into());
        self
    }

    fn matches_value(&self, value: &Value) -> bool {
        self.value.as_ref().is_none_or(|v| v == value)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KbError {
    #[error("invalid entity name {0:?}")]
    InvalidName(String),
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("malformed snapshot line {line}: {reason}")]
    MalformedSnapshot { line: usize, reason: String },
}

/// Deep copy of every attribute, in query order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbSnapshot {
    pub attributes: Vec<Attribute>,
}

impl KbSnapshot {
    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn contains(&self, attr: &Attribute) -> bool {
        self.attributes.contains(attr)
    }
}

type AttrsByName = BTreeMap<String, Vec<Value>>;

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: Vec<Entity>,
    by_name: HashMap<(EntityKind, String), EntityId>,
    // subject -> attribute name -> values in insertion order
    attrs: BTreeMap<EntityId, AttrsByName>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn upsert_entity(&mut self, kind: EntityKind, name: &str) -> Result<EntityId, KbError> {
        if name.trim().is_empty() || name.contains(['\t', '\n']) {
            return Err(KbError::InvalidName(name.to_string()));
        }
        if let Some(id) = self.by_name.get(&(kind, name.to_string())) {
            return Ok(*id);
        }
        let id = EntityId(self.entities.len() as u32 + 1);
        self.entities.push(Entity {
            id,
            kind,
            name: name.to_string(),
        });
        self.by_name.insert((kind, name.to_string()), id);
        Ok(id)
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        if id.0 == 0 {
            return None;
        }
        self.entities.get(id.0 as usize - 1)
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn lookup(&self, kind: EntityKind, name: &str) -> Option<EntityId> {
        self.by_name.get(&(kind, name.to_string())).copied()
    }

    /// Looks up a name, preferring instances over concepts.
    pub fn find(&self, name: &str) -> Option<EntityId> {
        self.lookup(EntityKind::Instance, name)
            .or_else(|| self.lookup(EntityKind::Concept, name))
    }

    pub fn name_of(&self, id: EntityId) -> &str {
        self.entity(id).map(|e| e.name.as_str()).unwrap_or("?")
    }

    fn check(&self, id: EntityId) -> Result<(), KbError> {
        self.entity(id).map(|_| ()).ok_or(KbError::UnknownEntity(id))
    }

    fn check_attr(&self, attr: &Attribute) -> Result<(), KbError> {
        self.check(attr.subject)?;
        if let Value::Entity(v) = attr.value {
            self.check(v)?;
        }
        Ok(())
    }

    pub fn assert_attr(&mut self, attr: Attribute) -> Result<(), KbError> {
        self.check_attr(&attr)?;
        let values = self
            .attrs
            .entry(attr.subject)
            .or_default()
            .entry(attr.name)
            .or_default();
        if !values.contains(&attr.value) {
            values.push(attr.value);
        }
        Ok(())
    }

    pub fn retract_attr(&mut self, attr: &Attribute) -> Result<(), KbError> {
        self.check_attr(attr)?;
        if let Some(by_name) = self.attrs.get_mut(&attr.subject) {
            if let Some(values) = by_name.get_mut(&attr.name) {
                values.retain(|v| v != &attr.value);
                if values.is_empty() {
                    by_name.remove(&attr.name);
                }
            }
            if by_name.is_empty() {
                self.attrs.remove(&attr.subject);
            }
        }
        Ok(())
    }

    /// Removes every value of `name` on `subject`.
    pub fn clear_attr(&mut self, subject: EntityId, name: &str) {
        if let Some(by_name) = self.attrs.get_mut(&subject) {
            by_name.remove(name);
            if by_name.is_empty() {
                self.attrs.remove(&subject);
            }
        }
    }

    /// Replaces all values of `name` on `subject` with `value`.
    pub fn set_attr(
        &mut self,
        subject: EntityId,
        name: &str,
        value: impl Into<Value>,
    ) -> Result<(), KbError> {
        let attr = Attribute::new(subject, name, value);
        self.check_attr(&attr)?;
        self.clear_attr(subject, name);
        self.assert_attr(attr)
    }

    pub fn query(&self, pattern: &QueryPattern) -> Vec<Attribute> {
        let mut out = Vec::new();
        let subjects: Box<dyn Iterator<Item = (&EntityId, &AttrsByName)>> =
            match pattern.subject {
                Some(s) => Box::new(self.attrs.get_key_value(&s).into_iter()),
                None => Box::new(self.attrs.iter()),
            };
        for (subject, by_name) in subjects {
            let names: Box<dyn Iterator<Item = (&String, &Vec<Value>)>> = match &pattern.name {
                Some(n) => Box::new(by_name.get_key_value(n).into_iter()),
                None => Box::new(by_name.iter()),
            };
            for (name, values) in names {
                out.extend(
                    values
                        .iter()
                        .filter(|v| pattern.matches_value(v))
                        .map(|v| Attribute::new(*subject, name.clone(), v.clone())),
                );
            }
        }
        out
    }

    /// First value of `name` on `subject`, in insertion order.
    pub fn value_of(&self, subject: EntityId, name: &str) -> Option<&Value> {
        self.attrs.get(&subject)?.get(name)?.first()
    }

    pub fn holds(&self, attr: &Attribute) -> bool {
        self.attrs
            .get(&attr.subject)
            .and_then(|m| m.get(&attr.name))
            .is_some_and(|vs| vs.contains(&attr.value))
    }

    /// Whether `concept` is reachable from `entity` through one optional
    /// `instance_of` edge followed by any number of `subclass_of` edges.
    pub fn is_a(&self, entity: EntityId, concept: EntityId) -> Result<bool, KbError> {
        self.check(entity)?;
        self.check(concept)?;
        let mut frontier: VecDeque<EntityId> = VecDeque::from([entity]);
        frontier.extend(self.entity_values(entity, INSTANCE_OF));
        let mut seen: BTreeSet<EntityId> = frontier.iter().copied().collect();
        while let Some(next) = frontier.pop_front() {
            if next == concept {
                return Ok(true);
            }
            for parent in self.entity_values(next, SUBCLASS_OF) {
                if seen.insert(parent) {
                    frontier.push_back(parent);
                }
            }
        }
        Ok(false)
    }

    fn entity_values(&self, subject: EntityId, name: &str) -> impl Iterator<Item = EntityId> + '_ {
        self.attrs
            .get(&subject)
            .and_then(|m| m.get(name))
            .into_iter()
            .flatten()
            .filter_map(Value::as_entity)
    }

    /// Instances that are `is_a` the given concept, ordered by id.
    pub fn instances_of(&self, concept: EntityId) -> Vec<EntityId> {
        self.entities
            .iter()
            .filter(|e| e.kind == EntityKind::Instance)
            .filter(|e| self.is_a(e.id, concept).unwrap_or(false))
            .map(|e| e.id)
            .collect()
    }

    pub fn snapshot(&self) -> KbSnapshot {
        KbSnapshot {
            attributes: self.query(&QueryPattern::any()),
        }
    }

    /// Replaces all attributes with the snapshot's; entities are kept.
    pub fn restore(&mut self, snapshot: &KbSnapshot) -> Result<(), KbError> {
        for attr in &snapshot.attributes {
            self.check_attr(attr)?;
        }
        self.attrs.clear();
        for attr in &snapshot.attributes {
            self.assert_attr(attr.clone())?;
        }
        Ok(())
    }

    /// Writes the tab-separated snapshot file: entity records then attributes.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entities {
            writeln!(out, "E\t{}\t{}\t{}", e.id.0, e.kind.as_str(), escape(&e.name))?;
        }
        for a in self.query(&QueryPattern::any()) {
            let value = match &a.value {
                Value::Entity(id) => id.0.to_string(),
                Value::Number(n) => format!("{n:?}"),
                Value::Text(t) => escape(t),
            };
            writeln!(
                out,
                "A\t{}\t{}\t{}\t{}",
                a.subject.0,
                escape(&a.name),
                a.value.type_tag(),
                value
            )?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(input: R) -> Result<Self, KbError> {
        let mut kb = KnowledgeBase::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let bad = |reason: &str| KbError::MalformedSnapshot {
                line: lineno,
                reason: reason.to_string(),
            };
            let line = line.map_err(|e| bad(&e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["E", id, kind, name] => {
                    let id: u32 = id.parse().map_err(|_| bad("bad entity id"))?;
                    let kind = match *kind {
                        "concept" => EntityKind::Concept,
                        "instance" => EntityKind::Instance,
                        _ => return Err(bad("bad entity kind")),
                    };
                    let got = kb.upsert_entity(kind, &unescape(name))?;
                    if got.0 != id {
                        return Err(bad("entity ids must be dense and ascending"));
                    }
                }
                ["A", subject, name, tag, value] => {
                    let subject = EntityId(subject.parse().map_err(|_| bad("bad subject"))?);
                    let value = match *tag {
                        "entity" => {
                            Value::Entity(EntityId(value.parse().map_err(|_| bad("bad id"))?))
                        }
                        "number" => Value::Number(value.parse().map_err(|_| bad("bad number"))?),
                        "text" => Value::Text(unescape(value)),
                        _ => return Err(bad("bad value type")),
                    };
                    kb.assert_attr(Attribute::new(subject, unescape(name), value))?;
                }
                _ => return Err(bad("unrecognised record")),
            }
        }
        Ok(kb)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}
