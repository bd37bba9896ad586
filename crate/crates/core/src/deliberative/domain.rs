use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{is_instance, Fluent};
use crate::kb::{Attribute, EntityId, EntityKind, KbError, KnowledgeBase, INSTANCE_OF, SUBCLASS_OF};
use crate::skill::{ArgValue, SkillGoal, Supervisor};

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("malformed domain: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown type {0:?}")]
    UnknownType(String),
    #[error("unknown fluent {0:?}")]
    UnknownFluent(String),
    #[error("fluent {name:?} expects {expected} arguments, got {got}")]
    ArityMismatch { name: String, expected: usize, got: usize },
    #[error("fluent {0:?} must be unary or binary")]
    UnsupportedArity(String),
    #[error("action {action:?} uses undeclared variable {var:?}")]
    UnknownVariable { action: String, var: String },
    #[error("action {action:?} declares parameter {var:?} twice")]
    DuplicateParameter { action: String, var: String },
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("malformed literal {0:?}")]
    BadLiteral(Vec<String>),
    #[error("action {0:?} must have a positive cost")]
    BadCost(String),
    #[error("action {action:?} binds unregistered skill {skill:?}")]
    UnknownSkill { action: String, skill: String },
    #[error("action {0:?} declared twice")]
    DuplicateAction(String),
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluentDecl {
    pub name: String,
    /// Argument types, used for arity.
    pub params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillBindingDecl {
    pub name: String,
    #[serde(default)]
    pub args: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDecl {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ParamDecl>,
    #[serde(default)]
    pub pre: Vec<Vec<String>>,
    #[serde(default)]
    pub add: Vec<Vec<String>>,
    #[serde(default)]
    pub del: Vec<Vec<String>>,
    pub skill: SkillBindingDecl,
    #[serde(default = "unit_cost")]
    pub cost: f64,
}

fn unit_cost() -> f64 {
    1.0
}

/// Domain file as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainFile {
    #[serde(default)]
    pub types: Vec<TypeDecl>,
    #[serde(default)]
    pub objects: Vec<ObjectDecl>,
    pub fluents: Vec<FluentDecl>,
    pub actions: Vec<ActionDecl>,
}

impl DomainFile {
    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Var(usize),
    Const(EntityId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FluentTemplate {
    pub name: String,
    pub args: Vec<Term>,
}

impl FluentTemplate {
    fn bind(&self, args: &[EntityId]) -> Fluent {
        Fluent::new(
            self.name.clone(),
            self.args
                .iter()
                .map(|t| match t {
                    Term::Var(i) => args[*i],
                    Term::Const(e) => *e,
                })
                .collect::<Vec<_>>(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArgTemplate {
    Var(usize),
    Text(String),
    Number(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSchema {
    pub name: String,
    /// (variable name, type concept)
    pub params: Vec<(String, EntityId)>,
    pub pre: Vec<(FluentTemplate, bool)>,
    pub add: Vec<FluentTemplate>,
    pub del: Vec<FluentTemplate>,
    pub skill: String,
    pub skill_args: BTreeMap<String, ArgTemplate>,
    pub cost: f64,
}

/// Fully instantiated action with its skill goal and expected effects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundAction {
    pub name: String,
    pub schema: String,
    pub args: Vec<EntityId>,
    pub pre_pos: Vec<Fluent>,
    pub pre_neg: Vec<Fluent>,
    pub add: Vec<Fluent>,
    pub del: Vec<Fluent>,
    pub cost: f64,
    pub goal: SkillGoal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    fluents: BTreeMap<String, usize>,
    pub actions: Vec<ActionSchema>,
}

impl Domain {
    /// Resolves a domain file against the KB, first adding its declared
    /// types and objects.
    pub fn load(file: &DomainFile, kb: &mut KnowledgeBase) -> Result<Self, DomainError> {
        for t in &file.types {
            kb.upsert_entity(EntityKind::Concept, &t.name)?;
        }
        for t in &file.types {
            if let Some(p) = &t.parent {
                let child = kb.lookup(EntityKind::Concept, &t.name).expect("just added");
                let parent = concept(kb, p)?;
                kb.assert_attr(Attribute::new(child, SUBCLASS_OF, parent))?;
            }
        }
        for o in &file.objects {
            let ty = concept(kb, &o.ty)?;
            let id = kb.upsert_entity(EntityKind::Instance, &o.name)?;
            kb.assert_attr(Attribute::new(id, INSTANCE_OF, ty))?;
        }

        let mut fluents = BTreeMap::new();
        for f in &file.fluents {
            if !(1..=2).contains(&f.params.len()) {
                return Err(DomainError::UnsupportedArity(f.name.clone()));
            }
            for ty in &f.params {
                concept(kb, ty)?;
            }
            fluents.insert(f.name.clone(), f.params.len());
        }

        let mut actions: Vec<ActionSchema> = Vec::new();
        for a in &file.actions {
            if actions.iter().any(|x| x.name == a.name) {
                return Err(DomainError::DuplicateAction(a.name.clone()));
            }
            if !(a.cost.is_finite() && a.cost > 0.0) {
                return Err(DomainError::BadCost(a.name.clone()));
            }
            let mut params = Vec::new();
            for p in &a.params {
                if params.iter().any(|(n, _)| n == &p.name) {
                    return Err(DomainError::DuplicateParameter {
                        action: a.name.clone(),
                        var: p.name.clone(),
                    });
                }
                params.push((p.name.clone(), concept(kb, &p.ty)?));
            }
            let term = |s: &str| -> Result<Term, DomainError> {
                match s.strip_prefix('?') {
                    Some(var) => params
                        .iter()
                        .position(|(n, _)| n == var)
                        .map(Term::Var)
                        .ok_or_else(|| DomainError::UnknownVariable {
                            action: a.name.clone(),
                            var: var.to_string(),
                        }),
                    None => kb
                        .lookup(EntityKind::Instance, s)
                        .map(Term::Const)
                        .ok_or_else(|| DomainError::UnknownEntity(s.to_string())),
                }
            };
            let template = |parts: &[String]| -> Result<FluentTemplate, DomainError> {
                let (name, args) = parts
                    .split_first()
                    .ok_or_else(|| DomainError::BadLiteral(parts.to_vec()))?;
                let arity = *fluents
                    .get(name)
                    .ok_or_else(|| DomainError::UnknownFluent(name.clone()))?;
                if arity != args.len() {
                    return Err(DomainError::ArityMismatch {
                        name: name.clone(),
                        expected: arity,
                        got: args.len(),
                    });
                }
                Ok(FluentTemplate {
                    name: name.clone(),
                    args: args.iter().map(|s| term(s)).collect::<Result<_, _>>()?,
                })
            };
            let mut pre = Vec::new();
            for lit in &a.pre {
                match lit.split_first() {
                    Some((head, rest)) if head == "not" => pre.push((template(rest)?, false)),
                    _ => pre.push((template(lit)?, true)),
                }
            }
            let add = a.add.iter().map(|f| template(f)).collect::<Result<Vec<_>, _>>()?;
            let del = a.del.iter().map(|f| template(f)).collect::<Result<Vec<_>, _>>()?;
            let mut skill_args = BTreeMap::new();
            for (k, v) in &a.skill.args {
                let arg = match v {
                    serde_json::Value::String(s) if s.starts_with('?') => match term(s)? {
                        Term::Var(i) => ArgTemplate::Var(i),
                        Term::Const(_) => unreachable!(),
                    },
                    serde_json::Value::String(s) => ArgTemplate::Text(s.clone()),
                    serde_json::Value::Number(n) => ArgTemplate::Number(n.as_f64().unwrap_or_default()),
                    other => return Err(DomainError::BadLiteral(vec![k.clone(), other.to_string()])),
                };
                skill_args.insert(k.clone(), arg);
            }
            actions.push(ActionSchema {
                name: a.name.clone(),
                params,
                pre,
                add,
                del,
                skill: a.skill.name.clone(),
                skill_args,
                cost: a.cost,
            });
        }
        Ok(Domain { fluents, actions })
    }

    pub fn from_json(text: &str, kb: &mut KnowledgeBase) -> Result<Self, DomainError> {
        Domain::load(&DomainFile::from_json(text)?, kb)
    }

    pub fn fluent_arities(&self) -> impl Iterator<Item = (&str, usize)> {
        self.fluents.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Every bound skill must satisfy `registered`.
    pub fn check_skills(&self, registered: impl Fn(&str) -> bool) -> Result<(), DomainError> {
        match self.actions.iter().find(|a| !registered(&a.skill)) {
            Some(a) => Err(DomainError::UnknownSkill {
                action: a.name.clone(),
                skill: a.skill.clone(),
            }),
            None => Ok(()),
        }
    }

    /// Eagerly instantiates every schema over the KB instances of each
    /// parameter type, sorted by ground-action name. A parameter type with
    /// no instances is reported as `Err((action, parameter))`.
    pub fn ground(&self, kb: &KnowledgeBase) -> Result<Vec<GroundAction>, (String, String)> {
        let mut out = Vec::new();
        for schema in &self.actions {
            let mut domains = Vec::new();
            for (var, ty) in &schema.params {
                let members: Vec<EntityId> = kb
                    .entities()
                    .iter()
                    .filter(|e| is_instance(kb, e.id) && kb.is_a(e.id, *ty).unwrap_or(false))
                    .map(|e| e.id)
                    .collect();
                if members.is_empty() {
                    return Err((schema.name.clone(), var.clone()));
                }
                domains.push(members);
            }
            let mut idx = vec![0usize; domains.len()];
            'odometer: loop {
                let args: Vec<EntityId> = idx.iter().zip(&domains).map(|(i, d)| d[*i]).collect();
                out.push(instantiate(schema, &args, kb));
                let mut pos = idx.len();
                loop {
                    if pos == 0 {
                        break 'odometer;
                    }
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] < domains[pos].len() {
                        continue 'odometer;
                    }
                    idx[pos] = 0;
                }
            }
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }
}

fn concept(kb: &KnowledgeBase, name: &str) -> Result<EntityId, DomainError> {
    kb.lookup(EntityKind::Concept, name)
        .ok_or_else(|| DomainError::UnknownType(name.to_string()))
}

fn instantiate(schema: &ActionSchema, args: &[EntityId], kb: &KnowledgeBase) -> GroundAction {
    let names: Vec<&str> = args.iter().map(|a| kb.name_of(*a)).collect();
    let mut goal = SkillGoal::new(schema.skill.clone(), Supervisor::Deliberative);
    for (k, v) in &schema.skill_args {
        let value = match v {
            ArgTemplate::Var(i) => ArgValue::Entity(args[*i]),
            ArgTemplate::Text(t) => ArgValue::Text(t.clone()),
            ArgTemplate::Number(n) => ArgValue::Number(*n),
        };
        goal = goal.arg(k.clone(), value);
    }
    let split = |positive: bool| {
        schema
            .pre
            .iter()
            .filter(|(_, p)| *p == positive)
            .map(|(t, _)| t.bind(args))
            .collect()
    };
    GroundAction {
        name: format!("{}({})", schema.name, names.join(",")),
        schema: schema.name.clone(),
        args: args.to_vec(),
        pre_pos: split(true),
        pre_neg: split(false),
        add: schema.add.iter().map(|t| t.bind(args)).collect(),
        del: schema.del.iter().map(|t| t.bind(args)).collect(),
        cost: schema.cost,
        goal,
    }
}
