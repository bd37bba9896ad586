//! Late-bound goal templates.
//!
//! A string argument `$var` names an entity bound by the issuing directive or
//! by the executive; `$var.attr` follows one entity-valued attribute in the
//! KB. Plain strings are KB names for entity parameters and literal text
//! otherwise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deliberative::{Goal, GoalError};
use crate::kb::{EntityId, KnowledgeBase, Value};
use crate::skill::{ArgValue, ParamKind, SkillDescriptor, SkillGoal, Supervisor};

/// One step of a compiled command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directive {
    Skill {
        skill: String,
        #[serde(default)]
        args: BTreeMap<String, serde_json::Value>,
        #[serde(default)]
        bindings: BTreeMap<String, EntityId>,
    },
    Goal {
        goal: String,
        #[serde(default)]
        bindings: BTreeMap<String, EntityId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unbound variable ${0}")]
    Unbound(String),
    #[error("{entity} has no entity-valued {attr:?}")]
    MissingAttribute { entity: String, attr: String },
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("unknown skill {0:?}")]
    UnknownSkill(String),
    #[error("argument {param}: {reason}")]
    BadArgument { param: String, reason: String },
    #[error(transparent)]
    Goal(#[from] GoalError),
}

pub(crate) struct Scope<'a> {
    pub kb: &'a KnowledgeBase,
    pub bindings: &'a BTreeMap<String, EntityId>,
    pub vars: &'a BTreeMap<String, EntityId>,
}

static NO_BINDINGS: BTreeMap<String, EntityId> = BTreeMap::new();

/// Scope with no variables: plain names only.
pub(crate) fn template_scope(kb: &KnowledgeBase) -> Scope<'_> {
    Scope {
        kb,
        bindings: &NO_BINDINGS,
        vars: &NO_BINDINGS,
    }
}

impl Scope<'_> {
    /// Resolves `$var` or `$var.attr` (without the `$`).
    fn variable(&self, token: &str) -> Result<EntityId, TemplateError> {
        let (var, attr) = match token.split_once('.') {
            Some((v, a)) => (v, Some(a)),
            None => (token, None),
        };
        let id = self
            .bindings
            .get(var)
            .or_else(|| self.vars.get(var))
            .copied()
            .ok_or_else(|| TemplateError::Unbound(var.to_string()))?;
        match attr {
            None => Ok(id),
            Some(attr) => match self.kb.value_of(id, attr) {
                Some(Value::Entity(e)) => Ok(*e),
                _ => Err(TemplateError::MissingAttribute {
                    entity: self.kb.name_of(id).to_string(),
                    attr: attr.to_string(),
                }),
            },
        }
    }

    fn entity(&self, text: &str) -> Result<EntityId, TemplateError> {
        match text.strip_prefix('$') {
            Some(token) => self.variable(token),
            None => self
                .kb
                .find(text)
                .ok_or_else(|| TemplateError::UnknownEntity(text.to_string())),
        }
    }

    pub fn skill_goal(
        &self,
        desc: Option<&SkillDescriptor>,
        skill: &str,
        args: &BTreeMap<String, serde_json::Value>,
        supervisor: Supervisor,
    ) -> Result<SkillGoal, TemplateError> {
        let desc = desc.ok_or_else(|| TemplateError::UnknownSkill(skill.to_string()))?;
        let mut goal = SkillGoal::new(skill, supervisor);
        for (param, raw) in args {
            let bad = |reason: &str| TemplateError::BadArgument {
                param: param.clone(),
                reason: reason.to_string(),
            };
            let kind = desc.kind_of(param).ok_or_else(|| bad("not a parameter"))?;
            let value = match (kind, raw) {
                (k, serde_json::Value::String(s)) if k.is_entity() => ArgValue::Entity(self.entity(s)?),
                (ParamKind::Text, serde_json::Value::String(s)) => match s.strip_prefix('$') {
                    Some(token) => ArgValue::Text(self.kb.name_of(self.variable(token)?).to_string()),
                    None => ArgValue::Text(s.clone()),
                },
                (ParamKind::Number, serde_json::Value::Number(n)) => {
                    ArgValue::Number(n.as_f64().ok_or_else(|| bad("not representable"))?)
                }
                _ => return Err(bad("kind mismatch")),
            };
            goal = goal.arg(param.clone(), value);
        }
        Ok(goal)
    }

    pub fn goal(&self, template: &str) -> Result<Goal, TemplateError> {
        // Resolution errors are reported through GoalError::UnknownEntity,
        // so remember the first real cause.
        let cause = std::cell::RefCell::new(None);
        let parsed = Goal::parse_with(template, |token| match self.entity(token) {
            Ok(id) => Some(id),
            Err(e) => {
                cause.borrow_mut().get_or_insert(e);
                None
            }
        });
        match parsed {
            Ok(g) => Ok(g),
            Err(e) => Err(cause.into_inner().unwrap_or(TemplateError::Goal(e))),
        }
    }
}
