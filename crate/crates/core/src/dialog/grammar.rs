//! Command grammar files.
//!
//! ```text
//! # comment
//! %pronouns it:object,location him:person
//! $main = $cmd | $cmd and $cmd
//! $go:navigate_to = go to the {location:destination}
//! $bring:deliver = bring <object:object> to the {location:destination}
//! ```
//!
//! A `:task` suffix tags the nonterminal with a task type. `{kind[:slot]}`
//! matches a KB name of that kind, `<kind[:slot]>` a declared pronoun that
//! may refer to that kind. Repeating a left-hand side appends alternatives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROOT: &str = "$main";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WildKind {
    Object,
    Location,
    Person,
    Category,
}

impl WildKind {
    pub const ALL: [WildKind; 4] = [WildKind::Object, WildKind::Location, WildKind::Person, WildKind::Category];

    pub fn as_str(self) -> &'static str {
        match self {
            WildKind::Object => "object",
            WildKind::Location => "location",
            WildKind::Person => "person",
            WildKind::Category => "category",
        }
    }
}

impl fmt::Display for WildKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WildKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        WildKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Symbol {
    Word(String),
    NonTerminal(String),
    Wildcard { kind: WildKind, slot: String },
    Pronoun { kind: WildKind, slot: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub task: Option<String>,
    pub alternatives: Vec<Vec<Symbol>>,
    /// Line of the first definition.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("line {0}: syntax error: {1}")]
    Syntax(usize, String),
    #[error("line {line}: undefined nonterminal {name}")]
    UndefinedNonterminal { name: String, line: usize },
    #[error("line {line}: left recursion through {name}")]
    LeftRecursion { name: String, line: usize },
    #[error("grammar has no {ROOT}")]
    MissingRoot,
    #[error("no pronoun declared for kind {0}")]
    NoPronoun(WildKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    pub rules: BTreeMap<String, Rule>,
    /// Pronoun word to the kinds it may refer to.
    pub pronouns: BTreeMap<String, BTreeSet<WildKind>>,
}

fn parse_symbol(raw: &str, line: usize) -> Result<Symbol, GrammarError> {
    let syntax = |msg: String| GrammarError::Syntax(line, msg);
    let placeholder = |inner: &str| -> Result<(WildKind, String), GrammarError> {
        let (kind, slot) = inner.split_once(':').unwrap_or((inner, inner));
        let kind = kind
            .parse::<WildKind>()
            .map_err(|_| syntax(format!("unknown wildcard kind {kind:?}")))?;
        if slot.is_empty() {
            return Err(syntax(format!("empty slot name in {raw:?}")));
        }
        Ok((kind, slot.to_string()))
    };
    if let Some(inner) = raw.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
        let (kind, slot) = placeholder(inner)?;
        Ok(Symbol::Wildcard { kind, slot })
    } else if let Some(inner) = raw.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
        let (kind, slot) = placeholder(inner)?;
        Ok(Symbol::Pronoun { kind, slot })
    } else if raw.starts_with('$') {
        if raw.len() == 1 {
            return Err(syntax("bare $".into()));
        }
        Ok(Symbol::NonTerminal(raw.to_string()))
    } else if raw.contains(['{', '}', '<', '>']) {
        Err(syntax(format!("malformed token {raw:?}")))
    } else {
        Ok(Symbol::Word(raw.to_lowercase()))
    }
}

impl Grammar {
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let mut rules: BTreeMap<String, Rule> = BTreeMap::new();
        let mut pronouns: BTreeMap<String, BTreeSet<WildKind>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            if let Some(decls) = content.strip_prefix("%pronouns") {
                for decl in decls.split_whitespace() {
                    let (word, kinds) = decl
                        .split_once(':')
                        .ok_or_else(|| GrammarError::Syntax(line, format!("pronoun {decl:?} lacks kinds")))?;
                    let entry = pronouns.entry(word.to_lowercase()).or_default();
                    for k in kinds.split(',') {
                        let kind = k
                            .parse()
                            .map_err(|_| GrammarError::Syntax(line, format!("unknown kind {k:?}")))?;
                        entry.insert(kind);
                    }
                }
                continue;
            }
            let (lhs, rhs) = content
                .split_once('=')
                .ok_or_else(|| GrammarError::Syntax(line, "expected `$name = ...`".into()))?;
            let lhs = lhs.trim();
            let (name, task) = match lhs.split_once(':') {
                Some((n, t)) => (n.trim(), Some(t.trim().to_string())),
                None => (lhs, None),
            };
            if !name.starts_with('$') || name.len() < 2 || name.contains(char::is_whitespace) {
                return Err(GrammarError::Syntax(line, format!("bad nonterminal {name:?}")));
            }
            if task.as_deref() == Some("") {
                return Err(GrammarError::Syntax(line, "empty task tag".into()));
            }
            let mut alternatives = Vec::new();
            for alt in rhs.split('|') {
                let symbols = alt
                    .split_whitespace()
                    .map(|t| parse_symbol(t, line))
                    .collect::<Result<Vec<_>, _>>()?;
                if symbols.is_empty() {
                    return Err(GrammarError::Syntax(line, "empty alternative".into()));
                }
                alternatives.push(symbols);
            }
            let rule = rules.entry(name.to_string()).or_insert(Rule {
                task: None,
                alternatives: Vec::new(),
                line,
            });
            match (&rule.task, task) {
                (_, None) => {}
                (None, Some(t)) if rule.alternatives.is_empty() => rule.task = Some(t),
                (Some(old), Some(t)) if *old == t => {}
                _ => return Err(GrammarError::Syntax(line, format!("conflicting task tag for {name}"))),
            }
            rule.alternatives.extend(alternatives);
        }
        let grammar = Grammar { rules, pronouns };
        grammar.validate()?;
        Ok(grammar)
    }

    pub fn productions(&self) -> usize {
        self.rules.len()
    }

    /// Task types tagged anywhere in the grammar.
    pub fn task_types(&self) -> BTreeSet<&str> {
        self.rules.values().filter_map(|r| r.task.as_deref()).collect()
    }

    pub fn pronouns_for(&self, kind: WildKind) -> Vec<&str> {
        self.pronouns
            .iter()
            .filter(|(_, ks)| ks.contains(&kind))
            .map(|(w, _)| w.as_str())
            .collect()
    }

    fn validate(&self) -> Result<(), GrammarError> {
        if !self.rules.contains_key(ROOT) {
            return Err(GrammarError::MissingRoot);
        }
        for rule in self.rules.values() {
            for sym in rule.alternatives.iter().flatten() {
                match sym {
                    Symbol::NonTerminal(n) if !self.rules.contains_key(n) => {
                        return Err(GrammarError::UndefinedNonterminal {
                            name: n.clone(),
                            line: rule.line,
                        })
                    }
                    Symbol::Pronoun { kind, .. } if self.pronouns_for(*kind).is_empty() => {
                        return Err(GrammarError::NoPronoun(*kind))
                    }
                    _ => {}
                }
            }
        }
        // Every alternative consumes input, so only a cycle through leading
        // nonterminals can make top-down matching loop.
        let leading = |name: &str| -> Vec<&str> {
            self.rules[name]
                .alternatives
                .iter()
                .filter_map(|alt| match &alt[0] {
                    Symbol::NonTerminal(n) => Some(n.as_str()),
                    _ => None,
                })
                .collect()
        };
        for start in self.rules.keys() {
            let mut seen = BTreeSet::new();
            let mut stack = leading(start);
            while let Some(n) = stack.pop() {
                if n == start {
                    return Err(GrammarError::LeftRecursion {
                        name: start.clone(),
                        line: self.rules[start].line,
                    });
                }
                if seen.insert(n) {
                    stack.extend(leading(n));
                }
            }
        }
        Ok(())
    }
}
