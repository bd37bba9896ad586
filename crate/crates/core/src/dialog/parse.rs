//! Top-down matching of sentences against the grammar.

use std::collections::BTreeMap;

use serde::Serialize;

use super::grammar::{Grammar, Symbol, WildKind, ROOT};
use super::{Slot, TaskStep};
use crate::kb::{EntityId, EntityKind, KnowledgeBase};

/// Lowercased words with surrounding punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexEntry {
    pub entity: EntityId,
    pub tokens: Vec<String>,
}

/// Wildcard vocabularies drawn from the KB.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<WildKind, Vec<LexEntry>>,
}

impl Lexicon {
    /// Objects, locations and people are instances of the matching concept;
    /// categories are the concepts below `object`.
    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        let mut entries: BTreeMap<WildKind, Vec<LexEntry>> = BTreeMap::new();
        let concept = |name: &str| kb.lookup(EntityKind::Concept, name);
        for kind in WildKind::ALL {
            let list = entries.entry(kind).or_default();
            let root = match kind {
                WildKind::Category => WildKind::Object,
                k => k,
            };
            let Some(root) = concept(root.as_str()) else { continue };
            for e in kb.entities() {
                let wanted = match kind {
                    WildKind::Category => e.kind == EntityKind::Concept && e.id != root,
                    _ => e.kind == EntityKind::Instance,
                };
                if wanted && kb.is_a(e.id, root).unwrap_or(false) {
                    list.push(LexEntry {
                        entity: e.id,
                        tokens: tokenize(&e.name),
                    });
                }
            }
            list.sort_by_key(|e| e.entity);
        }
        Lexicon { entries }
    }

    /// Entries of `kind` in entity-id order.
    pub fn vocabulary(&self, kind: WildKind) -> &[LexEntry] {
        self.entries.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Names of `kind` starting at `pos`, longest first, ties by entity id.
    pub fn matches(&self, kind: WildKind, tokens: &[String], pos: usize) -> Vec<(EntityId, usize)> {
        let mut found: Vec<(EntityId, usize)> = self
            .vocabulary(kind)
            .iter()
            .filter(|e| !e.tokens.is_empty() && tokens[pos.min(tokens.len())..].starts_with(&e.tokens))
            .map(|e| (e.entity, e.tokens.len()))
            .collect();
        found.sort_by_key(|(id, len)| (std::cmp::Reverse(*len), *id));
        found
    }

    /// First filler of `kind` anywhere in `text`, scanning left to right.
    pub fn find_filler(&self, kind: WildKind, text: &str) -> Option<EntityId> {
        let tokens = tokenize(text);
        (0..tokens.len()).find_map(|pos| self.matches(kind, &tokens, pos).first().map(|m| m.0))
    }
}

/// A name matched by a wildcard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mention {
    pub index: usize,
    pub len: usize,
    pub kind: WildKind,
    pub entity: EntityId,
}

/// Derivation record shared by the parser and the generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Event {
    Start(String),
    End,
    Mention { slot: String, mention: Mention },
    Pronoun { slot: String, kind: WildKind, index: usize },
}

/// Groups slot fillers by their innermost enclosing task fragment. Steps are
/// ordered by where their fragment starts.
pub(crate) fn build_steps(events: &[Event]) -> (Vec<TaskStep>, Vec<Mention>) {
    let mut steps: Vec<TaskStep> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    let mut mentions = Vec::new();
    for ev in events {
        match ev {
            Event::Start(task) => {
                open.push(steps.len());
                steps.push(TaskStep::new(task.clone()));
            }
            Event::End => {
                open.pop();
            }
            Event::Mention { slot, mention } => {
                if let Some(&i) = open.last() {
                    steps[i].slots.insert(slot.clone(), Slot::Resolved(mention.entity));
                }
                mentions.push(mention.clone());
            }
            Event::Pronoun { slot, kind, index } => {
                if let Some(&i) = open.last() {
                    steps[i].slots.insert(
                        slot.clone(),
                        Slot::Pronoun {
                            index: *index,
                            kind: *kind,
                        },
                    );
                }
            }
        }
    }
    (steps, mentions)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedCommand {
    pub tokens: Vec<String>,
    pub steps: Vec<TaskStep>,
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no parse for {0:?}")]
    NoParse(String),
}

enum Item<'g> {
    Sym(&'g Symbol),
    End,
}

/// Bound on search nodes; the shipped grammar needs a few hundred.
const SEARCH_LIMIT: usize = 2_000_000;

struct Matcher<'a> {
    grammar: &'a Grammar,
    lexicon: &'a Lexicon,
    tokens: &'a [String],
    budget: usize,
}

impl<'a> Matcher<'a> {
    /// `stack` holds the pending symbols, next on top. On failure both
    /// `stack` and `trail` are restored.
    fn go(&mut self, pos: usize, stack: &mut Vec<Item<'a>>, trail: &mut Vec<Event>) -> bool {
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        let Some(item) = stack.pop() else {
            return pos == self.tokens.len();
        };
        let ok = match item {
            Item::End => {
                trail.push(Event::End);
                let ok = self.go(pos, stack, trail);
                if !ok {
                    trail.pop();
                }
                ok
            }
            Item::Sym(Symbol::Word(w)) => self.tokens.get(pos) == Some(w) && self.go(pos + 1, stack, trail),
            Item::Sym(Symbol::NonTerminal(name)) => {
                let rule = &self.grammar.rules[name];
                let mark = stack.len();
                let mut ok = false;
                for alt in &rule.alternatives {
                    if let Some(task) = &rule.task {
                        stack.push(Item::End);
                        trail.push(Event::Start(task.clone()));
                    }
                    stack.extend(alt.iter().rev().map(Item::Sym));
                    if self.go(pos, stack, trail) {
                        ok = true;
                        break;
                    }
                    stack.truncate(mark);
                    if rule.task.is_some() {
                        trail.pop();
                    }
                }
                ok
            }
            Item::Sym(Symbol::Wildcard { kind, slot }) => {
                let mut ok = false;
                for (entity, len) in self.lexicon.matches(*kind, self.tokens, pos) {
                    trail.push(Event::Mention {
                        slot: slot.clone(),
                        mention: Mention {
                            index: pos,
                            len,
                            kind: *kind,
                            entity,
                        },
                    });
                    if self.go(pos + len, stack, trail) {
                        ok = true;
                        break;
                    }
                    trail.pop();
                }
                ok
            }
            Item::Sym(Symbol::Pronoun { kind, slot }) => {
                let fits = self
                    .tokens
                    .get(pos)
                    .and_then(|t| self.grammar.pronouns.get(t))
                    .is_some_and(|ks| ks.contains(kind));
                if fits {
                    trail.push(Event::Pronoun {
                        slot: slot.clone(),
                        kind: *kind,
                        index: pos,
                    });
                    let ok = self.go(pos + 1, stack, trail);
                    if !ok {
                        trail.pop();
                    }
                    ok
                } else {
                    false
                }
            }
        };
        if !ok {
            stack.push(item);
        }
        ok
    }
}

/// First complete derivation from `$main` in declared order. Pronoun slots
/// are left for [`resolve_coreferences`].
pub fn parse(grammar: &Grammar, lexicon: &Lexicon, sentence: &str) -> Result<ParsedCommand, ParseError> {
    let tokens = tokenize(sentence);
    let root = Symbol::NonTerminal(ROOT.to_string());
    let mut matcher = Matcher {
        grammar,
        lexicon,
        tokens: &tokens,
        budget: SEARCH_LIMIT,
    };
    let mut stack = vec![Item::Sym(&root)];
    let mut trail = Vec::new();
    if tokens.is_empty() || !matcher.go(0, &mut stack, &mut trail) {
        return Err(ParseError::NoParse(sentence.to_string()));
    }
    let (steps, mentions) = build_steps(&trail);
    Ok(ParsedCommand {
        tokens,
        steps,
        mentions,
    })
}

/// Binds each pronoun to the nearest preceding mention of its slot's kind.
pub fn resolve_coreferences(parsed: &mut ParsedCommand) {
    for step in &mut parsed.steps {
        for slot in step.slots.values_mut() {
            if let Slot::Pronoun { index, kind } = *slot {
                let antecedent = parsed
                    .mentions
                    .iter()
                    .filter(|m| m.kind == kind && m.index < index)
                    .max_by_key(|m| m.index);
                *slot = match antecedent {
                    Some(m) => Slot::Resolved(m.entity),
                    None => Slot::Unresolved(kind),
                };
            }
        }
    }
}
