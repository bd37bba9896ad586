//! Seeded sentence generation with the true task trace.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::grammar::{Grammar, Symbol, WildKind, ROOT};
use super::parse::{build_steps, Event, Lexicon, Mention};
use super::{Slot, TaskStep};
use crate::kb::EntityId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Generated {
    pub sentence: String,
    pub steps: Vec<TaskStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerateError {
    #[error("no {0} names in the knowledge base")]
    EmptyVocabulary(WildKind),
    #[error("expansion deeper than {0} nonterminals")]
    TooDeep(usize),
}

const MAX_DEPTH: usize = 64;

struct Expander<'a> {
    grammar: &'a Grammar,
    lexicon: &'a Lexicon,
    rng: ChaCha8Rng,
    words: Vec<String>,
    events: Vec<Event>,
    /// Most recent mention of each kind so far.
    last: BTreeMap<WildKind, EntityId>,
    antecedents: BTreeMap<usize, Option<EntityId>>,
}

impl Expander<'_> {
    fn expand(&mut self, sym: &Symbol, depth: usize) -> Result<(), GenerateError> {
        match sym {
            Symbol::Word(w) => self.words.push(w.clone()),
            Symbol::NonTerminal(name) => {
                if depth >= MAX_DEPTH {
                    return Err(GenerateError::TooDeep(MAX_DEPTH));
                }
                let rule = &self.grammar.rules[name];
                let alt = &rule.alternatives[self.rng.gen_range(0..rule.alternatives.len())];
                if let Some(task) = &rule.task {
                    self.events.push(Event::Start(task.clone()));
                }
                for s in alt {
                    self.expand(s, depth + 1)?;
                }
                if rule.task.is_some() {
                    self.events.push(Event::End);
                }
            }
            Symbol::Wildcard { kind, slot } => {
                let vocab = self.lexicon.vocabulary(*kind);
                if vocab.is_empty() {
                    return Err(GenerateError::EmptyVocabulary(*kind));
                }
                let entry = &vocab[self.rng.gen_range(0..vocab.len())];
                self.events.push(Event::Mention {
                    slot: slot.clone(),
                    mention: Mention {
                        index: self.words.len(),
                        len: entry.tokens.len(),
                        kind: *kind,
                        entity: entry.entity,
                    },
                });
                self.words.extend(entry.tokens.iter().cloned());
                self.last.insert(*kind, entry.entity);
            }
            Symbol::Pronoun { kind, slot } => {
                let options = self.grammar.pronouns_for(*kind);
                let word = options[self.rng.gen_range(0..options.len())].to_string();
                let index = self.words.len();
                self.antecedents.insert(index, self.last.get(kind).copied());
                self.events.push(Event::Pronoun {
                    slot: slot.clone(),
                    kind: *kind,
                    index,
                });
                self.words.push(word);
            }
        }
        Ok(())
    }
}

/// Expands `$main` choosing alternatives and fillers uniformly. Pronouns in
/// the returned steps are already bound to their antecedents.
pub fn generate(grammar: &Grammar, lexicon: &Lexicon, seed: u64) -> Result<Generated, GenerateError> {
    let mut ex = Expander {
        grammar,
        lexicon,
        rng: ChaCha8Rng::seed_from_u64(seed),
        words: Vec::new(),
        events: Vec::new(),
        last: BTreeMap::new(),
        antecedents: BTreeMap::new(),
    };
    ex.expand(&Symbol::NonTerminal(ROOT.to_string()), 0)?;
    let (mut steps, _) = build_steps(&ex.events);
    for step in &mut steps {
        for slot in step.slots.values_mut() {
            if let Slot::Pronoun { index, kind } = *slot {
                *slot = match ex.antecedents[&index] {
                    Some(e) => Slot::Resolved(e),
                    None => Slot::Unresolved(kind),
                };
            }
        }
    }
    Ok(Generated {
        sentence: ex.words.join(" "),
        steps,
    })
}
