use std::path::PathBuf;

use hearth_core::dialog::{Clarification, DialogSession, Language, Slot, WildKind, DEFAULT_RETRIES};
use hearth_core::executive::Directive;
use hearth_core::kb::KnowledgeBase;
use hearth_core::sim::Scenario;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config").join(name)
}

fn apartment() -> KnowledgeBase {
    Scenario::from_path(config("apartment.scenario.json")).unwrap().build().unwrap().1
}

fn language(kb: &KnowledgeBase) -> Language {
    let grammar = std::fs::read_to_string(config("gpsr.grammar")).unwrap();
    let tasks = std::fs::read_to_string(config("tasks.json")).unwrap();
    Language::load(&grammar, &tasks, kb).unwrap()
}

#[test]
fn shipped_grammar_round_trips() {
    let kb = apartment();
    let lang = language(&kb);
    for seed in 0..300 {
        let g = lang.generate(seed).unwrap();
        let parsed = lang.understand(&g.sentence).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert_eq!(parsed, g.steps, "seed {seed}: {}", g.sentence);
    }
}

#[test]
fn generation_is_deterministic() {
    let kb = apartment();
    let lang = language(&kb);
    assert_eq!(lang.generate(7).unwrap(), lang.generate(7).unwrap());
    assert_ne!(lang.generate(7).unwrap().sentence, lang.generate(8).unwrap().sentence);
}

#[test]
fn clarification_fills_missing_slots() {
    let kb = apartment();
    let lang = language(&kb);
    let steps = lang.understand("bring me something").unwrap();
    assert_eq!(steps[0].slots["object"], Slot::Unresolved(WildKind::Object));
    let mut s = DialogSession::new(steps, DEFAULT_RETRIES);
    assert_eq!(s.clarify(&lang, None), Clarification::Question("which object should I fetch?".into()));
    let coke = kb.find("coke").unwrap();
    match s.clarify(&lang, Some("the coke")) {
        Clarification::Complete(steps) => assert_eq!(steps[0].slots["object"], Slot::Resolved(coke)),
        other => panic!("{other:?}"),
    }

    let mut s = DialogSession::new(lang.understand("bring me something").unwrap(), DEFAULT_RETRIES);
    s.clarify(&lang, None);
    assert!(matches!(s.clarify(&lang, Some("a unicorn")), Clarification::Question(_)));
    assert!(matches!(s.clarify(&lang, Some("the moon")), Clarification::Question(_)));
    assert_eq!(s.clarify(&lang, Some("kitchen")), Clarification::Failed);
    assert_eq!(s.transcript.len(), 6);
}

#[test]
fn compile_follows_the_task_table() {
    let kb = apartment();
    let lang = language(&kb);
    let kitchen = kb.find("kitchen").unwrap();
    let d = lang.compile(&lang.understand("go to the kitchen").unwrap()).unwrap();
    match &d[..] {
        [Directive::Skill { skill, bindings, .. }] => {
            assert_eq!(skill, "navigate_to");
            assert_eq!(bindings["destination"], kitchen);
        }
        other => panic!("{other:?}"),
    }
    let d = lang.compile(&lang.understand("grab the coke").unwrap()).unwrap();
    assert!(matches!(&d[..], [Directive::Goal { goal, .. }] if goal == "holding(robot,$object)"));
    let open = lang.understand("bring it to the kitchen").unwrap();
    assert!(lang.compile(&open).is_err());
}

#[test]
#[ignore]
fn show_samples() {
    let kb = apartment();
    let lang = language(&kb);
    for seed in 0..15 {
        let g = lang.generate(seed).unwrap();
        let steps: Vec<String> = g.steps.iter().map(|s| s.display(&kb)).collect();
        println!("{} => {}", g.sentence, steps.join("; "));
    }
}
