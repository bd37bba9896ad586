#![allow(dead_code)]

pub mod following;
pub mod planning;

use std::path::PathBuf;

use hearth_core::dialog::Language;
use hearth_core::kb::KnowledgeBase;
use hearth_core::sim::{Scenario, World};

pub fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config")
}

pub fn config(name: &str) -> String {
    std::fs::read_to_string(config_dir().join(name)).unwrap()
}

pub fn apartment() -> (World, KnowledgeBase) {
    Scenario::from_path(config_dir().join("apartment.scenario.json"))
        .unwrap()
        .build()
        .unwrap()
}

pub fn language(kb: &KnowledgeBase) -> Language {
    Language::load(&config("gpsr.grammar"), &config("tasks.json"), kb).unwrap()
}
