//! Simulated robot environment with an operator channel, plus the dialog
//! skills that use it.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::dialog::{Clarification, DialogSession, Language, Speaker, TaskStep, Turn, DEFAULT_RETRIES};
use crate::executive::Directive;
use crate::kb::KnowledgeBase;
use crate::sim::{register_sim_skills, Command, World, WorldAccess, WorldEventRecord};
use crate::skill::{
    Environment, Runtime, Skill, SkillDescriptor, SkillError, SkillOutcome, Step, StepContext, Tick,
};

pub const PROMPT: &str = "What can I do for you?";
pub const NOT_UNDERSTOOD: &str = "Sorry, I did not understand. Please say the command again.";
pub const GIVE_UP: &str = "Sorry, I could not understand the command.";

/// Operator side of the conversation.
#[derive(Debug, Default, Clone)]
pub struct OperatorIo {
    listening: bool,
    inbox: VecDeque<String>,
    heard: Vec<(Tick, Turn)>,
}

impl OperatorIo {
    pub fn is_listening(&self) -> bool {
        self.listening
    }

    /// Queues operator text; refused unless the dialog skill is listening.
    pub fn offer(&mut self, text: &str) -> bool {
        if self.listening {
            self.inbox.push_back(text.to_string());
        }
        self.listening
    }

    /// Operator turns consumed since the last call.
    pub fn take_heard(&mut self) -> Vec<(Tick, Turn)> {
        std::mem::take(&mut self.heard)
    }

    fn next(&mut self, tick: Tick) -> Option<String> {
        let text = self.inbox.pop_front()?;
        self.heard.push((
            tick,
            Turn {
                speaker: Speaker::Operator,
                text: text.clone(),
            },
        ));
        Some(text)
    }

    fn close(&mut self) {
        self.listening = false;
        self.inbox.clear();
    }
}

/// Hand-off point between understanding and execution.
#[derive(Debug, Default, Clone)]
pub struct CommandBoard {
    pub steps: Vec<TaskStep>,
    pub agenda: Option<Vec<Directive>>,
}

pub struct SimEnv {
    pub world: World,
    pub io: OperatorIo,
    pub board: CommandBoard,
}

impl SimEnv {
    pub fn new(world: World) -> Self {
        SimEnv {
            world,
            io: OperatorIo::default(),
            board: CommandBoard::default(),
        }
    }

    fn say(&mut self, text: &str) {
        // speech is always accepted by the world
        let _ = self.world.apply(&Command::Speak { text: text.to_string() });
    }
}

impl WorldAccess for SimEnv {
    fn world(&self) -> &World {
        &self.world
    }

    fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }
}

impl Environment for SimEnv {
    type Event = WorldEventRecord;

    fn advance(&mut self, tick: Tick) -> Vec<WorldEventRecord> {
        self.world.advance_to(tick)
    }

    fn settle(&mut self, kb: &mut KnowledgeBase) {
        self.world.sync_kb(kb);
    }
}

enum Phase {
    Prompt,
    Listen,
}

/// Prompts, parses the reply and asks about open slots until the command
/// is complete. Succeeds with the steps on the command board.
pub struct CommandDialog {
    lang: Arc<Language>,
    phase: Phase,
    session: Option<DialogSession>,
    misses: u32,
}

impl CommandDialog {
    pub fn new(lang: Arc<Language>) -> Self {
        CommandDialog {
            lang,
            phase: Phase::Prompt,
            session: None,
            misses: 0,
        }
    }
}

impl Skill<SimEnv> for CommandDialog {
    fn step(&mut self, cx: &mut StepContext<'_, SimEnv>) -> Step {
        let env = &mut *cx.env;
        if let Phase::Prompt = self.phase {
            env.say(PROMPT);
            env.io.listening = true;
            self.phase = Phase::Listen;
            return Step::Running;
        }
        let Some(text) = env.io.next(cx.tick) else {
            return Step::Running;
        };
        let reply = match &mut self.session {
            Some(session) => session.clarify(&self.lang, Some(&text)),
            None => match self.lang.understand(&text) {
                Ok(steps) => self
                    .session
                    .insert(DialogSession::new(steps, DEFAULT_RETRIES))
                    .clarify(&self.lang, None),
                Err(_) => {
                    self.misses += 1;
                    if self.misses >= DEFAULT_RETRIES {
                        env.io.close();
                        env.say(GIVE_UP);
                        return Step::Finished(SkillOutcome::Failed("command not understood".into()));
                    }
                    env.say(NOT_UNDERSTOOD);
                    return Step::Running;
                }
            },
        };
        match reply {
            Clarification::Question(q) => {
                env.say(&q);
                Step::Running
            }
            Clarification::Complete(steps) => {
                env.io.close();
                env.board.steps = steps;
                Step::Finished(SkillOutcome::Succeeded(Vec::new()))
            }
            Clarification::Failed => {
                env.io.close();
                env.say(GIVE_UP);
                Step::Finished(SkillOutcome::Failed("clarification failed".into()))
            }
        }
    }

    fn cancelled(&mut self, cx: &mut StepContext<'_, SimEnv>) {
        cx.env.io.close();
    }
}

/// Turns the understood steps into an agenda for the executive.
pub struct CompileCommand {
    lang: Arc<Language>,
}

impl Skill<SimEnv> for CompileCommand {
    fn step(&mut self, cx: &mut StepContext<'_, SimEnv>) -> Step {
        let steps = std::mem::take(&mut cx.env.board.steps);
        if steps.is_empty() {
            return Step::Finished(SkillOutcome::Failed("no command".into()));
        }
        match self.lang.compile(&steps) {
            Ok(agenda) => {
                cx.env.board.agenda = Some(agenda);
                Step::Finished(SkillOutcome::Succeeded(Vec::new()))
            }
            Err(e) => Step::Finished(SkillOutcome::Failed(e.to_string())),
        }
    }
}

/// Simulator skills plus `command_dialog` and `compile_command`.
pub fn register_skills(rt: &mut Runtime<SimEnv>, lang: Arc<Language>) -> Result<(), SkillError> {
    register_sim_skills(rt)?;
    let l = lang.clone();
    rt.register_skill(SkillDescriptor::new("command_dialog"), move |_| {
        Box::new(CommandDialog::new(l.clone()))
    })?;
    rt.register_skill(SkillDescriptor::new("compile_command"), move |_| {
        Box::new(CompileCommand { lang: lang.clone() })
    })?;
    Ok(())
}
