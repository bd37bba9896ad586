//! Command line verbs. Each one returns its stdout text so tests can call
//! them directly.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hearth_core::deliberative::{fluents_from_kb, plan, Domain, Goal, PlanResult};
use hearth_core::dialog::Language;
use hearth_core::kb::KnowledgeBase;
use hearth_core::sim::Scenario;
use hearth_core::system::{trace_text, ConfigPaths, Script, Source, System};

use crate::service::{bind, serve, Session};

#[derive(Debug, Parser)]
#[command(name = "hearth", version, about = "Layered executive for a simulated home robot")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Run a session, served over HTTP or headless from a script
    Run(RunArgs),
    /// Generate commands from the grammar
    Gen(GenArgs),
    /// Parse one sentence into task steps
    Parse(ParseArgs),
    /// Plan for a goal from a scenario's initial state
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long)]
    pub domain: PathBuf,
    #[arg(long)]
    pub machines: PathBuf,
    /// Task table; defaults to tasks.json beside the grammar
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Milliseconds per tick when serving
    #[arg(long, default_value_t = 100)]
    pub tick_ms: u64,
    #[arg(long, requires = "script")]
    pub headless: bool,
    #[arg(long, requires = "headless")]
    pub script: Option<PathBuf>,
}

/// Grammar plus the files its vocabulary comes from.
#[derive(Debug, Args)]
pub struct LanguageArgs {
    #[arg(long)]
    pub grammar: PathBuf,
    /// Defaults to tasks.json beside the grammar
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Scenario supplying the vocabulary; defaults to apartment.scenario.json beside the grammar
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub lang: LanguageArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[command(flatten)]
    pub lang: LanguageArgs,
    #[arg(long)]
    pub sentence: String,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub domain: PathBuf,
    /// Scenario whose initial state is planned from
    #[arg(long)]
    pub state: PathBuf,
    /// e.g. "at(coke,bedroom), holding(robot,apple)"
    #[arg(long)]
    pub goal: String,
    #[arg(long, default_value_t = 12)]
    pub horizon: usize,
}

fn beside(file: &Path, name: &str) -> PathBuf {
    file.parent().unwrap_or(Path::new(".")).join(name)
}

fn read(path: &Path) -> Result<String> {
    Ok(Source::read(path)?.text)
}

fn world_kb(scenario: &Path) -> Result<KnowledgeBase> {
    let s = Scenario::from_path(scenario).with_context(|| scenario.display().to_string())?;
    let (_, kb) = s.build().with_context(|| scenario.display().to_string())?;
    Ok(kb)
}

impl LanguageArgs {
    fn load(&self) -> Result<(Language, KnowledgeBase)> {
        let tasks = self.tasks.clone().unwrap_or_else(|| beside(&self.grammar, "tasks.json"));
        let scenario = self
            .scenario
            .clone()
            .unwrap_or_else(|| beside(&self.grammar, "apartment.scenario.json"));
        let kb = world_kb(&scenario)?;
        let lang = Language::load(&read(&self.grammar)?, &read(&tasks)?, &kb)
            .with_context(|| self.grammar.display().to_string())?;
        Ok((lang, kb))
    }
}

impl RunArgs {
    pub fn paths(&self) -> ConfigPaths {
        ConfigPaths {
            scenario: self.scenario.clone(),
            grammar: self.grammar.clone(),
            tasks: self.tasks.clone().unwrap_or_else(|| beside(&self.grammar, "tasks.json")),
            domain: self.domain.clone(),
            machines: self.machines.clone(),
        }
    }
}

/// Headless run: the whole trace, one record per line.
pub fn run_headless(args: &RunArgs) -> Result<String> {
    let script_path = args.script.as_ref().context("--headless needs --script")?;
    let script = Script::from_json(&read(script_path)?).with_context(|| script_path.display().to_string())?;
    let mut system = System::load(&args.paths())?;
    Ok(trace_text(&system.run_script(&script)))
}

pub async fn run_service(args: &RunArgs) -> Result<()> {
    let session = Arc::new(Session::start(args.paths(), Duration::from_millis(args.tick_ms))?);
    let listener = bind(args.port).await?;
    println!("listening on http://{}", listener.local_addr()?);
    serve(listener, session).await?;
    Ok(())
}

pub fn gen(args: &GenArgs) -> Result<String> {
    let (lang, _) = args.lang.load()?;
    let mut out = String::new();
    for seed in args.seed..args.seed + args.count {
        let g = lang.generate(seed).with_context(|| format!("seed {seed}"))?;
        out.push_str(&g.sentence);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse(args: &ParseArgs) -> Result<String> {
    let (lang, kb) = args.lang.load()?;
    let steps = match lang.understand(&args.sentence) {
        Ok(steps) => steps,
        Err(e) => bail!("{e}"),
    };
    Ok(steps.iter().map(|s| s.display(&kb) + "\n").collect())
}

pub fn plan_verb(args: &PlanArgs) -> Result<String> {
    let mut kb = world_kb(&args.state)?;
    let domain = Domain::from_json(&read(&args.domain)?, &mut kb).with_context(|| args.domain.display().to_string())?;
    let goal = Goal::parse(&kb, &args.goal).context("goal")?;
    let state = fluents_from_kb(&kb, &domain);
    match plan(&kb, &domain, &state, &goal, args.horizon)? {
        PlanResult::Plan(p) => {
            let mut out: String = p.steps.iter().map(|s| format!("{}\n", s.name)).collect();
            out.push_str(&format!("cost {}\n", p.cost));
            Ok(out)
        }
        PlanResult::Unsolvable { horizon } => bail!("no plan within {horizon} steps"),
    }
}
