use std::process::ExitCode;

use clap::Parser;
use hearth_gateway::cli::{self, Cli, Verb};

#[tokio::main]
async fn main() -> ExitCode {
    let args = Cli::parse();
    let result = match &args.verb {
        Verb::Run(run) if run.headless => cli::run_headless(run).map(|out| print!("{out}")),
        Verb::Run(run) => cli::run_service(run).await,
        Verb::Gen(g) => cli::gen(g).map(|out| print!("{out}")),
        Verb::Parse(p) => cli::parse(p).map(|out| print!("{out}")),
        Verb::Plan(p) => cli::plan_verb(p).map(|out| print!("{out}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
