//! `cineforge`: validate manifests, build memory, compile, resume, evaluate
//! and inspect sessions.
//!
//! Exit codes: 0 on success or a justified rejection, 1 on a usage or
//! configuration error, 2 when a manifest, session or evaluation fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "cineforge", version, about = "Instruction-driven video compilation from source manifests")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CINEFORGE_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check manifests against the schema and every invariant.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Build and persist narrative memory for the given sources.
    Analyze {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Compile an instruction into a script, EDL and (optionally) a rendered video.
    Compile(commands::CompileArgs),
    /// Continue a logged session from a checkpoint.
    Resume(commands::ResumeArgs),
    /// Score finished sessions against ground truth.
    Eval(commands::EvalArgs),
    /// Print a session log as a timeline.
    Inspect(commands::InspectArgs),
}

/// A failed command, tagged with the exit code class it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Session(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Session(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CINEFORGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match config::CliConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Validate { paths } => commands::validate(&paths),
        Command::Analyze { manifests } => commands::analyze(&manifests, &cfg),
        Command::Compile(args) => commands::compile(&args, &cfg),
        Command::Resume(args) => commands::resume(&args, &cfg),
        Command::Eval(args) => commands::eval(&args, &cfg),
        Command::Inspect(args) => commands::inspect(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Session(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
