//! `evidar`: dataset generation, staged training, evaluation and reports.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evidar_core::agent::{AgentKind, FusionKind};
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing files, unreadable inputs. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Training or evaluation failed. Exit code 1.
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "evidar", version, about = "Uncertainty-aware active recognition workbench")]
struct Cli {
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Recognizer,
    Policy,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a test set of episode instances.
    GenDataset {
        /// Number of instances [default: from config].
        #[arg(long)]
        n: Option<usize>,
        /// Dataset seed [default: from config].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the recognizer, the policy, or both.
    Train {
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory for checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
        /// Continue policy training from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        /// Policy updates between checkpoint writes.
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Evaluate agents on a test set.
    Evaluate {
        /// Comma-separated agents [default: from config].
        #[arg(long, value_delimiter = ',')]
        agent: Vec<AgentKind>,
        /// Comma-separated fusion strategies [default: from config].
        #[arg(long, value_delimiter = ',')]
        fusion: Vec<FusionKind>,
        /// Comma-separated feature-noise levels [default: from config].
        #[arg(long, value_delimiter = ',')]
        sigma_list: Vec<f64>,
        #[arg(long)]
        testset: PathBuf,
        /// Run directory written by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Evaluation seed [default: from config].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Collect CSV outputs under a directory into a JSON report and plot data.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn config_path(&self) -> Option<&PathBuf> {
        match self {
            Command::GenDataset { config, .. } | Command::Train { config, .. } | Command::Evaluate { config, .. } => {
                config.as_ref()
            }
            Command::Report { .. } => None,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size worker pool: {e}")))?;
    }
    if cli.print_config {
        let path = cli.command.as_ref().and_then(Command::config_path);
        let config = ExperimentConfig::load_or_default(path.map(PathBuf::as_path))?;
        print!("{}", config.to_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no subcommand given (try --help)".into()));
    };
    match command {
        Command::GenDataset { n, seed, out, config } => commands::gen_dataset(config.as_deref(), n, seed, &out),
        Command::Train {
            stage,
            config,
            out,
            resume,
            checkpoint_every,
        } => commands::train(
            stage,
            config.as_deref(),
            &out,
            resume,
            checkpoint_every,
        ),
        Command::Evaluate {
            agent,
            fusion,
            sigma_list,
            testset,
            ckpt,
            out,
            config,
            horizon,
            seed,
        } => {
            let mut resolved = ExperimentConfig::load_or_default(config.as_deref())?;
            let ev = &mut resolved.evaluation;
            if !agent.is_empty() {
                ev.agents = agent;
            }
            if !fusion.is_empty() {
                ev.fusions = fusion;
            }
            if !sigma_list.is_empty() {
                ev.sigmas = sigma_list;
            }
            if let Some(h) = horizon {
                ev.horizon = h;
            }
            if let Some(s) = seed {
                ev.seed = s;
            }
            commands::evaluate(&resolved, &testset, &ckpt, &out)
        }
        Command::Report { input, out } => report::report(&input, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
