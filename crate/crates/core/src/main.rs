use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agent_forge::config::PipelineConfig;
use agent_forge::pipeline::{Pipeline, PipelineError, StageOutcome};
use agent_forge::rollout::Strategy;

#[derive(Parser)]
#[command(
    name = "agent-forge",
    version,
    about = "Explore simulated apps, build environment memory, synthesize tasks and roll out trajectories"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured pipeline seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace artifacts produced under a different configuration.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured output root.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random-walk every app and record transitions.
    Explore,
    /// Deduplicate screens, annotate functionalities and build the retrieval index.
    BuildMemory,
    /// Generate, score and filter task instructions.
    Synthesize,
    /// Execute instructions under a policy-switching strategy.
    Rollout {
        /// Defaults to the configured strategy.
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Instruction overlap and functionality coverage against a test set.
    Analyze {
        #[command(subcommand)]
        kind: AnalyzeKind,
    },
    /// Write expert-step training samples from retained trajectories.
    ExportTraining {
        /// Only this strategy; every completed strategy otherwise.
        #[arg(long)]
        strategy: Option<Strategy>,
    },
}

#[derive(Subcommand)]
enum AnalyzeKind {
    /// Nearest-neighbor similarity between synthetic and test instructions.
    Overlap {
        /// Test corpus (JSONL or one instruction per line).
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// How much of the test set's atomic functionality the synthetic tasks cover.
    Coverage {
        /// Test corpus, as for `overlap`.
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<StageOutcome, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.output {
        config.output_root = out;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| PipelineError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    }
    let pipeline = Pipeline::new(config).with_force(cli.force);
    match cli.command {
        Command::Explore => pipeline.explore(),
        Command::BuildMemory => pipeline.build_memory(),
        Command::Synthesize => pipeline.synthesize(),
        Command::Rollout { strategy } => {
            pipeline.rollout(strategy.unwrap_or(pipeline.config.rollout.strategy))
        }
        Command::Analyze {
            kind: AnalyzeKind::Overlap { test },
        } => pipeline.analyze_overlap(test.as_deref()),
        Command::Analyze {
            kind: AnalyzeKind::Coverage { test },
        } => pipeline.analyze_coverage(test.as_deref()),
        Command::ExportTraining { strategy } => pipeline.export_training(strategy),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(outcome) => {
            let (state, m) = match &outcome {
                StageOutcome::Ran(m) => ("done", m),
                StageOutcome::UpToDate(m) => ("up to date", m),
            };
            let counts: Vec<String> = m.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("{}: {state} ({})", m.stage, counts.join(", "));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
