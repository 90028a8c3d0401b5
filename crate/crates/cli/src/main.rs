//! `arise` — risk-guided tree search for retrieval-augmented multi-hop QA.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigOverrides;

#[derive(Parser)]
#[command(
    name = "arise",
    version,
    about = "Risk-guided tree search for retrieval-augmented multi-hop question answering",
    after_help = "Exit codes: 0 success, 2 usage/config error, 3 backend failure, 4 run finished with per-question failures."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search one question and print its trajectory and final answer
    Run {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Synthetic world JSON file (enables the deterministic mock backend)
        #[arg(long)]
        world: Option<PathBuf>,
        /// Question id to run (defaults to the first question)
        #[arg(long)]
        question_id: Option<String>,
        /// Exact question text to run instead of an id
        #[arg(long, conflicts_with = "question_id")]
        question_text: Option<String>,
        /// Dump the tree every K iterations into the output dir
        #[arg(long, value_name = "K")]
        trace: Option<usize>,
    },
    /// Run a whole experiment and write records and a summary
    Eval {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Synthetic world JSON file (enables the deterministic mock backend)
        #[arg(long)]
        world: Option<PathBuf>,
        /// Pipeline: arise, vanilla_rag, mcts_uniform, mcts_verifier
        #[arg(long, default_value = "arise")]
        mode: String,
        /// Worker threads; 0 uses all available CPUs [default: 0]
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Write one tree dump per question under <out-dir>/trees/
        #[arg(long)]
        dump_trees: bool,
        /// Record real wall-clock times even on the mock backend
        #[arg(long)]
        wall_clock: bool,
        /// Score f1 as answer-token F1 instead of document-level F1
        #[arg(long)]
        answer_f1: bool,
    },
    /// Generate a synthetic world file of answerable k-hop questions
    Mockgen {
        /// Hops per question (1 up to the search depth cap)
        #[arg(long)]
        hops: usize,
        /// Number of questions to generate
        #[arg(long, default_value_t = 20)]
        questions: usize,
        /// Per-step probability of a corrupted reasoning step
        #[arg(long, default_value_t = 0.0)]
        error_rate: f64,
        /// World generation seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Search depth cap the world must fit under [default: 4]
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
        /// Output path for the world JSON
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a tree dump as canonical JSON or DOT
    Inspect {
        /// Tree dump path (written by `run` or `eval --dump-trees`)
        path: PathBuf,
        /// Output format: json or dot
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Resolve the configuration and print it, checking referenced paths
    ValidateConfig {
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            overrides,
            world,
            question_id,
            question_text,
            trace,
        } => commands::cmd_run(
            overrides,
            world.as_deref(),
            question_id.as_deref(),
            question_text.as_deref(),
            *trace,
        ),
        Command::Eval {
            overrides,
            world,
            mode,
            workers,
            dump_trees,
            wall_clock,
            answer_f1,
        } => commands::cmd_eval(
            overrides,
            world.as_deref(),
            mode,
            *workers,
            *dump_trees,
            *wall_clock,
            *answer_f1,
        ),
        Command::Mockgen {
            hops,
            questions,
            error_rate,
            seed,
            max_depth,
            out,
        } => commands::cmd_mockgen(*hops, *questions, *error_rate, *seed, *max_depth, out),
        Command::Inspect { path, format } => commands::cmd_inspect(path, format),
        Command::ValidateConfig { overrides } => commands::cmd_validate_config(overrides),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
