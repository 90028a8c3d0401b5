//! Subcommand implementations and their exit-code policy.
//!
//! Exit codes: 0 success, 2 usage/config problem, 3 backend failure,
//! 4 run finished with per-question failures.

use std::path::Path;
use std::time::Duration;

use arise_core::backend::http::{HttpBackend, HttpConfig};
use arise_core::backend::mock::{MockBackend, SyntheticWorld};
use arise_core::backend::PolicyBackend;
use arise_core::domain::{Question, TreeDump};
use arise_core::eval::{load_dataset, run_experiment, ExperimentConfig, Mode};
use arise_core::mcts::{SearchError, Searcher};
use arise_core::prompts::PromptSet;

use crate::config::{resolve, AppConfig, ConfigOverrides};

pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

type CmdResult = Result<u8, CliError>;

fn classify_search_error(err: SearchError) -> CliError {
    match &err {
        SearchError::Backend(_) | SearchError::Aborted { .. } => CliError::backend(err.to_string()),
        _ => CliError::usage(err.to_string()),
    }
}

/// Question source plus the backend that answers about it.
struct Session {
    questions: Vec<Question>,
    backend: Box<dyn PolicyBackend>,
    /// True when answers come from the deterministic synthetic world.
    mock: bool,
}

fn open_session(config: &AppConfig, world: Option<&Path>) -> Result<Session, CliError> {
    if let Some(world_path) = world {
        let world = SyntheticWorld::load(world_path)
            .map_err(|e| CliError::usage(format!("cannot load world file: {e}")))?;
        world
            .self_check()
            .map_err(|e| CliError::usage(format!("world file failed its self check: {e}")))?;
        let questions = world.questions();
        return Ok(Session {
            questions,
            backend: Box::new(MockBackend::new(world)),
            mock: true,
        });
    }
    let dataset = config
        .dataset
        .path
        .as_ref()
        .ok_or_else(|| CliError::usage("no question source: pass --world or --dataset"))?;
    let sample_n = config.dataset.sample_n.unwrap_or(usize::MAX);
    let questions = load_dataset(dataset, sample_n, config.dataset.seed)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let endpoint = config
        .backend
        .endpoint_url
        .as_ref()
        .ok_or_else(|| CliError::usage("no backend: pass --endpoint-url or use --world"))?;
    let mut http = HttpConfig::new(endpoint, &config.backend.model);
    http.scoring_endpoint_url = config.backend.scoring_endpoint_url.clone();
    http.scoring_model = config.backend.scoring_model.clone();
    http.api_key = std::env::var(&config.backend.api_key_env)
        .ok()
        .filter(|k| !k.is_empty());
    http.timeout = Duration::from_secs(300);
    let backend = HttpBackend::new(http).map_err(|e| CliError::backend(e.to_string()))?;
    Ok(Session {
        questions,
        backend: Box::new(backend),
        mock: false,
    })
}

fn load_prompts(config: &AppConfig) -> Result<PromptSet, CliError> {
    match &config.prompts_dir {
        Some(dir) => PromptSet::with_overrides(dir).map_err(|e| CliError::usage(e.to_string())),
        None => Ok(PromptSet::builtin()),
    }
}

fn resolve_and_validate(overrides: &ConfigOverrides) -> Result<AppConfig, CliError> {
    let config = resolve(overrides).map_err(CliError::usage)?;
    config.validate().map_err(CliError::usage)?;
    Ok(config)
}

pub fn cmd_run(
    overrides: &ConfigOverrides,
    world: Option<&Path>,
    question_id: Option<&str>,
    question_text: Option<&str>,
    trace_every: Option<usize>,
) -> CmdResult {
    let config = resolve_and_validate(overrides)?;
    let prompts = load_prompts(&config)?;
    let session = open_session(&config, world)?;
    let question = match (question_id, question_text) {
        (Some(id), _) => session.questions.iter().find(|q| q.id == id),
        (None, Some(text)) => session.questions.iter().find(|q| q.text == text.trim()),
        (None, None) => session.questions.first(),
    }
    .ok_or_else(|| CliError::usage("question not found in the loaded source"))?;

    std::fs::create_dir_all(&config.output.dir)
        .map_err(|e| CliError::usage(format!("cannot create output dir: {e}")))?;
    let searcher = Searcher::new(
        session.backend.as_ref(),
        &prompts,
        config.search.clone(),
        config.risk,
        config.retrieval,
    );
    let out_dir = config.output.dir.clone();
    let tree = match trace_every {
        Some(every) if every > 0 => searcher.run_search_traced(question, |iteration, tree| {
            if iteration % every == 0 {
                let path = out_dir.join(format!("{}.iter{iteration:04}.json", question.id));
                let _ = std::fs::write(path, tree.dump().to_json());
            }
        }),
        _ => searcher.run_search(question),
    }
    .map_err(classify_search_error)?;

    let pass = searcher
        .pass_at_n(&tree, question)
        .map_err(classify_search_error)?;

    let dump_path = out_dir.join(format!("{}.json", question.id));
    std::fs::write(&dump_path, tree.dump().to_json())
        .map_err(|e| CliError::usage(format!("cannot write tree dump: {e}")))?;

    println!("question: {}", question.text);
    for (step, id) in pass.trajectory.node_ids.iter().skip(1).enumerate() {
        let node = tree.node(*id);
        if let Some(action) = &node.action {
            println!("step {}: {}", step + 1, action.sub_question);
            println!("  -> {}", action.intermediate_result);
        }
    }
    println!("final answer: {}", pass.trajectory.final_answer);
    log::info!("tree dump written to {}", dump_path.display());
    Ok(0)
}

pub fn cmd_eval(
    overrides: &ConfigOverrides,
    world: Option<&Path>,
    mode: &str,
    workers: usize,
    dump_trees: bool,
    wall_clock: bool,
    answer_f1: bool,
) -> CmdResult {
    let mode: Mode = mode.parse().map_err(CliError::usage)?;
    let config = resolve_and_validate(overrides)?;
    let prompts = load_prompts(&config)?;
    let session = open_session(&config, world)?;
    let experiment = ExperimentConfig {
        mode,
        search: config.search.clone(),
        risk: config.risk,
        bm25: config.retrieval,
        out_dir: config.output.dir.clone(),
        workers,
        dump_trees,
        // Mock runs default to zeroed timing so outputs are reproducible.
        record_timing: wall_clock || !session.mock,
        answer_f1,
    };
    let output = run_experiment(
        &session.questions,
        session.backend.as_ref(),
        &prompts,
        &experiment,
    )
    .map_err(|e| CliError::usage(e.to_string()))?;
    print!("{}", output.summary.table());
    log::info!(
        "records written to {}",
        config.output.dir.join("records.jsonl").display()
    );
    if output.summary.failures > 0 {
        Ok(4)
    } else {
        Ok(0)
    }
}

pub fn cmd_mockgen(
    hops: usize,
    n_questions: usize,
    error_rate: f64,
    seed: u64,
    max_depth: usize,
    out: &Path,
) -> CmdResult {
    if hops < 1 || hops > max_depth {
        return Err(CliError::usage(format!(
            "hops must lie in 1..={max_depth} (the search depth cap), got {hops}"
        )));
    }
    if n_questions == 0 {
        return Err(CliError::usage("need at least one question"));
    }
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(CliError::usage("error rate must lie in [0, 1]"));
    }
    let world = SyntheticWorld::generate(hops, n_questions, error_rate, seed);
    world
        .self_check()
        .map_err(|e| CliError::usage(format!("generated world failed its self check: {e}")))?;
    world
        .save(out)
        .map_err(|e| CliError::usage(format!("cannot write world file: {e}")))?;
    println!(
        "wrote {} {}-hop questions (error rate {}, seed {}) to {}",
        n_questions,
        hops,
        error_rate,
        seed,
        out.display()
    );
    Ok(0)
}

pub fn cmd_inspect(path: &Path, format: &str) -> CmdResult {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let dump = TreeDump::from_json(&raw)
        .map_err(|e| CliError::usage(format!("cannot parse tree dump: {e}")))?;
    match format {
        "json" => println!("{}", dump.to_json()),
        "dot" => print!("{}", dump.to_dot()),
        other => return Err(CliError::usage(format!("unknown format: {other}"))),
    }
    Ok(0)
}

pub fn cmd_validate_config(overrides: &ConfigOverrides) -> CmdResult {
    let config = resolve_and_validate(overrides)?;
    print!("{}", config.to_toml());
    Ok(0)
}
