//! Dataset ingestion, the two evaluation metrics, the single-retrieval
//! baseline, and the experiment runner.
//!
//! Exact match is "covered EM": both strings are lowercased and the gold
//! answer must appear as a contiguous substring of the prediction. F1 is
//! document-level: one final retrieval with the question plus the complete
//! reasoning state, scored against the gold supporting-document ids.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationRequest, Instrumented, PolicyBackend};
use crate::domain::{Document, Question, ReasoningState, TreeDump};
use crate::mcts::{SearchConfig, SearchError, Searcher};
use crate::prompts::{PromptSet, TemplateError, TemplateName};
use crate::retrieval::{Bm25Index, Bm25Params, IndexError, Retriever};
use crate::risk::{RiskParams, ValueMode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ingest error at line {line}: {message}")]
    Ingest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Which pipeline answers the questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Risk-guided tree search.
    Arise,
    /// One retrieval with the original question, one answer generation.
    VanillaRag,
    /// Tree search with a constant node value.
    MctsUniform,
    /// Tree search with the model grading states 0-10.
    MctsVerifier,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Arise,
        Mode::VanillaRag,
        Mode::MctsUniform,
        Mode::MctsVerifier,
    ];

    /// Node-value mode for search-based modes; `None` for the baseline.
    pub fn value_mode(self) -> Option<ValueMode> {
        match self {
            Mode::Arise => Some(ValueMode::RiskValue),
            Mode::VanillaRag => None,
            Mode::MctsUniform => Some(ValueMode::Uniform),
            Mode::MctsVerifier => Some(ValueMode::LlmVerifier),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arise" => Ok(Mode::Arise),
            "vanilla_rag" => Ok(Mode::VanillaRag),
            "mcts_uniform" => Ok(Mode::MctsUniform),
            "mcts_verifier" => Ok(Mode::MctsVerifier),
            other => Err(format!("unknown mode: {other}")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Arise => "arise",
            Mode::VanillaRag => "vanilla_rag",
            Mode::MctsUniform => "mcts_uniform",
            Mode::MctsVerifier => "mcts_verifier",
        })
    }
}

/// Per-question outcome, one JSON line in `records.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub question_id: String,
    pub mode: Mode,
    pub final_answer: String,
    pub em: bool,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pass_n: Option<bool>,
    pub wall_time_secs: f64,
    pub generation_calls: u64,
    pub scored_tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Deserialize)]
struct RawContext {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    question: String,
    answer: String,
    #[serde(default)]
    contexts: Vec<RawContext>,
    #[serde(default)]
    supporting_ids: Vec<String>,
}

/// Loads a JSON-lines dataset and draws a seeded uniform sample without
/// replacement (the whole set, shuffled, when `sample_n` covers it).
pub fn load_dataset(path: &Path, sample_n: usize, seed: u64) -> Result<Vec<Question>, EvalError> {
    if sample_n == 0 {
        return Err(EvalError::InvalidArgument("sample_n must be >= 1".into()));
    }
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut questions = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| EvalError::Ingest {
            line: line_no,
            message: e.to_string(),
        })?;
        questions.push(validate_record(raw, line_no)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    questions.shuffle(&mut rng);
    questions.truncate(sample_n);
    Ok(questions)
}

fn validate_record(raw: RawRecord, line: usize) -> Result<Question, EvalError> {
    let ingest = |message: String| EvalError::Ingest { line, message };
    if raw.question.trim().is_empty() {
        return Err(ingest("empty question text".into()));
    }
    if raw.answer.trim().is_empty() {
        return Err(ingest("empty answer".into()));
    }
    if raw.contexts.is_empty() {
        return Err(ingest("record has no context documents".into()));
    }
    let mut ids = BTreeSet::new();
    let mut corpus = Vec::with_capacity(raw.contexts.len());
    for ctx in raw.contexts {
        if ctx.text.trim().is_empty() {
            return Err(ingest(format!("document {} has empty text", ctx.id)));
        }
        if !ids.insert(ctx.id.clone()) {
            return Err(ingest(format!("duplicate document id {}", ctx.id)));
        }
        corpus.push(Document {
            id: ctx.id,
            title: ctx.title,
            text: ctx.text,
        });
    }
    let gold_support_ids: BTreeSet<String> = raw.supporting_ids.into_iter().collect();
    if let Some(missing) = gold_support_ids.iter().find(|id| !ids.contains(*id)) {
        return Err(ingest(format!(
            "supporting id {missing} not among context documents"
        )));
    }
    Ok(Question {
        id: raw.id,
        text: raw.question,
        gold_answer: raw.answer,
        corpus,
        gold_support_ids,
    })
}

/// Covered exact match: lowercase both, then check the gold answer is a
/// contiguous substring of the prediction.
pub fn covered_em(prediction: &str, gold: &str) -> Result<bool, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::InvalidArgument("empty gold answer".into()));
    }
    Ok(prediction.to_lowercase().contains(&gold.to_lowercase()))
}

/// Document-level F1: retrieve top-k with the question joined to the final
/// reasoning state, then score the retrieved set against the gold
/// supporting ids.
pub fn path_f1(
    question: &Question,
    final_state: &ReasoningState,
    retriever: &dyn Retriever,
    k: usize,
) -> f64 {
    let rendered = final_state.render();
    let query = if rendered.is_empty() {
        question.text.clone()
    } else {
        format!("{} {}", question.text, rendered)
    };
    let retrieved: BTreeSet<String> = retriever
        .retrieve(&query, k)
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    set_f1(&retrieved, &question.gold_support_ids)
}

fn set_f1(retrieved: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    if retrieved.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let overlap = retrieved.intersection(gold).count() as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let precision = overlap / retrieved.len() as f64;
    let recall = overlap / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-level F1 between an answer and the gold answer, as an alternative
/// to the document-level metric. Tokens are counted as a multiset.
pub fn answer_token_f1(prediction: &str, gold: &str) -> f64 {
    let pred = crate::retrieval::tokenize(prediction);
    let gold = crate::retrieval::tokenize(gold);
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut gold_counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for t in &gold {
        *gold_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &pred {
        if let Some(count) = gold_counts.get_mut(t.as_str()) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Outcome of the single-retrieval baseline on one question.
#[derive(Debug, Clone)]
pub struct VanillaOutcome {
    pub final_answer: String,
    pub retrieved_ids: Vec<String>,
    pub em: bool,
    pub f1: f64,
}

/// One retrieval with the original question, one answer generation over
/// the retrieved documents. No decomposition, no search.
pub fn run_vanilla_rag(
    question: &Question,
    backend: &dyn PolicyBackend,
    prompts: &PromptSet,
    retriever: &dyn Retriever,
    k: usize,
    temperature: f64,
    max_tokens: usize,
) -> Result<VanillaOutcome, EvalError> {
    let hits = retriever.retrieve(&question.text, k);
    let retrieved_ids: Vec<String> = hits.into_iter().map(|(id, _)| id).collect();
    let docs: Vec<&Document> = retrieved_ids
        .iter()
        .filter_map(|id| question.document(id))
        .collect();
    let evidence = crate::prompts::render_documents(&docs);
    let prompt = prompts.render(
        TemplateName::FinalAnswer,
        &[
            ("original question", question.text.as_str()),
            ("reasoning state", evidence.as_str()),
        ],
    )?;
    let out = backend
        .generate(&GenerationRequest::new(prompt, temperature).with_max_tokens(max_tokens))?;
    let final_answer = out[0].trim().to_owned();
    let em = covered_em(&final_answer, &question.gold_answer)?;
    let f1 = path_f1(question, &ReasoningState::new(), retriever, k);
    Ok(VanillaOutcome {
        final_answer,
        retrieved_ids,
        em,
        f1,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub search: SearchConfig,
    pub risk: RiskParams,
    pub bm25: Bm25Params,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses all available CPUs.
    pub workers: usize,
    pub dump_trees: bool,
    /// When off, wall times are recorded as 0.0 so output files are
    /// byte-reproducible across runs.
    pub record_timing: bool,
    /// Score f1 as answer-token F1 instead of document-level F1.
    pub answer_f1: bool,
}

/// Aggregate over one experiment, written to `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub n_questions: usize,
    pub failures: usize,
    pub em_pct: f64,
    pub f1_pct: f64,
    /// Success of the greedy best path; absent for the baseline.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pass_1_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pass_n_pct: Option<f64>,
    pub mean_wall_time_min: f64,
}

impl Summary {
    pub fn from_records(mode: Mode, records: &[RunRecord]) -> Self {
        let n = records.len();
        if n == 0 {
            return Self {
                mode,
                n_questions: 0,
                failures: 0,
                em_pct: 0.0,
                f1_pct: 0.0,
                pass_1_pct: None,
                pass_n_pct: None,
                mean_wall_time_min: 0.0,
            };
        }
        let nf = n as f64;
        let em_pct = 100.0 * records.iter().filter(|r| r.em).count() as f64 / nf;
        let f1_pct = 100.0 * records.iter().map(|r| r.f1).sum::<f64>() / nf;
        let with_pass: Vec<bool> = records.iter().filter_map(|r| r.pass_n).collect();
        // For search modes EM grades the best path, so Pass@1 equals EM.
        let (pass_1_pct, pass_n_pct) = if with_pass.is_empty() {
            (None, None)
        } else {
            (
                Some(em_pct),
                Some(
                    100.0 * with_pass.iter().filter(|&&p| p).count() as f64
                        / with_pass.len() as f64,
                ),
            )
        };
        Self {
            mode,
            n_questions: n,
            failures: records.iter().filter(|r| r.error.is_some()).count(),
            em_pct,
            f1_pct,
            pass_1_pct,
            pass_n_pct,
            mean_wall_time_min: records.iter().map(|r| r.wall_time_secs).sum::<f64>() / nf / 60.0,
        }
    }

    /// Fixed-width table with a header row and one data row.
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| match v {
            Some(p) => format!("{p:>8.2}"),
            None => format!("{:>8}", "-"),
        };
        format!(
            "{:<14} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}\n{:<14} {:>9} {:>8} {:>8.2} {:>8.2} {} {} {:>10.3}\n",
            "mode",
            "questions",
            "failures",
            "em%",
            "f1%",
            "pass@1%",
            "pass@N%",
            "time(min)",
            self.mode.to_string(),
            self.n_questions,
            self.failures,
            self.em_pct,
            self.f1_pct,
            pct(self.pass_1_pct),
            pct(self.pass_n_pct),
            self.mean_wall_time_min,
        )
    }
}

/// Everything `run_experiment` produced, with files already on disk.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub summary: Summary,
    pub records: Vec<RunRecord>,
}

/// Runs every question under the configured mode, writes `records.jsonl`,
/// `summary.json`, `summary.txt`, and (optionally) per-question tree dumps
/// under `trees/`. Per-question failures are recorded and the run
/// continues.
pub fn run_experiment(
    questions: &[Question],
    backend: &dyn PolicyBackend,
    prompts: &PromptSet,
    config: &ExperimentConfig,
) -> Result<ExperimentOutput, EvalError> {
    std::fs::create_dir_all(&config.out_dir)?;
    let trees_dir = config.out_dir.join("trees");
    if config.dump_trees {
        std::fs::create_dir_all(&trees_dir)?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| EvalError::InvalidArgument(format!("failed to build worker pool: {e}")))?;
    let results: Vec<(RunRecord, Option<TreeDump>)> = pool.install(|| {
        questions
            .par_iter()
            .map(|q| run_one(q, backend, prompts, config))
            .collect()
    });

    let mut records_file = std::fs::File::create(config.out_dir.join("records.jsonl"))?;
    for (record, _) in &results {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(records_file, "{line}")?;
    }
    if config.dump_trees {
        for (record, dump) in &results {
            if let Some(dump) = dump {
                std::fs::write(
                    trees_dir.join(format!("{}.json", record.question_id)),
                    dump.to_json(),
                )?;
            }
        }
    }

    let records: Vec<RunRecord> = results.into_iter().map(|(r, _)| r).collect();
    let summary = Summary::from_records(config.mode, &records);
    std::fs::write(
        config.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    std::fs::write(config.out_dir.join("summary.txt"), summary.table())?;
    Ok(ExperimentOutput { summary, records })
}

fn run_one(
    question: &Question,
    backend: &dyn PolicyBackend,
    prompts: &PromptSet,
    config: &ExperimentConfig,
) -> (RunRecord, Option<TreeDump>) {
    let counted = Instrumented::new(backend);
    let started = Instant::now();
    let (outcome, dump) = match config.mode {
        Mode::VanillaRag => (run_one_vanilla(question, &counted, prompts, config), None),
        _ => {
            let (outcome, dump) = run_one_search(question, &counted, prompts, config);
            (outcome, dump)
        }
    };
    let wall_time_secs = if config.record_timing {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let (final_answer, em, f1, pass_n, error) = match outcome {
        Ok((answer, em, f1, pass_n)) => (answer, em, f1, pass_n, None),
        Err(message) => (String::new(), false, 0.0, None, Some(message)),
    };
    (
        RunRecord {
            question_id: question.id.clone(),
            mode: config.mode,
            final_answer,
            em,
            f1,
            pass_n,
            wall_time_secs,
            generation_calls: counted.generation_calls(),
            scored_tokens: counted.scored_tokens(),
            error,
        },
        dump,
    )
}

type OneOutcome = Result<(String, bool, f64, Option<bool>), String>;

fn run_one_vanilla(
    question: &Question,
    backend: &dyn PolicyBackend,
    prompts: &PromptSet,
    config: &ExperimentConfig,
) -> OneOutcome {
    let index = Bm25Index::build(&question.corpus, config.bm25).map_err(|e| e.to_string())?;
    let outcome = run_vanilla_rag(
        question,
        backend,
        prompts,
        &index,
        config.search.top_k_docs,
        config.search.temperature,
        config.search.max_tokens,
    )
    .map_err(|e| e.to_string())?;
    let f1 = if config.answer_f1 {
        answer_token_f1(&outcome.final_answer, &question.gold_answer)
    } else {
        outcome.f1
    };
    Ok((outcome.final_answer, outcome.em, f1, None))
}

fn run_one_search(
    question: &Question,
    backend: &dyn PolicyBackend,
    prompts: &PromptSet,
    config: &ExperimentConfig,
) -> (OneOutcome, Option<TreeDump>) {
    let mut search = config.search.clone();
    search.value_mode = config
        .mode
        .value_mode()
        .expect("search modes have a value mode");
    let searcher = Searcher::new(backend, prompts, search, config.risk, config.bm25);
    let tree = match searcher.run_search(question) {
        Ok(tree) => tree,
        Err(SearchError::Aborted { message, partial }) => {
            return (Err(message), Some(partial.dump()));
        }
        Err(e) => return (Err(e.to_string()), None),
    };
    let dump = Some(tree.dump());
    let pass = match searcher.pass_at_n(&tree, question) {
        Ok(pass) => pass,
        Err(e) => return (Err(e.to_string()), dump),
    };
    let final_node = *pass
        .trajectory
        .node_ids
        .last()
        .expect("trajectory contains the root");
    let f1 = if config.answer_f1 {
        answer_token_f1(&pass.trajectory.final_answer, &question.gold_answer)
    } else {
        match Bm25Index::build(&question.corpus, config.bm25) {
            Ok(index) => path_f1(
                question,
                &tree.node(final_node).state,
                &index,
                config.search.top_k_docs,
            ),
            Err(e) => return (Err(e.to_string()), dump),
        }
    };
    (
        Ok((
            pass.trajectory.final_answer.clone(),
            pass.pass_1,
            f1,
            Some(pass.pass_n),
        )),
        dump,
    )
}
