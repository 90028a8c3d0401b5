//! Resolved application configuration.
//!
//! Precedence, lowest to highest: built-in defaults, config file (TOML,
//! one section per subsystem), `ARISE_*` environment variables, CLI flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use arise_core::mcts::SearchConfig;
use arise_core::retrieval::Bm25Params;
use arise_core::risk::RiskParams;
use arise_core::ValueMode;
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize)]
pub struct AppConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    pub search: SearchConfig,
    pub risk: RiskParams,
    pub retrieval: Bm25Params,
    pub backend: BackendSettings,
    pub dataset: DatasetSettings,
    pub output: OutputSettings,
}

#[derive(Debug, Clone, Serialize)]
pub struct BackendSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scoring_endpoint_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scoring_model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Questions sampled from the dataset; all of them when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_n: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            prompts_dir: None,
            search: SearchConfig::default(),
            risk: RiskParams::default(),
            retrieval: Bm25Params::default(),
            backend: BackendSettings {
                endpoint_url: None,
                model: "default".into(),
                scoring_endpoint_url: None,
                scoring_model: None,
                api_key_env: "ARISE_API_KEY".into(),
            },
            dataset: DatasetSettings {
                path: None,
                sample_n: None,
                seed: 0,
            },
            output: OutputSettings { dir: "out".into() },
        }
    }
}

/// Flags shared by the config-consuming subcommands. Absent flags defer to
/// the environment, the config file, and finally the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    /// Path to a TOML config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Search iterations [default: 200]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// UCT exploration weight w [default: 1.4]
    #[arg(long)]
    pub exploration_weight: Option<f64>,
    /// Search depth cap [default: 4]
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Comma-separated children cap per depth [default: 5,4,3,2]
    #[arg(long)]
    pub width_schedule: Option<String>,
    /// Candidate steps sampled per rollout level [default: 2]
    #[arg(long)]
    pub rollout_samples: Option<usize>,
    /// Sampling temperature [default: 0.7]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Documents retrieved per sub-question [default: 2]
    #[arg(long)]
    pub top_k_docs: Option<usize>,
    /// Node value mode: risk_value, uniform, llm_verifier [default: risk_value]
    #[arg(long)]
    pub value_mode: Option<String>,
    /// Search seed, recorded in dumps [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Max tokens per generation [default: 256]
    #[arg(long)]
    pub max_tokens: Option<usize>,

    /// Risk sigmoid scaling factor alpha [default: 1.0]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Risk sigmoid translation factor beta [default: 2.0]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Use the increasing sigmoid form [default: false]
    #[arg(long)]
    pub increasing_sigmoid: Option<bool>,

    /// BM25 k1 [default: 1.2]
    #[arg(long)]
    pub bm25_k1: Option<f64>,
    /// BM25 b [default: 0.75]
    #[arg(long)]
    pub bm25_b: Option<f64>,

    /// Chat-completions base URL, e.g. http://127.0.0.1:8080
    #[arg(long)]
    pub endpoint_url: Option<String>,
    /// Model name sent to the backend [default: default]
    #[arg(long)]
    pub model: Option<String>,
    /// Separate base URL for token scoring [default: endpoint-url]
    #[arg(long)]
    pub scoring_endpoint_url: Option<String>,
    /// Separate model for token scoring [default: model]
    #[arg(long)]
    pub scoring_model: Option<String>,
    /// Environment variable holding the API key [default: ARISE_API_KEY]
    #[arg(long)]
    pub api_key_env: Option<String>,

    /// JSON-lines dataset path
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Questions to sample from the dataset [default: all]
    #[arg(long)]
    pub sample_n: Option<usize>,
    /// Dataset sampling seed [default: 0]
    #[arg(long)]
    pub dataset_seed: Option<u64>,

    /// Output directory [default: out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Directory of prompt template overrides
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    search: FileSearch,
    #[serde(default)]
    risk: FileRisk,
    #[serde(default)]
    retrieval: FileRetrieval,
    #[serde(default)]
    backend: FileBackend,
    #[serde(default)]
    dataset: FileDataset,
    #[serde(default)]
    output: FileOutput,
    prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSearch {
    iterations: Option<usize>,
    exploration_weight: Option<f64>,
    max_depth: Option<usize>,
    width_schedule: Option<Vec<usize>>,
    rollout_samples: Option<usize>,
    temperature: Option<f64>,
    top_k_docs: Option<usize>,
    value_mode: Option<String>,
    seed: Option<u64>,
    max_tokens: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRisk {
    alpha: Option<f64>,
    beta: Option<f64>,
    increasing_sigmoid: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRetrieval {
    k1: Option<f64>,
    b: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileBackend {
    endpoint_url: Option<String>,
    model: Option<String>,
    scoring_endpoint_url: Option<String>,
    scoring_model: Option<String>,
    api_key_env: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDataset {
    path: Option<PathBuf>,
    sample_n: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOutput {
    dir: Option<PathBuf>,
}

macro_rules! merge {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

macro_rules! merge_opt {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = Some(v);
        }
    };
}

/// Builds the effective configuration from defaults, file, environment,
/// and flags, in that order.
pub fn resolve(overrides: &ConfigOverrides) -> Result<AppConfig, String> {
    let mut config = AppConfig::default();
    if let Some(path) = &overrides.config {
        apply_file(&mut config, path)?;
    }
    apply_env(&mut config)?;
    apply_flags(&mut config, overrides)?;
    Ok(config)
}

fn apply_file(config: &mut AppConfig, path: &Path) -> Result<(), String> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    let file: FileConfig = toml::from_str(&raw)
        .map_err(|e| format!("cannot parse config file {}: {e}", path.display()))?;

    merge!(config.search.iterations, file.search.iterations);
    merge!(
        config.search.exploration_weight,
        file.search.exploration_weight
    );
    merge!(config.search.max_depth, file.search.max_depth);
    merge!(config.search.width_schedule, file.search.width_schedule);
    merge!(config.search.rollout_samples, file.search.rollout_samples);
    merge!(config.search.temperature, file.search.temperature);
    merge!(config.search.top_k_docs, file.search.top_k_docs);
    if let Some(mode) = file.search.value_mode {
        config.search.value_mode = ValueMode::from_str(&mode)?;
    }
    merge!(config.search.seed, file.search.seed);
    merge!(config.search.max_tokens, file.search.max_tokens);

    merge!(config.risk.alpha, file.risk.alpha);
    merge!(config.risk.beta, file.risk.beta);
    merge!(config.risk.increasing_sigmoid, file.risk.increasing_sigmoid);

    merge!(config.retrieval.k1, file.retrieval.k1);
    merge!(config.retrieval.b, file.retrieval.b);

    merge_opt!(config.backend.endpoint_url, file.backend.endpoint_url);
    merge!(config.backend.model, file.backend.model);
    merge_opt!(
        config.backend.scoring_endpoint_url,
        file.backend.scoring_endpoint_url
    );
    merge_opt!(config.backend.scoring_model, file.backend.scoring_model);
    merge!(config.backend.api_key_env, file.backend.api_key_env);

    merge_opt!(config.dataset.path, file.dataset.path);
    merge_opt!(config.dataset.sample_n, file.dataset.sample_n);
    merge!(config.dataset.seed, file.dataset.seed);

    merge!(config.output.dir, file.output.dir);
    merge_opt!(config.prompts_dir, file.prompts_dir);
    Ok(())
}

fn env_parsed<T: FromStr>(name: &str) -> Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    match std::env::var(name) {
        Ok(v) if !v.is_empty() => v
            .parse()
            .map(Some)
            .map_err(|e| format!("invalid {name}: {e}")),
        _ => Ok(None),
    }
}

fn apply_env(config: &mut AppConfig) -> Result<(), String> {
    merge!(config.search.iterations, env_parsed("ARISE_ITERATIONS")?);
    merge!(
        config.search.exploration_weight,
        env_parsed("ARISE_EXPLORATION_WEIGHT")?
    );
    merge!(config.search.max_depth, env_parsed("ARISE_MAX_DEPTH")?);
    if let Some(raw) = env_parsed::<String>("ARISE_WIDTH_SCHEDULE")? {
        config.search.width_schedule = parse_width_schedule(&raw)?;
    }
    merge!(
        config.search.rollout_samples,
        env_parsed("ARISE_ROLLOUT_SAMPLES")?
    );
    merge!(config.search.temperature, env_parsed("ARISE_TEMPERATURE")?);
    merge!(config.search.top_k_docs, env_parsed("ARISE_TOP_K_DOCS")?);
    if let Some(raw) = env_parsed::<String>("ARISE_VALUE_MODE")? {
        config.search.value_mode = ValueMode::from_str(&raw)?;
    }
    merge!(config.search.seed, env_parsed("ARISE_SEED")?);
    merge!(config.search.max_tokens, env_parsed("ARISE_MAX_TOKENS")?);

    merge!(config.risk.alpha, env_parsed("ARISE_ALPHA")?);
    merge!(config.risk.beta, env_parsed("ARISE_BETA")?);
    merge!(
        config.risk.increasing_sigmoid,
        env_parsed("ARISE_INCREASING_SIGMOID")?
    );

    merge!(config.retrieval.k1, env_parsed("ARISE_BM25_K1")?);
    merge!(config.retrieval.b, env_parsed("ARISE_BM25_B")?);

    merge_opt!(
        config.backend.endpoint_url,
        env_parsed::<String>("ARISE_ENDPOINT_URL")?
    );
    merge!(config.backend.model, env_parsed::<String>("ARISE_MODEL")?);
    merge_opt!(
        config.backend.scoring_endpoint_url,
        env_parsed::<String>("ARISE_SCORING_ENDPOINT_URL")?
    );
    merge_opt!(
        config.backend.scoring_model,
        env_parsed::<String>("ARISE_SCORING_MODEL")?
    );
    merge!(
        config.backend.api_key_env,
        env_parsed::<String>("ARISE_API_KEY_ENV")?
    );

    merge_opt!(
        config.dataset.path,
        env_parsed::<PathBuf>("ARISE_DATASET_PATH")?
    );
    merge_opt!(config.dataset.sample_n, env_parsed("ARISE_SAMPLE_N")?);
    merge!(config.dataset.seed, env_parsed("ARISE_DATASET_SEED")?);

    merge!(config.output.dir, env_parsed::<PathBuf>("ARISE_OUT_DIR")?);
    merge_opt!(
        config.prompts_dir,
        env_parsed::<PathBuf>("ARISE_PROMPTS_DIR")?
    );
    Ok(())
}

fn apply_flags(config: &mut AppConfig, flags: &ConfigOverrides) -> Result<(), String> {
    merge!(config.search.iterations, flags.iterations);
    merge!(config.search.exploration_weight, flags.exploration_weight);
    merge!(config.search.max_depth, flags.max_depth);
    if let Some(raw) = &flags.width_schedule {
        config.search.width_schedule = parse_width_schedule(raw)?;
    }
    merge!(config.search.rollout_samples, flags.rollout_samples);
    merge!(config.search.temperature, flags.temperature);
    merge!(config.search.top_k_docs, flags.top_k_docs);
    if let Some(raw) = &flags.value_mode {
        config.search.value_mode = ValueMode::from_str(raw)?;
    }
    merge!(config.search.seed, flags.seed);
    merge!(config.search.max_tokens, flags.max_tokens);

    merge!(config.risk.alpha, flags.alpha);
    merge!(config.risk.beta, flags.beta);
    merge!(config.risk.increasing_sigmoid, flags.increasing_sigmoid);

    merge!(config.retrieval.k1, flags.bm25_k1);
    merge!(config.retrieval.b, flags.bm25_b);

    merge_opt!(config.backend.endpoint_url, flags.endpoint_url.clone());
    merge!(config.backend.model, flags.model.clone());
    merge_opt!(
        config.backend.scoring_endpoint_url,
        flags.scoring_endpoint_url.clone()
    );
    merge_opt!(config.backend.scoring_model, flags.scoring_model.clone());
    merge!(config.backend.api_key_env, flags.api_key_env.clone());

    merge_opt!(config.dataset.path, flags.dataset.clone());
    merge_opt!(config.dataset.sample_n, flags.sample_n);
    merge!(config.dataset.seed, flags.dataset_seed);

    merge!(config.output.dir, flags.out_dir.clone());
    merge_opt!(config.prompts_dir, flags.prompts_dir.clone());
    Ok(())
}

fn parse_width_schedule(raw: &str) -> Result<Vec<usize>, String> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|e| format!("invalid width schedule entry {part:?}: {e}"))
        })
        .collect()
}

impl AppConfig {
    /// Structural validation plus existence checks for referenced paths.
    pub fn validate(&self) -> Result<(), String> {
        self.search.validate().map_err(|e| e.to_string())?;
        if self.risk.alpha <= 0.0 {
            return Err("risk alpha must be positive".into());
        }
        if self.retrieval.k1 <= 0.0 {
            return Err("bm25 k1 must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.retrieval.b) {
            return Err("bm25 b must lie in [0, 1]".into());
        }
        if let Some(path) = &self.dataset.path {
            if !path.is_file() {
                return Err(format!("dataset path {} does not exist", path.display()));
            }
        }
        if let Some(dir) = &self.prompts_dir {
            if !dir.is_dir() {
                return Err(format!("prompts dir {} does not exist", dir.display()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
