//! The only boundary to a language model: free-text generation and
//! teacher-forced token scoring.
//!
//! Two implementations ship: [`http::HttpBackend`] speaks the de-facto
//! chat-completions wire format, and [`mock::MockBackend`] is a
//! deterministic synthetic world for desk-scale tests. Backends must be
//! safe for concurrent in-flight requests.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod http;
pub mod mock;

#[derive(Debug, Error)]
pub enum BackendError {
    /// Transient transport failure; the request may be retried.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    /// The backend answered, but not in the expected shape.
    #[error("malformed backend response: {0}")]
    Protocol(String),
    /// The backend cannot serve this kind of request at all.
    #[error("backend does not support {0}")]
    Capability(String),
    #[error("invalid request: {0}")]
    InvalidArgument(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// Free-text generation request. `n_samples` completions are drawn from
/// the same prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub n_samples: usize,
    pub max_tokens: usize,
    pub stop: Option<Vec<String>>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64) -> Self {
        Self {
            prompt: prompt.into(),
            temperature,
            n_samples: 1,
            max_tokens: 256,
            stop: None,
        }
    }

    pub fn with_samples(mut self, n_samples: usize) -> Self {
        self.n_samples = n_samples;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub(crate) fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidArgument("empty prompt".into()));
        }
        if self.n_samples == 0 {
            return Err(BackendError::InvalidArgument(
                "n_samples must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Teacher-forced scoring request: per-token log-likelihoods of `target`
/// conditioned on `context`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    /// log p(target_t | target_<t, context), in target token order.
    pub token_logprobs: Vec<f64>,
    /// Length of the target in backend tokens.
    pub token_count: usize,
}

impl ScoreResponse {
    pub fn mean_logprob(&self) -> f64 {
        self.token_logprobs.iter().sum::<f64>() / self.token_count as f64
    }
}

/// Text generation plus teacher-forced token scoring.
pub trait PolicyBackend: Send + Sync {
    /// Returns exactly `req.n_samples` completions.
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError>;

    /// Scores `req.target` token by token, conditioned on `req.context`.
    fn score_sequence(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError>;
}

impl<T: PolicyBackend + ?Sized> PolicyBackend for &T {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        (**self).generate(req)
    }

    fn score_sequence(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        (**self).score_sequence(req)
    }
}

/// Wrapper counting generation calls and scored tokens, for run records.
pub struct Instrumented<B> {
    inner: B,
    generation_calls: AtomicU64,
    scored_tokens: AtomicU64,
}

impl<B: PolicyBackend> Instrumented<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            generation_calls: AtomicU64::new(0),
            scored_tokens: AtomicU64::new(0),
        }
    }

    pub fn generation_calls(&self) -> u64 {
        self.generation_calls.load(Ordering::Relaxed)
    }

    pub fn scored_tokens(&self) -> u64 {
        self.scored_tokens.load(Ordering::Relaxed)
    }
}

impl<B: PolicyBackend> PolicyBackend for Instrumented<B> {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        self.generation_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.generate(req)
    }

    fn score_sequence(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let resp = self.inner.score_sequence(req)?;
        self.scored_tokens
            .fetch_add(resp.token_count as u64, Ordering::Relaxed);
        Ok(resp)
    }
}
