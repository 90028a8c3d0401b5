//! HTTP adapter speaking the de-facto chat-completions wire format.
//!
//! Generation goes through `POST <base>/v1/chat/completions`; teacher-forced
//! scoring goes through `POST <base>/v1/completions` with `echo` and
//! `logprobs` enabled, extracting only the logprobs aligned to the target
//! suffix of the echoed prompt. The adapter never interprets model text; it
//! returns completions verbatim.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationRequest, PolicyBackend, ScoreRequest, ScoreResponse};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080` or `http://host/v1`.
    pub endpoint_url: String,
    pub model: String,
    /// Scoring may go to a different server; defaults to `endpoint_url`.
    pub scoring_endpoint_url: Option<String>,
    /// Model used for scoring; defaults to `model`.
    pub scoring_model: Option<String>,
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub retry_base: Duration,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model: model.into(),
            scoring_endpoint_url: None,
            scoring_model: None,
            api_key: None,
            max_retries: 3,
            retry_base: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatCompletionsBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    n: usize,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a Vec<String>>,
}

#[derive(Deserialize)]
struct ChatCompletionsResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Serialize)]
struct CompletionsBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    echo: bool,
    logprobs: u32,
}

#[derive(Deserialize)]
struct CompletionsResponse {
    choices: Vec<CompletionsChoice>,
}

#[derive(Deserialize)]
struct CompletionsChoice {
    logprobs: Option<CompletionsLogprobs>,
}

#[derive(Deserialize)]
struct CompletionsLogprobs {
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Protocol(format!("failed to build HTTP client: {e}")))?;
        Ok(Self { config, client })
    }

    fn chat_url(&self) -> String {
        join_api_path(&self.config.endpoint_url, "chat/completions")
    }

    fn completions_url(&self) -> String {
        let base = self
            .config
            .scoring_endpoint_url
            .as_deref()
            .unwrap_or(&self.config.endpoint_url);
        join_api_path(base, "completions")
    }

    /// POSTs `body` with retries on transport failures and 5xx statuses.
    fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<R, BackendError> {
        let attempts = self.config.max_retries.max(1);
        let mut last_message = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.retry_base * 2u32.pow(attempt - 1));
            }
            let mut req = self.client.post(url).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_server_error() {
                        last_message = format!("server returned {status}");
                        continue;
                    }
                    if !status.is_success() {
                        let body = resp.text().unwrap_or_default();
                        return Err(BackendError::Protocol(format!(
                            "server returned {status}: {body}"
                        )));
                    }
                    let text = resp.text().map_err(|e| {
                        BackendError::Protocol(format!("failed to read response body: {e}"))
                    })?;
                    return serde_json::from_str(&text).map_err(|e| {
                        BackendError::Protocol(format!("failed to decode response: {e}"))
                    });
                }
                Err(e) => {
                    last_message = e.to_string();
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last_message,
        })
    }
}

impl PolicyBackend for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        req.validate()?;
        let body = ChatCompletionsBody {
            model: &self.config.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &req.prompt,
            }],
            temperature: req.temperature,
            n: req.n_samples,
            max_tokens: req.max_tokens,
            stop: req.stop.as_ref(),
        };
        let resp: ChatCompletionsResponse = self.post_json(&self.chat_url(), &body)?;
        if resp.choices.len() != req.n_samples {
            return Err(BackendError::Protocol(format!(
                "requested {} completions, got {}",
                req.n_samples,
                resp.choices.len()
            )));
        }
        Ok(resp
            .choices
            .into_iter()
            .map(|c| c.message.content)
            .collect())
    }

    fn score_sequence(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        if req.target.is_empty() {
            return Err(BackendError::InvalidArgument("empty score target".into()));
        }
        let prompt = format!("{}{}", req.context, req.target);
        let model = self
            .config
            .scoring_model
            .as_deref()
            .unwrap_or(&self.config.model);
        let body = CompletionsBody {
            model,
            prompt: &prompt,
            max_tokens: 0,
            temperature: 0.0,
            echo: true,
            logprobs: 0,
        };
        let resp: CompletionsResponse = self.post_json(&self.completions_url(), &body)?;
        let choice =
            resp.choices.into_iter().next().ok_or_else(|| {
                BackendError::Protocol("no choices in completions response".into())
            })?;
        let logprobs = choice
            .logprobs
            .ok_or_else(|| BackendError::Capability("per-token logprobs (echo scoring)".into()))?;
        if logprobs.text_offset.len() != logprobs.token_logprobs.len() {
            return Err(BackendError::Protocol(
                "text_offset and token_logprobs lengths differ".into(),
            ));
        }
        // Tokens whose text offset falls inside the target suffix are the
        // scored tokens. A token straddling the boundary belongs to the
        // context and is excluded.
        let target_start = req.context.len();
        let mut token_logprobs = Vec::new();
        for (offset, lp) in logprobs.text_offset.iter().zip(&logprobs.token_logprobs) {
            if *offset >= target_start {
                match lp {
                    Some(lp) => token_logprobs.push(*lp),
                    None => {
                        return Err(BackendError::Protocol(
                            "null logprob inside target span".into(),
                        ))
                    }
                }
            }
        }
        if token_logprobs.is_empty() {
            return Err(BackendError::Protocol(
                "no tokens aligned to the score target".into(),
            ));
        }
        let token_count = token_logprobs.len();
        Ok(ScoreResponse {
            token_logprobs,
            token_count,
        })
    }
}

/// Joins a configured base URL with an API leaf, tolerating bases given
/// with or without a trailing slash or `/v1` segment.
fn join_api_path(base: &str, leaf: &str) -> String {
    let trimmed = base.trim_end_matches('/');
    if trimmed.ends_with("/v1") {
        format!("{trimmed}/{leaf}")
    } else {
        format!("{trimmed}/v1/{leaf}")
    }
}
