//! OpenAI-compatible completions client.
//!
//! Scoring sends `prompt + completion` as the prompt with `echo` on and
//! `max_tokens` 0, then reads the echoed per-token logprobs. The completion
//! span starts where the cumulative echoed token text reaches the prompt
//! length; a token straddling that boundary is a protocol error.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{BackendConfig, GenerationParams, LanguageModel, ScoredCompletion, TokenScore};
use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "REVDISTILL_API_KEY";
pub const REQUEST_ID_HEADER: &str = "x-request-id";
const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// Request body. Fields are declared in alphabetical order so the wire
/// bytes match a key-sorted JSON rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub echo: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<u32>,
    pub max_tokens: usize,
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
}

pub struct HttpModel {
    backend_id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    attempts: u32,
    backoff: Duration,
    agent: ureq::Agent,
    next_request: AtomicU64,
}

impl HttpModel {
    pub fn new(cfg: &BackendConfig) -> Result<Self> {
        let endpoint = cfg.endpoint.clone().ok_or_else(|| {
            Error::Config(format!("backend {:?} has no endpoint", cfg.backend_id))
        })?;
        let key_var = cfg.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpModel {
            backend_id: cfg.backend_id.clone(),
            endpoint,
            model: cfg
                .model_name
                .clone()
                .unwrap_or_else(|| cfg.backend_id.clone()),
            api_key: std::env::var(key_var).ok().filter(|k| !k.is_empty()),
            attempts: cfg.retry_limit.max(1),
            backoff: Duration::from_millis(cfg.backoff_ms),
            agent,
            next_request: AtomicU64::new(0),
        })
    }

    fn transport(&self, message: impl Into<String>) -> Error {
        Error::Transport {
            backend: self.backend_id.clone(),
            message: message.into(),
        }
    }

    fn protocol(&self, message: impl Into<String>) -> Error {
        Error::Protocol {
            backend: self.backend_id.clone(),
            message: message.into(),
        }
    }

    fn post(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let body = serde_json::to_string(request).expect("request serializes");
        let mut last_err = None;
        for attempt in 0..self.attempts {
            if attempt > 0 {
                let delay = self.backoff_delay(attempt);
                debug!(backend = %self.backend_id, attempt, ?delay, "retrying");
                std::thread::sleep(delay);
            }
            match self.post_once(&body) {
                Ok(text) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| self.protocol(format!("malformed response body: {e}")))
                }
                Err(e @ Error::Transport { .. }) => {
                    warn!(backend = %self.backend_id, attempt, error = %e, "request failed");
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err.unwrap_or_else(|| self.transport("no attempts made")))
    }

    fn backoff_delay(&self, attempt: u32) -> Duration {
        let base = self.backoff.saturating_mul(1u32 << (attempt - 1).min(16));
        let jitter = rand::rng().random_range(0.0..=0.5);
        base.mul_f64(1.0 + jitter).min(MAX_BACKOFF)
    }

    fn post_once(&self, body: &str) -> Result<String> {
        let request_id = format!(
            "{}-{}",
            self.backend_id,
            self.next_request.fetch_add(1, Ordering::Relaxed)
        );
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .header(REQUEST_ID_HEADER, &request_id);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| self.transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if let Some(echoed) = resp.headers().get(REQUEST_ID_HEADER) {
            if echoed.to_str().ok() != Some(request_id.as_str()) {
                return Err(self.protocol(format!(
                    "response for request {echoed:?} arrived on request {request_id}"
                )));
            }
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| self.transport(format!("reading body: {e}")))?;
        match status {
            200..=299 => Ok(text),
            429 | 500..=599 => Err(self.transport(format!("HTTP {status}: {text}"))),
            _ => Err(self.protocol(format!("HTTP {status}: {text}"))),
        }
    }

    pub fn scoring_request(&self, prompt: &str, completion: &str) -> CompletionRequest {
        scoring_request(&self.model, prompt, completion)
    }
}

pub(crate) fn scoring_request(model: &str, prompt: &str, completion: &str) -> CompletionRequest {
    CompletionRequest {
        echo: true,
        logprobs: Some(1),
        max_tokens: 0,
        model: model.to_string(),
        prompt: format!("{prompt}{completion}"),
        temperature: 0.0,
    }
}

/// Locates the completion span inside echoed tokens.
///
/// Returns the number of prompt tokens and the completion token scores.
pub(crate) fn align_completion(
    tokens: &[String],
    logprobs: &[Option<f64>],
    prompt: &str,
    completion: &str,
) -> std::result::Result<(usize, Vec<TokenScore>), String> {
    if tokens.len() != logprobs.len() {
        return Err(format!(
            "{} tokens but {} logprobs",
            tokens.len(),
            logprobs.len()
        ));
    }
    let full_len = prompt.len() + completion.len();
    let boundary = prompt.len();
    let mut pos = 0usize;
    let mut prompt_tokens = 0usize;
    let mut scores = Vec::new();
    for (tok, lp) in tokens.iter().zip(logprobs) {
        if pos >= full_len {
            break;
        }
        let end = pos + tok.len();
        let expected = if pos < boundary {
            prompt.get(pos..).map(|p| p.to_string() + completion)
        } else {
            completion.get(pos - boundary..).map(str::to_string)
        };
        if !expected.is_some_and(|rest| rest.starts_with(tok.as_str())) {
            return Err(format!(
                "echoed token {tok:?} diverges from the sent text at byte {pos}"
            ));
        }
        if pos < boundary && end > boundary {
            return Err(format!(
                "token {tok:?} spans the prompt/completion boundary at byte {boundary} \
                 (covers bytes {pos}..{end})"
            ));
        }
        if end <= boundary {
            prompt_tokens += 1;
        } else {
            let logprob =
                lp.ok_or_else(|| format!("missing logprob for completion token {tok:?}"))?;
            if !logprob.is_finite() {
                return Err(format!("non-finite logprob for token {tok:?}"));
            }
            scores.push(TokenScore {
                token_text: tok.clone(),
                logprob,
            });
        }
        pos = end;
    }
    if pos != full_len {
        return Err(format!("echo covers {pos} of {full_len} bytes"));
    }
    if scores.is_empty() {
        return Err("no completion tokens in echo".into());
    }
    Ok((prompt_tokens, scores))
}

impl LanguageModel for HttpModel {
    fn score_completion(&self, prompt: &str, completion: &str) -> Result<ScoredCompletion> {
        let resp = self.post(&self.scoring_request(prompt, completion))?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| self.protocol("response has no choices"))?;
        let lp = choice
            .logprobs
            .ok_or_else(|| self.protocol("response has no logprobs"))?;
        let (prompt_token_count, completion_scores) =
            align_completion(&lp.tokens, &lp.token_logprobs, prompt, completion)
                .map_err(|m| self.protocol(m))?;
        Ok(ScoredCompletion {
            prompt_token_count,
            completion_scores,
        })
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        let request = CompletionRequest {
            echo: false,
            logprobs: None,
            max_tokens: params.max_tokens,
            model: self.model.clone(),
            prompt: prompt.to_string(),
            temperature: params.temperature,
        };
        let resp = self.post(&request)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| self.protocol("response has no choices"))
    }
}
