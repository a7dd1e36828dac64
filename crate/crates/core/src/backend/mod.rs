//! Log-probability and generation backends.
//!
//! Two kinds exist: an OpenAI-compatible HTTP completions endpoint and a
//! deterministic byte-level reference model used for offline runs and
//! tests. Both sit behind [`LanguageModel`]; [`Backend`] pairs a model with
//! its [`BackendConfig`] and enforces the shared preconditions.

mod http;
pub mod mock;
mod reference;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{ByteCounter, TokenCounter, WhitespaceCounter};
use crate::error::{Error, Result};

pub use http::{CompletionRequest, HttpModel};
pub use reference::BigramModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_text: String,
    /// Natural-log likelihood of the token given everything before it.
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCompletion {
    pub prompt_token_count: usize,
    pub completion_scores: Vec<TokenScore>,
}

impl ScoredCompletion {
    pub fn logprobs(&self) -> impl Iterator<Item = f64> + '_ {
        self.completion_scores.iter().map(|t| t.logprob)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            max_tokens: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CounterKind {
    #[default]
    Bytes,
    Whitespace,
}

impl CounterKind {
    pub fn counter(self) -> &'static dyn TokenCounter {
        match self {
            CounterKind::Bytes => &ByteCounter,
            CounterKind::Whitespace => &WhitespaceCounter,
        }
    }
}

fn default_parallel() -> usize {
    1
}
fn default_retry_limit() -> u32 {
    3
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    /// Total attempts before a request is reported as a transport failure.
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Base delay of the exponential backoff between attempts.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Training text of the reference model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_text: Option<String>,
    /// Chat-template wrapping applied around every rendered prompt.
    #[serde(default)]
    pub prompt_prefix: String,
    #[serde(default)]
    pub prompt_suffix: String,
    #[serde(default)]
    pub token_counter: CounterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_limit: Option<usize>,
    /// Environment variable holding the bearer token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl BackendConfig {
    pub fn http(backend_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        BackendConfig {
            backend_id: backend_id.into(),
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            model_name: None,
            max_parallel: default_parallel(),
            retry_limit: default_retry_limit(),
            timeout_secs: default_timeout_secs(),
            backoff_ms: default_backoff_ms(),
            seed_text: None,
            prompt_prefix: String::new(),
            prompt_suffix: String::new(),
            token_counter: CounterKind::Bytes,
            context_limit: None,
            api_key_env: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::Config(format!(
                "backend {:?}: {msg}",
                self.backend_id
            )))
        };
        if self.backend_id.is_empty() {
            return Err(Error::Config("backend_id must not be empty".into()));
        }
        if self.max_parallel < 1 {
            return bad("max_parallel must be at least 1");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be positive");
        }
        match self.kind {
            BackendKind::Http if self.endpoint.as_deref().is_none_or(str::is_empty) => {
                bad("http backends need an endpoint")
            }
            BackendKind::Reference if self.seed_text.as_ref().is_none_or(|s| s.len() < 2) => {
                bad("reference backends need a seed text of at least 2 bytes")
            }
            _ => Ok(()),
        }
    }

    /// Applies the configured chat-template wrapping.
    pub fn wrap_prompt(&self, prompt: &str) -> String {
        format!("{}{}{}", self.prompt_prefix, prompt, self.prompt_suffix)
    }
}

/// A byte-level bigram reference backend trained on `seed_text`.
pub fn build_reference_backend(seed_text: &str) -> Result<BackendConfig> {
    if seed_text.len() < 2 {
        return Err(Error::precondition(
            "reference seed text must be at least 2 bytes",
        ));
    }
    Ok(BackendConfig {
        kind: BackendKind::Reference,
        endpoint: None,
        seed_text: Some(seed_text.to_string()),
        ..BackendConfig::http("reference", "")
    })
}

pub trait LanguageModel: Send + Sync {
    /// Log-likelihood of every completion token, each conditioned on the
    /// prompt and all earlier completion tokens. Never samples.
    fn score_completion(&self, prompt: &str, completion: &str) -> Result<ScoredCompletion>;

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String>;
}

pub struct Backend {
    config: BackendConfig,
    model: Box<dyn LanguageModel>,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Backend {
    pub fn connect(config: &BackendConfig) -> Result<Self> {
        config.validate()?;
        let model: Box<dyn LanguageModel> = match config.kind {
            BackendKind::Reference => Box::new(BigramModel::train(
                config.seed_text.as_deref().unwrap_or_default(),
            )?),
            BackendKind::Http => Box::new(HttpModel::new(config)?),
        };
        Ok(Backend {
            config: config.clone(),
            model,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.backend_id
    }

    pub fn token_counter(&self) -> &'static dyn TokenCounter {
        self.config.token_counter.counter()
    }

    pub fn score_completion(&self, prompt: &str, completion: &str) -> Result<ScoredCompletion> {
        if completion.trim().is_empty() {
            return Err(Error::precondition("completion must not be empty"));
        }
        if let Some(limit) = self.config.context_limit {
            let counter = self.token_counter();
            let needed = counter.count_tokens(prompt) + counter.count_tokens(completion);
            if needed > limit {
                return Err(Error::ContextOverflow { needed, limit });
            }
        }
        self.model.score_completion(prompt, completion)
    }

    pub fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        if prompt.is_empty() {
            return Err(Error::precondition("prompt must not be empty"));
        }
        if params.max_tokens == 0 {
            return Ok(String::new());
        }
        self.model.generate(prompt, params)
    }
}

/// One-shot convenience over [`Backend::connect`] + [`Backend::score_completion`].
pub fn score_completion(
    cfg: &BackendConfig,
    prompt: &str,
    completion: &str,
) -> Result<ScoredCompletion> {
    Backend::connect(cfg)?.score_completion(prompt, completion)
}

pub fn generate(cfg: &BackendConfig, prompt: &str, params: &GenerationParams) -> Result<String> {
    Backend::connect(cfg)?.generate(prompt, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_invariants() {
        let mut cfg = BackendConfig::http("m", "http://localhost:1/v1/completions");
        assert!(cfg.validate().is_ok());
        cfg.max_parallel = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = BackendConfig::http("m", "");
        assert!(cfg.validate().is_err());
        cfg.endpoint = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reference_seed_too_short() {
        assert!(build_reference_backend("a").is_err());
        assert!(build_reference_backend("ab").is_ok());
    }

    #[test]
    fn empty_completion_is_precondition_error() {
        let b = Backend::connect(&build_reference_backend("abab").unwrap()).unwrap();
        assert!(matches!(
            b.score_completion("a", "  ").unwrap_err(),
            Error::Precondition(_)
        ));
    }

    #[test]
    fn context_limit_overflow_names_counts() {
        let mut cfg = build_reference_backend("abab").unwrap();
        cfg.context_limit = Some(4);
        let b = Backend::connect(&cfg).unwrap();
        match b.score_completion("abc", "de").unwrap_err() {
            Error::ContextOverflow { needed, limit } => assert_eq!((needed, limit), (5, 4)),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn zero_max_tokens_is_empty() {
        let b = Backend::connect(&build_reference_backend("abab").unwrap()).unwrap();
        let params = GenerationParams {
            temperature: 0.0,
            max_tokens: 0,
        };
        assert_eq!(b.generate("a", &params).unwrap(), "");
    }

    #[test]
    fn wrapping() {
        let mut cfg = build_reference_backend("abab").unwrap();
        cfg.prompt_prefix = "<u>".into();
        cfg.prompt_suffix = "</u><a>".into();
        assert_eq!(cfg.wrap_prompt("hi"), "<u>hi</u><a>");
    }
}
