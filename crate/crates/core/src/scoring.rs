//! Perplexity and the desiredness score.
//!
//! The desiredness of a comment is how much it lowers the perplexity of the
//! recorded fix:
//!
//! ```text
//! PPL(X) = exp(-(1/N) · Σ log P(x_i | x_<i))
//! DS     = -(PPL(fix | code, comment) - PPL(fix | code))
//! ```
//!
//! Perplexity is taken over the fix tokens only. Both conditions score the
//! identical completion; only the prompt differs.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ScoredCompletion};
use crate::corpus::{truncate_tokens_left, ReviewEntry};
use crate::error::{Error, Result};

pub const DEFAULT_TRUNCATION_LIMIT: usize = 2048;

const REFINE_INSTRUCTION: &str = "Refine the given code based on the provided code review comment.";

/// Fills the code-refinement template. Without a comment, the comment line
/// is left out entirely.
pub fn render_refine_prompt(code: &str, comment: Option<&str>) -> Result<String> {
    if code.is_empty() {
        return Err(Error::precondition("code must not be empty"));
    }
    Ok(match comment {
        Some(comment) => {
            format!("{REFINE_INSTRUCTION}\nThe comment is: '{comment}'\nThe code is: '{code}'")
        }
        None => format!("{REFINE_INSTRUCTION}\nThe code is: '{code}'"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResult {
    pub ppl: f64,
    pub token_count: usize,
    pub logprob_sum: f64,
}

pub fn perplexity(scores: &ScoredCompletion) -> Result<PerplexityResult> {
    let logprobs: Vec<f64> = scores.logprobs().collect();
    perplexity_of(&logprobs)
}

pub fn perplexity_of(logprobs: &[f64]) -> Result<PerplexityResult> {
    if logprobs.is_empty() {
        return Err(Error::precondition("perplexity needs at least one token"));
    }
    if let Some(bad) = logprobs.iter().find(|l| !l.is_finite()) {
        return Err(Error::precondition(format!("non-finite logprob {bad}")));
    }
    let logprob_sum: f64 = logprobs.iter().sum();
    let token_count = logprobs.len();
    Ok(PerplexityResult {
        ppl: (-logprob_sum / token_count as f64).exp(),
        token_count,
        logprob_sum,
    })
}

/// One line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesirednessScore {
    pub entry_id: String,
    pub backend_id: String,
    #[serde(rename = "ppl_with")]
    pub ppl_with_comment: f64,
    #[serde(rename = "ppl_without")]
    pub ppl_without_comment: f64,
    pub ds: f64,
}

impl DesirednessScore {
    pub fn new(
        entry_id: impl Into<String>,
        backend_id: impl Into<String>,
        ppl_with_comment: f64,
        ppl_without_comment: f64,
    ) -> Self {
        DesirednessScore {
            entry_id: entry_id.into(),
            backend_id: backend_id.into(),
            ppl_with_comment,
            ppl_without_comment,
            ds: desiredness_score(ppl_with_comment, ppl_without_comment),
        }
    }
}

pub fn desiredness_score(ppl_with_comment: f64, ppl_without_comment: f64) -> f64 {
    -(ppl_with_comment - ppl_without_comment)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Token budget for prompt plus fix, per condition.
    pub truncation_limit: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            truncation_limit: DEFAULT_TRUNCATION_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub score: DesirednessScore,
    /// Whether either condition's prompt lost context to the token budget.
    pub truncated: bool,
}

/// Wraps the rendered prompt for `backend`, dropping its oldest text until
/// wrapper, prompt and completion fit in `limit` tokens.
fn fit_prompt(
    backend: &Backend,
    rendered: &str,
    completion: &str,
    limit: usize,
) -> Result<(String, bool)> {
    let cfg = backend.config();
    let counter = backend.token_counter();
    let fixed = counter.count_tokens(&cfg.prompt_prefix)
        + counter.count_tokens(&cfg.prompt_suffix)
        + counter.count_tokens(completion);
    if fixed >= limit {
        return Err(Error::ContextOverflow {
            needed: fixed + counter.count_tokens(rendered),
            limit,
        });
    }
    let t = truncate_tokens_left(rendered, limit - fixed, counter)?;
    Ok((cfg.wrap_prompt(&t.text), t.truncated))
}

pub fn desiredness(
    entry: &ReviewEntry,
    backend: &Backend,
    cfg: &ScoringConfig,
) -> Result<ScoredEntry> {
    let fix = entry
        .new_hunk
        .as_deref()
        .ok_or_else(|| Error::Unscorable(entry.entry_id.clone()))?;
    let run = || -> Result<ScoredEntry> {
        let mut truncated = false;
        let mut ppl = |comment: Option<&str>| -> Result<f64> {
            let rendered = render_refine_prompt(&entry.old_hunk, comment)?;
            let (prompt, cut) = fit_prompt(backend, &rendered, fix, cfg.truncation_limit)?;
            truncated |= cut;
            Ok(perplexity(&backend.score_completion(&prompt, fix)?)?.ppl)
        };
        let with = ppl(Some(&entry.comment))?;
        let without = ppl(None)?;
        Ok(ScoredEntry {
            score: DesirednessScore::new(&entry.entry_id, backend.id(), with, without),
            truncated,
        })
    };
    run().map_err(|e| e.for_entry(&entry.entry_id))
}
