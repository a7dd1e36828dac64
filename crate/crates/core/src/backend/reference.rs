use std::collections::HashMap;

use super::{GenerationParams, LanguageModel, ScoredCompletion, TokenScore};
use crate::error::{Error, Result};

const ALPHABET: usize = 256;

/// Byte-level bigram model with add-one smoothing over 256 symbols.
///
/// Counts come from the seed text plus every bigram of the context being
/// scored (prompt and completion bytes already seen), so the model picks up
/// vocabulary that appears earlier in the prompt:
///
/// `P(b | a) = (n(a→b) + 1) / (n(a→·) + 256)`
///
/// A completion byte with no preceding byte at all is scored at `1/256`.
#[derive(Debug, Clone)]
pub struct BigramModel {
    pairs: Vec<u32>,
    contexts: Vec<u32>,
}

/// Seed counts overlaid with bigrams from the running context.
struct Counts<'a> {
    model: &'a BigramModel,
    pairs: HashMap<(u8, u8), u32>,
    contexts: [u32; ALPHABET],
    last: Option<u8>,
}

impl<'a> Counts<'a> {
    fn new(model: &'a BigramModel) -> Self {
        Counts {
            model,
            pairs: HashMap::new(),
            contexts: [0; ALPHABET],
            last: None,
        }
    }

    fn push(&mut self, byte: u8) {
        if let Some(prev) = self.last {
            *self.pairs.entry((prev, byte)).or_default() += 1;
            self.contexts[prev as usize] += 1;
        }
        self.last = Some(byte);
    }

    fn pair(&self, a: u8, b: u8) -> u32 {
        self.model.pairs[a as usize * ALPHABET + b as usize]
            + self.pairs.get(&(a, b)).copied().unwrap_or(0)
    }

    fn logprob_next(&self, b: u8) -> f64 {
        match self.last {
            None => -(ALPHABET as f64).ln(),
            Some(a) => {
                let num = f64::from(self.pair(a, b)) + 1.0;
                let den = f64::from(self.model.contexts[a as usize] + self.contexts[a as usize])
                    + ALPHABET as f64;
                (num / den).ln()
            }
        }
    }

    fn argmax_next(&self) -> u8 {
        let Some(a) = self.last else { return 0 };
        // Ties resolve to the lowest byte: only a strictly larger count wins.
        let mut best = 0u8;
        let mut best_count = self.pair(a, 0);
        for b in 1..=255u8 {
            let c = self.pair(a, b);
            if c > best_count {
                best = b;
                best_count = c;
            }
        }
        best
    }
}

impl BigramModel {
    pub fn train(seed: &str) -> Result<Self> {
        let bytes = seed.as_bytes();
        if bytes.len() < 2 {
            return Err(Error::precondition(
                "reference seed text must be at least 2 bytes",
            ));
        }
        let mut pairs = vec![0u32; ALPHABET * ALPHABET];
        let mut contexts = vec![0u32; ALPHABET];
        for w in bytes.windows(2) {
            pairs[w[0] as usize * ALPHABET + w[1] as usize] += 1;
            contexts[w[0] as usize] += 1;
        }
        Ok(BigramModel { pairs, contexts })
    }

    /// `P(next | prev)` from seed counts alone.
    pub fn seed_probability(&self, prev: u8, next: u8) -> f64 {
        let num = f64::from(self.pairs[prev as usize * ALPHABET + next as usize]) + 1.0;
        num / (f64::from(self.contexts[prev as usize]) + ALPHABET as f64)
    }

    fn counts_after(&self, prompt: &[u8]) -> Counts<'_> {
        let mut counts = Counts::new(self);
        for &b in prompt {
            counts.push(b);
        }
        counts
    }
}

impl LanguageModel for BigramModel {
    fn score_completion(&self, prompt: &str, completion: &str) -> Result<ScoredCompletion> {
        let mut counts = self.counts_after(prompt.as_bytes());
        let completion_scores = completion
            .as_bytes()
            .iter()
            .map(|&b| {
                let logprob = counts.logprob_next(b);
                counts.push(b);
                TokenScore {
                    token_text: String::from_utf8_lossy(&[b]).into_owned(),
                    logprob,
                }
            })
            .collect();
        Ok(ScoredCompletion {
            prompt_token_count: prompt.len(),
            completion_scores,
        })
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        let mut counts = self.counts_after(prompt.as_bytes());
        let mut out = Vec::with_capacity(params.max_tokens);
        for _ in 0..params.max_tokens {
            let b = counts.argmax_next();
            out.push(b);
            counts.push(b);
        }
        Ok(String::from_utf8_lossy(&out).into_owned())
    }
}
