//! Sentence-level BLEU-4.
//!
//! Uniform weights over 1..4-gram modified precisions with the brevity
//! penalty. A zero match count for n >= 2 is smoothed to `1 / (c_n + 1)`,
//! where `c_n` is the candidate's n-gram count; unigram precision is never
//! smoothed, so zero unigram overlap scores 0.

use std::collections::HashMap;

use crate::error::{Error, Result};

const MAX_N: usize = 4;

/// Lowercases, then splits into runs of alphanumerics/underscore and single
/// punctuation characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

pub fn bleu4(candidate: &str, reference: &str) -> Result<f64> {
    let reference = tokenize(reference);
    if reference.is_empty() {
        return Err(Error::precondition("BLEU reference must not be empty"));
    }
    let candidate = tokenize(candidate);
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_N {
        let cand = ngram_counts(&candidate, n);
        let refs = ngram_counts(&reference, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
            .sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity = if c >= r { 0.0 } else { 1.0 - r / c };
    Ok((brevity + log_sum / MAX_N as f64).exp())
}

/// Mean sentence-level BLEU-4 over aligned pairs.
pub fn corpus_bleu4<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (cand, reference) in pairs {
        sum += bleu4(cand, reference)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::precondition("no candidate/reference pairs"));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenization() {
        assert_eq!(
            tokenize("Use `foo_bar()`, please!"),
            ["use", "`", "foo_bar", "(", ")", "`", ",", "please", "!"]
        );
    }

    #[test]
    fn identity_and_disjoint() {
        assert_eq!(
            bleu4("the cat sat on the mat", "the cat sat on the mat").unwrap(),
            1.0
        );
        assert_eq!(bleu4("dog runs", "the cat sat").unwrap(), 0.0);
        assert_eq!(bleu4("", "the cat").unwrap(), 0.0);
        assert!(bleu4("x", " ").is_err());
    }

    #[test]
    fn asymmetric() {
        let a = bleu4("the cat sat", "the cat sat down").unwrap();
        let b = bleu4("the cat sat down", "the cat sat").unwrap();
        assert!((a - b).abs() > 0.1);
    }

    proptest! {
        #[test]
        fn self_bleu_is_one(words in proptest::collection::vec("[a-z]{1,6}", 1..30)) {
            let s = words.join(" ");
            prop_assert_eq!(bleu4(&s, &s).unwrap(), 1.0);
        }
    }
}
