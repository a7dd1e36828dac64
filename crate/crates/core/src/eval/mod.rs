//! Identification metrics, baselines, BLEU-4 and chi-squared agreement.

mod baselines;
mod bleu;
mod chi2;
mod metrics;

pub use baselines::{
    llm_judge, parse_judge_output, render_judge_prompt, ten_line_rule, JUDGE_MAX_TOKENS,
};
pub use bleu::{bleu4, corpus_bleu4, tokenize};
pub use chi2::{chi_squared_2x2, chi_squared_sf, regularized_gamma_q, ChiSquared};
pub use metrics::{confusion, metrics, ConfusionCounts, MetricsReport};
