//! KTO objective, for auditing alignment data and externally computed
//! log-probabilities. Nothing here updates parameters.
//!
//! ```text
//! r(x,y)  = log π_θ(y|x) - log π_ref(y|x)
//! v(x,y)  = λ_D σ(β (r - z0))   for desired y
//!           λ_U σ(β (z0 - r))   for undesired y
//! L       = E[λ_y - v(x,y)]
//! ```
//!
//! `z0` is always an explicit argument; [`kl_reference_point`] is one way to
//! estimate it.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KtoConfig {
    pub beta: f64,
    pub lambda_desired: f64,
    pub lambda_undesired: f64,
    pub lambda_y: f64,
}

impl Default for KtoConfig {
    fn default() -> Self {
        KtoConfig {
            beta: 0.1,
            lambda_desired: 1.7,
            lambda_undesired: 1.0,
            lambda_y: 1.0,
        }
    }
}

impl KtoConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("lambda_desired", self.lambda_desired),
            ("lambda_undesired", self.lambda_undesired),
            ("lambda_y", self.lambda_y),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "kto.{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn lambda(&self, label: Label) -> f64 {
        match label {
            Label::Desired => self.lambda_desired,
            Label::Undesired => self.lambda_undesired,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KtoExample {
    pub policy_logprob: f64,
    pub ref_logprob: f64,
    pub label: Label,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn reward(ex: &KtoExample) -> f64 {
    ex.policy_logprob - ex.ref_logprob
}

/// Clamped mean of rewards on mismatched prompt/completion pairs.
pub fn kl_reference_point(mismatched_rewards: &[f64]) -> Result<f64> {
    if mismatched_rewards.is_empty() {
        return Err(Error::precondition("z0 estimate needs at least one reward"));
    }
    let mean = mismatched_rewards.iter().sum::<f64>() / mismatched_rewards.len() as f64;
    Ok(mean.max(0.0))
}

pub fn kto_value(r: f64, z0: f64, label: Label, cfg: &KtoConfig) -> f64 {
    let arg = match label {
        Label::Desired => cfg.beta * (r - z0),
        Label::Undesired => cfg.beta * (z0 - r),
    };
    cfg.lambda(label) * sigmoid(arg)
}

pub fn kto_loss(batch: &[KtoExample], z0: f64, cfg: &KtoConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::precondition("KTO loss needs a non-empty batch"));
    }
    let total: f64 = batch
        .iter()
        .map(|ex| cfg.lambda_y - kto_value(reward(ex), z0, ex.label, cfg))
        .sum();
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaCheck {
    pub ratio: f64,
    pub ok: bool,
    /// λ_D values that would satisfy the constraint for the given λ_U and
    /// counts.
    pub lambda_desired_range: (f64, f64),
}

pub const RATIO_MIN: f64 = 1.0;
pub const RATIO_MAX: f64 = 4.0 / 3.0;

/// Checks `λ_D n_D / (λ_U n_U) ∈ [1, 4/3]`.
pub fn check_lambda_constraint(
    cfg: &KtoConfig,
    n_desired: usize,
    n_undesired: usize,
) -> Result<LambdaCheck> {
    if n_desired == 0 || n_undesired == 0 {
        return Err(Error::precondition("both class counts must be positive"));
    }
    let (nd, nu) = (n_desired as f64, n_undesired as f64);
    let ratio = cfg.lambda_desired * nd / (cfg.lambda_undesired * nu);
    let per_unit = cfg.lambda_undesired * nu / nd;
    Ok(LambdaCheck {
        ratio,
        ok: (RATIO_MIN..=RATIO_MAX).contains(&ratio),
        lambda_desired_range: (RATIO_MIN * per_unit, RATIO_MAX * per_unit),
    })
}
