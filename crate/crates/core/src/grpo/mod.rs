//! Group-relative policy optimisation: advantage normalisation, the clipped
//! KL-regularised surrogate with its analytic gradient, and a trainer for a
//! softmax policy over a finite action library.

mod policy;
mod train;

pub use policy::ToyPolicy;
pub use train::{train, BanditEnv, RewardEnv, StepRecord, TrainResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::UserPrompt;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GrpoError {
    #[error("group of {0} is too small (need at least 2)")]
    GroupTooSmall(usize),
    #[error("distributions differ in support: {0}")]
    SupportMismatch(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    /// Rollouts per prompt (N).
    pub group_size: usize,
    /// KL penalty coefficient (beta).
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    /// Prompts per update.
    pub batch_size: usize,
    /// Floor on the group standard deviation.
    pub advantage_epsilon: f64,
    pub seed: u64,
    /// Passes over the prompt set.
    pub epochs: u32,
    /// Update steps for single-prompt environments such as the bandit.
    pub steps: u32,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            kl_coef: 0.001,
            learning_rate: 1e-6,
            clip_epsilon: 0.2,
            batch_size: 64,
            advantage_epsilon: 1e-8,
            seed: 0,
            epochs: 1,
            steps: 500,
        }
    }
}

impl GrpoConfig {
    /// Defaults for the in-process softmax policy, which needs a far larger
    /// step than an LLM fine-tune.
    pub fn toy() -> Self {
        Self {
            learning_rate: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be >= 2");
        }
        if !(self.kl_coef >= 0.0) {
            return bad("kl_coef must be >= 0");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.advantage_epsilon > 0.0) {
            return bad("advantage_epsilon must be > 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

/// One prompt's rollouts: N candidates with their rewards and the sampling
/// log-probabilities under the policy that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt: UserPrompt,
    pub candidates: Vec<String>,
    /// Action index per candidate when the policy has a finite library.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub old_logprobs: Vec<f64>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let n = self.candidates.len();
        if n < 2 {
            return Err(GrpoError::GroupTooSmall(n));
        }
        for len in [self.rewards.len(), self.old_logprobs.len()] {
            if len != n {
                return Err(GrpoError::ShapeMismatch { expected: n, got: len });
            }
        }
        if !self.actions.is_empty() && self.actions.len() != n {
            return Err(GrpoError::ShapeMismatch {
                expected: n,
                got: self.actions.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet(pub Vec<f64>);

impl AdvantageSet {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|a| *a == 0.0)
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Group-normalised advantages: `(r - mean) / max(std, eps)`, all zero when
/// the group standard deviation is below `eps`.
pub fn advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<AdvantageSet, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let (mean, std) = mean_std(rewards);
    if std < cfg.advantage_epsilon {
        return Ok(AdvantageSet(vec![0.0; rewards.len()]));
    }
    let denom = std.max(cfg.advantage_epsilon);
    Ok(AdvantageSet(rewards.iter().map(|r| (r - mean) / denom).collect()))
}

/// KL(p || q) in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, GrpoError> {
    if p.len() != q.len() {
        return Err(GrpoError::SupportMismatch(format!("{} vs {} outcomes", p.len(), q.len())));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if !(qi > 0.0) {
                return Err(GrpoError::SupportMismatch(format!("q[{i}] = {qi} where p[{i}] = {pi}")));
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossOutput {
    pub loss: f64,
    /// d loss / d logits.
    pub gradient: Vec<f64>,
    pub kl: f64,
    pub advantages: AdvantageSet,
}

/// Clipped surrogate plus KL penalty for one group, with its exact gradient
/// with respect to the policy logits.
pub fn surrogate_loss(
    group: &RolloutGroup,
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
) -> Result<LossOutput, GrpoError> {
    group.validate()?;
    let k = policy.len();
    if reference.len() != k {
        return Err(GrpoError::SupportMismatch(format!("policy has {k} actions, reference {}", reference.len())));
    }
    if group.actions.len() != group.len() {
        return Err(GrpoError::ShapeMismatch {
            expected: group.len(),
            got: group.actions.len(),
        });
    }
    if let Some(&bad) = group.actions.iter().find(|&&a| a >= k) {
        return Err(GrpoError::SupportMismatch(format!("action {bad} outside library of {k}")));
    }
    let adv = advantages(&group.rewards, cfg)?;
    let probs = policy.probs();
    let n = group.len() as f64;
    let inv_t = 1.0 / policy.temperature;
    let mut loss = 0.0;
    let mut grad = vec![0.0; k];

    for ((&a, &old), &ai) in group.actions.iter().zip(&group.old_logprobs).zip(adv.values()) {
        let ratio = (probs[a].ln() - old).exp();
        let unclipped = ratio * ai;
        let clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * ai;
        loss -= unclipped.min(clipped) / n;
        if unclipped <= clipped {
            // d ratio / d z_j = ratio * (1[j = a] - p_j)
            for (j, g) in grad.iter_mut().enumerate() {
                let indicator = if j == a { 1.0 } else { 0.0 };
                *g -= ai * ratio * (indicator - probs[j]) * inv_t / n;
            }
        }
    }

    let ref_probs = reference.probs();
    let kl = kl_divergence(&probs, &ref_probs)?;
    if cfg.kl_coef > 0.0 {
        loss += cfg.kl_coef * kl;
        for (j, g) in grad.iter_mut().enumerate() {
            if probs[j] > 0.0 {
                *g += cfg.kl_coef * probs[j] * (probs[j].ln() - ref_probs[j].ln() - kl) * inv_t;
            }
        }
    }
    Ok(LossOutput {
        loss,
        gradient: grad,
        kl,
        advantages: adv,
    })
}

/// Plain gradient step on the logits.
pub fn update(policy: &ToyPolicy, gradient: &[f64], learning_rate: f64) -> Result<ToyPolicy, GrpoError> {
    if gradient.len() != policy.len() {
        return Err(GrpoError::ShapeMismatch {
            expected: policy.len(),
            got: gradient.len(),
        });
    }
    let mut next = policy.clone();
    for (l, g) in next.logits.iter_mut().zip(gradient) {
        *l -= learning_rate * g;
    }
    Ok(next)
}
