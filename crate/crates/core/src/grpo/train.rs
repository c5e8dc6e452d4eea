use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{surrogate_loss, update, GrpoConfig, GrpoError, RolloutGroup, ToyPolicy};
use crate::corpus::{Language, UserPrompt};
use crate::util::{derived_rng, stable_hash};

/// A reward source over a fixed prompt set and action library. Rewards must
/// be a pure function of the arguments.
pub trait RewardEnv: Sync {
    fn actions(&self) -> Vec<String>;
    fn prompt_count(&self) -> usize;
    fn reward(&self, prompt: usize, action: usize, seed: u64) -> f64;

    fn prompt(&self, index: usize) -> UserPrompt {
        UserPrompt::new(format!("p{index}"), format!("prompt {index}"), Language::En)
    }
}

/// One prompt, `arms` actions; `best` pays 1 and every other arm pays 0.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub arms: usize,
    pub best: usize,
}

impl BanditEnv {
    pub fn new(arms: usize, best: usize) -> Self {
        assert!(best < arms);
        Self { arms, best }
    }
}

impl RewardEnv for BanditEnv {
    fn actions(&self) -> Vec<String> {
        (0..self.arms).map(|i| format!("arm-{i}")).collect()
    }

    fn prompt_count(&self) -> usize {
        1
    }

    fn reward(&self, _prompt: usize, action: usize, _seed: u64) -> f64 {
        if action == self.best {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub mean_reward: f64,
    pub kl: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub policy: ToyPolicy,
    pub history: Vec<StepRecord>,
}

/// Samples one group for `prompt` under `policy`.
pub(crate) fn sample_group(
    env: &dyn RewardEnv,
    policy: &ToyPolicy,
    prompt: usize,
    group_size: usize,
    seed: u64,
) -> RolloutGroup {
    let mut rng = derived_rng(seed, &["group"]);
    let log_probs = policy.log_probs();
    let actions: Vec<usize> = (0..group_size).map(|_| policy.sample(&mut rng)).collect();
    let rewards = actions
        .iter()
        .enumerate()
        .map(|(i, &a)| env.reward(prompt, a, stable_hash(seed, &["reward", &i.to_string()])))
        .collect();
    RolloutGroup {
        prompt: env.prompt(prompt),
        candidates: actions.iter().map(|&a| policy.actions[a].clone()).collect(),
        old_logprobs: actions.iter().map(|&a| log_probs[a]).collect(),
        actions,
        rewards,
    }
}

/// Runs `cfg.steps` updates. Each step draws `batch_size` prompts (cycling
/// through the environment's prompts), samples `group_size` actions for
/// each, and applies one gradient step on the mean group loss. The initial
/// policy is the KL reference.
pub fn train(env: &dyn RewardEnv, initial: ToyPolicy, cfg: &GrpoConfig) -> Result<TrainResult, GrpoError> {
    cfg.validate()?;
    let reference = initial.clone();
    let mut policy = initial;
    let mut history = Vec::with_capacity(cfg.steps as usize);
    let prompts = env.prompt_count().max(1);

    for step in 0..cfg.steps {
        let groups: Vec<RolloutGroup> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|slot| {
                let prompt = (step as usize * cfg.batch_size + slot) % prompts;
                let seed = stable_hash(cfg.seed, &["train", &step.to_string(), &slot.to_string()]);
                sample_group(env, &policy, prompt, cfg.group_size, seed)
            })
            .collect();

        let mut gradient = vec![0.0; policy.len()];
        let mut loss = 0.0;
        let mut kl = 0.0;
        let mut reward_sum = 0.0;
        let mut reward_n = 0usize;
        for group in &groups {
            let out = surrogate_loss(group, &policy, &reference, cfg)?;
            for (g, d) in gradient.iter_mut().zip(&out.gradient) {
                *g += d / groups.len() as f64;
            }
            loss += out.loss / groups.len() as f64;
            kl = out.kl;
            reward_sum += group.rewards.iter().sum::<f64>();
            reward_n += group.rewards.len();
        }
        history.push(StepRecord {
            step,
            mean_reward: reward_sum / reward_n.max(1) as f64,
            kl,
            loss,
        });
        policy = update(&policy, &gradient, cfg.learning_rate)?;
    }
    Ok(TrainResult { policy, history })
}
