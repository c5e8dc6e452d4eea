//! Online alignment loop: prompts in, reprompt groups scored through the
//! image and judge backends, policy updates (toy mode) or preference records
//! (endpoint mode) out.

pub mod backends;
pub mod checkpoint;
pub mod client;
pub mod edits;

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backends::{
    BackendSet, Candidate, ChatPolicy, EditCache, FixedEdit, FlakyT2i, HttpImage, MockT2i, PolicyBackend, PolicySource,
    T2iBackend, ToyRewriter,
};
pub use checkpoint::{BatchRecord, Checkpoint};
pub use client::{ChatClient, ClientError, EndpointConfig};
pub use edits::RewriteEdit;

use crate::corpus::UserPrompt;
use crate::evaluator::{EvaluatorError, Image, Judge, OracleJudge, RewardReport};
use crate::grpo::{self, GrpoConfig, GrpoError, RewardEnv, RolloutGroup, ToyPolicy};
use crate::util::stable_hash;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("prompt set is empty")]
    EmptyPromptSet,
    #[error(transparent)]
    Transport(#[from] ClientError),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("policy returned {got} candidates, expected {expected}")]
    PartialGroup { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl OrchestratorError {
    /// Failures that abort one group and let the prompt be requeued.
    pub fn is_transient(&self) -> bool {
        match self {
            OrchestratorError::Transport(_) | OrchestratorError::PartialGroup { .. } => true,
            OrchestratorError::Evaluator(e) => e.is_retryable(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Bound on prompts rolled out at once.
    pub workers: usize,
    /// Times a prompt whose group aborted is retried within its batch.
    pub requeue_limit: u32,
    pub checkpoint_dir: Option<PathBuf>,
    /// Endpoint mode: JSONL file receiving preference records.
    pub preference_output: Option<PathBuf>,
    /// Stop after processing this many new batches.
    pub max_batches: Option<usize>,
    /// Toy mode: always pick the most probable edit.
    pub greedy: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            requeue_limit: 1,
            checkpoint_dir: None,
            preference_output: None,
            max_batches: None,
            greedy: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.workers == 0 {
            return Err(OrchestratorError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// A complete rollout: one image and one reward report per candidate.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub group: RolloutGroup,
    pub images: Vec<Image>,
    pub reports: Vec<RewardReport>,
}

/// Samples `n` reprompts for `prompt`, renders and judges each. Either every
/// candidate is scored or the whole group fails.
pub fn rollout(
    prompt: &UserPrompt,
    policy: &dyn PolicyBackend,
    t2i: &dyn T2iBackend,
    judge: &dyn Judge,
    n: usize,
    seed: u64,
) -> Result<Rollout, OrchestratorError> {
    let candidates = policy.generate(prompt, n, stable_hash(seed, &["policy"]))?;
    if candidates.len() != n {
        return Err(OrchestratorError::PartialGroup {
            expected: n,
            got: candidates.len(),
        });
    }
    let scored: Vec<(Image, RewardReport)> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let image = t2i.render(&c.text, stable_hash(seed, &["t2i", &i.to_string()]))?;
            let report = judge.reward(&image, prompt)?;
            Ok((image, report))
        })
        .collect::<Result<_, OrchestratorError>>()?;
    let (images, reports): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    let group = RolloutGroup {
        prompt: prompt.clone(),
        rewards: reports.iter().map(|r| r.reward).collect(),
        old_logprobs: candidates.iter().map(|c| c.logprob.unwrap_or(0.0)).collect(),
        actions: candidates.iter().filter_map(|c| c.action).collect(),
        candidates: candidates.into_iter().map(|c| c.text).collect(),
    };
    group.validate()?;
    Ok(Rollout { group, images, reports })
}

/// What endpoint mode hands to an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub prompt_id: String,
    pub candidates: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub mean_reward: f64,
    pub reward_std: f64,
    pub groups: usize,
    pub aborted: usize,
    pub requeued: usize,
    pub updates: usize,
}

impl EpochMetrics {
    fn from_records<'a>(epoch: u32, records: impl IntoIterator<Item = &'a BatchRecord>) -> Self {
        let mut rewards = Vec::new();
        let mut m = EpochMetrics {
            epoch,
            mean_reward: 0.0,
            reward_std: 0.0,
            groups: 0,
            aborted: 0,
            requeued: 0,
            updates: 0,
        };
        for r in records {
            rewards.extend_from_slice(&r.rewards);
            m.groups += r.groups;
            m.aborted += r.aborted;
            m.requeued += r.requeued;
            m.updates += usize::from(r.updated);
        }
        if !rewards.is_empty() {
            (m.mean_reward, m.reward_std) = grpo::mean_std(&rewards);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub epochs: Vec<EpochMetrics>,
    /// False when the run stopped early at `max_batches`.
    pub completed: bool,
    pub policy: Option<ToyPolicy>,
    #[serde(skip)]
    pub preferences: Vec<PreferenceRecord>,
}

pub struct Orchestrator {
    backends: BackendSet,
    grpo: GrpoConfig,
    run: RunConfig,
    policy: Option<ToyPolicy>,
    reference: Option<ToyPolicy>,
    cache: Arc<EditCache>,
    pool: rayon::ThreadPool,
    checkpoint: Option<Checkpoint>,
    journal: HashMap<(u32, usize), BatchRecord>,
    processed: usize,
}

impl Orchestrator {
    /// Starts a fresh run. A checkpoint directory, if configured, must not
    /// already hold a journal.
    pub fn new(backends: BackendSet, grpo: GrpoConfig, run: RunConfig) -> Result<Self, OrchestratorError> {
        let o = Self::open(backends, grpo, run)?;
        if !o.journal.is_empty() {
            return Err(OrchestratorError::Checkpoint(
                "checkpoint directory already has a journal; resume instead".into(),
            ));
        }
        Ok(o)
    }

    /// Continues the run journaled in `run.checkpoint_dir`.
    pub fn resume(backends: BackendSet, grpo: GrpoConfig, run: RunConfig) -> Result<Self, OrchestratorError> {
        if run.checkpoint_dir.is_none() {
            return Err(OrchestratorError::Config("resume needs a checkpoint directory".into()));
        }
        Self::open(backends, grpo, run)
    }

    fn open(backends: BackendSet, grpo: GrpoConfig, run: RunConfig) -> Result<Self, OrchestratorError> {
        grpo.validate()?;
        run.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(run.workers)
            .build()
            .map_err(|e| OrchestratorError::Config(e.to_string()))?;
        let (mut policy, reference) = match &backends.policy {
            PolicySource::Toy { initial, .. } => (Some(initial.clone()), Some(initial.clone())),
            PolicySource::Remote(_) => (None, None),
        };
        let checkpoint = run.checkpoint_dir.as_ref().map(Checkpoint::create).transpose()?;
        let mut journal = HashMap::new();
        if let Some(ck) = &checkpoint {
            for record in ck.load()? {
                if let (Some(p), Some(saved)) = (policy.as_mut(), &record.policy) {
                    *p = saved.clone();
                }
                journal.insert(record.id(), record);
            }
        }
        Ok(Self {
            backends,
            grpo,
            run,
            policy,
            reference,
            cache: Arc::default(),
            pool,
            checkpoint,
            journal,
            processed: 0,
        })
    }

    pub fn policy(&self) -> Option<&ToyPolicy> {
        self.policy.as_ref()
    }

    /// Runs `grpo.epochs` epochs, skipping batches already journaled.
    pub fn run(&mut self, prompts: &[UserPrompt]) -> Result<RunReport, OrchestratorError> {
        let mut report = RunReport {
            epochs: Vec::new(),
            completed: true,
            policy: None,
            preferences: Vec::new(),
        };
        for epoch in 0..self.grpo.epochs {
            match self.run_epoch(prompts, epoch, &mut report.preferences)? {
                Some(m) => report.epochs.push(m),
                None => {
                    report.completed = false;
                    break;
                }
            }
        }
        report.policy = self.policy.clone();
        Ok(report)
    }

    /// One pass over `prompts` in batches. Returns `None` if interrupted by
    /// `max_batches` before the epoch finished.
    pub fn run_epoch(
        &mut self,
        prompts: &[UserPrompt],
        epoch: u32,
        preferences: &mut Vec<PreferenceRecord>,
    ) -> Result<Option<EpochMetrics>, OrchestratorError> {
        if prompts.is_empty() {
            return Err(OrchestratorError::EmptyPromptSet);
        }
        let mut records = Vec::new();
        for (b, batch) in prompts.chunks(self.grpo.batch_size).enumerate() {
            if let Some(done) = self.journal.get(&(epoch, b)) {
                records.push(done.clone());
                continue;
            }
            if self.run.max_batches.is_some_and(|max| self.processed >= max) {
                return Ok(None);
            }
            let record = self.process_batch(epoch, b, batch, preferences)?;
            if let Some(ck) = &self.checkpoint {
                ck.append(&record)?;
            }
            self.processed += 1;
            self.journal.insert(record.id(), record.clone());
            records.push(record);
        }
        let metrics = EpochMetrics::from_records(epoch, &records);
        log::info!(
            "epoch {epoch}: mean reward {:.4} over {} groups ({} aborted)",
            metrics.mean_reward,
            metrics.groups,
            metrics.aborted
        );
        Ok(Some(metrics))
    }

    fn policy_backend(&self) -> Arc<dyn PolicyBackend> {
        match &self.backends.policy {
            PolicySource::Toy { greedy, .. } => Arc::new(ToyRewriter::new(
                self.policy.clone().expect("toy mode has a policy"),
                *greedy || self.run.greedy,
                self.cache.clone(),
            )),
            PolicySource::Remote(p) => p.clone(),
        }
    }

    fn process_batch(
        &mut self,
        epoch: u32,
        batch_index: usize,
        batch: &[UserPrompt],
        preferences: &mut Vec<PreferenceRecord>,
    ) -> Result<BatchRecord, OrchestratorError> {
        let policy = self.policy_backend();
        let (t2i, judge) = (self.backends.t2i.clone(), self.backends.judge.clone());
        let n = self.grpo.group_size;
        let seed = self.grpo.seed;
        let attempt = |prompt: &UserPrompt, k: u32| {
            let s = stable_hash(seed, &["rollout", &epoch.to_string(), &prompt.id, &k.to_string()]);
            rollout(prompt, policy.as_ref(), t2i.as_ref(), judge.as_ref(), n, s)
        };

        let mut results: Vec<Result<Rollout, OrchestratorError>> =
            self.pool.install(|| batch.par_iter().map(|p| attempt(p, 0)).collect());
        let mut requeued = 0;
        for k in 1..=self.run.requeue_limit {
            let failed: Vec<usize> = results
                .iter()
                .enumerate()
                .filter(|(_, r)| r.as_ref().is_err_and(OrchestratorError::is_transient))
                .map(|(i, _)| i)
                .collect();
            if failed.is_empty() {
                break;
            }
            if k == 1 {
                requeued = failed.len();
            }
            let retried: Vec<(usize, Result<Rollout, OrchestratorError>)> = self
                .pool
                .install(|| failed.par_iter().map(|&i| (i, attempt(&batch[i], k))).collect());
            for (i, r) in retried {
                results[i] = r;
            }
        }

        let mut groups = Vec::new();
        let mut aborted = 0;
        for (prompt, r) in batch.iter().zip(results) {
            match r {
                Ok(ro) => groups.push(ro.group),
                Err(e) if e.is_transient() => {
                    log::warn!("group for {} aborted: {e}", prompt.id);
                    aborted += 1;
                }
                Err(e) => return Err(e),
            }
        }

        let mut updated = false;
        if let (Some(current), Some(reference)) = (&self.policy, &self.reference) {
            if !groups.is_empty() {
                let mut gradient = vec![0.0; current.len()];
                for g in &groups {
                    let out = grpo::surrogate_loss(g, current, reference, &self.grpo)?;
                    for (acc, d) in gradient.iter_mut().zip(&out.gradient) {
                        *acc += d / groups.len() as f64;
                    }
                }
                self.policy = Some(grpo::update(current, &gradient, self.grpo.learning_rate)?);
                updated = true;
            }
        } else {
            let records = groups
                .iter()
                .map(|g| {
                    Ok(PreferenceRecord {
                        prompt_id: g.prompt.id.clone(),
                        candidates: g.candidates.clone(),
                        rewards: g.rewards.clone(),
                        advantages: grpo::advantages(&g.rewards, &self.grpo)?.0,
                    })
                })
                .collect::<Result<Vec<_>, GrpoError>>()?;
            if let Some(path) = &self.run.preference_output {
                let mut f = OpenOptions::new().create(true).append(true).open(path)?;
                for r in &records {
                    let line = serde_json::to_string(r).map_err(|e| OrchestratorError::Config(e.to_string()))?;
                    writeln!(f, "{line}")?;
                }
            }
            preferences.extend(records);
        }

        Ok(BatchRecord {
            epoch,
            batch: batch_index,
            rewards: groups.iter().flat_map(|g| g.rewards.iter().copied()).collect(),
            groups: groups.len(),
            aborted,
            requeued,
            updated,
            policy: self.policy.clone(),
        })
    }
}

/// The hermetic pipeline as a [`RewardEnv`]: actions are rewrite edits and
/// rewards come from the oracle judging mock renders.
pub struct MockPipelineEnv {
    prompts: Vec<UserPrompt>,
    texts: Vec<Vec<String>>,
}

impl MockPipelineEnv {
    pub fn new(prompts: Vec<UserPrompt>) -> Self {
        let texts = prompts
            .par_iter()
            .map(|p| RewriteEdit::ALL.iter().map(|e| e.apply(&p.text)).collect())
            .collect();
        Self { prompts, texts }
    }
}

impl RewardEnv for MockPipelineEnv {
    fn actions(&self) -> Vec<String> {
        edits::action_library()
    }

    fn prompt_count(&self) -> usize {
        self.prompts.len()
    }

    fn reward(&self, prompt: usize, action: usize, seed: u64) -> f64 {
        let image = Image::Scene(crate::evaluator::mock_t2i(&self.texts[prompt][action], seed));
        OracleJudge
            .reward(&image, &self.prompts[prompt])
            .map(|r| r.reward)
            .unwrap_or(0.0)
    }

    fn prompt(&self, index: usize) -> UserPrompt {
        self.prompts[index].clone()
    }
}
