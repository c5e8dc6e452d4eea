//! Per-keypoint judging and reward aggregation.

pub mod grammar;
mod mock;
mod oracle;
mod remote;
pub mod scene;

pub use mock::mock_t2i;
pub use oracle::{judge_keypoint, ORACLE_JUDGE_ID};
pub use remote::{parse_judgment, render_judge_prompt, RemoteJudge, JUDGE_TEMPLATE};
pub use scene::{Action, Attributes, Entity, Relation, RelationKind, SceneGraph, SceneText, FRAME};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{UserPrompt, Verdict};
use crate::taxonomy::{self, KeyPoint};

/// A verdict passes when its score reaches this value.
pub const PASS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvaluatorError {
    #[error("no oracle rule for keypoint `{0}`")]
    UnsupportedKeyPoint(String),
    #[error("unknown keypoint `{0}`")]
    UnknownKeyPoint(String),
    #[error("no verdicts to aggregate")]
    EmptyVerdicts,
    #[error("verdicts belong to different records (`{0}` and `{1}`)")]
    MixedRecords(String, String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed judgment: {0}")]
    MalformedJudgment(String),
    #[error("judge cannot read image: {0}")]
    UnsupportedImage(String),
}

impl EvaluatorError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EvaluatorError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub record_id: String,
    pub verdicts: Vec<Verdict>,
    pub reward: f64,
}

/// Mean score over the verdicts of one record.
pub fn aggregate(verdicts: Vec<Verdict>) -> Result<RewardReport, EvaluatorError> {
    let first = verdicts.first().ok_or(EvaluatorError::EmptyVerdicts)?;
    let record_id = first.record_id.clone();
    if let Some(other) = verdicts.iter().find(|v| v.record_id != record_id) {
        return Err(EvaluatorError::MixedRecords(record_id, other.record_id.clone()));
    }
    let reward = verdicts.iter().map(|v| v.score).sum::<f64>() / verdicts.len() as f64;
    Ok(RewardReport {
        record_id,
        verdicts,
        reward: reward.clamp(0.0, 1.0),
    })
}

/// What a judge looks at: a scene surrogate, or a reference to an image held
/// elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Image {
    Scene(SceneGraph),
    Reference(String),
}

impl Image {
    /// Opaque reference passed to remote judges; scenes serialize inline.
    pub fn reference(&self) -> String {
        match self {
            Image::Scene(s) => serde_json::to_string(s).expect("scene serializes"),
            Image::Reference(r) => r.clone(),
        }
    }
}

pub fn resolve_keypoints(ids: &[String]) -> Result<Vec<&'static KeyPoint>, EvaluatorError> {
    ids.iter()
        .map(|id| taxonomy::lookup(id).map_err(|_| EvaluatorError::UnknownKeyPoint(id.clone())))
        .collect()
}

/// Judges an image against a prompt's annotated keypoints.
pub trait Judge: Send + Sync {
    fn id(&self) -> &str;
    fn judge(&self, image: &Image, prompt: &UserPrompt, keypoints: &[&KeyPoint]) -> Result<Vec<Verdict>, EvaluatorError>;

    /// True when judging needs no network.
    fn is_local(&self) -> bool {
        false
    }

    fn reward(&self, image: &Image, prompt: &UserPrompt) -> Result<RewardReport, EvaluatorError> {
        let kps = resolve_keypoints(&prompt.keypoint_ids)?;
        aggregate(self.judge(image, prompt, &kps)?)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleJudge;

impl Judge for OracleJudge {
    fn id(&self) -> &str {
        ORACLE_JUDGE_ID
    }

    fn is_local(&self) -> bool {
        true
    }

    fn judge(&self, image: &Image, prompt: &UserPrompt, keypoints: &[&KeyPoint]) -> Result<Vec<Verdict>, EvaluatorError> {
        let Image::Scene(scene) = image else {
            return Err(EvaluatorError::UnsupportedImage("oracle needs a scene graph".into()));
        };
        let facts = grammar::parse(&prompt.text);
        keypoints
            .iter()
            .map(|kp| oracle::judge_with_facts(scene, &prompt.id, &facts, kp))
            .collect()
    }
}
