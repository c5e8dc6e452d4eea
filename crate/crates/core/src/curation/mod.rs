//! Supervised-data curation: simulated user prompts, teacher candidates,
//! rule filtering, and the human selection queue.

pub mod filter;
pub mod generate;
pub mod simulate;
pub mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{auto_filter, FilterReason, FilterRules, FilterVerdict};
pub use generate::{
    generate_candidates, parse_teacher_output, MockTeacher, Teacher, Templates, COT_TEMPLATE, REPROMPT_TEMPLATE,
};
pub use simulate::{simulate_prompts, SimulateConfig};
pub use store::{enqueue_selection, finalize, SelectionTask, TaskStatus, TaskStore, TaskView};

use crate::corpus::{CorpusError, FieldError, ProvenanceTag, Record, SchemaKind, UserPrompt};
use crate::orchestrator::{ClientError, OrchestratorError};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("source corpus is empty")]
    EmptyCorpus,
    #[error("need at least 2 candidates per prompt, got {0}")]
    TooFewCandidates(usize),
    #[error(transparent)]
    Transport(#[from] ClientError),
    #[error("malformed teacher output: {0}")]
    MalformedTeacherOutput(String),
    #[error("set {id} is at stage {got:?}, expected {expected:?}")]
    WrongStage { id: String, expected: Stage, got: Stage },
    #[error("{open} open and {flagged} flagged task(s) remain")]
    IncompleteSelection { open: usize, flagged: usize },
    #[error("task store corrupted: {0}")]
    StoreCorruption(String),
    #[error("no task {0}")]
    TaskNotFound(String),
    #[error("task {0} is already decided")]
    AlreadyDecided(String),
    #[error("lease on task {0} has expired")]
    LeaseExpired(String),
    #[error("choice {index} out of range for {len} candidates")]
    InvalidChoice { index: usize, len: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<OrchestratorError> for CurationError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Transport(c) => CurationError::Transport(c),
            OrchestratorError::Io(io) => CurationError::Io(io),
            other => CurationError::Transport(ClientError::Malformed(other.to_string())),
        }
    }
}

/// Stages in pipeline order; a set only ever moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generated,
    Filtered,
    AwaitingSelection,
    Finalized,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Generated => "generated",
            Stage::Filtered => "filtered",
            Stage::AwaitingSelection => "enqueued",
            Stage::Finalized => "selected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user_prompt: UserPrompt,
    pub cot: String,
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_refs: Vec<String>,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<ProvenanceTag>,
}

impl CandidateSet {
    pub fn id(&self) -> &str {
        &self.user_prompt.id
    }

    /// Moves to `next`, stamping provenance. Backward moves are refused.
    pub fn advance(&mut self, next: Stage, at: i64) -> Result<(), CurationError> {
        if next <= self.stage {
            return Err(CurationError::WrongStage {
                id: self.id().to_string(),
                expected: next,
                got: self.stage,
            });
        }
        self.stage = next;
        self.provenance.push(ProvenanceTag::new(next.tag(), at));
        Ok(())
    }

    pub(crate) fn require(&self, stage: Stage) -> Result<(), CurationError> {
        if self.stage != stage {
            return Err(CurationError::WrongStage {
                id: self.id().to_string(),
                expected: stage,
                got: self.stage,
            });
        }
        Ok(())
    }
}

impl Record for CandidateSet {
    const KIND: SchemaKind = SchemaKind::CandidateSet;

    fn validate(&self) -> Result<(), FieldError> {
        self.user_prompt.validate().map_err(|e| FieldError::new(format!("user_prompt.{}", e.field), e.reason))?;
        // filtering may leave fewer than two; generation may not
        if self.stage == Stage::Generated && self.candidates.len() < 2 {
            return Err(FieldError::new("candidates", "need at least 2 when generated"));
        }
        if !self.image_refs.is_empty() && self.image_refs.len() != self.candidates.len() {
            return Err(FieldError::new("image_refs", "must be empty or one per candidate"));
        }
        Ok(())
    }
}
