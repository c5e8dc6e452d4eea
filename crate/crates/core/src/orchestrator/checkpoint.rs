//! Run checkpoints: an append-only journal of completed batches plus the
//! current toy policy.
//!
//! Every journal line carries the policy after its batch, so the journal
//! alone is enough to resume. `policy.json` is rewritten atomically after
//! each append for tools that only want the latest weights. A torn final
//! line (crash mid-append) is ignored.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::grpo::ToyPolicy;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const POLICY_FILE: &str = "policy.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: u32,
    pub batch: usize,
    /// Every candidate reward of the batch's completed groups, in order.
    pub rewards: Vec<f64>,
    pub groups: usize,
    pub aborted: usize,
    pub requeued: usize,
    pub updated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<ToyPolicy>,
}

impl BatchRecord {
    pub fn id(&self) -> (u32, usize) {
        (self.epoch, self.batch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub epoch: u32,
    pub batch: usize,
    pub policy: ToyPolicy,
}

pub struct Checkpoint {
    dir: PathBuf,
}

impl Checkpoint {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, OrchestratorError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Completed batches in journal order.
    pub fn load(&self) -> Result<Vec<BatchRecord>, OrchestratorError> {
        let path = self.dir.join(JOURNAL_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let lines: Vec<String> = BufReader::new(File::open(&path)?).lines().collect::<Result<_, _>>()?;
        let mut out = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<BatchRecord>(line) {
                Ok(r) => out.push(r),
                Err(_) if i + 1 == lines.len() => log::warn!("ignoring torn journal tail in {}", path.display()),
                Err(e) => {
                    return Err(OrchestratorError::Checkpoint(format!("{}:{}: {e}", path.display(), i + 1)));
                }
            }
        }
        Ok(out)
    }

    pub fn append(&self, record: &BatchRecord) -> Result<(), OrchestratorError> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(JOURNAL_FILE))?;
        let mut line = serde_json::to_string(record).map_err(|e| OrchestratorError::Checkpoint(e.to_string()))?;
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        if let Some(policy) = &record.policy {
            self.write_policy(&PolicySnapshot {
                epoch: record.epoch,
                batch: record.batch,
                policy: policy.clone(),
            })?;
        }
        Ok(())
    }

    fn write_policy(&self, snap: &PolicySnapshot) -> Result<(), OrchestratorError> {
        let tmp = self.dir.join(format!("{POLICY_FILE}.tmp"));
        let body = serde_json::to_vec_pretty(snap).map_err(|e| OrchestratorError::Checkpoint(e.to_string()))?;
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(POLICY_FILE))?;
        Ok(())
    }

    pub fn read_policy(&self) -> Result<Option<PolicySnapshot>, OrchestratorError> {
        let path = self.dir.join(POLICY_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let body = fs::read(&path)?;
        serde_json::from_slice(&body)
            .map(Some)
            .map_err(|e| OrchestratorError::Checkpoint(format!("{}: {e}", path.display())))
    }
}
