//! Selection queue: task files, a hash-chained decision journal, and
//! in-memory leases.
//!
//! Layout under the store directory:
//!
//! ```text
//! tasks/<task_id>.json   one file per task, written once at enqueue
//! images/<ref>           rendered candidates served to annotators
//! journal.jsonl          one decision per line, each line hashing the previous
//! ```
//!
//! Task state is the task files plus a replay of the journal, so deleting
//! nothing but the process loses nothing but leases.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CandidateSet, CurationError, Stage};
use crate::corpus::{ProvenanceTag, SftTriplet, UserPrompt};
use crate::evaluator::scene::SceneGraph;
use crate::evaluator::Image;
use crate::orchestrator::T2iBackend;
use crate::util::{sha256_hex, stable_hash};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const DEFAULT_LEASE_MS: i64 = 10 * 60 * 1000;
const GENESIS: &str = "genesis";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Done,
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTask {
    pub id: String,
    pub candidate_set: CandidateSet,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Select { chosen_index: usize },
    Flag { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JournalEntry {
    seq: u64,
    task_id: String,
    decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotator_id: Option<String>,
    at: i64,
    prev: String,
    #[serde(default)]
    hash: String,
}

impl JournalEntry {
    fn digest(&self) -> String {
        let mut unsigned = self.clone();
        unsigned.hash = String::new();
        sha256_hex(serde_json::to_string(&unsigned).expect("entry serializes").as_bytes())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub open: usize,
    pub done: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub index: usize,
    pub reprompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

/// A leased task as handed to an annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub user_prompt: UserPrompt,
    pub cot: String,
    pub candidates: Vec<CandidateView>,
    pub lease_expires_at: i64,
    pub lease_id: String,
}

#[derive(Debug, Clone)]
struct Lease {
    id: String,
    expires_at: i64,
}

struct Inner {
    tasks: BTreeMap<String, SelectionTask>,
    /// Enqueue order, oldest first.
    order: Vec<String>,
    leases: HashMap<String, Lease>,
    seq: u64,
    last_hash: String,
    journal: File,
}

pub struct TaskStore {
    dir: PathBuf,
    lease_ms: i64,
    inner: Mutex<Inner>,
}

fn corrupt(msg: impl Into<String>) -> CurationError {
    CurationError::StoreCorruption(msg.into())
}

/// Stable id from the task's content.
pub fn task_id(set: &CandidateSet) -> String {
    let mut parts = vec![set.user_prompt.id.as_str(), set.user_prompt.text.as_str(), set.cot.as_str()];
    parts.extend(set.candidates.iter().map(String::as_str));
    let joined = parts.join("\u{1f}");
    format!("task-{}", &sha256_hex(joined.as_bytes())[..16])
}

fn apply(task: &mut SelectionTask, entry: &JournalEntry) -> Result<(), CurationError> {
    if task.status != TaskStatus::Open {
        return Err(CurationError::AlreadyDecided(task.id.clone()));
    }
    match &entry.decision {
        Decision::Select { chosen_index } => {
            let len = task.candidate_set.candidates.len();
            if *chosen_index >= len {
                return Err(CurationError::InvalidChoice {
                    index: *chosen_index,
                    len,
                });
            }
            task.status = TaskStatus::Done;
            task.chosen_index = Some(*chosen_index);
        }
        Decision::Flag { reason } => {
            task.status = TaskStatus::Flagged;
            task.flag_reason = Some(reason.clone());
        }
    }
    task.annotator_id = entry.annotator_id.clone();
    task.decided_at = Some(entry.at);
    Ok(())
}

impl TaskStore {
    /// Opens or creates the store, replaying and verifying the journal.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CurationError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("tasks"))?;
        fs::create_dir_all(dir.join("images"))?;

        let mut tasks = BTreeMap::new();
        let mut files: Vec<PathBuf> = fs::read_dir(dir.join("tasks"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut order: Vec<(i64, String)> = Vec::new();
        for path in files {
            let task: SelectionTask = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
            let enqueued = task
                .candidate_set
                .provenance
                .iter()
                .rev()
                .find(|t| t.stage == Stage::AwaitingSelection.tag())
                .map_or(0, |t| t.at);
            order.push((enqueued, task.id.clone()));
            tasks.insert(task.id.clone(), task);
        }
        order.sort();

        let journal_path = dir.join(JOURNAL_FILE);
        let mut seq = 0;
        let mut last_hash = GENESIS.to_string();
        if journal_path.exists() {
            let raw = fs::read_to_string(&journal_path)?;
            let torn_tail = !raw.is_empty() && !raw.ends_with('\n');
            let lines: Vec<&str> = raw.lines().collect();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry = match serde_json::from_str(line) {
                    Ok(e) => e,
                    Err(_) if torn_tail && i + 1 == lines.len() => {
                        log::warn!("dropping torn journal tail");
                        let keep = raw.len() - line.len();
                        OpenOptions::new().write(true).open(&journal_path)?.set_len(keep as u64)?;
                        break;
                    }
                    Err(e) => return Err(corrupt(format!("journal line {}: {e}", i + 1))),
                };
                if entry.prev != last_hash || entry.digest() != entry.hash || entry.seq != seq + 1 {
                    return Err(corrupt(format!("journal line {} breaks the hash chain", i + 1)));
                }
                let task = tasks
                    .get_mut(&entry.task_id)
                    .ok_or_else(|| corrupt(format!("journal line {} names unknown task {}", i + 1, entry.task_id)))?;
                apply(task, &entry).map_err(|e| corrupt(format!("journal line {}: {e}", i + 1)))?;
                seq = entry.seq;
                last_hash = entry.hash;
            }
        }
        let journal = OpenOptions::new().create(true).append(true).open(&journal_path)?;
        Ok(Self {
            dir,
            lease_ms: DEFAULT_LEASE_MS,
            inner: Mutex::new(Inner {
                tasks,
                order: order.into_iter().map(|(_, id)| id).collect(),
                leases: HashMap::new(),
                seq,
                last_hash,
                journal,
            }),
        })
    }

    pub fn with_lease_ms(mut self, ms: i64) -> Self {
        self.lease_ms = ms.max(1);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn image_dir(&self) -> PathBuf {
        self.dir.join("images")
    }

    /// Path of a stored image, refusing anything that escapes the image dir.
    pub fn image_path(&self, image_ref: &str) -> Option<PathBuf> {
        let ok = !image_ref.is_empty()
            && image_ref
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_')
            && !image_ref.starts_with('.');
        ok.then(|| self.image_dir().join(image_ref))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("store poisoned")
    }

    pub fn get(&self, id: &str) -> Option<SelectionTask> {
        self.lock().tasks.get(id).cloned()
    }

    pub fn tasks(&self) -> Vec<SelectionTask> {
        let inner = self.lock();
        inner.order.iter().filter_map(|id| inner.tasks.get(id).cloned()).collect()
    }

    pub fn stats(&self) -> StoreStats {
        let mut s = StoreStats::default();
        for t in self.lock().tasks.values() {
            match t.status {
                TaskStatus::Open => s.open += 1,
                TaskStatus::Done => s.done += 1,
                TaskStatus::Flagged => s.flagged += 1,
            }
        }
        s
    }

    /// Adds a task unless one with the same id exists; returns the stored one.
    pub fn insert(&self, task: SelectionTask) -> Result<SelectionTask, CurationError> {
        let mut inner = self.lock();
        if let Some(existing) = inner.tasks.get(&task.id) {
            return Ok(existing.clone());
        }
        let path = self.dir.join("tasks").join(format!("{}.json", task.id));
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&task).map_err(|e| corrupt(e.to_string()))?)?;
        fs::rename(&tmp, &path)?;
        inner.order.push(task.id.clone());
        inner.tasks.insert(task.id.clone(), task.clone());
        Ok(task)
    }

    /// Writes image bytes under a content-derived name and returns the ref.
    pub fn put_image(&self, bytes: &[u8], ext: &str) -> Result<String, CurationError> {
        let name = format!("{}.{ext}", &sha256_hex(bytes)[..24]);
        let path = self.image_dir().join(&name);
        if !path.exists() {
            let tmp = self.image_dir().join(format!("{name}.tmp"));
            fs::write(&tmp, bytes)?;
            fs::rename(tmp, path)?;
        }
        Ok(name)
    }

    /// Leases the oldest open task that nobody holds a live lease on.
    pub fn next(&self, now: i64) -> Option<TaskView> {
        let mut inner = self.lock();
        let Inner { tasks, order, leases, .. } = &mut *inner;
        let id = order.iter().find(|id| {
            tasks.get(*id).is_some_and(|t| t.status == TaskStatus::Open)
                && leases.get(*id).is_none_or(|l| l.expires_at <= now)
        })?;
        let task = &tasks[id];
        let lease = Lease {
            id: format!("lease-{:016x}", stable_hash(now as u64, &[id, &leases.len().to_string()])),
            expires_at: now + self.lease_ms,
        };
        leases.insert(id.clone(), lease.clone());
        let set = &task.candidate_set;
        Some(TaskView {
            task_id: id.clone(),
            user_prompt: set.user_prompt.clone(),
            cot: set.cot.clone(),
            candidates: set
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| CandidateView {
                    index: i,
                    reprompt: c.clone(),
                    image_url: set.image_refs.get(i).map(|r| image_url(r)),
                })
                .collect(),
            lease_expires_at: lease.expires_at,
            lease_id: lease.id,
        })
    }

    fn append(&self, inner: &mut Inner, task_id: &str, decision: Decision, annotator: Option<&str>, now: i64) -> Result<SelectionTask, CurationError> {
        let mut entry = JournalEntry {
            seq: inner.seq + 1,
            task_id: task_id.to_string(),
            decision,
            annotator_id: annotator.map(str::to_string),
            at: now,
            prev: inner.last_hash.clone(),
            hash: String::new(),
        };
        entry.hash = entry.digest();
        let task = inner.tasks.get_mut(task_id).ok_or_else(|| CurationError::TaskNotFound(task_id.to_string()))?;
        let mut updated = task.clone();
        apply(&mut updated, &entry)?;
        let mut line = serde_json::to_string(&entry).map_err(|e| corrupt(e.to_string()))?;
        line.push('\n');
        inner.journal.write_all(line.as_bytes())?;
        inner.journal.sync_data()?;
        *inner.tasks.get_mut(task_id).expect("checked above") = updated.clone();
        inner.seq = entry.seq;
        inner.last_hash = entry.hash;
        inner.leases.remove(task_id);
        Ok(updated)
    }

    /// Records the annotator's choice. The task must be open and hold a live
    /// lease (matching `lease_id` when one is given); a task is decided once.
    pub fn select(
        &self,
        task_id: &str,
        chosen_index: usize,
        lease_id: Option<&str>,
        annotator: Option<&str>,
        now: i64,
    ) -> Result<SelectionTask, CurationError> {
        let mut inner = self.lock();
        let task = inner.tasks.get(task_id).ok_or_else(|| CurationError::TaskNotFound(task_id.to_string()))?;
        if task.status != TaskStatus::Open {
            return Err(CurationError::AlreadyDecided(task_id.to_string()));
        }
        let len = task.candidate_set.candidates.len();
        if chosen_index >= len {
            return Err(CurationError::InvalidChoice { index: chosen_index, len });
        }
        let live = inner
            .leases
            .get(task_id)
            .is_some_and(|l| l.expires_at > now && lease_id.is_none_or(|id| id == l.id));
        if !live {
            return Err(CurationError::LeaseExpired(task_id.to_string()));
        }
        self.append(&mut inner, task_id, Decision::Select { chosen_index }, annotator, now)
    }

    /// Sets an open task aside. No lease is needed.
    pub fn flag(&self, task_id: &str, reason: &str, annotator: Option<&str>, now: i64) -> Result<SelectionTask, CurationError> {
        let mut inner = self.lock();
        let task = inner.tasks.get(task_id).ok_or_else(|| CurationError::TaskNotFound(task_id.to_string()))?;
        if task.status != TaskStatus::Open {
            return Err(CurationError::AlreadyDecided(task_id.to_string()));
        }
        self.append(&mut inner, task_id, Decision::Flag { reason: reason.to_string() }, annotator, now)
    }

    pub fn flush(&self) -> Result<(), CurationError> {
        self.lock().journal.sync_all()?;
        Ok(())
    }

    pub fn journal_len(&self) -> u64 {
        self.lock().seq
    }
}

fn image_url(image_ref: &str) -> String {
    if image_ref.contains("://") || image_ref.starts_with("data:") {
        image_ref.to_string()
    } else {
        format!("/images/{image_ref}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Placeholder picture of a scene: one line of text per element.
pub fn scene_svg(scene: &SceneGraph) -> String {
    let mut lines = Vec::new();
    if let Some(style) = &scene.style {
        lines.push(format!("style: {style}"));
    }
    for e in &scene.entities {
        let a = &e.attributes;
        let attrs: Vec<&str> = [&a.size, &a.color, &a.material, &a.expression]
            .into_iter()
            .filter_map(|x| x.as_deref())
            .collect();
        lines.push(format!("{} x {} {}", e.count, e.name, attrs.join(" ")).trim_end().to_string());
    }
    for r in &scene.relations {
        lines.push(format!("{} {} {}", r.subject, r.detail, r.object));
    }
    for a in &scene.actions {
        lines.push(format!("{} {} {}", a.actor, a.verb, a.target.as_deref().unwrap_or("")).trim_end().to_string());
    }
    for t in &scene.texts {
        lines.push(format!("text \"{}\" at {}", t.content, t.position));
    }
    let height = 40 + 24 * lines.len();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"512\" height=\"{height}\">\
<rect width=\"100%\" height=\"100%\" fill=\"#f4f1ea\"/>"
    );
    for (i, l) in lines.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"16\" y=\"{}\" font-family=\"monospace\" font-size=\"14\">{}</text>",
            32 + 24 * i,
            xml_escape(l)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders every candidate of each filtered set and files one open task per
/// set. A set whose rendering fails is filed as flagged instead. Sets already
/// in the store are returned as stored.
pub fn enqueue_selection(
    sets: Vec<CandidateSet>,
    t2i: &dyn T2iBackend,
    store: &TaskStore,
    seed: u64,
    at: i64,
) -> Result<Vec<SelectionTask>, CurationError> {
    for s in &sets {
        s.require(Stage::Filtered)?;
    }
    sets.into_par_iter()
        .filter(|s| !s.candidates.is_empty())
        .map(|mut set| {
            let id = task_id(&set);
            if let Some(existing) = store.get(&id) {
                return Ok(existing);
            }
            let rendered: Result<Vec<String>, CurationError> = set
                .candidates
                .iter()
                .enumerate()
                .map(|(i, text)| match t2i.render(text, stable_hash(seed, &[&id, &i.to_string()]))? {
                    Image::Scene(scene) => store.put_image(scene_svg(&scene).as_bytes(), "svg"),
                    Image::Reference(r) => Ok(r),
                })
                .collect();
            set.advance(Stage::AwaitingSelection, at)?;
            let task = match rendered {
                Ok(refs) => {
                    set.image_refs = refs;
                    SelectionTask {
                        id,
                        candidate_set: set,
                        status: TaskStatus::Open,
                        chosen_index: None,
                        annotator_id: None,
                        decided_at: None,
                        flag_reason: None,
                    }
                }
                Err(e) => {
                    log::warn!("rendering for {} failed: {e}", set.user_prompt.id);
                    set.image_refs.clear();
                    SelectionTask {
                        id,
                        candidate_set: set,
                        status: TaskStatus::Flagged,
                        chosen_index: None,
                        annotator_id: None,
                        decided_at: Some(at),
                        flag_reason: Some(format!("image generation failed: {e}")),
                    }
                }
            };
            store.insert(task)
        })
        .collect()
}

/// One triplet per decided task. Fails if any task is still open or flagged.
pub fn finalize(tasks: &[SelectionTask], at: i64) -> Result<Vec<SftTriplet>, CurationError> {
    let open = tasks.iter().filter(|t| t.status == TaskStatus::Open).count();
    let flagged = tasks.iter().filter(|t| t.status == TaskStatus::Flagged).count();
    if open + flagged > 0 {
        return Err(CurationError::IncompleteSelection { open, flagged });
    }
    tasks
        .iter()
        .map(|t| {
            let set = &t.candidate_set;
            let chosen = t.chosen_index.ok_or_else(|| corrupt(format!("done task {} has no choice", t.id)))?;
            let reprompt = set
                .candidates
                .get(chosen)
                .ok_or(CurationError::InvalidChoice {
                    index: chosen,
                    len: set.candidates.len(),
                })?
                .clone();
            let mut provenance = set.provenance.clone();
            provenance.push(ProvenanceTag::new(Stage::Finalized.tag(), t.decided_at.unwrap_or(at)));
            Ok(SftTriplet {
                user_prompt: set.user_prompt.clone(),
                cot: set.cot.clone(),
                reprompt,
                candidates: set.candidates.clone(),
                selected_index: chosen,
                provenance,
                extra: Default::default(),
            })
        })
        .collect()
}

/// Re-reads the store from disk and checks the journal chain.
pub fn verify(dir: &Path) -> Result<StoreStats, CurationError> {
    Ok(TaskStore::open(dir)?.stats())
}

/// Journal lines as raw JSON, oldest first.
pub fn journal_lines(dir: &Path) -> Result<Vec<String>, CurationError> {
    let path = dir.join(JOURNAL_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(BufReader::new(File::open(path)?)
        .lines()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect())
}
