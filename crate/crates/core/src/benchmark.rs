//! Benchmark harness: per-keypoint accuracy, baseline-vs-enhanced deltas and
//! dataset analytics.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    cooccurrence, dataset_stats, BenchmarkRecord, CooccurrenceMatrix, Record, StatsReport, UserPrompt, Verdict,
};
use crate::evaluator::{resolve_keypoints, Image, Judge};
use crate::orchestrator::{OrchestratorError, PolicyBackend, T2iBackend};
use crate::taxonomy;
use crate::util::stable_hash;

/// Deltas closer to zero than this are counted as zero.
pub const ZERO_TOLERANCE_PP: f64 = 1e-9;
/// Deltas above this many points count as large gains.
pub const LARGE_GAIN_PP: f64 = 5.0;
/// Keypoints shown in the co-occurrence analysis.
pub const COOCCURRENCE_TOP_K: usize = 24;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("record `{id}`: field `{field}`: {reason}")]
    InvalidRecord { id: String, field: String, reason: String },
    #[error("keypoint sets differ: only in baseline {only_baseline:?}, only in enhanced {only_enhanced:?}")]
    KeypointSetMismatch {
        only_baseline: Vec<String>,
        only_enhanced: Vec<String>,
    },
    #[error("unsupported format `{0}` (expected text, json or csv)")]
    UnsupportedFormat(String),
    #[error("invalid accuracy table: {0}")]
    InvalidTable(String),
    #[error("nothing to render")]
    EmptyReport,
}

/// Turns a benchmark prompt into an image.
pub trait Generator: Send + Sync {
    /// Returns the text actually rendered together with the image.
    fn generate(&self, prompt: &UserPrompt, seed: u64) -> Result<(String, Image), OrchestratorError>;
}

/// Renders the prompt as written.
pub struct Direct(pub Arc<dyn T2iBackend>);

impl Generator for Direct {
    fn generate(&self, prompt: &UserPrompt, seed: u64) -> Result<(String, Image), OrchestratorError> {
        Ok((prompt.text.clone(), self.0.render(&prompt.text, seed)?))
    }
}

/// Rewrites the prompt with a policy, then renders the rewrite.
pub struct Enhanced {
    pub policy: Arc<dyn PolicyBackend>,
    pub t2i: Arc<dyn T2iBackend>,
}

impl Generator for Enhanced {
    fn generate(&self, prompt: &UserPrompt, seed: u64) -> Result<(String, Image), OrchestratorError> {
        let candidate = self
            .policy
            .generate(prompt, 1, seed)?
            .into_iter()
            .next()
            .ok_or(OrchestratorError::PartialGroup { expected: 1, got: 0 })?;
        let image = self.t2i.render(&candidate.text, seed)?;
        Ok((candidate.text, image))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointAccuracy {
    pub n: usize,
    pub pass: usize,
    /// `None` when the keypoint has no instances.
    pub acc: Option<f64>,
}

impl KeypointAccuracy {
    pub fn from_counts(n: usize, pass: usize) -> Self {
        Self {
            n,
            pass,
            acc: (n > 0).then(|| pass as f64 / n as f64),
        }
    }

    pub fn is_absent(&self) -> bool {
        self.n == 0
    }
}

/// Per-keypoint accuracy in taxonomy order. Serializes as
/// `{keypoint_id: {n, pass, acc}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<String, KeypointAccuracy>", into = "IndexMap<String, KeypointAccuracy>")]
pub struct AccuracyTable {
    rows: IndexMap<String, KeypointAccuracy>,
}

impl TryFrom<IndexMap<String, KeypointAccuracy>> for AccuracyTable {
    type Error = BenchmarkError;

    fn try_from(map: IndexMap<String, KeypointAccuracy>) -> Result<Self, Self::Error> {
        let mut counts = Vec::with_capacity(map.len());
        for (id, row) in map {
            if !taxonomy::is_known(&id) {
                return Err(BenchmarkError::InvalidTable(format!("unknown keypoint `{id}`")));
            }
            if row.pass > row.n {
                return Err(BenchmarkError::InvalidTable(format!("`{id}`: pass {} exceeds n {}", row.pass, row.n)));
            }
            if row != KeypointAccuracy::from_counts(row.n, row.pass) {
                return Err(BenchmarkError::InvalidTable(format!("`{id}`: acc disagrees with counts")));
            }
            counts.push((id, row.n, row.pass));
        }
        Ok(AccuracyTable::from_counts(counts))
    }
}

impl From<AccuracyTable> for IndexMap<String, KeypointAccuracy> {
    fn from(t: AccuracyTable) -> Self {
        t.rows
    }
}

impl AccuracyTable {
    /// Builds a table from `(keypoint_id, n, pass)` triples. Rows come out in
    /// taxonomy order whatever the input order.
    pub fn from_counts<S: Into<String>>(counts: impl IntoIterator<Item = (S, usize, usize)>) -> Self {
        let mut rows: IndexMap<String, KeypointAccuracy> = counts
            .into_iter()
            .map(|(id, n, pass)| (id.into(), KeypointAccuracy::from_counts(n, pass)))
            .collect();
        rows.sort_by_cached_key(|id, _| taxonomy::position(id).unwrap_or(usize::MAX));
        Self { rows }
    }

    pub fn get(&self, keypoint_id: &str) -> Option<&KeypointAccuracy> {
        self.rows.get(keypoint_id)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &KeypointAccuracy)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn accuracy(&self, keypoint_id: &str) -> Option<f64> {
        self.rows.get(keypoint_id).and_then(|r| r.acc)
    }

    /// Keypoints with at least one instance.
    pub fn present(&self) -> BTreeSet<&str> {
        self.rows.iter().filter(|(_, r)| !r.is_absent()).map(|(k, _)| k.as_str()).collect()
    }

    /// Unweighted mean over present keypoints.
    pub fn mean_accuracy(&self) -> Option<f64> {
        let accs: Vec<f64> = self.rows.values().filter_map(|r| r.acc).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErroredRecord {
    pub record_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub table: AccuracyTable,
    /// Verdicts of every judged record, in dataset order.
    pub verdicts: Vec<Verdict>,
    /// Records left out of the table because generation or judging failed.
    pub errored: Vec<ErroredRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { seed: 0, workers: 4 }
    }
}

/// Rejects the dataset if any record is invalid or names an unknown keypoint.
pub fn validate_dataset(dataset: &[BenchmarkRecord]) -> Result<(), BenchmarkError> {
    for r in dataset {
        r.validate().map_err(|e| BenchmarkError::InvalidRecord {
            id: r.id.clone(),
            field: e.field,
            reason: e.reason,
        })?;
    }
    Ok(())
}

fn judge_record(
    record: &BenchmarkRecord,
    generator: &dyn Generator,
    judge: &dyn Judge,
    seed: u64,
) -> Result<Vec<Verdict>, String> {
    let prompt = record.as_user_prompt();
    let seed = stable_hash(seed, &["bench", &record.id]);
    let (_, image) = generator.generate(&prompt, seed).map_err(|e| e.to_string())?;
    let kps = resolve_keypoints(&record.keypoint_ids).map_err(|e| e.to_string())?;
    let verdicts = judge.judge(&image, &prompt, &kps).map_err(|e| e.to_string())?;
    let wanted: BTreeSet<&str> = record.keypoint_ids.iter().map(String::as_str).collect();
    let got: BTreeSet<&str> = verdicts.iter().map(|v| v.keypoint_id.as_str()).collect();
    if verdicts.len() != wanted.len() || got != wanted {
        return Err(format!("judge returned verdicts for {got:?}, expected {wanted:?}"));
    }
    Ok(verdicts)
}

/// Judges every record on exactly its annotated keypoints. Records that fail
/// are reported in `errored` and count towards no keypoint.
pub fn evaluate(
    dataset: &[BenchmarkRecord],
    generator: &dyn Generator,
    judge: &dyn Judge,
    opts: &EvalOptions,
) -> Result<Evaluation, BenchmarkError> {
    validate_dataset(dataset)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| BenchmarkError::InvalidTable(format!("worker pool: {e}")))?;
    let results: Vec<Result<Vec<Verdict>, String>> = pool.install(|| {
        dataset
            .par_iter()
            .map(|r| judge_record(r, generator, judge, opts.seed))
            .collect()
    });

    let mut n = vec![0usize; taxonomy::KEYPOINT_COUNT];
    let mut pass = vec![0usize; taxonomy::KEYPOINT_COUNT];
    let mut verdicts = Vec::new();
    let mut errored = Vec::new();
    for (record, result) in dataset.iter().zip(results) {
        match result {
            Ok(vs) => {
                for v in &vs {
                    let i = taxonomy::position(&v.keypoint_id).expect("validated keypoint");
                    n[i] += 1;
                    pass[i] += v.pass as usize;
                }
                verdicts.extend(vs);
            }
            Err(error) => {
                log::warn!("record {} excluded: {error}", record.id);
                errored.push(ErroredRecord {
                    record_id: record.id.clone(),
                    error,
                });
            }
        }
    }
    let table = AccuracyTable::from_counts(
        taxonomy::registry()
            .iter()
            .enumerate()
            .map(|(i, kp)| (kp.id.clone(), n[i], pass[i])),
    );
    Ok(Evaluation {
        table,
        verdicts,
        errored,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub baseline: f64,
    pub enhanced: f64,
    pub delta_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    /// Compared keypoints in taxonomy order.
    pub rows: IndexMap<String, DeltaRow>,
    pub mean_delta_pp: f64,
    pub n_positive: usize,
    pub n_zero: usize,
    pub n_negative: usize,
    /// Deltas strictly above [`LARGE_GAIN_PP`].
    pub n_above_5pp: usize,
}

impl DeltaReport {
    /// Summary figures from a list of deltas, in points.
    pub fn from_deltas(rows: IndexMap<String, DeltaRow>) -> Self {
        let deltas: Vec<f64> = rows.values().map(|r| r.delta_pp).collect();
        let mean_delta_pp = if deltas.is_empty() {
            0.0
        } else {
            deltas.iter().sum::<f64>() / deltas.len() as f64
        };
        Self {
            mean_delta_pp,
            n_positive: deltas.iter().filter(|d| **d > ZERO_TOLERANCE_PP).count(),
            n_zero: deltas.iter().filter(|d| d.abs() <= ZERO_TOLERANCE_PP).count(),
            n_negative: deltas.iter().filter(|d| **d < -ZERO_TOLERANCE_PP).count(),
            n_above_5pp: deltas.iter().filter(|d| **d > LARGE_GAIN_PP + ZERO_TOLERANCE_PP).count(),
            rows,
        }
    }

    pub fn delta(&self, keypoint_id: &str) -> Option<f64> {
        self.rows.get(keypoint_id).map(|r| r.delta_pp)
    }
}

/// Points of change per keypoint. Both tables must have instances for the
/// same keypoints.
pub fn compare(baseline: &AccuracyTable, enhanced: &AccuracyTable) -> Result<DeltaReport, BenchmarkError> {
    let b = baseline.present();
    let e = enhanced.present();
    if b != e {
        return Err(BenchmarkError::KeypointSetMismatch {
            only_baseline: b.difference(&e).map(|s| s.to_string()).collect(),
            only_enhanced: e.difference(&b).map(|s| s.to_string()).collect(),
        });
    }
    let rows = baseline
        .rows()
        .filter_map(|(id, row)| {
            let base = row.acc?;
            let enh = enhanced.accuracy(id)?;
            Some((
                id.to_string(),
                DeltaRow {
                    baseline: base,
                    enhanced: enh,
                    delta_pp: (enh - base) * 100.0,
                },
            ))
        })
        .collect();
    Ok(DeltaReport::from_deltas(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analytics {
    pub stats: StatsReport,
    pub cooccurrence: CooccurrenceMatrix,
}

pub fn analyze(dataset: &[BenchmarkRecord]) -> Analytics {
    Analytics {
        stats: dataset_stats(dataset),
        cooccurrence: cooccurrence(dataset, COOCCURRENCE_TOP_K),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = BenchmarkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(BenchmarkError::UnsupportedFormat(s.to_string())),
        }
    }
}

/// Whatever a report run produced. Absent parts are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportTables {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<AccuracyTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhanced: Option<AccuracyTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaReport>,
}

/// Points with one decimal and an explicit sign, e.g. `+17.3` or `-0.7`.
/// Values that round to zero print as `0.0`.
pub fn format_pp(pp: f64) -> String {
    let rounded = format!("{pp:.1}");
    match rounded.as_str() {
        "0.0" | "-0.0" => "0.0".to_string(),
        r if r.starts_with('-') => r.to_string(),
        r => format!("+{r}"),
    }
}

fn format_acc(acc: Option<f64>) -> String {
    acc.map(|a| format!("{:.1}", a * 100.0)).unwrap_or_else(|| "absent".into())
}

pub fn render_report(tables: &ReportTables, format: ReportFormat) -> Result<String, BenchmarkError> {
    if tables.baseline.is_none() && tables.enhanced.is_none() && tables.delta.is_none() {
        return Err(BenchmarkError::EmptyReport);
    }
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(tables).expect("tables serialize") + "\n"),
        ReportFormat::Csv => Ok(render_csv(tables)),
        ReportFormat::Text => Ok(render_text(tables)),
    }
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn render_csv(tables: &ReportTables) -> String {
    if let Some(d) = &tables.delta {
        return csv_string(|w| {
            w.write_record(["keypoint_id", "baseline_pct", "enhanced_pct", "delta_pp"])?;
            for (id, r) in &d.rows {
                w.write_record([
                    id.clone(),
                    format_acc(Some(r.baseline)),
                    format_acc(Some(r.enhanced)),
                    format_pp(r.delta_pp),
                ])?;
            }
            let mean = |t: &Option<AccuracyTable>| t.as_ref().and_then(AccuracyTable::mean_accuracy);
            w.write_record([
                "mean".to_string(),
                format_acc(mean(&tables.baseline)),
                format_acc(mean(&tables.enhanced)),
                format_pp(d.mean_delta_pp),
            ])
        });
    }
    let (label, table) = match (&tables.baseline, &tables.enhanced) {
        (Some(t), _) => ("baseline", t),
        (None, Some(t)) => ("enhanced", t),
        (None, None) => unreachable!("checked by render_report"),
    };
    csv_string(|w| {
        w.write_record(["keypoint_id", "n", "pass", &format!("{label}_pct")])?;
        for (id, r) in table.rows() {
            w.write_record([id.to_string(), r.n.to_string(), r.pass.to_string(), format_acc(r.acc)])?;
        }
        w.write_record(["mean", "", "", &format_acc(table.mean_accuracy())])
    })
}

fn render_text(tables: &ReportTables) -> String {
    let mut out = String::new();
    for (label, table) in [("baseline", &tables.baseline), ("enhanced", &tables.enhanced)] {
        let Some(t) = table else { continue };
        let _ = writeln!(out, "{label} accuracy");
        let _ = writeln!(out, "{:<26} {:>6} {:>6} {:>8}", "keypoint", "n", "pass", "acc %");
        for (id, r) in t.rows() {
            let _ = writeln!(out, "{id:<26} {:>6} {:>6} {:>8}", r.n, r.pass, format_acc(r.acc));
        }
        let _ = writeln!(out, "{:<26} {:>6} {:>6} {:>8}\n", "mean", "", "", format_acc(t.mean_accuracy()));
    }
    if let Some(d) = &tables.delta {
        let _ = writeln!(out, "delta (enhanced - baseline)");
        let _ = writeln!(out, "{:<26} {:>8} {:>8} {:>8}", "keypoint", "base %", "enh %", "pp");
        for (id, r) in &d.rows {
            let _ = writeln!(
                out,
                "{id:<26} {:>8} {:>8} {:>8}",
                format_acc(Some(r.baseline)),
                format_acc(Some(r.enhanced)),
                format_pp(r.delta_pp)
            );
        }
        let _ = writeln!(out, "mean delta: {} pp", format_pp(d.mean_delta_pp));
        let _ = writeln!(
            out,
            "improved {} / unchanged {} / regressed {}; above {LARGE_GAIN_PP:.1} pp: {}",
            d.n_positive, d.n_zero, d.n_negative, d.n_above_5pp
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pp_formatting() {
        assert_eq!(format_pp(17.3), "+17.3");
        assert_eq!(format_pp(-0.7), "-0.7");
        assert_eq!(format_pp(0.0), "0.0");
        assert_eq!(format_pp(-0.04), "0.0");
        assert_eq!(format_pp(14.999999999), "+15.0");
    }

    #[test]
    fn absent_rows_are_not_zero() {
        let t = AccuracyTable::from_counts([("counting", 10, 7), ("size", 0, 0)]);
        assert_eq!(t.accuracy("counting"), Some(0.7));
        assert_eq!(t.accuracy("size"), None);
        assert_eq!(t.mean_accuracy(), Some(0.7));
    }

    #[test]
    fn tables_deserialize_with_checks() {
        let bad = r#"{"counting":{"n":3,"pass":4,"acc":1.3333}}"#;
        assert!(serde_json::from_str::<AccuracyTable>(bad).is_err());
        let unknown = r#"{"juggling":{"n":1,"pass":1,"acc":1.0}}"#;
        assert!(serde_json::from_str::<AccuracyTable>(unknown).is_err());
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("xml".parse::<ReportFormat>(), Err(BenchmarkError::UnsupportedFormat(_))));
    }
}
