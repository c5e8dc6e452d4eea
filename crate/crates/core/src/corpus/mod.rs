//! Record types shared by every pipeline stage, their line-delimited JSON
//! I/O, and dataset statistics.

mod io;
mod stats;

pub use io::{read_records, read_stream, write_stream, AnyRecord, RecordStream, SchemaKind};
pub use stats::{
    cooccurrence, dataset_stats, CooccurrenceMatrix, LanguageShare, StatsReport, ThemeShare,
    LENGTH_BUCKET_CHARS,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::evaluator::PASS_THRESHOLD;
use crate::taxonomy::{self, Criteria};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: field `{field}`: {reason}")]
    SchemaViolation {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("invalid record: field `{field}`: {reason}")]
    InvalidRecord { field: String, reason: String },
}

/// A field-level validation failure, before a line number is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<FieldError> for CorpusError {
    fn from(e: FieldError) -> Self {
        CorpusError::InvalidRecord {
            field: e.field,
            reason: e.reason,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::Zh, Language::En];

    pub fn code(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zh" => Ok(Language::Zh),
            "en" => Ok(Language::En),
            other => Err(format!("unsupported language `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Theme {
    Design,
    Art,
    FilmStory,
    Illustration,
    Creative,
}

impl Theme {
    pub const ALL: [Theme; 5] = [
        Theme::Design,
        Theme::Art,
        Theme::FilmStory,
        Theme::Illustration,
        Theme::Creative,
    ];
}

/// A pipeline stage stamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceTag {
    pub stage: String,
    /// Unix milliseconds.
    pub at: i64,
}

impl ProvenanceTag {
    pub fn new(stage: impl Into<String>, at: i64) -> Self {
        Self {
            stage: stage.into(),
            at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPrompt {
    pub id: String,
    pub text: String,
    pub language: Language,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theme: Option<Theme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtheme: Option<String>,
    #[serde(default)]
    pub keypoint_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<ProvenanceTag>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl UserPrompt {
    pub fn new(id: impl Into<String>, text: impl Into<String>, language: Language) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            language,
            theme: None,
            subtheme: None,
            keypoint_ids: Vec::new(),
            provenance: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn with_keypoints<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.keypoint_ids = ids.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_theme(mut self, theme: Theme) -> Self {
        self.theme = Some(theme);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftTriplet {
    pub user_prompt: UserPrompt,
    pub cot: String,
    pub reprompt: String,
    #[serde(default)]
    pub candidates: Vec<String>,
    #[serde(default)]
    pub selected_index: usize,
    #[serde(default)]
    pub provenance: Vec<ProvenanceTag>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub id: String,
    pub prompt: String,
    pub language: Language,
    pub keypoint_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theme: Option<Theme>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl BenchmarkRecord {
    pub fn new<I, S>(id: impl Into<String>, prompt: impl Into<String>, language: Language, kps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            language,
            keypoint_ids: kps.into_iter().map(Into::into).collect(),
            theme: None,
            extra: Map::new(),
        }
    }

    pub fn as_user_prompt(&self) -> UserPrompt {
        let mut prompt = UserPrompt::new(self.id.clone(), self.prompt.clone(), self.language)
            .with_keypoints(self.keypoint_ids.iter().cloned());
        prompt.theme = self.theme;
        prompt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub record_id: String,
    pub keypoint_id: String,
    pub pass: bool,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tic_pass: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub si_pass: Option<bool>,
    pub judge_id: String,
    #[serde(default)]
    pub rationale: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Verdict {
    /// Builds a verdict whose `pass` flag follows the threshold rule. For
    /// TIC_AND_SI keypoints the sub-checks decide: a failure caps the score at
    /// zero and a double pass lifts it to the threshold, so the threshold rule
    /// and the conjunction rule agree.
    pub fn from_score(
        record_id: impl Into<String>,
        keypoint_id: impl Into<String>,
        score: f64,
        tic_pass: Option<bool>,
        si_pass: Option<bool>,
        judge_id: impl Into<String>,
        rationale: impl Into<String>,
    ) -> Self {
        let keypoint_id = keypoint_id.into();
        let mut score = score.clamp(0.0, 1.0);
        let needs_both = taxonomy::lookup(&keypoint_id)
            .map(|kp| kp.criteria == Criteria::TicAndSi)
            .unwrap_or(false);
        let (tic_pass, si_pass) = if needs_both {
            let tic = tic_pass.unwrap_or(score >= PASS_THRESHOLD);
            let si = si_pass.unwrap_or(score >= PASS_THRESHOLD);
            score = if tic && si { score.max(PASS_THRESHOLD) } else { 0.0 };
            (Some(tic), Some(si))
        } else {
            (tic_pass, si_pass)
        };
        Self {
            record_id: record_id.into(),
            keypoint_id,
            pass: score >= PASS_THRESHOLD,
            score,
            tic_pass,
            si_pass,
            judge_id: judge_id.into(),
            rationale: rationale.into(),
            extra: Map::new(),
        }
    }
}

/// Record-level validation shared by the stream readers and writers.
pub trait Record: Serialize + for<'de> Deserialize<'de> {
    const KIND: SchemaKind;
    fn validate(&self) -> Result<(), FieldError>;
}

fn validate_keypoint_ids(ids: &[String], field: &str) -> Result<(), FieldError> {
    for id in ids {
        if !taxonomy::is_known(id) {
            return Err(FieldError::new(field, format!("unknown keypoint `{id}`")));
        }
    }
    Ok(())
}

impl Record for UserPrompt {
    const KIND: SchemaKind = SchemaKind::UserPrompt;
    fn validate(&self) -> Result<(), FieldError> {
        if self.text.trim().is_empty() {
            return Err(FieldError::new("text", "must be non-empty"));
        }
        validate_keypoint_ids(&self.keypoint_ids, "keypoint_ids")
    }
}

impl Record for SftTriplet {
    const KIND: SchemaKind = SchemaKind::SftTriplet;
    fn validate(&self) -> Result<(), FieldError> {
        self.user_prompt.validate().map_err(|e| FieldError {
            field: format!("user_prompt.{}", e.field),
            reason: e.reason,
        })?;
        if self.cot.trim().is_empty() {
            return Err(FieldError::new("cot", "must be non-empty"));
        }
        if self.reprompt.trim().is_empty() {
            return Err(FieldError::new("reprompt", "must be non-empty"));
        }
        if !self.candidates.is_empty() {
            match self.candidates.get(self.selected_index) {
                None => {
                    return Err(FieldError::new(
                        "selected_index",
                        format!(
                            "{} out of range for {} candidates",
                            self.selected_index,
                            self.candidates.len()
                        ),
                    ))
                }
                Some(chosen) if *chosen != self.reprompt => {
                    return Err(FieldError::new(
                        "reprompt",
                        "must equal candidates[selected_index]",
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

impl Record for BenchmarkRecord {
    const KIND: SchemaKind = SchemaKind::Benchmark;
    fn validate(&self) -> Result<(), FieldError> {
        if self.prompt.trim().is_empty() {
            return Err(FieldError::new("prompt", "must be non-empty"));
        }
        if self.keypoint_ids.is_empty() {
            return Err(FieldError::new("keypoint_ids", "must list at least one keypoint"));
        }
        validate_keypoint_ids(&self.keypoint_ids, "keypoint_ids")?;
        let mut seen = std::collections::HashSet::new();
        for id in &self.keypoint_ids {
            if !seen.insert(id) {
                return Err(FieldError::new("keypoint_ids", format!("duplicate `{id}`")));
            }
        }
        Ok(())
    }
}

impl Record for Verdict {
    const KIND: SchemaKind = SchemaKind::Verdict;
    fn validate(&self) -> Result<(), FieldError> {
        let kp = taxonomy::lookup(&self.keypoint_id)
            .map_err(|e| FieldError::new("keypoint_id", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(FieldError::new("score", "must lie in [0, 1]"));
        }
        if self.pass != (self.score >= PASS_THRESHOLD) {
            return Err(FieldError::new("pass", "inconsistent with score threshold"));
        }
        if kp.criteria == Criteria::TicAndSi {
            match (self.tic_pass, self.si_pass) {
                (Some(tic), Some(si)) => {
                    if self.pass != (tic && si) {
                        return Err(FieldError::new("pass", "must equal tic_pass && si_pass"));
                    }
                }
                _ => {
                    return Err(FieldError::new(
                        "si_pass",
                        "tic_pass and si_pass required for TIC_AND_SI keypoints",
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Text, language, keypoints and theme of any prompt-bearing record.
pub trait PromptLike {
    fn prompt_text(&self) -> &str;
    fn language(&self) -> Language;
    fn keypoints(&self) -> &[String];
    fn theme(&self) -> Option<Theme> {
        None
    }
}

impl PromptLike for UserPrompt {
    fn prompt_text(&self) -> &str {
        &self.text
    }
    fn language(&self) -> Language {
        self.language
    }
    fn keypoints(&self) -> &[String] {
        &self.keypoint_ids
    }
    fn theme(&self) -> Option<Theme> {
        self.theme
    }
}

impl PromptLike for BenchmarkRecord {
    fn prompt_text(&self) -> &str {
        &self.prompt
    }
    fn language(&self) -> Language {
        self.language
    }
    fn keypoints(&self) -> &[String] {
        &self.keypoint_ids
    }
    fn theme(&self) -> Option<Theme> {
        self.theme
    }
}

impl PromptLike for SftTriplet {
    fn prompt_text(&self) -> &str {
        &self.user_prompt.text
    }
    fn language(&self) -> Language {
        self.user_prompt.language
    }
    fn keypoints(&self) -> &[String] {
        &self.user_prompt.keypoint_ids
    }
    fn theme(&self) -> Option<Theme> {
        self.user_prompt.theme
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triplet() -> SftTriplet {
        SftTriplet {
            user_prompt: UserPrompt::new("p1", "a cat", Language::En),
            cot: "think".into(),
            reprompt: "b".into(),
            candidates: vec!["a".into(), "b".into()],
            selected_index: 1,
            provenance: vec![],
            extra: Map::new(),
        }
    }

    #[test]
    fn triplet_selection_invariant() {
        assert!(triplet().validate().is_ok());
        let mut bad = triplet();
        bad.selected_index = 2;
        assert_eq!(bad.validate().unwrap_err().field, "selected_index");
        let mut mismatch = triplet();
        mismatch.reprompt = "a".into();
        assert_eq!(mismatch.validate().unwrap_err().field, "reprompt");
    }

    #[test]
    fn benchmark_record_rules() {
        let ok = BenchmarkRecord::new("r", "four dogs", Language::En, ["counting"]);
        assert!(ok.validate().is_ok());
        let empty = BenchmarkRecord::new("r", "x", Language::En, Vec::<String>::new());
        assert!(empty.validate().is_err());
        let dup = BenchmarkRecord::new("r", "x", Language::En, ["counting", "counting"]);
        assert!(dup.validate().is_err());
        let unknown = BenchmarkRecord::new("r", "x", Language::En, ["unicorns"]);
        assert!(unknown.validate().is_err());
    }

    #[test]
    fn verdict_conjunction_for_structural_keypoints() {
        let v = Verdict::from_score("r", "hand-action", 0.9, Some(true), Some(false), "j", "");
        assert!(!v.pass);
        assert_eq!(v.score, 0.0);
        assert!(v.validate().is_ok());

        let v = Verdict::from_score("r", "counting", 0.5, None, None, "j", "");
        assert!(v.pass);
        assert!(v.validate().is_ok());

        let mut bad = Verdict::from_score("r", "hand-action", 1.0, Some(true), Some(true), "j", "");
        bad.si_pass = None;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn language_codes() {
        assert_eq!("zh".parse::<Language>(), Ok(Language::Zh));
        assert!("fr".parse::<Language>().is_err());
        assert_eq!(serde_json::to_string(&Language::En).unwrap(), "\"en\"");
    }
}
