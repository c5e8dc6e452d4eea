//! Teacher requests and parsing of their structured replies.

use std::fs;
use std::path::Path;

use super::{CandidateSet, CurationError, Stage};
use crate::corpus::{ProvenanceTag, UserPrompt};
use crate::evaluator::grammar;
use crate::orchestrator::client::{ChatClient, ChatMessage, ChatRequest, ClientError};
use crate::orchestrator::RewriteEdit;
use crate::util::stable_hash;

pub const REPROMPT_TEMPLATE: &str = include_str!("../../assets/reprompt_template.txt");
pub const COT_TEMPLATE: &str = include_str!("../../assets/cot_template.txt");

pub const REPROMPT_FILE: &str = "reprompt_template.txt";
pub const COT_FILE: &str = "cot_template.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    pub reprompt: String,
    pub cot: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            reprompt: REPROMPT_TEMPLATE.to_string(),
            cot: COT_TEMPLATE.to_string(),
        }
    }
}

impl Templates {
    /// Shipped templates, overridden by any of the two files found in `dir`.
    pub fn load(dir: Option<&Path>) -> Result<Self, CurationError> {
        let mut t = Self::default();
        if let Some(dir) = dir {
            let reprompt = dir.join(REPROMPT_FILE);
            if reprompt.exists() {
                t.reprompt = fs::read_to_string(reprompt)?;
            }
            let cot = dir.join(COT_FILE);
            if cot.exists() {
                t.cot = fs::read_to_string(cot)?;
            }
        }
        Ok(t)
    }

    pub fn messages(&self, prompt: &str, k: usize) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(self.reprompt.replace("{{k}}", &k.to_string())),
            ChatMessage::user(self.cot.replace("{{prompt}}", prompt).replace("{{k}}", &k.to_string())),
        ]
    }
}

/// Anything that answers a chat request with text.
pub trait Teacher: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;
}

impl Teacher for ChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        self.chat_complete(request).map(|r| r.text)
    }
}

fn tagged<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let after = &rest[start + open.len()..];
        let Some(end) = after.find(&close) else { break };
        out.push(after[..end].trim());
        rest = &after[end + close.len()..];
    }
    out
}

/// Extracts the reasoning and the first `k` candidates.
pub fn parse_teacher_output(text: &str, k: usize) -> Result<(String, Vec<String>), CurationError> {
    let cot = tagged(text, "cot");
    let cot = match cot.as_slice() {
        [one] if !one.is_empty() => one.to_string(),
        [] => return Err(CurationError::MalformedTeacherOutput("missing <cot> section".into())),
        [_] => return Err(CurationError::MalformedTeacherOutput("empty <cot> section".into())),
        _ => return Err(CurationError::MalformedTeacherOutput("more than one <cot> section".into())),
    };
    let candidates: Vec<String> = tagged(text, "candidate")
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(str::to_string)
        .collect();
    if candidates.len() < k {
        return Err(CurationError::MalformedTeacherOutput(format!(
            "expected {k} candidates, found {}",
            candidates.len()
        )));
    }
    Ok((cot, candidates.into_iter().take(k).collect()))
}

/// Asks the teacher for reasoning plus `k` reprompts. Unparseable replies are
/// re-requested with a fresh seed up to `parse_retries` times.
pub fn generate_candidates(
    prompt: &UserPrompt,
    teacher: &dyn Teacher,
    k: usize,
    templates: &Templates,
    parse_retries: u32,
    seed: u64,
    at: i64,
) -> Result<CandidateSet, CurationError> {
    if k < 2 {
        return Err(CurationError::TooFewCandidates(k));
    }
    let mut last = None;
    for attempt in 0..=parse_retries {
        let mut req = ChatRequest::new(templates.messages(&prompt.text, k));
        req.temperature = Some(1.0);
        req.seed = Some(stable_hash(seed, &["teacher", &prompt.id, &attempt.to_string()]));
        let text = teacher.complete(&req)?;
        match parse_teacher_output(&text, k) {
            Ok((cot, candidates)) => {
                let mut provenance = prompt.provenance.clone();
                provenance.push(ProvenanceTag::new(Stage::Generated.tag(), at));
                return Ok(CandidateSet {
                    user_prompt: prompt.clone(),
                    cot,
                    candidates,
                    image_refs: Vec::new(),
                    stage: Stage::Generated,
                    provenance,
                });
            }
            Err(e) => {
                log::warn!("teacher reply for {} unparseable (attempt {}): {e}", prompt.id, attempt + 1);
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Offline teacher: reasons over the parsed prompt facts and offers explicit
/// restatements as candidates.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockTeacher;

const MOCK_EDITS: [RewriteEdit; 4] = [
    RewriteEdit::ExplicitAll,
    RewriteEdit::ExplicitEntities,
    RewriteEdit::ExplicitStructure,
    RewriteEdit::Boilerplate,
];

impl MockTeacher {
    pub fn reply(prompt: &str, k: usize) -> String {
        let facts = grammar::parse(prompt);
        let listed: Vec<String> = facts.iter().map(grammar::render_fact).collect();
        let cot = if listed.is_empty() {
            format!("Core elements: keep the request \"{prompt}\" intact and add scene detail.")
        } else {
            format!("Core elements: {}. Risks: weakly stated facts get dropped, so each is restated.", listed.join("; "))
        };
        let mut out = format!("<cot>\n{cot}\n</cot>\n");
        for i in 0..k {
            let mut text = MOCK_EDITS[i % MOCK_EDITS.len()].apply(prompt);
            if i >= MOCK_EDITS.len() {
                text.push_str(&format!(" Variant {}.", i / MOCK_EDITS.len() + 1));
            }
            out.push_str(&format!("<candidate>{text}</candidate>\n"));
        }
        out
    }
}

impl Teacher for MockTeacher {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .ok_or_else(|| ClientError::Malformed("no user message".into()))?;
        let prompt = user
            .content
            .rsplit_once("Request:")
            .map(|(_, p)| p.trim())
            .unwrap_or(user.content.trim());
        let k = request
            .messages
            .iter()
            .find(|m| m.role == "system")
            .and_then(|m| m.content.rsplit_once("Produce ").and_then(|(_, r)| r.split_whitespace().next()?.parse().ok()))
            .unwrap_or(3);
        Ok(Self::reply(prompt, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;

    #[test]
    fn parses_well_formed_reply() {
        let (cot, c) = parse_teacher_output("<cot>why</cot><candidate>a</candidate><candidate>b</candidate>", 2).unwrap();
        assert_eq!(cot, "why");
        assert_eq!(c, vec!["a", "b"]);
    }

    #[test]
    fn missing_cot_is_malformed() {
        let err = parse_teacher_output("<candidate>a</candidate><candidate>b</candidate>", 2).unwrap_err();
        assert!(matches!(err, CurationError::MalformedTeacherOutput(_)));
    }

    #[test]
    fn mock_teacher_round_trips_k() {
        let p = UserPrompt::new("p", "Three red apples on a plate.", Language::En);
        for k in [2, 3, 6] {
            let set = generate_candidates(&p, &MockTeacher, k, &Templates::default(), 0, 1, 0).unwrap();
            assert_eq!(set.candidates.len(), k);
            assert_eq!(set.stage, Stage::Generated);
        }
    }

    #[test]
    fn request_carries_both_directives() {
        let msgs = Templates::default().messages("a cat", 3);
        let body = serde_json::to_string(&msgs).unwrap();
        assert!(body.contains("four-level descriptive hierarchy"));
        assert!(body.contains("I. Sentence Structures"));
        assert!(body.contains("analysis dimensions"));
        assert!(body.contains("Example Output"));
        assert!(body.contains("Request: a cat"));
    }
}
