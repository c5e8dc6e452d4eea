use std::collections::HashMap;

use serde::Deserialize;

use super::{EvaluatorError, Image, Judge};
use crate::corpus::{UserPrompt, Verdict};
use crate::orchestrator::client::{ChatClient, ChatMessage, ChatRequest};
use crate::taxonomy::KeyPoint;

/// Default judge prompt; `{{image}}`, `{{prompt}}` and `{{checklist}}` are
/// substituted.
pub const JUDGE_TEMPLATE: &str = include_str!("../../assets/judge_prompt.txt");

#[derive(Debug, Deserialize)]
struct JudgeBlock {
    keypoint_id: String,
    score: f64,
    #[serde(default)]
    tic_pass: Option<bool>,
    #[serde(default)]
    si_pass: Option<bool>,
    #[serde(default)]
    rationale: String,
}

pub fn render_judge_prompt(template: &str, image_ref: &str, prompt: &str, keypoints: &[&KeyPoint]) -> String {
    let checklist: Vec<String> = keypoints
        .iter()
        .map(|kp| {
            let structure = if kp.criteria.requires_structure() { " [structure]" } else { "" };
            format!("- {}: {}{}", kp.id, kp.description, structure)
        })
        .collect();
    template
        .replace("{{image}}", image_ref)
        .replace("{{prompt}}", prompt)
        .replace("{{checklist}}", &checklist.join("\n"))
}

/// Top-level `{...}` spans of `text`, string-aware.
fn object_spans(text: &str) -> Vec<&str> {
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' if depth > 0 => in_string = true,
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    spans
}

/// Parses one verdict per requested keypoint out of a judge response.
pub fn parse_judgment(
    text: &str,
    record_id: &str,
    keypoints: &[&KeyPoint],
    judge_id: &str,
) -> Result<Vec<Verdict>, EvaluatorError> {
    let mut blocks: HashMap<String, JudgeBlock> = HashMap::new();
    for span in object_spans(text) {
        let Ok(block) = serde_json::from_str::<JudgeBlock>(span) else {
            continue;
        };
        if !(0.0..=1.0).contains(&block.score) || !block.score.is_finite() {
            return Err(EvaluatorError::MalformedJudgment(format!(
                "score {} for `{}` outside [0, 1]",
                block.score, block.keypoint_id
            )));
        }
        blocks.insert(block.keypoint_id.clone(), block);
    }
    keypoints
        .iter()
        .map(|kp| {
            let block = blocks
                .remove(&kp.id)
                .ok_or_else(|| EvaluatorError::MalformedJudgment(format!("no block for `{}`", kp.id)))?;
            Ok(Verdict::from_score(
                record_id,
                &kp.id,
                block.score,
                block.tic_pass,
                block.si_pass,
                judge_id,
                block.rationale,
            ))
        })
        .collect()
}

/// Judge reached over a chat-completions endpoint.
pub struct RemoteJudge {
    client: ChatClient,
    template: String,
    judge_id: String,
    /// Extra requests made when a response fails to parse.
    pub parse_retries: u32,
}

impl RemoteJudge {
    pub fn new(client: ChatClient) -> Self {
        let judge_id = format!("remote:{}", client.config().model);
        Self {
            client,
            template: JUDGE_TEMPLATE.to_string(),
            judge_id,
            parse_retries: 2,
        }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn client(&self) -> &ChatClient {
        &self.client
    }

    pub fn remote_judge(&self, image_ref: &str, prompt: &UserPrompt, keypoints: &[&KeyPoint]) -> Result<Vec<Verdict>, EvaluatorError> {
        let body = render_judge_prompt(&self.template, image_ref, &prompt.text, keypoints);
        let request = ChatRequest {
            temperature: Some(0.0),
            ..ChatRequest::new(vec![ChatMessage::user(body)])
        };
        let mut last = None;
        for _ in 0..=self.parse_retries {
            let response = self
                .client
                .chat_complete(&request)
                .map_err(|e| EvaluatorError::Transport(e.to_string()))?;
            match parse_judgment(&response.text, &prompt.id, keypoints, &self.judge_id) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("judge response for {} rejected: {e}", prompt.id);
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| EvaluatorError::MalformedJudgment("no attempts".into())))
    }
}

impl Judge for RemoteJudge {
    fn id(&self) -> &str {
        &self.judge_id
    }

    fn judge(&self, image: &Image, prompt: &UserPrompt, keypoints: &[&KeyPoint]) -> Result<Vec<Verdict>, EvaluatorError> {
        self.remote_judge(&image.reference(), prompt, keypoints)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy;

    fn kps(ids: &[&str]) -> Vec<&'static KeyPoint> {
        ids.iter().map(|i| taxonomy::lookup(i).unwrap()).collect()
    }

    #[test]
    fn parses_blocks_among_prose() {
        let text = r#"Sure.
{"keypoint_id": "counting", "score": 0.5, "rationale": "four {dogs}"}
```json
{"keypoint_id": "hand-action", "score": 1, "tic_pass": true, "si_pass": false, "rationale": "six fingers"}
```"#;
        let v = parse_judgment(text, "r", &kps(&["counting", "hand-action"]), "j").unwrap();
        assert!(v[0].pass);
        assert_eq!(v[0].rationale, "four {dogs}");
        assert!(!v[1].pass);
        assert_eq!(v[1].si_pass, Some(false));
    }

    #[test]
    fn missing_or_bad_blocks_are_malformed() {
        let only_one = r#"{"keypoint_id": "counting", "score": 1}"#;
        assert!(parse_judgment(only_one, "r", &kps(&["counting", "size"]), "j").is_err());
        let out_of_range = r#"{"keypoint_id": "counting", "score": 3}"#;
        assert!(parse_judgment(out_of_range, "r", &kps(&["counting"]), "j").is_err());
    }

    #[test]
    fn template_mentions_every_keypoint() {
        let rendered = render_judge_prompt(JUDGE_TEMPLATE, "img://1", "four dogs", &kps(&["counting", "hand-action"]));
        assert!(rendered.contains("- counting:"));
        assert!(rendered.contains("hand-action") && rendered.contains("[structure]"));
        assert!(rendered.contains("four dogs") && rendered.contains("img://1"));
    }
}
