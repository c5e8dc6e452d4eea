//! Policy, image and judge backends, local or remote.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::client::{ChatClient, ChatMessage, ChatRequest, ClientError};
use super::edits::{action_library, RewriteEdit};
use super::OrchestratorError;
use crate::corpus::UserPrompt;
use crate::evaluator::{mock_t2i, Image, Judge};
use crate::grpo::ToyPolicy;
use crate::util::{derived_rng, stable_hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    /// Index into the action library, for finite policies.
    pub action: Option<usize>,
    pub logprob: Option<f64>,
}

/// Produces reprompt candidates for one user prompt.
pub trait PolicyBackend: Send + Sync {
    fn generate(&self, prompt: &UserPrompt, n: usize, seed: u64) -> Result<Vec<Candidate>, OrchestratorError>;
}

/// Edit texts per prompt id, shared across batches so each prompt is
/// rewritten once per run.
#[derive(Debug, Default)]
pub struct EditCache {
    texts: RwLock<HashMap<String, Arc<Vec<String>>>>,
}

impl EditCache {
    pub fn texts(&self, prompt: &UserPrompt) -> Arc<Vec<String>> {
        if let Some(hit) = self.texts.read().expect("cache poisoned").get(&prompt.id) {
            return hit.clone();
        }
        let texts = Arc::new(RewriteEdit::ALL.iter().map(|e| e.apply(&prompt.text)).collect::<Vec<_>>());
        self.texts
            .write()
            .expect("cache poisoned")
            .entry(prompt.id.clone())
            .or_insert(texts)
            .clone()
    }
}

/// Samples edits from a softmax policy over [`RewriteEdit::ALL`].
pub struct ToyRewriter {
    pub policy: ToyPolicy,
    pub greedy: bool,
    cache: Arc<EditCache>,
}

impl ToyRewriter {
    pub fn new(policy: ToyPolicy, greedy: bool, cache: Arc<EditCache>) -> Self {
        Self { policy, greedy, cache }
    }

    pub fn initial_policy() -> ToyPolicy {
        ToyPolicy::uniform(action_library())
    }
}

impl PolicyBackend for ToyRewriter {
    fn generate(&self, prompt: &UserPrompt, n: usize, seed: u64) -> Result<Vec<Candidate>, OrchestratorError> {
        if self.policy.actions != action_library() {
            return Err(OrchestratorError::Config("toy policy actions must match the edit library".into()));
        }
        let texts = self.cache.texts(prompt);
        let log_probs = self.policy.log_probs();
        let mut rng = derived_rng(seed, &["toy-rewriter"]);
        Ok((0..n)
            .map(|_| {
                let a = if self.greedy { self.policy.greedy() } else { self.policy.sample(&mut rng) };
                Candidate {
                    text: texts[a].clone(),
                    action: Some(a),
                    logprob: Some(log_probs[a]),
                }
            })
            .collect())
    }
}

/// Always applies one edit. Useful as a fixed rewriter for benchmarks.
#[derive(Debug, Clone, Copy)]
pub struct FixedEdit(pub RewriteEdit);

impl PolicyBackend for FixedEdit {
    fn generate(&self, prompt: &UserPrompt, n: usize, _seed: u64) -> Result<Vec<Candidate>, OrchestratorError> {
        let text = self.0.apply(&prompt.text);
        let action = RewriteEdit::ALL.iter().position(|e| *e == self.0);
        Ok(vec![
            Candidate {
                text,
                action,
                logprob: None,
            };
            n
        ])
    }
}

pub const REWRITER_SYSTEM_PROMPT: &str = "Rewrite the user's image prompt so that a text-to-image model renders every requirement. \
Think inside <cot></cot>, then write only the rewritten prompt.";

/// Reprompt generator behind a chat-completions endpoint.
pub struct ChatPolicy {
    client: Arc<ChatClient>,
    pub system_prompt: String,
    pub temperature: f64,
}

impl ChatPolicy {
    pub fn new(client: Arc<ChatClient>) -> Self {
        Self {
            client,
            system_prompt: REWRITER_SYSTEM_PROMPT.to_string(),
            temperature: 1.0,
        }
    }
}

/// The reprompt part of a policy response: whatever follows the reasoning.
pub fn strip_reasoning(text: &str) -> String {
    let tail = match text.rfind("</cot>") {
        Some(i) => &text[i + "</cot>".len()..],
        None => text,
    };
    tail.trim().to_string()
}

impl PolicyBackend for ChatPolicy {
    fn generate(&self, prompt: &UserPrompt, n: usize, seed: u64) -> Result<Vec<Candidate>, OrchestratorError> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut req = ChatRequest::new(vec![
                    ChatMessage::system(self.system_prompt.clone()),
                    ChatMessage::user(prompt.text.clone()),
                ]);
                req.temperature = Some(self.temperature);
                req.logprobs = true;
                req.seed = Some(stable_hash(seed, &["chat-policy", &i.to_string()]));
                let resp = self.client.chat_complete(&req)?;
                Ok(Candidate {
                    text: strip_reasoning(&resp.text),
                    action: None,
                    logprob: resp.total_logprob(),
                })
            })
            .collect()
    }
}

pub trait T2iBackend: Send + Sync {
    fn render(&self, text: &str, seed: u64) -> Result<Image, OrchestratorError>;

    fn is_local(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockT2i;

impl T2iBackend for MockT2i {
    fn render(&self, text: &str, seed: u64) -> Result<Image, OrchestratorError> {
        Ok(Image::Scene(mock_t2i(text, seed)))
    }

    fn is_local(&self) -> bool {
        true
    }
}

/// Image-generation endpoint returning a URL or inline base64 payload.
pub struct HttpImage {
    client: Arc<ChatClient>,
}

impl HttpImage {
    pub fn new(client: Arc<ChatClient>) -> Self {
        Self { client }
    }
}

impl T2iBackend for HttpImage {
    fn render(&self, text: &str, seed: u64) -> Result<Image, OrchestratorError> {
        let body = json!({
            "model": self.client.config().model,
            "prompt": text,
            "n": 1,
            "seed": seed,
        });
        let raw = self.client.post_json("images/generations", body.to_string())?;
        let value: Value =
            serde_json::from_str(&raw).map_err(|e| ClientError::Malformed(format!("image response: {e}")))?;
        let item = &value["data"][0];
        if let Some(url) = item["url"].as_str() {
            Ok(Image::Reference(url.to_string()))
        } else if let Some(b64) = item["b64_json"].as_str() {
            Ok(Image::Reference(format!("data:image/png;base64,{b64}")))
        } else {
            Err(ClientError::Malformed("image response has neither url nor b64_json".into()).into())
        }
    }
}

/// Where reprompts come from.
#[derive(Clone)]
pub enum PolicySource {
    /// Trainable softmax over edits; updated in place by the orchestrator.
    Toy { initial: ToyPolicy, greedy: bool },
    Remote(Arc<dyn PolicyBackend>),
}

#[derive(Clone)]
pub struct BackendSet {
    pub policy: PolicySource,
    pub t2i: Arc<dyn T2iBackend>,
    pub judge: Arc<dyn Judge>,
}

impl BackendSet {
    /// Toy policy, mock renderer and oracle judge.
    pub fn hermetic() -> Self {
        Self {
            policy: PolicySource::Toy {
                initial: ToyRewriter::initial_policy(),
                greedy: false,
            },
            t2i: Arc::new(MockT2i),
            judge: Arc::new(crate::evaluator::OracleJudge),
        }
    }

    pub fn is_hermetic(&self) -> bool {
        matches!(self.policy, PolicySource::Toy { .. }) && self.t2i.is_local() && self.judge.is_local()
    }
}

/// Seeded fault injection around another renderer: fails every render whose
/// text contains `needle`, or a fraction `rate` of renders.
pub struct FlakyT2i<B> {
    pub inner: B,
    pub needle: Option<String>,
    pub rate: f64,
}

impl<B: T2iBackend> T2iBackend for FlakyT2i<B> {
    fn render(&self, text: &str, seed: u64) -> Result<Image, OrchestratorError> {
        let hit_needle = self.needle.as_deref().is_some_and(|n| text.contains(n));
        let hit_rate = self.rate > 0.0 && derived_rng(seed, &["flaky", text]).random_bool(self.rate.min(1.0));
        if hit_needle || hit_rate {
            return Err(ClientError::Transport { attempts: 1, message: "injected render failure".into() }.into());
        }
        self.inner.render(text, seed)
    }

    fn is_local(&self) -> bool {
        self.inner.is_local()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;

    #[test]
    fn greedy_toy_repeats_best_action() {
        let mut policy = ToyRewriter::initial_policy();
        policy.logits[5] = 3.0;
        let r = ToyRewriter::new(policy, true, Arc::default());
        let p = UserPrompt::new("p", "Three red apples.", Language::En);
        let c = r.generate(&p, 8, 1).unwrap();
        assert!(c.iter().all(|x| x.action == Some(5) && x.text == c[0].text));
    }

    #[test]
    fn reasoning_is_stripped() {
        assert_eq!(strip_reasoning("<cot>think</cot>\n A cat. "), "A cat.");
        assert_eq!(strip_reasoning("A cat."), "A cat.");
    }

    #[test]
    fn hermetic_set_is_local() {
        assert!(BackendSet::hermetic().is_hermetic());
    }
}
