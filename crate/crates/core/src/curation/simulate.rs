//! Turns long image descriptions into short, query-like user prompts.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::corpus::{Language, ProvenanceTag, UserPrompt};
use crate::util::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Word cap for English prompts.
    pub max_words: usize,
    /// Character cap for Chinese prompts.
    pub max_chars_zh: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            max_words: 12,
            max_chars_zh: 24,
        }
    }
}

const EN_LEADS: &[&str] = &[
    "this image shows",
    "this image depicts",
    "the image shows",
    "the image depicts",
    "the picture shows",
    "this is a photo of",
    "this is an image of",
    "a photo of",
    "an image of",
    "in this image,",
    "in the image,",
];
const ZH_LEADS: &[&str] = &["这张图片展示了", "这幅图描绘了", "这张照片展示了", "图片中", "图中"];
const EN_TAIL_STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "with", "of", "in", "on", "at", "to", "while", "as", "by", "for", "its", "their",
];

fn strip_lead<'a>(text: &'a str, leads: &[&str]) -> &'a str {
    let lower = text.to_lowercase();
    for lead in leads {
        if lower.starts_with(lead) && text.is_char_boundary(lead.len()) {
            return text[lead.len()..].trim_start_matches([' ', ',', ':']);
        }
    }
    text
}

fn drop_parens(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    for c in text.chars() {
        match c {
            '(' | '（' => depth += 1,
            ')' | '）' => depth = depth.saturating_sub(1),
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn shorten_en(source: &str, cfg: &SimulateConfig, rng: &mut ChaCha8Rng) -> String {
    let body = strip_lead(source.trim(), EN_LEADS);
    let sentence = body.split(['.', '!', '?']).find(|s| !s.trim().is_empty()).unwrap_or(body);
    let sentence = drop_parens(sentence);
    let clause = if rng.random_bool(0.5) {
        sentence.split([',', ';']).next().unwrap_or(&sentence).to_string()
    } else {
        sentence.clone()
    };
    let mut words: Vec<&str> = clause.split_whitespace().collect();
    words.truncate(cfg.max_words.max(1));
    while words.len() > 1 && EN_TAIL_STOPWORDS.contains(&words[words.len() - 1].to_lowercase().as_str()) {
        words.pop();
    }
    let mut out = words.join(" ");
    if rng.random_bool(0.5) {
        let mut c = out.chars();
        if let Some(first) = c.next() {
            out = first.to_lowercase().collect::<String>() + c.as_str();
        }
    }
    out.trim_end_matches([',', ';', ':']).to_string()
}

fn shorten_zh(source: &str, cfg: &SimulateConfig, rng: &mut ChaCha8Rng) -> String {
    let body = strip_lead(source.trim(), ZH_LEADS);
    let sentence = body.split(['。', '！', '？']).find(|s| !s.trim().is_empty()).unwrap_or(body);
    let sentence = drop_parens(sentence);
    let clause = if rng.random_bool(0.5) {
        sentence.split(['，', '；', ',']).next().unwrap_or(&sentence).to_string()
    } else {
        sentence
    };
    clause.chars().take(cfg.max_chars_zh.max(1)).collect()
}

fn shorter_than(mut candidate: String, source: &str, language: Language) -> String {
    let n = source.trim().chars().count();
    while candidate.chars().count() >= n && n > 1 {
        candidate = match language {
            Language::En => match candidate.rsplit_once(' ') {
                Some((head, _)) => head.to_string(),
                // a single word is already as short as a query gets
                None => break,
            },
            Language::Zh => candidate.chars().take(n - 1).collect(),
        };
    }
    candidate
}

/// `target` prompts drawn from `corpus` (without replacement while the corpus
/// lasts, with replacement beyond), each shortened from its source. `at`
/// stamps the provenance; the output is a pure function of the arguments.
pub fn simulate_prompts(
    corpus: &[UserPrompt],
    target: usize,
    seed: u64,
    cfg: &SimulateConfig,
    at: i64,
) -> Result<Vec<UserPrompt>, CurationError> {
    if corpus.is_empty() {
        return Err(CurationError::EmptyCorpus);
    }
    let mut rng = derived_rng(seed, &["simulate"]);
    let picks: Vec<usize> = if target <= corpus.len() {
        let mut idx: Vec<usize> = (0..corpus.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(target);
        idx
    } else {
        let all: Vec<usize> = (0..corpus.len()).collect();
        (0..target).map(|_| *all.choose(&mut rng).expect("non-empty")).collect()
    };
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(i, src)| {
            let source = &corpus[src];
            let mut r = derived_rng(seed, &["simulate", &i.to_string(), &source.id]);
            let short = match source.language {
                Language::En => shorten_en(&source.text, cfg, &mut r),
                Language::Zh => shorten_zh(&source.text, cfg, &mut r),
            };
            let mut prompt = UserPrompt::new(
                format!("sim-{seed}-{i}"),
                shorter_than(short, &source.text, source.language),
                source.language,
            );
            prompt.theme = source.theme;
            prompt.subtheme = source.subtheme.clone();
            prompt.provenance = source.provenance.clone();
            prompt.provenance.push(ProvenanceTag::new("simulated", at));
            prompt.extra.insert("source_id".into(), source.id.clone().into());
            prompt
        })
        .collect())
}
