//! Rule-based candidate filter. Every rule is a pure function of the user
//! prompt, the candidate and [`FilterRules`].

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{CandidateSet, CurationError, Stage};
use crate::corpus::{Language, UserPrompt};
use crate::evaluator::grammar::{singularize, KNOWLEDGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    SemanticDeviation,
    InformationLoss,
    Incoherence,
    LengthBounds,
}

impl FilterReason {
    pub const ALL: [FilterReason; 4] = [
        FilterReason::SemanticDeviation,
        FilterReason::InformationLoss,
        FilterReason::Incoherence,
        FilterReason::LengthBounds,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub candidate_index: usize,
    pub keep: bool,
    pub reasons: Vec<FilterReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterRules {
    pub min_chars: usize,
    pub max_chars: usize,
    /// A token, or a short block of tokens, repeated this many times in a
    /// row is degenerate.
    pub max_token_repeat: usize,
    /// A non-space character repeated this many times in a row is degenerate.
    pub max_char_run: usize,
    /// Below this share of distinct trigrams the text is looping.
    pub min_distinct_trigram_ratio: f64,
    /// Trigram check applies from this many trigrams on.
    pub min_trigrams: usize,
    /// Extra names treated as entities that must survive rewriting.
    pub entity_lexicon: Vec<String>,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            min_chars: 4,
            max_chars: 2000,
            max_token_repeat: 4,
            max_char_run: 10,
            min_distinct_trigram_ratio: 0.5,
            min_trigrams: 12,
            entity_lexicon: KNOWLEDGE.iter().map(|s| s.to_string()).collect(),
        }
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to", "for", "with", "by", "from", "as", "is", "are",
    "was", "were", "be", "been", "it", "its", "this", "that", "these", "those", "there", "their", "his", "her", "my",
    "your", "our", "some", "very", "into", "onto", "over", "under", "up", "down", "out", "no", "not", "all", "each",
    "one", "has", "have", "had", "while", "which", "who", "what", "where", "when", "than", "then", "so", "such",
    "image", "picture", "photo",
];
const MAX_LOOP_PERIOD: usize = 8;
const ZH_FUNCTION_CHARS: &str = "的了是在和与及或一个只把被着也都很就这那有中上下里之其为以于";

fn is_cjk(c: char) -> bool {
    ('\u{4e00}'..='\u{9fff}').contains(&c) || ('\u{3400}'..='\u{4dbf}').contains(&c)
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-')
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Normalised content units: singular non-stopwords, or content characters
/// for Chinese text.
fn content_units(text: &str, language: Language) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = words(text)
        .into_iter()
        .filter(|w| !w.chars().any(is_cjk) && w.chars().count() > 1 && !STOPWORDS.contains(&w.as_str()))
        .map(|w| singularize(&w))
        .collect();
    if language == Language::Zh || text.chars().any(is_cjk) {
        out.extend(
            text.chars()
                .filter(|c| is_cjk(*c) && !ZH_FUNCTION_CHARS.contains(*c))
                .map(String::from),
        );
    }
    out
}

fn quoted_spans(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (open, close) in [('"', '"'), ('\u{201c}', '\u{201d}'), ('「', '」'), ('《', '》')] {
        let mut rest = text;
        while let Some(s) = rest.find(open) {
            let after = &rest[s + open.len_utf8()..];
            let Some(e) = after.find(close) else { break };
            let span = after[..e].trim();
            if !span.is_empty() {
                out.push(span.to_string());
            }
            rest = &after[e + close.len_utf8()..];
        }
    }
    out
}

/// Runs of capitalised words; a run at a sentence start counts only when it
/// is at least two words long after dropping a leading article.
fn capitalised_names(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for sentence in text.split(['.', '!', '?', ';', ':', '\n']) {
        let tokens: Vec<&str> = sentence
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        let mut i = 0;
        while i < tokens.len() {
            let starts_upper = |t: &str| {
                t.trim_matches(|c: char| !c.is_alphanumeric())
                    .chars()
                    .next()
                    .is_some_and(char::is_uppercase)
            };
            if !starts_upper(tokens[i]) {
                i += 1;
                continue;
            }
            let start = i;
            while i < tokens.len() && starts_upper(tokens[i]) {
                i += 1;
            }
            let mut run: Vec<&str> = tokens[start..i]
                .iter()
                .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
                .collect();
            if start == 0 && run.first().is_some_and(|w| ["A", "An", "The"].contains(w)) {
                run.remove(0);
            }
            let at_start = start == 0;
            if !run.is_empty() && (!at_start || run.len() >= 2) {
                out.push(run.join(" "));
            }
        }
    }
    out
}

/// Names the candidate must keep: quoted spans, capitalised names and
/// lexicon entries found in the prompt.
pub fn named_entities(prompt: &str, rules: &FilterRules) -> Vec<String> {
    let mut out = quoted_spans(prompt);
    out.extend(capitalised_names(prompt));
    let lower = prompt.to_lowercase();
    out.extend(
        rules
            .entity_lexicon
            .iter()
            .filter(|e| !e.is_empty() && lower.contains(&e.to_lowercase()))
            .cloned(),
    );
    let mut seen = HashSet::new();
    out.retain(|e| seen.insert(e.to_lowercase()));
    out
}

fn is_incoherent(text: &str, rules: &FilterRules) -> bool {
    let mut run = 0;
    let mut prev = None;
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        if Some(c) == prev {
            run += 1;
        } else {
            run = 1;
            prev = Some(c);
        }
        if run >= rules.max_char_run {
            return true;
        }
    }

    let tokens: Vec<String> = if text.chars().any(is_cjk) {
        text.chars().filter(|c| !c.is_whitespace() && !c.is_ascii_punctuation()).map(String::from).collect()
    } else {
        words(text)
    };
    // a block of up to eight tokens repeated back to back
    for period in 1..=MAX_LOOP_PERIOD.min(tokens.len() / 2) {
        let mut run = 0;
        for i in period..tokens.len() {
            run = if tokens[i] == tokens[i - period] { run + 1 } else { 0 };
            if run >= period * (rules.max_token_repeat.max(2) - 1) {
                return true;
            }
        }
    }
    if tokens.len() >= rules.min_trigrams + 2 {
        let trigrams: Vec<&[String]> = tokens.windows(3).collect();
        let distinct: HashSet<&[String]> = trigrams.iter().copied().collect();
        if (distinct.len() as f64) < rules.min_distinct_trigram_ratio * trigrams.len() as f64 {
            return true;
        }
    }
    false
}

/// Every rule `candidate` breaks, in [`FilterReason::ALL`] order.
pub fn check_candidate(prompt: &UserPrompt, candidate: &str, rules: &FilterRules) -> Vec<FilterReason> {
    let mut reasons = Vec::new();
    let wanted = content_units(&prompt.text, prompt.language);
    if !wanted.is_empty() {
        let have = content_units(candidate, prompt.language);
        if wanted.is_disjoint(&have) {
            reasons.push(FilterReason::SemanticDeviation);
        }
    }
    let lower = candidate.to_lowercase();
    let quotes = quoted_spans(&prompt.text);
    let lost = named_entities(&prompt.text, rules).iter().any(|e| {
        if quotes.contains(e) {
            !candidate.contains(e.as_str())
        } else {
            !lower.contains(&e.to_lowercase())
        }
    });
    if lost {
        reasons.push(FilterReason::InformationLoss);
    }
    if is_incoherent(candidate, rules) {
        reasons.push(FilterReason::Incoherence);
    }
    let n = candidate.trim().chars().count();
    if n < rules.min_chars || n > rules.max_chars {
        reasons.push(FilterReason::LengthBounds);
    }
    reasons
}

/// Drops every candidate that breaks a rule. Survivors keep their order and
/// image references.
pub fn auto_filter(
    mut set: CandidateSet,
    rules: &FilterRules,
    at: i64,
) -> Result<(CandidateSet, Vec<FilterVerdict>), CurationError> {
    set.require(Stage::Generated)?;
    let verdicts: Vec<FilterVerdict> = set
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let reasons = check_candidate(&set.user_prompt, c, rules);
            FilterVerdict {
                candidate_index: i,
                keep: reasons.is_empty(),
                reasons,
            }
        })
        .collect();
    let keep: Vec<bool> = verdicts.iter().map(|v| v.keep).collect();
    let mut k = keep.iter();
    set.candidates.retain(|_| *k.next().expect("one verdict per candidate"));
    if !set.image_refs.is_empty() {
        let mut k = keep.iter();
        set.image_refs.retain(|_| *k.next().expect("one verdict per image"));
    }
    set.advance(Stage::Filtered, at)?;
    Ok((set, verdicts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn en(text: &str) -> UserPrompt {
        UserPrompt::new("p", text, Language::En)
    }

    #[test]
    fn verbatim_candidate_passes() {
        let p = en("The Eiffel Tower at night with \"Bonjour\" written in lights.");
        assert!(check_candidate(&p, &p.text, &FilterRules::default()).is_empty());
    }

    #[test]
    fn dropping_the_only_name_is_information_loss() {
        let p = en("A cat sleeping next to Big Ben.");
        let r = check_candidate(&p, "A cat sleeping next to a clock tower in soft light.", &FilterRules::default());
        assert_eq!(r, vec![FilterReason::InformationLoss]);
    }

    #[test]
    fn degenerate_repetition() {
        let p = en("a cat");
        let r = check_candidate(&p, &"a".repeat(10_000), &FilterRules::default());
        assert!(r.contains(&FilterReason::Incoherence));
        assert!(r.contains(&FilterReason::LengthBounds));
    }

    #[test]
    fn unrelated_candidate_deviates() {
        let p = en("three red apples on a plate");
        let r = check_candidate(&p, "A snowy mountain range under a violet sky.", &FilterRules::default());
        assert_eq!(r, vec![FilterReason::SemanticDeviation]);
    }

    #[test]
    fn chinese_overlap_uses_characters() {
        let p = UserPrompt::new("z", "一碗牛肉面，不要葱花", Language::Zh);
        assert!(check_candidate(&p, "一碗清汤牛肉面，面上没有任何葱花。", &FilterRules::default()).is_empty());
        assert_eq!(
            check_candidate(&p, "雪山下的湖泊倒映着晚霞。", &FilterRules::default()),
            vec![FilterReason::SemanticDeviation]
        );
    }

    #[test]
    fn sentence_initial_capital_is_not_a_name() {
        assert!(capitalised_names("Three dogs run.").is_empty());
        assert_eq!(capitalised_names("The Great Wall at dawn"), vec!["Great Wall"]);
        assert_eq!(capitalised_names("a poster of Paris"), vec!["Paris"]);
    }
}
