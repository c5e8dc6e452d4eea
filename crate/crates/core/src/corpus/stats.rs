use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Language, PromptLike, Theme};
use crate::taxonomy;

/// Width of one prompt-length histogram bucket, in characters.
pub const LENGTH_BUCKET_CHARS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageShare {
    pub language: Language,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeShare {
    pub theme: Theme,
    pub count: usize,
    pub percent: f64,
}

/// Distribution summary of a set of prompt-bearing records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total: usize,
    pub languages: Vec<LanguageShare>,
    /// Bucket lower bound (characters) to count.
    pub length_histogram: BTreeMap<usize, usize>,
    /// Keypoints per record to count.
    pub density_histogram: BTreeMap<usize, usize>,
    pub themes: Vec<ThemeShare>,
    pub mean_length_chars: f64,
}

impl StatsReport {
    /// Most frequent keypoint count; ties go to the smaller count.
    pub fn density_mode(&self) -> Option<usize> {
        self.density_histogram
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(k, _)| *k)
    }

    pub fn language_share(&self, language: Language) -> Option<&LanguageShare> {
        self.languages.iter().find(|s| s.language == language)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "records: {}", self.total);
        let _ = writeln!(out, "mean length (chars): {:.1}", self.mean_length_chars);
        let _ = writeln!(out, "\nlanguage  count  percent");
        for s in &self.languages {
            let _ = writeln!(out, "{:<8}  {:>5}  {:>6.1}%", s.language.code(), s.count, s.percent);
        }
        if !self.themes.is_empty() {
            let _ = writeln!(out, "\ntheme         count  percent");
            for s in &self.themes {
                let _ = writeln!(out, "{:<12}  {:>5}  {:>6.1}%", format!("{:?}", s.theme), s.count, s.percent);
            }
        }
        let _ = writeln!(out, "\nkeypoints/record  count");
        for (k, v) in &self.density_histogram {
            let _ = writeln!(out, "{k:>16}  {v:>5}");
        }
        let _ = writeln!(out, "\nlength bucket (chars)  count");
        for (k, v) in &self.length_histogram {
            let _ = writeln!(out, "{:>9}-{:<11}  {v:>5}", k, k + LENGTH_BUCKET_CHARS - 1);
        }
        out
    }
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 * 100.0 / total as f64
    }
}

pub fn dataset_stats<R: PromptLike>(records: &[R]) -> StatsReport {
    if records.is_empty() {
        return StatsReport::default();
    }
    let total = records.len();
    let mut by_language: BTreeMap<Language, usize> = BTreeMap::new();
    let mut by_theme: BTreeMap<Theme, usize> = BTreeMap::new();
    let mut length_histogram = BTreeMap::new();
    let mut density_histogram = BTreeMap::new();
    let mut length_sum = 0usize;

    for r in records {
        *by_language.entry(r.language()).or_default() += 1;
        if let Some(theme) = r.theme() {
            *by_theme.entry(theme).or_default() += 1;
        }
        let chars = r.prompt_text().chars().count();
        length_sum += chars;
        *length_histogram
            .entry(chars / LENGTH_BUCKET_CHARS * LENGTH_BUCKET_CHARS)
            .or_default() += 1;
        *density_histogram.entry(r.keypoints().len()).or_default() += 1;
    }

    let themed: usize = by_theme.values().sum();
    StatsReport {
        total,
        languages: by_language
            .into_iter()
            .map(|(language, count)| LanguageShare {
                language,
                count,
                percent: percent(count, total),
            })
            .collect(),
        length_histogram,
        density_histogram,
        themes: by_theme
            .into_iter()
            .map(|(theme, count)| ThemeShare {
                theme,
                count,
                percent: percent(count, themed),
            })
            .collect(),
        mean_length_chars: length_sum as f64 / total as f64,
    }
}

/// Symmetric keypoint co-occurrence counts over the `top_k` most frequent
/// keypoints. The diagonal holds keypoint frequencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub keypoints: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl CooccurrenceMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<u64> {
        let i = self.keypoints.iter().position(|k| k == a)?;
        let j = self.keypoints.iter().position(|k| k == b)?;
        Some(self.counts[i][j])
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.keypoints.len();
        (0..n).all(|i| (0..n).all(|j| self.counts[i][j] == self.counts[j][i]))
    }
}

/// Ranks keypoints by frequency (ties broken by taxonomy order, then by id)
/// and keeps the first `top_k`. When fewer keypoints are observed the
/// ranking is padded with unobserved canonical keypoints so the matrix
/// keeps its requested shape.
pub fn cooccurrence<R: PromptLike>(records: &[R], top_k: usize) -> CooccurrenceMatrix {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for r in records {
        let distinct: BTreeSet<&str> = r.keypoints().iter().map(String::as_str).collect();
        for k in distinct {
            *freq.entry(k).or_default() += 1;
        }
    }
    let mut ranked: Vec<&str> = freq.keys().copied().collect();
    for kp in taxonomy::registry() {
        if !freq.contains_key(kp.id.as_str()) {
            ranked.push(kp.id.as_str());
        }
    }
    let order_key = |id: &str| taxonomy::position(id).unwrap_or(usize::MAX);
    ranked.sort_by(|a, b| {
        let fa = freq.get(a).copied().unwrap_or(0);
        let fb = freq.get(b).copied().unwrap_or(0);
        fb.cmp(&fa)
            .then(order_key(a).cmp(&order_key(b)))
            .then(a.cmp(b))
    });
    ranked.truncate(top_k);

    let index: HashMap<&str, usize> = ranked.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let n = ranked.len();
    let mut counts = vec![vec![0u64; n]; n];
    for r in records {
        let present: BTreeSet<usize> = r
            .keypoints()
            .iter()
            .filter_map(|k| index.get(k.as_str()).copied())
            .collect();
        for &i in &present {
            for &j in &present {
                counts[i][j] += 1;
            }
        }
    }
    CooccurrenceMatrix {
        keypoints: ranked.into_iter().map(str::to_string).collect(),
        counts,
    }
}
