//! The toy rewriter's action library: deterministic prompt edits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::evaluator::grammar::{self, number_value, Fact};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewriteEdit {
    Identity,
    Boilerplate,
    VagueCounts,
    ExplicitEntities,
    ExplicitStructure,
    ExplicitAll,
}

const BOILERPLATE: &str = ", highly detailed, cinematic lighting";

impl RewriteEdit {
    pub const ALL: [RewriteEdit; 6] = [
        RewriteEdit::Identity,
        RewriteEdit::Boilerplate,
        RewriteEdit::VagueCounts,
        RewriteEdit::ExplicitEntities,
        RewriteEdit::ExplicitStructure,
        RewriteEdit::ExplicitAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewriteEdit::Identity => "identity",
            RewriteEdit::Boilerplate => "boilerplate",
            RewriteEdit::VagueCounts => "vague-counts",
            RewriteEdit::ExplicitEntities => "explicit-entities",
            RewriteEdit::ExplicitStructure => "explicit-structure",
            RewriteEdit::ExplicitAll => "explicit-all",
        }
    }

    pub fn apply(self, text: &str) -> String {
        let restate = |keep: &dyn Fn(&Fact) -> bool| {
            let facts = grammar::parse(text);
            let extra = grammar::render_explicit(facts.iter().filter(|f| keep(f)));
            if extra.is_empty() {
                text.to_string()
            } else {
                format!("{} {extra}", text.trim_end())
            }
        };
        match self {
            RewriteEdit::Identity => text.to_string(),
            RewriteEdit::Boilerplate => {
                let base = text.trim_end().trim_end_matches('.');
                format!("{base}{BOILERPLATE}.")
            }
            RewriteEdit::VagueCounts => vague_counts(text),
            RewriteEdit::ExplicitEntities => restate(&|f| f.is_object_level()),
            RewriteEdit::ExplicitStructure => restate(&|f| !f.is_object_level()),
            RewriteEdit::ExplicitAll => restate(&|_| true),
        }
    }
}

/// Replaces every stated number with "some", keeping the rest verbatim.
fn vague_counts(text: &str) -> String {
    text.split(' ')
        .map(|word| {
            let core = word.trim_matches(|c: char| !c.is_alphanumeric());
            if !core.is_empty() && number_value(&core.to_lowercase()).is_some() {
                let some = if core.starts_with(char::is_uppercase) { "Some" } else { "some" };
                word.replacen(core, some, 1)
            } else {
                word.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for RewriteEdit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewriteEdit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown edit {s:?}"))
    }
}

/// Action names in index order, as used by the toy policy.
pub fn action_library() -> Vec<String> {
    RewriteEdit::ALL.iter().map(|e| e.name().to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in RewriteEdit::ALL {
            assert_eq!(e.name().parse::<RewriteEdit>().unwrap(), e);
        }
        assert_eq!(action_library().len(), RewriteEdit::ALL.len());
    }

    #[test]
    fn vague_counts_drops_numbers() {
        assert_eq!(
            RewriteEdit::VagueCounts.apply("Four dogs and 3 cats, one bird."),
            "Some dogs and some cats, some bird."
        );
    }

    #[test]
    fn explicit_all_marks_every_fact() {
        let text = "Two large spheres next to a wooden box.";
        let out = grammar::parse(&RewriteEdit::ExplicitAll.apply(text));
        assert!(out.facts.iter().all(|s| s.explicit));
        assert_eq!(out.keys(), grammar::parse(text).keys());
    }

    #[test]
    fn identity_and_boilerplate() {
        assert_eq!(RewriteEdit::Identity.apply("A cat."), "A cat.");
        assert_eq!(RewriteEdit::Boilerplate.apply("A cat."), "A cat, highly detailed, cinematic lighting.");
    }
}
