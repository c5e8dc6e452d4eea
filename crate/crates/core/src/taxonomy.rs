//! Canonical registry of the 24 alignment keypoints.
//!
//! The registry is compiled in and immutable. Ids are lowercase hyphenated
//! slugs derived from the keypoint names and act as join keys between
//! datasets, verdict logs and reports.

use std::collections::HashSet;
use std::fmt;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of keypoints in the canonical registry.
pub const KEYPOINT_COUNT: usize = 24;
/// Number of super-categories in the canonical registry.
pub const SUPER_CATEGORY_COUNT: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown keypoint `{0}`")]
    UnknownKeyPoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SuperCategory {
    LinguisticComprehension,
    VisualAttributes,
    ActionInteraction,
    RelationsStructure,
    WorldKnowledgeReasoning,
    SceneTextTypography,
}

impl SuperCategory {
    pub const ALL: [SuperCategory; SUPER_CATEGORY_COUNT] = [
        SuperCategory::LinguisticComprehension,
        SuperCategory::VisualAttributes,
        SuperCategory::ActionInteraction,
        SuperCategory::RelationsStructure,
        SuperCategory::WorldKnowledgeReasoning,
        SuperCategory::SceneTextTypography,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            SuperCategory::LinguisticComprehension => "Linguistic Comprehension",
            SuperCategory::VisualAttributes => "Visual Attributes",
            SuperCategory::ActionInteraction => "Action & Interaction",
            SuperCategory::RelationsStructure => "Relations & Structure",
            SuperCategory::WorldKnowledgeReasoning => "World Knowledge & Reasoning",
            SuperCategory::SceneTextTypography => "Scene Text & Typography",
        }
    }
}

/// Which judgement a keypoint requires: text-image consistency, structural
/// integrity, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criteria {
    #[serde(rename = "TIC")]
    Tic,
    #[serde(rename = "SI")]
    Si,
    #[serde(rename = "TIC_AND_SI")]
    TicAndSi,
}

impl Criteria {
    pub fn requires_structure(self) -> bool {
        matches!(self, Criteria::Si | Criteria::TicAndSi)
    }
}

impl fmt::Display for Criteria {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criteria::Tic => "TIC",
            Criteria::Si => "SI",
            Criteria::TicAndSi => "TIC_AND_SI",
        })
    }
}

/// A prompt exercising the keypoint together with the assertion a judge
/// should check on the resulting image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalExample {
    pub prompt: String,
    pub assertion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPoint {
    pub id: String,
    #[serde(rename = "name")]
    pub display_name: String,
    pub super_category: SuperCategory,
    pub category: String,
    pub criteria: Criteria,
    pub description: String,
    #[serde(rename = "example")]
    pub canonical_example: CanonicalExample,
}

struct Row {
    super_category: SuperCategory,
    category: &'static str,
    name: &'static str,
    description: &'static str,
    prompt: &'static str,
    assertion: &'static str,
    criteria: Criteria,
}

use Criteria::{Tic, TicAndSi};
use SuperCategory::*;

const ROWS: [Row; KEYPOINT_COUNT] = [
    Row {
        super_category: LinguisticComprehension,
        category: "Logical Ops",
        name: "Negation",
        description: "Entities the prompt excludes must not appear in the image.",
        prompt: "A bowl of beef noodles, no scallions.",
        assertion: "No scallions are visible.",
        criteria: Tic,
    },
    Row {
        super_category: LinguisticComprehension,
        category: "Logical Ops",
        name: "Attribute Consistency",
        description: "One attribute applied to a group holds for every member of the group.",
        prompt: "Five people all wearing red clothes.",
        assertion: "Every person wears red.",
        criteria: Tic,
    },
    Row {
        super_category: LinguisticComprehension,
        category: "Co-reference",
        name: "Pronoun Resolution",
        description: "Properties introduced through a pronoun attach to the correct antecedent.",
        prompt: "The large ball broke the table because it was made of metal.",
        assertion: "The ball, not the table, is metal.",
        criteria: Tic,
    },
    Row {
        super_category: VisualAttributes,
        category: "Obj-level",
        name: "Counting",
        description: "Stated quantities of three or more objects are rendered exactly.",
        prompt: "A picture with four dogs.",
        assertion: "Exactly four dogs are visible.",
        criteria: Tic,
    },
    Row {
        super_category: VisualAttributes,
        category: "Obj-level",
        name: "Size",
        description: "Relative or absolute size descriptors are respected.",
        prompt: "Two large spheres.",
        assertion: "Both spheres are large.",
        criteria: Tic,
    },
    Row {
        super_category: VisualAttributes,
        category: "Obj-level",
        name: "Material",
        description: "Objects are rendered in the material the prompt names.",
        prompt: "An ice sculpture of an eagle.",
        assertion: "The sculpture is made of ice.",
        criteria: Tic,
    },
    Row {
        super_category: VisualAttributes,
        category: "Obj-level",
        name: "Expression",
        description: "Faces show the emotion the prompt asks for.",
        prompt: "A strong man, low-angle shot, with a contemptuous expression.",
        assertion: "The man looks contemptuous.",
        criteria: Tic,
    },
    Row {
        super_category: VisualAttributes,
        category: "Global Style",
        name: "Artistic Style",
        description: "The whole image follows the requested artistic style.",
        prompt: "Eight galloping horses in Chinese ink wash.",
        assertion: "The image is in Chinese ink wash style.",
        criteria: Tic,
    },
    Row {
        super_category: ActionInteraction,
        category: "Individual Action",
        name: "Full-body Action",
        description: "Complex whole-body movements are depicted with plausible anatomy.",
        prompt: "A girl performing a Thomas flare.",
        assertion: "The girl performs a Thomas flare with an intact body.",
        criteria: TicAndSi,
    },
    Row {
        super_category: ActionInteraction,
        category: "Individual Action",
        name: "Hand Action",
        description: "Hand and finger actions are depicted with correct hand structure.",
        prompt: "A hand using chopsticks to pick up food.",
        assertion: "The hand holds chopsticks correctly and picks up food.",
        criteria: TicAndSi,
    },
    Row {
        super_category: ActionInteraction,
        category: "Individual Action",
        name: "Animal Action",
        description: "Actions performed by animals are depicted with plausible anatomy.",
        prompt: "A puppy happily running.",
        assertion: "The puppy is running with an intact body.",
        criteria: TicAndSi,
    },
    Row {
        super_category: ActionInteraction,
        category: "Interaction",
        name: "Contact Interaction",
        description: "Physical contact between entities is depicted as described.",
        prompt: "A boxer lands a punch on a punching bag.",
        assertion: "The boxer's fist contacts the bag.",
        criteria: TicAndSi,
    },
    Row {
        super_category: ActionInteraction,
        category: "Interaction",
        name: "Interaction w/o Contact",
        description: "Non-physical interactions such as gaze or gesture are depicted.",
        prompt: "Einstein looking at Hawking.",
        assertion: "Einstein is looking at Hawking.",
        criteria: Tic,
    },
    Row {
        super_category: ActionInteraction,
        category: "State",
        name: "State",
        description: "Continuous states of being or ongoing processes are depicted.",
        prompt: "A gust of wind blows, cherry blossoms dance in the air.",
        assertion: "Cherry blossoms are floating in the air.",
        criteria: Tic,
    },
    Row {
        super_category: RelationsStructure,
        category: "Semantic Rel.",
        name: "Comparative Relation",
        description: "Attribute comparisons between entities hold in the image.",
        prompt: "Woman in red dress taller than woman in yellow.",
        assertion: "The woman in red is taller than the woman in yellow.",
        criteria: Tic,
    },
    Row {
        super_category: RelationsStructure,
        category: "Semantic Rel.",
        name: "Compositional Relation",
        description: "An entity composed of other entities is rendered as that composition.",
        prompt: "A cat made of orange slices.",
        assertion: "The cat is formed from orange slices.",
        criteria: Tic,
    },
    Row {
        super_category: RelationsStructure,
        category: "Semantic Rel.",
        name: "Containment Relation",
        description: "A container holds the entity the prompt places in it.",
        prompt: "A cup full of soda water.",
        assertion: "The cup contains soda water.",
        criteria: Tic,
    },
    Row {
        super_category: RelationsStructure,
        category: "Semantic Rel.",
        name: "Similarity Relation",
        description: "An entity resembles the shape of another entity.",
        prompt: "A lake shaped like a guitar.",
        assertion: "The lake has a guitar shape.",
        criteria: Tic,
    },
    Row {
        super_category: RelationsStructure,
        category: "Spatial Layout",
        name: "Cross-Entity Binding",
        description: "Distinct attributes stay bound to their own entities.",
        prompt: "Man (buzz cut, blue shirt) and woman (long hair, yellow shirt).",
        assertion: "The man wears blue and the woman wears yellow.",
        criteria: Tic,
    },
    Row {
        super_category: RelationsStructure,
        category: "Spatial Layout",
        name: "Entity Layout",
        description: "Entities are arranged in the positions the prompt specifies.",
        prompt: "A race car on a city track, with a mini-map in the top-left corner.",
        assertion: "The mini-map sits in the top-left corner.",
        criteria: Tic,
    },
    Row {
        super_category: WorldKnowledgeReasoning,
        category: "World Knowledge",
        name: "Knowledge Application",
        description: "Famous real-world entities are recognisably depicted.",
        prompt: "The Great Wall of China / Marie Curie.",
        assertion: "The Great Wall of China is recognisable.",
        criteria: Tic,
    },
    Row {
        super_category: WorldKnowledgeReasoning,
        category: "Abstract Reasoning",
        name: "Counterfactual",
        description: "Surreal or physically impossible scenes are rendered as asked.",
        prompt: "A girl held onto the stem of a huge dandelion with both hands, suspended above the clouds.",
        assertion: "The girl hangs from a giant dandelion above the clouds.",
        criteria: Tic,
    },
    Row {
        super_category: SceneTextTypography,
        category: "In-Image Text",
        name: "Text Rendering",
        description: "Requested in-image text is rendered with the exact content.",
        prompt: "Poster with text \"Game of Thrones\" at the bottom.",
        assertion: "The poster reads \"Game of Thrones\".",
        criteria: Tic,
    },
    Row {
        super_category: SceneTextTypography,
        category: "In-Image Text",
        name: "Text Layout",
        description: "In-image text is placed where the prompt asks.",
        prompt: "Poster of a woman on a throne of waves, text \"Game of Thrones\" at the bottom.",
        assertion: "The text \"Game of Thrones\" sits at the bottom.",
        criteria: Tic,
    },
];

/// Lowercase hyphenated slug of a keypoint name: "Interaction w/o Contact"
/// becomes "interaction-wo-contact".
pub fn slugify(name: &str) -> String {
    let mut slug = String::with_capacity(name.len());
    let mut pending_hyphen = false;
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_hyphen && !slug.is_empty() {
                slug.push('-');
            }
            pending_hyphen = false;
            slug.push(ch.to_ascii_lowercase());
        } else if ch == '/' || ch == '\'' {
            // dropped without a separator
        } else {
            pending_hyphen = true;
        }
    }
    slug
}

static REGISTRY: LazyLock<Vec<KeyPoint>> = LazyLock::new(|| {
    ROWS.iter()
        .map(|row| KeyPoint {
            id: slugify(row.name),
            display_name: row.name.to_string(),
            super_category: row.super_category,
            category: row.category.to_string(),
            criteria: row.criteria,
            description: row.description.to_string(),
            canonical_example: CanonicalExample {
                prompt: row.prompt.to_string(),
                assertion: row.assertion.to_string(),
            },
        })
        .collect()
});

/// All keypoints in table order.
pub fn registry() -> &'static [KeyPoint] {
    &REGISTRY
}

pub fn lookup(id: &str) -> Result<&'static KeyPoint, TaxonomyError> {
    position(id)
        .map(|i| &REGISTRY[i])
        .ok_or_else(|| TaxonomyError::UnknownKeyPoint(id.to_string()))
}

/// Index of a keypoint in registry order.
pub fn position(id: &str) -> Option<usize> {
    REGISTRY.iter().position(|kp| kp.id == id)
}

pub fn is_known(id: &str) -> bool {
    position(id).is_some()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub keypoint_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the canonical registry.
pub fn validate_registry() -> ValidationReport {
    validate_keypoints(registry())
}

/// Checks count, super-category coverage, id uniqueness, slug shape and
/// non-empty fields of an arbitrary keypoint list. Violations are returned
/// as data.
pub fn validate_keypoints(keypoints: &[KeyPoint]) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |id: Option<&str>, message: String| {
        violations.push(Violation {
            keypoint_id: id.map(str::to_string),
            message,
        })
    };

    if keypoints.len() != KEYPOINT_COUNT {
        push(
            None,
            format!("expected {KEYPOINT_COUNT} keypoints, found {}", keypoints.len()),
        );
    }
    let categories: HashSet<SuperCategory> =
        keypoints.iter().map(|kp| kp.super_category).collect();
    if categories.len() != SUPER_CATEGORY_COUNT {
        push(
            None,
            format!(
                "expected {SUPER_CATEGORY_COUNT} super-categories, found {}",
                categories.len()
            ),
        );
    }

    let mut seen = HashSet::new();
    for kp in keypoints {
        let id = Some(kp.id.as_str());
        if !seen.insert(kp.id.as_str()) {
            push(id, format!("duplicate id `{}`", kp.id));
        }
        if kp.id.is_empty() || slugify(&kp.id) != kp.id {
            push(id, format!("id `{}` is not a lowercase hyphenated slug", kp.id));
        }
        for (field, value) in [
            ("name", &kp.display_name),
            ("category", &kp.category),
            ("description", &kp.description),
            ("example.prompt", &kp.canonical_example.prompt),
            ("example.assertion", &kp.canonical_example.assertion),
        ] {
            if value.trim().is_empty() {
                push(id, format!("empty field `{field}`"));
            }
        }
        if kp.criteria == Criteria::Si {
            push(id, "criteria SI never stands alone".to_string());
        }
    }
    ValidationReport { violations }
}

/// One JSON object per keypoint, one per line, in registry order.
pub fn export_jsonl() -> String {
    let mut out = String::new();
    for kp in registry() {
        out.push_str(&serde_json::to_string(kp).expect("keypoint serializes"));
        out.push('\n');
    }
    out
}
