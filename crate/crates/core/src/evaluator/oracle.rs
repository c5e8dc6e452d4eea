//! Rule-based judge over scene graphs. The requirements of a keypoint are the
//! facts the user prompt states for it; a scene passes when it satisfies all
//! of them.

use super::grammar::{self, ActionClass, Fact, PromptFacts};
use super::scene::{Relation, RelationKind, SceneGraph};
use super::EvaluatorError;
use crate::corpus::{UserPrompt, Verdict};
use crate::taxonomy::{Criteria, KeyPoint};

pub const ORACLE_JUDGE_ID: &str = "oracle";

/// Outcome of one rule before it becomes a verdict.
struct Check {
    tic: bool,
    si: Option<bool>,
    rationale: String,
}

fn action_class_for(id: &str) -> Option<ActionClass> {
    Some(match id {
        "full-body-action" => ActionClass::FullBody,
        "hand-action" => ActionClass::Hand,
        "animal-action" => ActionClass::Animal,
        "contact-interaction" => ActionClass::Contact,
        "interaction-wo-contact" => ActionClass::NonContact,
        "state" => ActionClass::State,
        _ => return None,
    })
}

fn relation_kinds_for(id: &str) -> Option<&'static [RelationKind]> {
    Some(match id {
        "comparative-relation" => &[RelationKind::Comparison],
        "compositional-relation" => &[RelationKind::Composition],
        "containment-relation" => &[RelationKind::Containment],
        "similarity-relation" => &[RelationKind::Similarity],
        "entity-layout" => &[RelationKind::Spatial, RelationKind::Layout],
        _ => return None,
    })
}

/// Facts of the prompt that the keypoint's rule checks.
fn relevant<'a>(id: &str, facts: &'a PromptFacts) -> Result<Vec<&'a Fact>, EvaluatorError> {
    let select = |pred: &dyn Fn(&Fact) -> bool| facts.iter().filter(|f| pred(f)).collect::<Vec<_>>();
    if let Some(class) = action_class_for(id) {
        return Ok(select(&|f| matches!(f, Fact::Action { class: c, .. } if *c == class)));
    }
    if let Some(kinds) = relation_kinds_for(id) {
        return Ok(select(&|f| matches!(f, Fact::Relation { kind, .. } if kinds.contains(kind))));
    }
    Ok(match id {
        "negation" => select(&|f| matches!(f, Fact::Absent { .. })),
        "attribute-consistency" => select(&|f| matches!(f, Fact::Color { uniform: true, .. })),
        "pronoun-resolution" => select(&|f| matches!(f, Fact::Material { distractor: Some(_), .. })),
        "counting" => select(&|f| matches!(f, Fact::Count { n: Some(_), .. })),
        "size" => select(&|f| matches!(f, Fact::Size { .. })),
        "material" => select(&|f| matches!(f, Fact::Material { distractor: None, .. })),
        "expression" => select(&|f| matches!(f, Fact::Expression { .. })),
        "artistic-style" => select(&|f| matches!(f, Fact::Style { .. })),
        "cross-entity-binding" => select(&|f| matches!(f, Fact::Color { uniform: false, .. })),
        "knowledge-application" => select(&|f| matches!(f, Fact::Knowledge { .. })),
        "counterfactual" => select(&|f| matches!(f, Fact::Counterfactual { .. })),
        "text-rendering" => select(&|f| matches!(f, Fact::Text { .. })),
        "text-layout" => select(&|f| matches!(f, Fact::Text { position: Some(_), .. })),
        other => return Err(EvaluatorError::UnsupportedKeyPoint(other.to_string())),
    })
}

fn attribute_holds(scene: &SceneGraph, entity: &str, get: fn(&super::scene::Attributes) -> &Option<String>, want: &str) -> bool {
    scene
        .entity(entity)
        .is_some_and(|e| get(&e.attributes).as_deref() == Some(want))
}

/// Whether the scene satisfies one fact. Returns `(tic, si)`; `si` is only
/// meaningful for actions.
fn satisfied(scene: &SceneGraph, fact: &Fact) -> (bool, bool) {
    let tic = match fact {
        Fact::Entity { name } => scene.has_entity(name),
        Fact::Count { entity, n } => match n {
            Some(n) => scene.entity(entity).is_some_and(|e| e.count == *n),
            None => scene.has_entity(entity),
        },
        Fact::Color { entity, color, .. } => attribute_holds(scene, entity, |a| &a.color, color),
        Fact::Size { entity, size } => attribute_holds(scene, entity, |a| &a.size, size),
        Fact::Material { entity, material, distractor } => {
            attribute_holds(scene, entity, |a| &a.material, material)
                && distractor
                    .as_ref()
                    .is_none_or(|d| !attribute_holds(scene, d, |a| &a.material, material))
        }
        Fact::Expression { entity, expression } => {
            attribute_holds(scene, entity, |a| &a.expression, expression)
        }
        Fact::Absent { entity } => !scene.has_entity(entity),
        Fact::Relation { kind, subject, object, detail } => scene.has_relation(&Relation {
            kind: *kind,
            subject: subject.clone(),
            object: object.clone(),
            detail: detail.clone(),
        }),
        Fact::Action { actor, verb, target, .. } => {
            let found = scene.actions.iter().find(|a| {
                a.actor == *actor && a.verb == *verb && a.target == *target && scene.has_entity(actor)
            });
            return match found {
                Some(a) => (true, a.structural_ok),
                None => (false, false),
            };
        }
        Fact::Text { content, position } => scene.texts.iter().any(|t| {
            t.content == *content && position.as_ref().is_none_or(|p| t.position == *p)
        }),
        Fact::Style { style } => scene.style.as_deref() == Some(style),
        Fact::Knowledge { name } => scene.knowledge_tags.contains(name),
        Fact::Counterfactual { .. } => scene.counterfactual,
    };
    (tic, tic)
}

fn check(kp: &KeyPoint, scene: &SceneGraph, facts: &PromptFacts) -> Result<Option<Check>, EvaluatorError> {
    let wanted = relevant(&kp.id, facts)?;
    if wanted.is_empty() {
        return Ok(None);
    }
    let mut tic = true;
    let mut si = true;
    let mut failed = Vec::new();
    for fact in &wanted {
        // text-rendering checks content only; position belongs to text-layout
        let fact_for_check = match (kp.id.as_str(), fact) {
            ("text-rendering", Fact::Text { content, .. }) => Fact::Text {
                content: content.clone(),
                position: None,
            },
            _ => (*fact).clone(),
        };
        let (t, s) = satisfied(scene, &fact_for_check);
        if !t {
            failed.push(grammar::render_fact(&fact_for_check));
        } else if kp.criteria.requires_structure() && !s {
            failed.push(format!("{} (structure)", grammar::render_fact(&fact_for_check)));
        }
        tic &= t;
        si &= s;
    }
    // negation also needs the positively stated entities to be present
    if kp.id == "negation" {
        let absent: Vec<&str> = wanted
            .iter()
            .filter_map(|f| match f {
                Fact::Absent { entity } => Some(entity.as_str()),
                _ => None,
            })
            .collect();
        for name in facts.entity_names() {
            if !absent.contains(&name) && !scene.has_entity(name) {
                tic = false;
                failed.push(format!("missing {name}"));
            }
        }
    }
    let rationale = if failed.is_empty() {
        format!("{} requirement(s) satisfied", wanted.len())
    } else {
        format!("unsatisfied: {}", failed.join("; "))
    };
    Ok(Some(Check {
        tic,
        si: kp.criteria.requires_structure().then_some(si),
        rationale,
    }))
}

/// Judges one keypoint of `prompt` against `scene`.
pub fn judge_keypoint(scene: &SceneGraph, prompt: &UserPrompt, kp: &KeyPoint) -> Result<Verdict, EvaluatorError> {
    judge_with_facts(scene, &prompt.id, &grammar::parse(&prompt.text), kp)
}

pub(crate) fn judge_with_facts(
    scene: &SceneGraph,
    record_id: &str,
    facts: &PromptFacts,
    kp: &KeyPoint,
) -> Result<Verdict, EvaluatorError> {
    let verdict = match check(kp, scene, facts)? {
        None => {
            let (tic, si) = match kp.criteria {
                Criteria::Tic => (Some(false), None),
                _ => (Some(false), Some(false)),
            };
            Verdict::from_score(record_id, &kp.id, 0.0, tic, si, ORACLE_JUDGE_ID, "no requirement stated")
        }
        Some(c) => {
            let pass = c.tic && c.si.unwrap_or(true);
            Verdict::from_score(
                record_id,
                &kp.id,
                if pass { 1.0 } else { 0.0 },
                Some(c.tic),
                c.si,
                ORACLE_JUDGE_ID,
                c.rationale,
            )
        }
    };
    Ok(verdict)
}
