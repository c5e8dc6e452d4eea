//! Deterministic stand-in for a text-to-image model.
//!
//! Explicitly stated facts are always rendered. Weakly stated facts are
//! rendered with probability one half and otherwise replaced by a seeded
//! default, so vague prompts score lower in expectation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grammar::{self, Fact, COLORS, POSITIONS};
use super::scene::{Action, Relation, RelationKind, SceneGraph, SceneText};
use crate::util::derived_rng;

const HONOR_PROBABILITY: f64 = 0.5;

fn honored(explicit: bool, rng: &mut ChaCha8Rng) -> bool {
    explicit || rng.random_bool(HONOR_PROBABILITY)
}

fn pick_other<'a>(rng: &mut ChaCha8Rng, options: &[&'a str], not: &str) -> &'a str {
    let pool: Vec<&str> = options.iter().copied().filter(|o| *o != not).collect();
    pool[rng.random_range(0..pool.len())]
}

fn wrong_count(rng: &mut ChaCha8Rng, n: u32) -> u32 {
    let delta = rng.random_range(1..=2u32);
    if n > delta && rng.random_bool(0.5) {
        n - delta
    } else {
        n + delta
    }
}

fn opposite_size(size: &str) -> &'static str {
    match size {
        "small" | "tiny" | "little" => "large",
        _ => "small",
    }
}

fn garble(content: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = content.chars().collect();
    if chars.len() < 2 {
        return format!("{content}{content}?");
    }
    let i = rng.random_range(0..chars.len() - 1);
    chars.swap(i, i + 1);
    chars.push('~');
    chars.into_iter().collect()
}

/// Renders `text` into a scene graph. Pure in `(text, seed)`.
pub fn mock_t2i(text: &str, seed: u64) -> SceneGraph {
    let facts = grammar::parse(text);
    let mut rng = derived_rng(seed, &["mock-t2i", text]);
    let mut scene = SceneGraph::default();

    for name in facts.entity_names() {
        scene.ensure_entity(name);
    }

    for stated in &facts.facts {
        let explicit = stated.explicit;
        match &stated.fact {
            Fact::Entity { .. } => {}
            Fact::Count { entity, n: Some(n) } => {
                let count = if honored(explicit, &mut rng) {
                    (*n).max(1)
                } else {
                    wrong_count(&mut rng, *n)
                };
                scene.ensure_entity(entity).count = count;
            }
            Fact::Count { entity, n: None } => {
                let count = rng.random_range(1..=6);
                scene.ensure_entity(entity).count = count;
            }
            Fact::Color { entity, color, uniform } => {
                let rendered = if honored(explicit, &mut rng) {
                    color.clone()
                } else if *uniform {
                    "mixed".to_string()
                } else {
                    pick_other(&mut rng, COLORS, color).to_string()
                };
                scene.ensure_entity(entity).attributes.color = Some(rendered);
            }
            Fact::Size { entity, size } => {
                let rendered = if honored(explicit, &mut rng) {
                    size.clone()
                } else {
                    opposite_size(size).to_string()
                };
                scene.ensure_entity(entity).attributes.size = Some(rendered);
            }
            Fact::Material { entity, material, distractor } => {
                if honored(explicit, &mut rng) {
                    scene.ensure_entity(entity).attributes.material = Some(material.clone());
                } else if let Some(other) = distractor {
                    scene.ensure_entity(other).attributes.material = Some(material.clone());
                }
            }
            Fact::Expression { entity, expression } => {
                let rendered = if honored(explicit, &mut rng) {
                    expression.clone()
                } else {
                    "neutral".to_string()
                };
                scene.ensure_entity(entity).attributes.expression = Some(rendered);
            }
            Fact::Absent { entity } => {
                if honored(explicit, &mut rng) {
                    if !scene.negated_entities.contains(entity) {
                        scene.negated_entities.push(entity.clone());
                    }
                } else {
                    scene.ensure_entity(entity);
                }
            }
            Fact::Relation { kind, subject, object, detail } => {
                let relation = Relation {
                    kind: *kind,
                    subject: subject.clone(),
                    object: object.clone(),
                    detail: detail.clone(),
                };
                if honored(explicit, &mut rng) {
                    scene.relations.push(relation);
                } else if *kind == RelationKind::Comparison {
                    scene.relations.push(Relation {
                        subject: object.clone(),
                        object: subject.clone(),
                        ..relation
                    });
                }
            }
            Fact::Action { actor, verb, target, class } => {
                let present = honored(explicit, &mut rng);
                let structural_ok = honored(explicit, &mut rng);
                if present {
                    scene.actions.push(Action {
                        actor: actor.clone(),
                        verb: verb.clone(),
                        target: target.clone(),
                        contact: class.is_contact(),
                        structural_ok,
                    });
                }
            }
            Fact::Text { content, position } => {
                let content = if honored(explicit, &mut rng) {
                    content.clone()
                } else {
                    garble(content, &mut rng)
                };
                let position = match position {
                    Some(p) if honored(explicit, &mut rng) => p.clone(),
                    Some(p) => pick_other(&mut rng, POSITIONS, p).to_string(),
                    None => "center".to_string(),
                };
                scene.texts.push(SceneText { content, position });
            }
            Fact::Style { style } => {
                if honored(explicit, &mut rng) {
                    scene.style = Some(style.clone());
                }
            }
            Fact::Knowledge { name } => {
                if honored(explicit, &mut rng) && !scene.knowledge_tags.contains(name) {
                    scene.knowledge_tags.push(name.clone());
                }
            }
            Fact::Counterfactual { .. } => {
                if honored(explicit, &mut rng) {
                    scene.counterfactual = true;
                }
            }
        }
    }
    scene
}
