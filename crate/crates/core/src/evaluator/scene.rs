use serde::{Deserialize, Serialize};

/// Object that layout relations point at; never an entity.
pub const FRAME: &str = "frame";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attributes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    #[serde(default)]
    pub attributes: Attributes,
    pub count: u32,
}

impl Entity {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            attributes: Attributes::default(),
            count: 1,
        }
    }

    pub fn count(mut self, count: u32) -> Self {
        self.count = count;
        self
    }

    pub fn color(mut self, color: impl Into<String>) -> Self {
        self.attributes.color = Some(color.into());
        self
    }

    pub fn size(mut self, size: impl Into<String>) -> Self {
        self.attributes.size = Some(size.into());
        self
    }

    pub fn material(mut self, material: impl Into<String>) -> Self {
        self.attributes.material = Some(material.into());
        self
    }

    pub fn expression(mut self, expression: impl Into<String>) -> Self {
        self.attributes.expression = Some(expression.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Spatial,
    Containment,
    Composition,
    Comparison,
    Similarity,
    Layout,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub kind: RelationKind,
    pub subject: String,
    pub object: String,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub actor: String,
    pub verb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub contact: bool,
    pub structural_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneText {
    pub content: String,
    pub position: String,
}

/// Structured stand-in for a generated image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(default)]
    pub actions: Vec<Action>,
    #[serde(default)]
    pub texts: Vec<SceneText>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    #[serde(default)]
    pub negated_entities: Vec<String>,
    #[serde(default)]
    pub knowledge_tags: Vec<String>,
    #[serde(default)]
    pub counterfactual: bool,
}

impl SceneGraph {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
            && self.relations.is_empty()
            && self.actions.is_empty()
            && self.texts.is_empty()
            && self.style.is_none()
            && self.knowledge_tags.is_empty()
            && !self.counterfactual
    }

    pub fn entity(&self, name: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.name == name)
    }

    pub fn entity_mut(&mut self, name: &str) -> Option<&mut Entity> {
        self.entities.iter_mut().find(|e| e.name == name)
    }

    pub fn has_entity(&self, name: &str) -> bool {
        self.entity(name).is_some()
    }

    /// Returns the named entity, inserting a single default instance first
    /// if it is missing.
    pub fn ensure_entity(&mut self, name: &str) -> &mut Entity {
        if let Some(i) = self.entities.iter().position(|e| e.name == name) {
            &mut self.entities[i]
        } else {
            self.entities.push(Entity::new(name));
            self.entities.last_mut().expect("just pushed")
        }
    }

    /// Relations whose subject or object is not an entity of this scene.
    pub fn dangling_relations(&self) -> Vec<&Relation> {
        self.relations
            .iter()
            .filter(|r| !self.endpoint_exists(&r.subject) || !self.endpoint_exists(&r.object))
            .collect()
    }

    fn endpoint_exists(&self, name: &str) -> bool {
        name == FRAME || self.has_entity(name)
    }

    /// True when the relation is present and both endpoints resolve.
    pub fn has_relation(&self, wanted: &Relation) -> bool {
        self.relations.iter().any(|r| r == wanted)
            && self.endpoint_exists(&wanted.subject)
            && self.endpoint_exists(&wanted.object)
    }

    /// Checks the construction invariants: unique entity names and positive
    /// counts. Dangling relations are not construction errors.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entities {
            if !seen.insert(e.name.as_str()) {
                return Err(format!("duplicate entity `{}`", e.name));
            }
            if e.count == 0 {
                return Err(format!("entity `{}` has zero count", e.name));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dangling_relations_are_visible() {
        let mut scene = SceneGraph::default();
        scene.entities.push(Entity::new("cup"));
        scene.relations.push(Relation {
            kind: RelationKind::Containment,
            subject: "cup".into(),
            object: "soda water".into(),
            detail: String::new(),
        });
        scene.relations.push(Relation {
            kind: RelationKind::Layout,
            subject: "cup".into(),
            object: FRAME.into(),
            detail: "top".into(),
        });
        assert_eq!(scene.dangling_relations().len(), 1);
        assert!(!scene.has_relation(&scene.relations[0].clone()));
        assert!(scene.has_relation(&scene.relations[1].clone()));
    }

    #[test]
    fn invariants() {
        let mut scene = SceneGraph::default();
        scene.entities.push(Entity::new("dog").count(2));
        assert!(scene.check_invariants().is_ok());
        scene.entities.push(Entity::new("dog"));
        assert!(scene.check_invariants().is_err());
    }
}
