//! Closed phrase grammar shared by the oracle judge, the mock T2I and the
//! toy rewrite edits.
//!
//! [`parse`] turns prompt text into [`Fact`]s. A fact stated in a clause that
//! carries an emphasis marker (`exactly`, `clearly`, `absolutely`,
//! `explicitly`) is *explicit*; anything else is *weak*. [`render_explicit`]
//! writes facts back as marker-carrying clauses, and parsing that rendering
//! reproduces the same facts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::scene::{RelationKind, FRAME};

pub const EMPHASIS_MARKERS: &[&str] = &["exactly", "clearly", "absolutely", "explicitly"];

pub const COLORS: &[&str] = &[
    "red", "blue", "yellow", "green", "black", "white", "orange", "purple", "pink", "brown",
    "gray", "golden", "silver",
];
pub const SIZES: &[&str] = &["large", "small", "big", "tiny", "huge", "giant", "little"];
pub const MATERIALS: &[&str] = &[
    "ice", "metal", "wood", "glass", "stone", "paper", "gold", "clay", "marble", "plastic",
    "bronze", "steel", "crystal",
];
const MATERIAL_ALIASES: &[(&str, &str)] = &[("wooden", "wood"), ("metallic", "metal"), ("icy", "ice")];
pub const EXPRESSIONS: &[&str] = &[
    "contemptuous", "happy", "sad", "angry", "surprised", "fearful", "joyful", "serious", "smug",
    "neutral",
];
pub const STYLES: &[&str] = &[
    "chinese ink wash", "ink wash", "oil painting", "watercolor", "pixel art", "ukiyo-e",
    "cyberpunk", "pencil sketch", "anime", "art deco", "impressionist",
];
pub const KNOWLEDGE: &[&str] = &[
    "great wall of china", "marie curie", "einstein", "hawking", "eiffel tower", "mona lisa",
    "mount fuji", "taj mahal", "statue of liberty", "forbidden city",
];
pub const COUNTERFACTUAL_CUES: &[&str] = &[
    "suspended above the clouds", "floating in space", "upside down", "walking on the ceiling",
    "raining upward", "on the surface of the sun",
];
pub const ANIMALS: &[&str] = &[
    "dog", "puppy", "cat", "kitten", "horse", "bird", "eagle", "fish", "tiger", "lion",
    "rabbit", "fox", "bear", "elephant", "monkey", "deer", "wolf", "panda", "dolphin",
];
const GARMENTS: &[&str] = &[
    "clothes", "clothing", "dress", "dresses", "shirt", "shirts", "jacket", "jackets", "coat",
    "coats", "hat", "hats", "outfit", "outfits", "uniform", "uniforms",
];
/// Frame positions for layout and in-image text.
pub const POSITIONS: &[&str] = &[
    "top-left", "top-right", "bottom-left", "bottom-right", "top", "bottom", "left", "right",
    "center",
];
const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "its", "his", "her", "their", "of-the",
];
const VAGUE_QUANTIFIERS: &[&str] = &["some", "several", "many", "multiple", "numerous", "few"];
const UNIFORM_QUANTIFIERS: &[&str] = &["all", "every", "each"];
const COPULAS: &[&str] = &["is", "are", "was", "were", "be", "being"];
const PRONOUNS: &[&str] = &["it", "he", "she", "they"];
const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionClass {
    FullBody,
    Hand,
    Animal,
    Contact,
    NonContact,
    State,
}

impl ActionClass {
    pub fn is_contact(self) -> bool {
        self == ActionClass::Contact
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VerbKind {
    Movement,
    Hand,
    Contact,
    NonContact,
    State,
}

const VERBS: &[(&str, VerbKind)] = &[
    ("performing a thomas flare", VerbKind::Movement),
    ("doing a backflip", VerbKind::Movement),
    ("doing a handstand", VerbKind::Movement),
    ("doing a cartwheel", VerbKind::Movement),
    ("doing yoga", VerbKind::Movement),
    ("dancing", VerbKind::Movement),
    ("jumping", VerbKind::Movement),
    ("leaping", VerbKind::Movement),
    ("running", VerbKind::Movement),
    ("galloping", VerbKind::Movement),
    ("swimming", VerbKind::Movement),
    ("flying", VerbKind::Movement),
    ("climbing", VerbKind::Movement),
    ("walking", VerbKind::Movement),
    ("skateboarding", VerbKind::Movement),
    ("using chopsticks to pick up", VerbKind::Hand),
    ("using chopsticks", VerbKind::Hand),
    ("holding a pen", VerbKind::Hand),
    ("playing the piano", VerbKind::Hand),
    ("writing", VerbKind::Hand),
    ("typing", VerbKind::Hand),
    ("knitting", VerbKind::Hand),
    ("lands a punch on", VerbKind::Contact),
    ("holding hands with", VerbKind::Contact),
    ("shaking hands with", VerbKind::Contact),
    ("held onto", VerbKind::Contact),
    ("holding onto", VerbKind::Contact),
    ("punching", VerbKind::Contact),
    ("hugging", VerbKind::Contact),
    ("kicking", VerbKind::Contact),
    ("pushing", VerbKind::Contact),
    ("carrying", VerbKind::Contact),
    ("riding", VerbKind::Contact),
    ("broke", VerbKind::Contact),
    ("looking at", VerbKind::NonContact),
    ("waving at", VerbKind::NonContact),
    ("pointing at", VerbKind::NonContact),
    ("talking to", VerbKind::NonContact),
    ("smiling at", VerbKind::NonContact),
    ("staring at", VerbKind::NonContact),
    ("watching", VerbKind::NonContact),
    ("dance in the air", VerbKind::State),
    ("dancing in the air", VerbKind::State),
    ("blows", VerbKind::State),
    ("blowing", VerbKind::State),
    ("floating", VerbKind::State),
    ("drifting", VerbKind::State),
    ("falling", VerbKind::State),
    ("melting", VerbKind::State),
    ("burning", VerbKind::State),
    ("glowing", VerbKind::State),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RelConnector {
    MadeOf,
    Containment,
    ContainedIn,
    Similarity,
    Spatial(&'static str),
}

const RELATION_CONNECTORS: &[(&str, RelConnector)] = &[
    ("made out of", RelConnector::MadeOf),
    ("made of", RelConnector::MadeOf),
    ("composed of", RelConnector::MadeOf),
    ("built from", RelConnector::MadeOf),
    ("full of", RelConnector::Containment),
    ("filled with", RelConnector::Containment),
    ("containing", RelConnector::Containment),
    ("contains", RelConnector::Containment),
    ("inside", RelConnector::ContainedIn),
    ("shaped like", RelConnector::Similarity),
    ("resembling", RelConnector::Similarity),
    ("looks like", RelConnector::Similarity),
    ("in the shape of", RelConnector::Similarity),
    ("on top of", RelConnector::Spatial("on top of")),
    ("next to", RelConnector::Spatial("next to")),
    ("to the left of", RelConnector::Spatial("left of")),
    ("to the right of", RelConnector::Spatial("right of")),
    ("left of", RelConnector::Spatial("left of")),
    ("right of", RelConnector::Spatial("right of")),
    ("in front of", RelConnector::Spatial("in front of")),
    ("above", RelConnector::Spatial("above")),
    ("below", RelConnector::Spatial("below")),
    ("under", RelConnector::Spatial("under")),
    ("behind", RelConnector::Spatial("behind")),
    ("beside", RelConnector::Spatial("beside")),
    ("on", RelConnector::Spatial("on")),
];

/// One checkable statement extracted from prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "fact", rename_all = "snake_case")]
pub enum Fact {
    Entity { name: String },
    /// `n: None` is a vague quantity ("some dogs").
    Count { entity: String, n: Option<u32> },
    Color { entity: String, color: String, uniform: bool },
    Size { entity: String, size: String },
    /// `distractor` names the competing antecedent when the material was
    /// bound through a pronoun.
    Material { entity: String, material: String, distractor: Option<String> },
    Expression { entity: String, expression: String },
    Absent { entity: String },
    Relation { kind: RelationKind, subject: String, object: String, detail: String },
    Action { actor: String, verb: String, target: Option<String>, class: ActionClass },
    Text { content: String, position: Option<String> },
    Style { style: String },
    Knowledge { name: String },
    Counterfactual { cue: String },
}

impl Fact {
    /// Identity used for de-duplication; ignores pronoun bookkeeping.
    pub fn key(&self) -> Fact {
        match self {
            Fact::Material { entity, material, .. } => Fact::Material {
                entity: entity.clone(),
                material: material.clone(),
                distractor: None,
            },
            other => other.clone(),
        }
    }

    /// Object-level facts (entities and their attributes) as opposed to
    /// scene structure.
    pub fn is_object_level(&self) -> bool {
        matches!(
            self,
            Fact::Entity { .. }
                | Fact::Count { .. }
                | Fact::Color { .. }
                | Fact::Size { .. }
                | Fact::Material { .. }
                | Fact::Expression { .. }
                | Fact::Absent { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stated {
    pub fact: Fact,
    pub explicit: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFacts {
    pub facts: Vec<Stated>,
}

impl PromptFacts {
    fn add(&mut self, fact: Fact, explicit: bool) {
        let key = fact.key();
        if let Some(existing) = self.facts.iter_mut().find(|s| s.fact.key() == key) {
            existing.explicit |= explicit;
            if explicit {
                existing.fact = fact;
            }
        } else {
            self.facts.push(Stated { fact, explicit });
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fact> {
        self.facts.iter().map(|s| &s.fact)
    }

    pub fn keys(&self) -> BTreeSet<Fact> {
        self.iter().map(Fact::key).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Names of all entities the prompt asserts as present.
    pub fn entity_names(&self) -> Vec<&str> {
        self.iter()
            .filter_map(|f| match f {
                Fact::Entity { name } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }
}

pub fn number_value(token: &str) -> Option<u32> {
    NUMBER_WORDS
        .iter()
        .position(|w| *w == token)
        .map(|i| i as u32)
        .or_else(|| token.parse().ok())
}

pub fn number_word(n: u32) -> String {
    NUMBER_WORDS
        .get(n as usize)
        .map(|w| w.to_string())
        .unwrap_or_else(|| n.to_string())
}

const IRREGULAR: &[(&str, &str)] = &[
    ("person", "people"),
    ("man", "men"),
    ("woman", "women"),
    ("child", "children"),
    ("tooth", "teeth"),
    ("foot", "feet"),
    ("mouse", "mice"),
    ("goose", "geese"),
    ("clothes", "clothes"),
    ("sheep", "sheep"),
    ("fish", "fish"),
    ("deer", "deer"),
];

fn singular_word(word: &str) -> String {
    if let Some((s, _)) = IRREGULAR.iter().find(|(_, p)| *p == word) {
        return s.to_string();
    }
    if IRREGULAR.iter().any(|(s, _)| *s == word) {
        return word.to_string();
    }
    if word.len() > 4 && word.ends_with("ies") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    for suffix in ["sses", "shes", "ches", "xes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.len() > 2
        && word.ends_with('s')
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
    {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

fn plural_word(word: &str) -> String {
    if let Some((_, p)) = IRREGULAR.iter().find(|(s, _)| *s == word) {
        return p.to_string();
    }
    if word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    if word.ends_with("ss") || word.ends_with('x') || word.ends_with("ch") || word.ends_with("sh") {
        return format!("{word}es");
    }
    if word.len() > 1 && word.ends_with('y') {
        let before = word.as_bytes()[word.len() - 2] as char;
        if !"aeiou".contains(before) {
            return format!("{}ies", &word[..word.len() - 1]);
        }
    }
    format!("{word}s")
}

fn map_last_word(phrase: &str, f: fn(&str) -> String) -> String {
    match phrase.rsplit_once(' ') {
        Some((head, last)) => format!("{head} {}", f(last)),
        None => f(phrase),
    }
}

/// Singular form of a noun phrase (last word inflected).
pub fn singularize(phrase: &str) -> String {
    map_last_word(phrase, singular_word)
}

/// Plural form of a noun phrase (last word inflected).
pub fn pluralize(phrase: &str) -> String {
    map_last_word(phrase, plural_word)
}

fn material_of(token: &str) -> Option<&'static str> {
    MATERIALS
        .iter()
        .copied()
        .find(|m| *m == token)
        .or_else(|| MATERIAL_ALIASES.iter().find(|(a, _)| *a == token).map(|(_, m)| *m))
}

fn lexeme<'a>(list: &[&'a str], token: &str) -> Option<&'a str> {
    list.iter().copied().find(|w| *w == token)
}

fn split_words(phrase: &str) -> Vec<&str> {
    phrase.split(' ').collect()
}

/// Position of `phrase` as a token run inside `tokens`.
fn find_run(tokens: &[String], phrase: &[&str]) -> Option<usize> {
    if phrase.is_empty() || tokens.len() < phrase.len() {
        return None;
    }
    (0..=tokens.len() - phrase.len()).find(|&i| phrase.iter().enumerate().all(|(j, w)| tokens[i + j] == *w))
}

fn matches_at(tokens: &[String], at: usize, phrase: &[&str]) -> bool {
    at + phrase.len() <= tokens.len() && phrase.iter().enumerate().all(|(j, w)| tokens[at + j] == *w)
}

/// Sorted longest-first so multi-word entries win over their prefixes.
fn by_length<'a>(list: &[&'a str]) -> Vec<&'a str> {
    let mut v = list.to_vec();
    v.sort_by_key(|s| std::cmp::Reverse(s.split(' ').count()));
    v
}

struct Preprocessed {
    text: String,
    quotes: Vec<String>,
    parens: Vec<String>,
}

fn preprocess(text: &str) -> Preprocessed {
    let mut out = String::with_capacity(text.len() + 16);
    let mut quotes = Vec::new();
    let mut parens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '"' | '\u{201c}' | '\u{201d}' => {
                let mut content = String::new();
                let mut closed = false;
                for c in chars.by_ref() {
                    if c == '"' || c == '\u{201c}' || c == '\u{201d}' {
                        closed = true;
                        break;
                    }
                    content.push(c);
                }
                if closed && !content.trim().is_empty() {
                    out.push_str(&format!(" qtext{} ", quotes.len()));
                    quotes.push(content.trim().to_string());
                } else {
                    out.push(' ');
                    out.push_str(&content);
                }
            }
            '(' => {
                let mut content = String::new();
                for c in chars.by_ref() {
                    if c == ')' {
                        break;
                    }
                    content.push(c);
                }
                out.push_str(&format!(" paren{} ", parens.len()));
                parens.push(content.to_lowercase());
            }
            _ => out.extend(ch.to_lowercase()),
        }
    }
    Preprocessed {
        text: out,
        quotes,
        parens,
    }
}

fn tokenize(clause: &str) -> Vec<String> {
    clause
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !(c.is_alphanumeric() || c == '-')).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Default)]
struct NounPhrase {
    name: String,
    count: Option<Option<u32>>,
    color: Option<String>,
    uniform: bool,
    size: Option<String>,
    material: Option<String>,
}

fn parse_np(tokens: &[String], parens: &[String]) -> Option<NounPhrase> {
    let mut np = NounPhrase::default();
    let mut name: Vec<&str> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i].as_str();
        let is_last = i + 1 == tokens.len();
        if DETERMINERS.contains(&t) || COPULAS.contains(&t) {
        } else if VAGUE_QUANTIFIERS.contains(&t) {
            np.count = Some(None);
        } else if UNIFORM_QUANTIFIERS.contains(&t) {
            np.uniform = true;
        } else if let Some(n) = number_value(t) {
            np.count = Some(Some(n));
        } else if matches!(t, "wearing" | "in" | "dressed") {
            let mut j = i + 1;
            if t == "dressed" && tokens.get(j).map(String::as_str) == Some("in") {
                j += 1;
            }
            match tokens.get(j).and_then(|c| lexeme(COLORS, c)) {
                Some(color) => {
                    np.color = Some(color.to_string());
                    j += 1;
                    while tokens.get(j).is_some_and(|g| GARMENTS.contains(&g.as_str())) {
                        j += 1;
                    }
                    i = j;
                    continue;
                }
                None => name.push(t),
            }
        } else if let (Some(color), false) = (lexeme(COLORS, t), is_last) {
            np.color = Some(color.to_string());
        } else if let (Some(size), false) = (lexeme(SIZES, t), is_last) {
            np.size = Some(size.to_string());
        } else if let (Some(material), false) = (material_of(t), is_last) {
            np.material = Some(material.to_string());
        } else if t.len() > 4 && t.ends_with("ly") {
        } else if let Some(idx) = t.strip_prefix("paren").and_then(|n| n.parse::<usize>().ok()) {
            if let Some(inner) = parens.get(idx) {
                for word in inner.split(|c: char| !c.is_alphanumeric()) {
                    if let Some(color) = lexeme(COLORS, word) {
                        np.color = Some(color.to_string());
                    }
                }
            }
        } else {
            name.push(t);
        }
        i += 1;
    }
    if name.is_empty() {
        return None;
    }
    np.name = singularize(&name.join(" "));
    Some(np)
}

struct Clause {
    tokens: Vec<String>,
    explicit: bool,
}

struct SentenceCtx {
    entities: Vec<String>,
}

struct Parser<'a> {
    quotes: &'a [String],
    parens: &'a [String],
    out: PromptFacts,
}

impl Parser<'_> {
    fn emit(&mut self, fact: Fact, explicit: bool) {
        self.out.add(fact, explicit);
    }

    fn emit_np(&mut self, np: &NounPhrase, explicit: bool, ctx: &mut SentenceCtx) -> String {
        let name = np.name.clone();
        self.emit(Fact::Entity { name: name.clone() }, explicit);
        if let Some(n) = np.count {
            self.emit(Fact::Count { entity: name.clone(), n }, explicit);
        }
        if let Some(color) = &np.color {
            self.emit(
                Fact::Color {
                    entity: name.clone(),
                    color: color.clone(),
                    uniform: np.uniform,
                },
                explicit,
            );
        }
        if let Some(size) = &np.size {
            self.emit(Fact::Size { entity: name.clone(), size: size.clone() }, explicit);
        }
        if let Some(material) = &np.material {
            self.emit(
                Fact::Material {
                    entity: name.clone(),
                    material: material.clone(),
                    distractor: None,
                },
                explicit,
            );
        }
        if !ctx.entities.contains(&name) {
            ctx.entities.push(name.clone());
        }
        name
    }

    /// Parses a token run as a list of noun phrases split on `and`/`with`.
    fn emit_np_list(&mut self, tokens: &[String], explicit: bool, ctx: &mut SentenceCtx) -> Vec<String> {
        let mut names = Vec::new();
        for part in tokens.split(|t| t == "and" || t == "with" || t == "&") {
            if let Some(np) = parse_np(part, self.parens) {
                names.push(self.emit_np(&np, explicit, ctx));
            }
        }
        names
    }

    fn clause(&mut self, clause: Clause, ctx: &mut SentenceCtx) {
        let explicit = clause.explicit;
        let mut tokens = clause.tokens;
        while tokens.first().is_some_and(|t| matches!(t.as_str(), "and" | "but" | "while" | "because" | "so")) {
            tokens.remove(0);
        }
        if tokens.is_empty() {
            return;
        }

        for style in by_length(STYLES) {
            let words = split_words(style);
            if let Some(at) = find_run(&tokens, &words) {
                let mut start = at;
                let mut end = at + words.len();
                if start > 0 && tokens[start - 1] == "in" {
                    start -= 1;
                }
                if tokens.get(end).is_some_and(|t| t == "style") {
                    end += 1;
                }
                tokens.drain(start..end);
                self.emit(Fact::Style { style: style.to_string() }, explicit);
                break;
            }
        }

        for cue in by_length(COUNTERFACTUAL_CUES) {
            let words = split_words(cue);
            if let Some(at) = find_run(&tokens, &words) {
                tokens.drain(at..at + words.len());
                self.emit(Fact::Counterfactual { cue: cue.to_string() }, explicit);
            }
        }

        for name in by_length(KNOWLEDGE) {
            if find_run(&tokens, &split_words(name)).is_some() {
                self.emit(Fact::Knowledge { name: name.to_string() }, explicit);
            }
        }

        let mut pending_expression = None;
        for at in 0..tokens.len() {
            if let Some(expr) = lexeme(EXPRESSIONS, &tokens[at]) {
                if tokens.get(at + 1).is_some_and(|t| t == "expression") {
                    let mut start = at;
                    if start > 0 && matches!(tokens[start - 1].as_str(), "a" | "an") {
                        start -= 1;
                    }
                    if start > 0 && tokens[start - 1] == "with" {
                        start -= 1;
                    }
                    tokens.drain(start..at + 2);
                    pending_expression = Some(expr.to_string());
                    break;
                }
            }
        }

        let quote_idx: Vec<usize> = tokens
            .iter()
            .filter_map(|t| t.strip_prefix("qtext").and_then(|n| n.parse().ok()))
            .collect();
        let position = take_position(&mut tokens);
        let has_quote = !quote_idx.is_empty();
        if has_quote {
            for idx in quote_idx {
                if let Some(content) = self.quotes.get(idx) {
                    self.emit(
                        Fact::Text {
                            content: content.clone(),
                            position: position.clone(),
                        },
                        explicit,
                    );
                }
            }
            tokens.retain(|t| !t.starts_with("qtext") && !matches!(t.as_str(), "text" | "reading" | "saying" | "words"));
        }
        // a position in a quoting clause belongs to the text
        let layout = if has_quote { None } else { position };

        let clause_start = ctx.entities.len();
        self.structure(tokens, explicit, ctx);
        let clause_entities: Vec<String> = ctx.entities[clause_start..].to_vec();

        if let Some(expression) = pending_expression {
            if let Some(target) = clause_entities.first().or(ctx.entities.first()) {
                self.emit(
                    Fact::Expression {
                        entity: target.clone(),
                        expression,
                    },
                    explicit,
                );
            }
        }
        if let Some(position) = layout {
            if let Some(subject) = clause_entities.first() {
                self.emit(
                    Fact::Relation {
                        kind: RelationKind::Layout,
                        subject: subject.clone(),
                        object: FRAME.to_string(),
                        detail: position,
                    },
                    explicit,
                );
            }
        }
    }

    fn structure(&mut self, mut tokens: Vec<String>, explicit: bool, ctx: &mut SentenceCtx) {
        if tokens.is_empty() {
            return;
        }
        // Leading negation: "no X", "without X", "with no X", "there are no X".
        let neg_len = if tokens[0] == "no" || tokens[0] == "without" {
            Some(1)
        } else if matches_at(&tokens, 0, &["with", "no"]) {
            Some(2)
        } else if matches_at(&tokens, 0, &["there", "is", "no"]) || matches_at(&tokens, 0, &["there", "are", "no"]) {
            Some(3)
        } else {
            None
        };
        if let Some(n) = neg_len {
            self.absent(&tokens[n..], explicit);
            return;
        }
        // Inline negation: "X without Y", "X with no Y".
        if let Some(at) = tokens.iter().position(|t| t == "without") {
            let tail = tokens.split_off(at);
            self.absent(&tail[1..], explicit);
        } else if let Some(at) = (1..tokens.len()).find(|&i| matches_at(&tokens, i, &["with", "no"])) {
            let tail = tokens.split_off(at);
            self.absent(&tail[2..], explicit);
        }

        if PRONOUNS.contains(&tokens[0].as_str()) {
            self.pronoun(&tokens[1..], explicit, ctx);
            return;
        }

        tokens.retain(|t| !COPULAS.contains(&t.as_str()));

        match find_connector(&tokens) {
            Some((at, len, Connector::Verb(verb, kind))) => {
                let left = &tokens[..at];
                let right = &tokens[at + len..];
                let left_np = parse_np(left, self.parens);
                let (actor, target_tokens): (Option<String>, &[String]) = match left_np {
                    Some(np) => (Some(self.emit_np(&np, explicit, ctx)), right),
                    None if !matches!(kind, VerbKind::Movement | VerbKind::State) => {
                        // transitive verb used as a modifier: "a punching bag"
                        self.emit_np_list(&tokens, explicit, ctx);
                        return;
                    }
                    None => {
                        // participle before its noun: "eight galloping horses"
                        let mut merged = left.to_vec();
                        let split = right.iter().position(|t| t == "and" || t == "with").unwrap_or(right.len());
                        merged.extend_from_slice(&right[..split]);
                        let actor = parse_np(&merged, self.parens).map(|np| self.emit_np(&np, explicit, ctx));
                        (actor, &right[split..])
                    }
                };
                let targets = self.emit_np_list(target_tokens, explicit, ctx);
                let Some(actor) = actor else { return };
                let target = match kind {
                    VerbKind::Movement | VerbKind::State => None,
                    _ => targets.first().cloned(),
                };
                let class = match kind {
                    VerbKind::Contact => ActionClass::Contact,
                    VerbKind::NonContact => ActionClass::NonContact,
                    VerbKind::State => ActionClass::State,
                    VerbKind::Hand => ActionClass::Hand,
                    VerbKind::Movement if ANIMALS.contains(&actor.as_str()) => ActionClass::Animal,
                    VerbKind::Movement if actor == "hand" => ActionClass::Hand,
                    VerbKind::Movement => ActionClass::FullBody,
                };
                self.emit(
                    Fact::Action {
                        actor,
                        verb: verb.to_string(),
                        target,
                        class,
                    },
                    explicit,
                );
            }
            Some((at, len, Connector::Comparative(word))) => {
                let left = self.emit_np_list(&tokens[..at], explicit, ctx);
                let right = self.emit_np_list(&tokens[at + len..], explicit, ctx);
                if let (Some(s), Some(o)) = (left.first(), right.first()) {
                    self.relation(RelationKind::Comparison, s, o, &word, explicit);
                }
            }
            Some((at, len, Connector::Relation(rel))) => {
                let left_tokens = &tokens[..at];
                let right_tokens = &tokens[at + len..];
                if rel == RelConnector::MadeOf {
                    let material = {
                        let content: Vec<&String> = right_tokens
                            .iter()
                            .filter(|t| !DETERMINERS.contains(&t.as_str()))
                            .collect();
                        match content.as_slice() {
                            [only] => material_of(only),
                            _ => None,
                        }
                    };
                    if let Some(material) = material {
                        for entity in self.emit_np_list(left_tokens, explicit, ctx).into_iter().take(1) {
                            self.emit(
                                Fact::Material {
                                    entity,
                                    material: material.to_string(),
                                    distractor: None,
                                },
                                explicit,
                            );
                        }
                        return;
                    }
                }
                let left = self.emit_np_list(left_tokens, explicit, ctx);
                let right = self.emit_np_list(right_tokens, explicit, ctx);
                let (Some(l), Some(r)) = (left.first(), right.first()) else { return };
                match rel {
                    RelConnector::MadeOf => self.relation(RelationKind::Composition, l, r, "", explicit),
                    RelConnector::Containment => self.relation(RelationKind::Containment, l, r, "", explicit),
                    RelConnector::ContainedIn => self.relation(RelationKind::Containment, r, l, "", explicit),
                    RelConnector::Similarity => self.relation(RelationKind::Similarity, l, r, "", explicit),
                    RelConnector::Spatial(detail) => self.relation(RelationKind::Spatial, l, r, detail, explicit),
                }
            }
            None => {
                self.emit_np_list(&tokens, explicit, ctx);
            }
        }
    }

    fn relation(&mut self, kind: RelationKind, subject: &str, object: &str, detail: &str, explicit: bool) {
        self.emit(
            Fact::Relation {
                kind,
                subject: subject.to_string(),
                object: object.to_string(),
                detail: detail.to_string(),
            },
            explicit,
        );
    }

    fn absent(&mut self, tokens: &[String], explicit: bool) {
        for part in tokens.split(|t| t == "or" || t == "and" || t == "nor") {
            if let Some(np) = parse_np(part, self.parens) {
                self.emit(Fact::Absent { entity: np.name }, explicit);
            }
        }
    }

    /// "it was made of metal": binds the material to the first entity of the
    /// sentence; the most recent other entity is the distractor.
    fn pronoun(&mut self, rest: &[String], explicit: bool, ctx: &SentenceCtx) {
        let content: Vec<&String> = rest
            .iter()
            .filter(|t| !COPULAS.contains(&t.as_str()) && !DETERMINERS.contains(&t.as_str()))
            .collect();
        let material = match content.as_slice() {
            [made, of, m] if made.as_str() == "made" && of.as_str() == "of" => material_of(m),
            [m] => material_of(m),
            _ => None,
        };
        let (Some(material), Some(antecedent)) = (material, ctx.entities.first()) else {
            return;
        };
        let distractor = ctx.entities.iter().rev().find(|e| *e != antecedent).cloned();
        self.emit(
            Fact::Material {
                entity: antecedent.clone(),
                material: material.to_string(),
                distractor,
            },
            explicit,
        );
    }
}

enum Connector {
    Verb(&'static str, VerbKind),
    Comparative(String),
    Relation(RelConnector),
}

/// Earliest connector in the clause; at equal start the longest wins.
fn find_connector(tokens: &[String]) -> Option<(usize, usize, Connector)> {
    for at in 0..tokens.len() {
        let mut best: Option<(usize, Connector)> = None;
        for (phrase, kind) in VERBS {
            let words = split_words(phrase);
            if matches_at(tokens, at, &words) && best.as_ref().is_none_or(|(len, _)| words.len() > *len) {
                best = Some((words.len(), Connector::Verb(phrase, *kind)));
            }
        }
        for (phrase, rel) in RELATION_CONNECTORS {
            let words = split_words(phrase);
            if matches_at(tokens, at, &words) && best.as_ref().is_none_or(|(len, _)| words.len() > *len) {
                best = Some((words.len(), Connector::Relation(*rel)));
            }
        }
        if best.is_none()
            && at > 0
            && tokens[at].len() > 3
            && tokens[at].ends_with("er")
            && tokens.get(at + 1).is_some_and(|t| t == "than")
        {
            best = Some((2, Connector::Comparative(tokens[at].clone())));
        }
        if let Some((len, c)) = best {
            return Some((at, len, c));
        }
    }
    None
}

/// Removes a frame-position phrase ("in the top-left corner", "at the
/// bottom") from the clause and returns the position.
fn take_position(tokens: &mut Vec<String>) -> Option<String> {
    for at in 0..tokens.len() {
        if !matches!(tokens[at].as_str(), "in" | "at" | "on") || tokens.get(at + 1).map(String::as_str) != Some("the") {
            continue;
        }
        let Some(pos) = tokens.get(at + 2).and_then(|p| lexeme(POSITIONS, p)) else {
            continue;
        };
        let mut end = at + 3;
        match tokens.get(end).map(String::as_str) {
            Some("corner") | Some("side") | Some("edge") => end += 1,
            None => {}
            Some("of") if matches_at(tokens, end + 1, &["the", "image"]) || matches_at(tokens, end + 1, &["the", "frame"]) => {
                end += 3
            }
            // "on the left of X" is spatial, not a frame position
            Some(_) => continue,
        }
        tokens.drain(at..end);
        return Some(pos.to_string());
    }
    None
}

fn split_clauses(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    for sentence in text.split(['.', '!', '?', ';', '/', '\n']) {
        let mut clauses = Vec::new();
        for piece in sentence.split(',') {
            let tokens = tokenize(piece);
            let mut current = Vec::new();
            for t in tokens {
                if t == "because" && !current.is_empty() {
                    clauses.push(std::mem::take(&mut current));
                }
                current.push(t);
            }
            if !current.is_empty() {
                clauses.push(current);
            }
        }
        if !clauses.is_empty() {
            sentences.push(clauses);
        }
    }
    sentences.into_iter().flat_map(|s| {
        let n = s.len();
        s.into_iter().enumerate().map(move |(i, c)| {
            let mut c = c;
            if i == 0 {
                c.insert(0, "\u{0}".to_string());
            }
            let _ = n;
            c
        })
    }).collect()
}

/// Extracts every fact the grammar recognises in `text`.
pub fn parse(text: &str) -> PromptFacts {
    let pre = preprocess(text);
    let mut parser = Parser {
        quotes: &pre.quotes,
        parens: &pre.parens,
        out: PromptFacts::default(),
    };
    let mut ctx = SentenceCtx { entities: Vec::new() };
    for mut tokens in split_clauses(&pre.text) {
        if tokens.first().is_some_and(|t| t == "\u{0}") {
            tokens.remove(0);
            ctx = SentenceCtx { entities: Vec::new() };
        }
        let before = tokens.len();
        tokens.retain(|t| !EMPHASIS_MARKERS.contains(&t.as_str()));
        let explicit = tokens.len() != before;
        parser.clause(Clause { tokens, explicit }, &mut ctx);
    }
    parser.out
}

fn article(name: &str) -> &'static str {
    match name.chars().next() {
        Some(c) if "aeiou".contains(c) => "an",
        _ => "a",
    }
}

fn position_phrase(pos: &str) -> String {
    if pos.contains('-') {
        format!("in the {pos} corner")
    } else {
        format!("at the {pos}")
    }
}

/// Renders one fact as a self-contained emphasised clause.
pub fn render_fact(fact: &Fact) -> String {
    match fact {
        Fact::Entity { name } => format!("clearly {} {name}", article(name)),
        Fact::Count { entity, n: Some(1) } => format!("exactly one {entity}"),
        Fact::Count { entity, n: Some(n) } => format!("exactly {} {}", number_word(*n), pluralize(entity)),
        Fact::Count { entity, n: None } => format!("clearly some {}", pluralize(entity)),
        Fact::Color { entity, color, uniform: true } => {
            format!("clearly all {} in {color}", pluralize(entity))
        }
        Fact::Color { entity, color, uniform: false } => {
            format!("clearly {} {color} {entity}", article(color))
        }
        Fact::Size { entity, size } => format!("clearly {} {size} {entity}", article(size)),
        Fact::Material { entity, material, distractor: Some(_) } => {
            format!("the {entity} is clearly made of {material}")
        }
        Fact::Material { entity, material, distractor: None } => {
            format!("clearly {} {entity} made of {material}", article(entity))
        }
        Fact::Expression { entity, expression } => {
            format!("clearly {} {entity} with {} {expression} expression", article(entity), article(expression))
        }
        Fact::Absent { entity } => format!("absolutely no {}", pluralize(entity)),
        Fact::Relation { kind, subject, object, detail } => match kind {
            RelationKind::Composition => format!("clearly {} {subject} made of {}", article(subject), pluralize(object)),
            RelationKind::Containment => format!("clearly {} {subject} full of {object}", article(subject)),
            RelationKind::Similarity => {
                format!("clearly {} {subject} shaped like {} {object}", article(subject), article(object))
            }
            RelationKind::Comparison => format!("clearly the {subject} {detail} than the {object}"),
            RelationKind::Spatial => format!("clearly {} {subject} {detail} {} {object}", article(subject), article(object)),
            RelationKind::Layout => format!("clearly {} {subject} {}", article(subject), position_phrase(detail)),
        },
        Fact::Action { actor, verb, target, .. } => match target {
            Some(t) => format!("clearly the {actor} {verb} the {t}"),
            None => format!("clearly the {actor} {verb}"),
        },
        Fact::Text { content, position: Some(p) } => {
            format!("clearly the text \"{content}\" {}", position_phrase(p))
        }
        Fact::Text { content, position: None } => format!("clearly the text \"{content}\""),
        Fact::Style { style } => format!("clearly in {style} style"),
        Fact::Knowledge { name } => format!("clearly the {name}"),
        Fact::Counterfactual { cue } => format!("clearly {cue}"),
    }
}

/// Renders the facts as emphasised sentences, one fact per sentence.
pub fn render_explicit<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> String {
    let mut out = Vec::new();
    for fact in facts {
        let clause = render_fact(fact);
        let mut chars = clause.chars();
        let capitalised = match chars.next() {
            Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
            None => continue,
        };
        out.push(format!("{capitalised}."));
    }
    out.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facts(text: &str) -> Vec<Fact> {
        parse(text).iter().cloned().collect()
    }

    fn has(text: &str, fact: Fact) {
        let got = facts(text);
        assert!(got.contains(&fact), "{text:?} lacks {fact:?}; got {got:#?}");
    }

    #[test]
    fn inflection_round_trips() {
        for w in ["dog", "person", "glass", "box", "city", "horse", "house", "bus", "cactus", "beach", "soda water"] {
            assert_eq!(singularize(&pluralize(w)), w, "{w}");
        }
        assert_eq!(singularize("people"), "person");
        assert_eq!(singularize("scallions"), "scallion");
    }

    #[test]
    fn table_examples_parse() {
        has("A bowl of beef noodles, no scallions.", Fact::Absent { entity: "scallion".into() });
        has("Five people all wearing red clothes.", Fact::Color { entity: "person".into(), color: "red".into(), uniform: true });
        has("Five people all wearing red clothes.", Fact::Count { entity: "person".into(), n: Some(5) });
        has(
            "The large ball broke the table because it was made of metal.",
            Fact::Material { entity: "ball".into(), material: "metal".into(), distractor: Some("table".into()) },
        );
        has("A picture with four dogs.", Fact::Count { entity: "dog".into(), n: Some(4) });
        has("Two large spheres.", Fact::Size { entity: "sphere".into(), size: "large".into() });
        has("An ice sculpture of an eagle.", Fact::Material { entity: "sculpture of eagle".into(), material: "ice".into(), distractor: None });
        has(
            "A strong man, low-angle shot, with a contemptuous expression.",
            Fact::Expression { entity: "strong man".into(), expression: "contemptuous".into() },
        );
        has("Eight galloping horses in Chinese ink wash.", Fact::Style { style: "chinese ink wash".into() });
        has(
            "Eight galloping horses in Chinese ink wash.",
            Fact::Action { actor: "horse".into(), verb: "galloping".into(), target: None, class: ActionClass::Animal },
        );
        has(
            "A girl performing a Thomas flare.",
            Fact::Action { actor: "girl".into(), verb: "performing a thomas flare".into(), target: None, class: ActionClass::FullBody },
        );
        has(
            "A hand using chopsticks to pick up food.",
            Fact::Action { actor: "hand".into(), verb: "using chopsticks to pick up".into(), target: Some("food".into()), class: ActionClass::Hand },
        );
        has(
            "A puppy happily running.",
            Fact::Action { actor: "puppy".into(), verb: "running".into(), target: None, class: ActionClass::Animal },
        );
        has(
            "A boxer lands a punch on a punching bag.",
            Fact::Action { actor: "boxer".into(), verb: "lands a punch on".into(), target: Some("punching bag".into()), class: ActionClass::Contact },
        );
        has(
            "Einstein looking at Hawking.",
            Fact::Action { actor: "einstein".into(), verb: "looking at".into(), target: Some("hawking".into()), class: ActionClass::NonContact },
        );
        has(
            "A gust of wind blows, cherry blossoms dance in the air.",
            Fact::Action { actor: "cherry blossom".into(), verb: "dance in the air".into(), target: None, class: ActionClass::State },
        );
        has(
            "A cat made of orange slices.",
            Fact::Relation { kind: RelationKind::Composition, subject: "cat".into(), object: "slice".into(), detail: String::new() },
        );
        has(
            "A cup full of soda water.",
            Fact::Relation { kind: RelationKind::Containment, subject: "cup".into(), object: "soda water".into(), detail: String::new() },
        );
        has(
            "A lake shaped like a guitar.",
            Fact::Relation { kind: RelationKind::Similarity, subject: "lake".into(), object: "guitar".into(), detail: String::new() },
        );
        has("Man (buzz cut, blue shirt) and woman (long hair, yellow shirt).", Fact::Color { entity: "man".into(), color: "blue".into(), uniform: false });
        has("Man (buzz cut, blue shirt) and woman (long hair, yellow shirt).", Fact::Color { entity: "woman".into(), color: "yellow".into(), uniform: false });
        has(
            "A race car on a city track, with a mini-map in the top-left corner.",
            Fact::Relation { kind: RelationKind::Layout, subject: "mini-map".into(), object: FRAME.into(), detail: "top-left".into() },
        );
        has(
            "A race car on a city track, with a mini-map in the top-left corner.",
            Fact::Relation { kind: RelationKind::Spatial, subject: "race car".into(), object: "city track".into(), detail: "on".into() },
        );
        has("The Great Wall of China / Marie Curie.", Fact::Knowledge { name: "marie curie".into() });
        has(
            "A girl held onto the stem of a huge dandelion with both hands, suspended above the clouds.",
            Fact::Counterfactual { cue: "suspended above the clouds".into() },
        );
        has(
            "Poster with text \"Game of Thrones\" at the bottom.",
            Fact::Text { content: "Game of Thrones".into(), position: Some("bottom".into()) },
        );
        has(
            "A tower taller than a tree.",
            Fact::Relation { kind: RelationKind::Comparison, subject: "tower".into(), object: "tree".into(), detail: "taller".into() },
        );
    }

    #[test]
    fn emphasis_marks_explicit() {
        let p = parse("exactly four dogs. some cats");
        let dog = p.facts.iter().find(|s| s.fact == Fact::Count { entity: "dog".into(), n: Some(4) }).unwrap();
        assert!(dog.explicit);
        let cat = p.facts.iter().find(|s| s.fact == Fact::Count { entity: "cat".into(), n: None }).unwrap();
        assert!(!cat.explicit);
    }

    #[test]
    fn merge_keeps_explicit() {
        let p = parse("four dogs. Exactly four dogs.");
        let counts: Vec<_> = p.facts.iter().filter(|s| matches!(s.fact, Fact::Count { .. })).collect();
        assert_eq!(counts.len(), 1);
        assert!(counts[0].explicit);
    }

    #[test]
    fn empty_text_has_no_facts() {
        assert!(parse("").is_empty());
        assert!(parse("   ").is_empty());
    }

    #[test]
    fn explicit_rendering_reparses_to_same_facts() {
        for kp in crate::taxonomy::registry() {
            let original = parse(&kp.canonical_example.prompt);
            let rendered = render_explicit(original.iter());
            let reparsed = parse(&rendered);
            assert_eq!(reparsed.keys(), original.keys(), "{}: {rendered}", kp.id);
            assert!(reparsed.facts.iter().all(|s| s.explicit), "{rendered}");
        }
    }
}
