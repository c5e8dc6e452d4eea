//! Seeded synthetic prompts whose keypoints the phrase grammar can express.
//! They drive the hermetic training loop, fixtures and smoke runs.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BenchmarkRecord, Language, Theme, UserPrompt};
use crate::curation::FilterReason;
use crate::evaluator::grammar::{number_word, pluralize};
use crate::taxonomy;
use crate::util::{derived_rng, stable_hash};

const ANIMALS: &[&str] = &["dog", "cat", "horse", "fox", "rabbit", "bird", "tiger", "panda"];
const PEOPLE: &[&str] = &["girl", "boy", "man", "woman", "dancer", "chef", "pianist"];
const OBJECTS: &[&str] = &["vase", "lamp", "chair", "clock", "bicycle", "car", "kettle", "box"];
const COLORS: &[&str] = &["red", "blue", "yellow", "green", "purple", "white"];
const MATERIALS: &[&str] = &["glass", "wood", "stone", "metal", "ice", "marble"];
const STYLES: &[&str] = &["watercolor", "oil painting", "pixel art", "ukiyo-e", "pencil sketch"];
const EXPRESSIONS: &[&str] = &["happy", "sad", "angry", "surprised", "contemptuous"];
const TEXTS: &[&str] = &["OPEN", "SALE", "Good Morning", "Hello World", "Fresh Bread"];

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options.choose(rng).copied().expect("non-empty")
}

/// One sentence exercising `keypoint`, stated without emphasis.
pub fn fragment(keypoint: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let n = rng.random_range(2..=6u32);
    Some(match keypoint {
        "negation" => format!(
            "a {} of {}, no {}",
            pick(rng, &["bowl", "plate"]),
            pick(rng, &["noodles", "rice", "soup"]),
            pick(rng, &["scallions", "onions", "peppers", "mushrooms"])
        ),
        "attribute-consistency" => format!(
            "{} {} all wearing {} clothes",
            number_word(n),
            pick(rng, &["people", "children", "dancers", "soldiers"]),
            pick(rng, COLORS)
        ),
        "pronoun-resolution" => format!(
            "the {} broke the {} because it was made of {}",
            pick(rng, &["ball", "hammer", "rock"]),
            pick(rng, &["table", "window", "mirror"]),
            pick(rng, &["metal", "stone", "steel"])
        ),
        "counting" => format!("a picture with {} {}", number_word(n), pluralize(pick(rng, ANIMALS))),
        "size" => {
            let size = pick(rng, &["large", "small", "tiny", "huge"]);
            format!("a {size} {}", pick(rng, OBJECTS))
        }
        "material" => format!("a {} {}", pick(rng, MATERIALS), pick(rng, &["sculpture", "bowl", "statue", "tower"])),
        "expression" => format!("a {} with a {} expression", pick(rng, PEOPLE), pick(rng, EXPRESSIONS)),
        "artistic-style" => format!(
            "a {} in {} style",
            pick(rng, &["mountain village", "harbor", "forest", "city street"]),
            pick(rng, STYLES)
        ),
        "full-body-action" => format!(
            "a {} {}",
            pick(rng, &["girl", "boy", "dancer", "gymnast"]),
            pick(rng, &["doing a backflip", "doing a cartwheel", "jumping", "doing a handstand"])
        ),
        "hand-action" => format!(
            "a {} {}",
            pick(rng, &["woman", "man", "child"]),
            pick(rng, &["playing the piano", "using chopsticks", "knitting", "holding a pen"])
        ),
        "animal-action" => format!(
            "a {} {}",
            pick(rng, ANIMALS),
            pick(rng, &["running", "jumping", "swimming", "climbing"])
        ),
        "contact-interaction" => format!(
            "a {} {} a {}",
            pick(rng, PEOPLE),
            pick(rng, &["hugging", "pushing", "carrying"]),
            pick(rng, &["child", "box", "friend"])
        ),
        "interaction-wo-contact" => format!(
            "a {} {} a {}",
            pick(rng, PEOPLE),
            pick(rng, &["looking at", "waving at", "pointing at"]),
            pick(rng, &["painting", "bird", "stranger"])
        ),
        "state" => pick(rng, &["snowflakes falling", "a candle burning", "leaves drifting", "a lantern glowing"]).to_string(),
        "comparative-relation" => {
            let pair = pick(rng, &["tower|tree", "giraffe|house", "boy|girl", "lamp|chair"]);
            let (a, b) = pair.split_once('|').expect("pair");
            format!("a {a} {} than a {b}", pick(rng, &["taller", "bigger", "shorter"]))
        }
        "compositional-relation" => format!(
            "a {} made of {}",
            pick(rng, ANIMALS),
            pick(rng, &["orange slices", "leaves", "coins", "flowers"])
        ),
        "containment-relation" => format!(
            "a {} full of {}",
            pick(rng, &["cup", "jar", "bottle", "glass"]),
            pick(rng, &["soda water", "honey", "milk", "marbles"])
        ),
        "similarity-relation" => format!(
            "a {} shaped like a {}",
            pick(rng, &["cloud", "lake", "island", "pond"]),
            pick(rng, &["guitar", "rabbit", "heart", "whale"])
        ),
        "cross-entity-binding" => {
            let c1 = pick(rng, COLORS);
            let c2 = COLORS.iter().copied().filter(|c| *c != c1).collect::<Vec<_>>();
            format!("a {c1} {} and a {} {}", pick(rng, &["car", "hat", "kite"]), pick(rng, &c2), pick(rng, &["bicycle", "scarf", "balloon"]))
        }
        "entity-layout" => {
            if rng.random_bool(0.5) {
                format!(
                    "a {} {} a {}",
                    pick(rng, ANIMALS),
                    pick(rng, &["next to", "behind", "above", "in front of"]),
                    pick(rng, OBJECTS)
                )
            } else {
                format!(
                    "a {} in the {} corner",
                    pick(rng, &["logo", "clock", "moon"]),
                    pick(rng, &["top-left", "top-right", "bottom-left", "bottom-right"])
                )
            }
        }
        "knowledge-application" => format!(
            "the {} at {}",
            pick(rng, &["eiffel tower", "great wall of china", "mount fuji", "taj mahal"]),
            pick(rng, &["sunset", "dawn", "night"])
        ),
        "counterfactual" => format!(
            "a {} {}",
            pick(rng, &["whale", "train", "house", "piano"]),
            pick(rng, &["floating in space", "suspended above the clouds", "upside down"])
        ),
        "text-rendering" => format!("a sign with the text \"{}\"", pick(rng, TEXTS)),
        "text-layout" => format!(
            "a poster with text \"{}\" at the {}",
            pick(rng, TEXTS),
            pick(rng, &["top", "bottom", "left", "right"])
        ),
        _ => return None,
    })
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// `count` English prompts annotated with 1 to 3 distinct keypoints each.
pub fn synthetic_prompts(count: usize, seed: u64) -> Vec<UserPrompt> {
    let ids: Vec<&str> = taxonomy::registry().iter().map(|k| k.id.as_str()).collect();
    (0..count)
        .map(|i| {
            let mut rng = derived_rng(seed, &["synthetic-prompt", &i.to_string()]);
            let k = rng.random_range(1..=3usize);
            let chosen: Vec<&str> = ids.choose_multiple(&mut rng, k).copied().collect();
            let sentences: Vec<String> = chosen
                .iter()
                .map(|kp| capitalise(&fragment(kp, &mut rng).expect("every keypoint has a fragment")) + ".")
                .collect();
            let theme = *Theme::ALL.choose(&mut rng).expect("themes");
            UserPrompt::new(format!("syn-{seed}-{i}"), sentences.join(" "), Language::En)
                .with_keypoints(chosen.iter().map(|s| s.to_string()))
                .with_theme(theme)
        })
        .collect()
}

const ZH_FRAGMENTS: &[(&str, &str)] = &[
    ("negation", "一碗牛肉面，不要葱花"),
    ("counting", "画面中有四只狗"),
    ("size", "两个巨大的球体"),
    ("material", "一座冰雕的老鹰"),
    ("expression", "一个带着轻蔑表情的男人"),
    ("artistic-style", "水墨风格的八匹骏马"),
    ("full-body-action", "一个女孩在做托马斯全旋"),
    ("hand-action", "一只手用筷子夹起食物"),
    ("contact-interaction", "拳击手一拳打在沙袋上"),
    ("containment-relation", "一杯装满苏打水的杯子"),
    ("similarity-relation", "一个形状像吉他的湖"),
    ("cross-entity-binding", "穿蓝衬衫的男人和穿黄衬衫的女人"),
    ("entity-layout", "左上角有一个小地图"),
    ("knowledge-application", "长城上的日落"),
    ("text-rendering", "海报上写着“权力的游戏”"),
    ("counterfactual", "悬浮在云层之上的女孩"),
];

/// Bilingual benchmark-shaped records for statistics and harness runs. The
/// Chinese records reuse a fixed phrase pool and carry 3 to 5 keypoints.
pub fn synthetic_benchmark(n_en: usize, n_zh: usize, seed: u64) -> Vec<BenchmarkRecord> {
    let mut out: Vec<BenchmarkRecord> = synthetic_prompts(n_en, seed)
        .into_iter()
        .map(|p| {
            let mut r = BenchmarkRecord::new(p.id.replace("syn", "en"), p.text, Language::En, p.keypoint_ids);
            r.theme = p.theme;
            r
        })
        .collect();
    for i in 0..n_zh {
        let mut rng = derived_rng(seed, &["synthetic-zh", &i.to_string()]);
        let k = *[3usize, 4, 4, 4, 5].choose(&mut rng).expect("sizes");
        let chosen: Vec<&(&str, &str)> = ZH_FRAGMENTS.choose_multiple(&mut rng, k).collect();
        let text = chosen.iter().map(|(_, t)| *t).collect::<Vec<_>>().join("，") + "。";
        let mut r = BenchmarkRecord::new(
            format!("zh-{seed}-{i}"),
            text,
            Language::Zh,
            chosen.iter().map(|(kp, _)| kp.to_string()),
        );
        r.theme = Theme::ALL.choose(&mut rng).copied();
        out.push(r);
    }
    out
}

const LANDMARKS: &[&str] = &["Eiffel Tower", "Big Ben", "Golden Gate Bridge", "Mount Fuji", "Sydney Opera House"];
const DETAILS: &[&str] = &[
    "Soft morning light falls across the whole scene.",
    "The background is slightly blurred to keep the focus sharp.",
    "Colors are natural and the shadows are gentle.",
    "Everything is shown from eye level with a wide lens.",
    "Fine textures are visible on every surface.",
];
const OFF_TOPIC: &[&str] = &[
    "A quiet meadow under drifting fog beside a distant glacier.",
    "Violet aurora ribbons above a frozen canyon rim.",
    "Sandstone dunes rolling toward an empty horizon at dusk.",
    "Moss covering ancient basalt steps beside a waterfall.",
];

/// One constructed filter case: a clean rewrite, or one with a single
/// injected defect.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCase {
    pub prompt: UserPrompt,
    pub candidate: String,
    pub injected: Option<FilterReason>,
}

/// `per_class` defective pairs for each filter rule plus `clean` clean ones.
pub fn filter_cases(per_class: usize, clean: usize, seed: u64) -> Vec<FilterCase> {
    let mut out = Vec::new();
    let kinds = std::iter::repeat_n(None, clean).chain(
        FilterReason::ALL
            .iter()
            .flat_map(|r| std::iter::repeat_n(Some(*r), per_class)),
    );
    for (i, injected) in kinds.enumerate() {
        let mut rng = derived_rng(seed, &["filter-case", &i.to_string()]);
        let base = synthetic_prompts(1, stable_hash(seed, &["filter-base", &i.to_string()]))
            .pop()
            .expect("one prompt");
        let landmark = pick(&mut rng, LANDMARKS);
        let with_entity = injected == Some(FilterReason::InformationLoss) || rng.random_bool(0.5);
        let text = if with_entity {
            format!("{} Seen near the {landmark}.", base.text)
        } else {
            base.text.clone()
        };
        let prompt = UserPrompt::new(format!("fc-{seed}-{i}"), text.clone(), Language::En);
        let detail = pick(&mut rng, DETAILS);
        let clean_text = format!("{text} {detail}");
        let candidate = match injected {
            None => clean_text,
            Some(FilterReason::SemanticDeviation) => pick(&mut rng, OFF_TOPIC).to_string(),
            Some(FilterReason::InformationLoss) => clean_text.replace(&format!("the {landmark}"), "a famous landmark"),
            Some(FilterReason::Incoherence) => match rng.random_range(0..3) {
                0 => format!("{clean_text} {}", ["very"; 6].join(" ")),
                1 => format!("{clean_text} {}", ["and then it repeats"; 10].join(" ")),
                _ => format!("{clean_text}{}", "!".repeat(30)),
            },
            Some(FilterReason::LengthBounds) => {
                if rng.random_bool(0.5) {
                    "Ok".to_string()
                } else {
                    let mut long = clean_text.clone();
                    let mut k = 0;
                    while long.chars().count() <= 2100 {
                        long.push_str(&format!(" Detail {k}: {}", DETAILS[k % DETAILS.len()]));
                        k += 1;
                    }
                    long
                }
            }
        };
        out.push(FilterCase {
            prompt,
            candidate,
            injected,
        });
    }
    out
}
