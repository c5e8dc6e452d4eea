use promptalign::corpus::*;
use promptalign::taxonomy;
use proptest::prelude::*;
use serde_json::{Map, Value};

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 ,.'\"!?-]{1,80}",
        "[\u{4e00}-\u{9fa5}，。]{1,40}",
        "[a-z ]{0,10}[\u{1F300}-\u{1F5FF}\\\\\n\t]{1,6}[a-z]{1,10}",
    ]
    .prop_filter("non-blank", |s| !s.trim().is_empty())
}

fn language() -> impl Strategy<Value = Language> {
    prop_oneof![Just(Language::En), Just(Language::Zh)]
}

fn theme() -> impl Strategy<Value = Option<Theme>> {
    prop::option::of(prop::sample::select(Theme::ALL.to_vec()))
}

fn keypoints(min: usize) -> impl Strategy<Value = Vec<String>> {
    let ids: Vec<String> = taxonomy::registry().iter().map(|k| k.id.to_string()).collect();
    prop::sample::subsequence(ids, min..=5).prop_shuffle()
}

fn extra() -> impl Strategy<Value = Map<String, Value>> {
    let value = prop_oneof![
        any::<i64>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
        "[a-z]{0,8}".prop_map(Value::from),
        (-1e9f64..1e9).prop_map(Value::from),
        prop::collection::vec(any::<u8>(), 0..3).prop_map(|v| Value::from(v)),
    ];
    prop::collection::btree_map("x_[a-z]{1,6}", value, 0..3).prop_map(|m| m.into_iter().collect())
}

fn provenance() -> impl Strategy<Value = Vec<ProvenanceTag>> {
    prop::collection::vec(("[a-z]{3,9}", any::<i64>()).prop_map(|(s, at)| ProvenanceTag::new(s, at)), 0..4)
}

fn user_prompt() -> impl Strategy<Value = UserPrompt> {
    (
        "[a-z0-9-]{1,12}",
        text(),
        language(),
        theme(),
        prop::option::of("[a-z ]{1,10}"),
        keypoints(0),
        provenance(),
        extra(),
    )
        .prop_map(|(id, text, language, theme, subtheme, kps, provenance, extra)| {
            let mut p = UserPrompt::new(id, text, language).with_keypoints(kps);
            p.theme = theme;
            p.subtheme = subtheme;
            p.provenance = provenance;
            p.extra = extra;
            p
        })
}

fn triplet() -> impl Strategy<Value = SftTriplet> {
    (user_prompt(), text(), prop::collection::vec(text(), 1..5), any::<prop::sample::Index>(), provenance(), extra())
        .prop_map(|(user_prompt, cot, candidates, idx, provenance, extra)| {
            let selected_index = idx.index(candidates.len());
            SftTriplet {
                user_prompt,
                cot,
                reprompt: candidates[selected_index].clone(),
                candidates,
                selected_index,
                provenance,
                extra,
            }
        })
}

fn benchmark() -> impl Strategy<Value = BenchmarkRecord> {
    ("[a-z0-9-]{1,12}", text(), language(), keypoints(1), theme(), extra()).prop_map(
        |(id, prompt, language, kps, theme, extra)| {
            let mut r = BenchmarkRecord::new(id, prompt, language, kps);
            r.theme = theme;
            r.extra = extra;
            r
        },
    )
}

fn verdict() -> impl Strategy<Value = Verdict> {
    let ids: Vec<String> = taxonomy::registry().iter().map(|k| k.id.to_string()).collect();
    (
        "[a-z0-9-]{1,12}",
        prop::sample::select(ids),
        0.0f64..=1.0,
        prop::option::of(any::<bool>()),
        prop::option::of(any::<bool>()),
        "[a-z-]{1,10}",
        "[a-z ]{0,20}",
    )
        .prop_map(|(rid, kp, score, tic, si, judge, why)| Verdict::from_score(rid, kp, score, tic, si, judge, why))
}

fn round_trip<T: Record + PartialEq + std::fmt::Debug + Clone>(records: &[T]) -> Vec<T> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    assert_eq!(write_stream(&path, records).unwrap(), records.len());
    read_records(&path).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn user_prompts_round_trip(r in user_prompt()) {
        prop_assert_eq!(round_trip(std::slice::from_ref(&r)), vec![r]);
    }

    #[test]
    fn triplets_round_trip(r in triplet()) {
        prop_assert_eq!(round_trip(std::slice::from_ref(&r)), vec![r]);
    }

    #[test]
    fn benchmark_records_round_trip(r in benchmark()) {
        prop_assert_eq!(round_trip(std::slice::from_ref(&r)), vec![r]);
    }

    #[test]
    fn verdicts_round_trip(r in verdict()) {
        prop_assert_eq!(round_trip(std::slice::from_ref(&r)), vec![r]);
    }
}

#[test]
fn unknown_fields_survive_a_rewrite() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.jsonl");
    std::fs::write(
        &path,
        r#"{"id":"a","prompt":"two cats","language":"en","keypoint_ids":["counting"],"source":"web","score":{"x":1}}"#,
    )
    .unwrap();
    let recs: Vec<BenchmarkRecord> = read_records(&path).unwrap();
    let out = dir.path().join("out.jsonl");
    write_stream(&out, &recs).unwrap();
    let v: Value = serde_json::from_str(std::fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(v["source"], "web");
    assert_eq!(v["score"]["x"], 1);
}

#[test]
fn invalid_records_are_not_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.jsonl");
    let bad = BenchmarkRecord::new("a", "x", Language::En, ["not-a-keypoint"]);
    let good = BenchmarkRecord::new("b", "x", Language::En, ["counting"]);
    assert!(write_stream(&path, &[good, bad]).is_err());
    assert!(!path.exists());
}
