use promptalign_py::*;

#[test]
fn keypoints_in_registry_order() {
    let ids = keypoints();
    assert_eq!(ids.len(), 24);
    assert_eq!(ids[0], "negation");
    assert_eq!(ids[23], "text-layout");
}

#[test]
fn advantages_of_reference_group() {
    let a = advantages(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    let std = (0.375f64 * 0.625).sqrt();
    assert!((a[0] - 0.625 / std).abs() < 1e-12);
    assert!((a[1] + 0.375 / std).abs() < 1e-12);
    assert!(advantages(vec![1.0]).is_err());
}

#[test]
fn explicit_rewrite_scores_full_marks() {
    let prompt = "four dogs";
    let text = rewrite("explicit-all", prompt).unwrap();
    assert_eq!(reward(prompt, vec!["counting".into()], Some(&text), 3, "en").unwrap(), 1.0);
    assert!(reward(prompt, vec!["no-such".into()], None, 3, "en").is_err());
}

#[test]
fn bandit_training_is_seeded() {
    let (h1, p1) = train_bandit(4, 7, Some(200)).unwrap();
    let (h2, p2) = train_bandit(4, 7, Some(200)).unwrap();
    assert_eq!((h1.len(), &h1, &p1), (200, &h2, &p2));
}

#[test]
fn compare_renders_delta_csv() {
    let base = r#"{"counting": {"n": 10, "pass": 4, "acc": 0.4}}"#;
    let enh = r#"{"counting": {"n": 10, "pass": 7, "acc": 0.7}}"#;
    let csv = compare_tables(base, enh, "csv").unwrap();
    assert!(csv.contains("counting,40.0,70.0,+30.0"), "{csv}");
    assert!(compare_tables(base, enh, "xml").is_err());
}
