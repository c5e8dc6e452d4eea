use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_promptalign"));
    // keep the host environment from leaking into the configuration
    for (k, _) in std::env::vars() {
        if k.starts_with("PROMPTALIGN_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn taxonomy_export_lists_24_keypoints() {
    let text = ok(&["taxonomy", "export"]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 24);
    for l in lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["id"].is_string());
    }
    ok(&["taxonomy", "validate"]);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["grpo", "train", "--env", "nope", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_1_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": 3}\n").unwrap();
    let out = run(&["corpus", "validate", "--in", p(&bad), "--schema", "user-prompt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[E_"));
}

#[test]
fn grpo_train_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        ok(&["grpo", "train", "--env", "bandit", "--seed", "7", "--out", p(out)]);
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let last: serde_json::Value =
        serde_json::from_str(std::str::from_utf8(&ta).unwrap().lines().last().unwrap()).unwrap();
    assert!(last["mean_reward"].as_f64().unwrap() > 0.9);
}

#[test]
fn config_defaults_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, ok(&["config", "print-defaults"])).unwrap();
    let shown = ok(&["--config", p(&cfg), "config", "show"]);
    assert!(shown.contains("[grpo]"));

    let out = bin()
        .args(["--config", p(&cfg), "config", "show"])
        .env("PROMPTALIGN_SERVER__PORT", "9191")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("port = 9191"));

    let out = bin()
        .args(["config", "show"])
        .env("PROMPTALIGN_SERVER__PORT", "not-a-port")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_CONFIG"));
}

#[test]
fn secrets_never_printed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "[backends.judge]\nbase_url = \"http://127.0.0.1:9/v1\"\nmodel = \"j\"\nauth_env = \"JUDGE_TOKEN\"\n",
    )
    .unwrap();
    let secret = "sk-very-secret-value-123";
    let out = bin()
        .args(["--config", p(&cfg), "--log-level", "debug", "config", "show"])
        .env("JUDGE_TOKEN", secret)
        .output()
        .unwrap();
    let all = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.status.success(), "{all}");
    assert!(all.contains("JUDGE_TOKEN"));
    assert!(!all.contains(secret));
}

#[test]
fn curation_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let prompts: Vec<_> = promptalign::synth::synthetic_prompts(6, 3);
    promptalign::corpus::write_stream(&d("prompts.jsonl"), &prompts).unwrap();

    ok(&["curate", "generate", "--hermetic", "--in", p(&d("prompts.jsonl")), "--out", p(&d("gen.jsonl"))]);
    ok(&["curate", "filter", "--in", p(&d("gen.jsonl")), "--out", p(&d("filt.jsonl")), "--verdicts", p(&d("v.jsonl"))]);
    let tasks = d("tasks");
    ok(&["curate", "enqueue", "--hermetic", "--in", p(&d("filt.jsonl")), "--task-dir", p(&tasks)]);

    let store = promptalign::curation::TaskStore::open(&tasks).unwrap();
    let n = store.stats().open;
    assert!(n > 0);
    for _ in 0..n {
        let v = store.next(1_000).unwrap();
        store.select(&v.task_id, 0, Some(&v.lease_id), Some("t"), 1_001).unwrap();
    }
    drop(store);
    ok(&["curate", "finalize", "--task-dir", p(&tasks), "--out", p(&d("sft.jsonl"))]);
    let sft = std::fs::read_to_string(d("sft.jsonl")).unwrap();
    assert_eq!(sft.lines().count(), n);
    ok(&["corpus", "validate", "--in", p(&d("sft.jsonl")), "--schema", "sft"]);
}

#[test]
fn hermetic_align_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let m1 = d("m1.jsonl");
    let m2 = d("m2.jsonl");
    for m in [&m1, &m2] {
        ok(&["align", "run", "--hermetic", "--synthetic", "20", "--epochs", "3", "--metrics", p(m)]);
    }
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    assert_eq!(std::fs::read_to_string(&m1).unwrap().lines().count(), 3);

    let ds = promptalign::synth::synthetic_benchmark(30, 0, 5);
    promptalign::corpus::write_stream(&d("bench.jsonl"), &ds).unwrap();
    let ds = d("bench.jsonl");
    ok(&["bench", "run", "--hermetic", "--dataset", p(&ds), "--out", p(&d("vb.jsonl")), "--table", p(&d("tb.json"))]);
    ok(&[
        "bench", "run", "--hermetic", "--rewrite", "explicit-all", "--dataset", p(&ds),
        "--out", p(&d("ve.jsonl")), "--table", p(&d("te.json")),
    ]);
    let csv = ok(&["bench", "compare", "--baseline", p(&d("tb.json")), "--enhanced", p(&d("te.json")), "--format", "csv"]);
    assert!(csv.starts_with("keypoint_id,baseline_pct,enhanced_pct,delta_pp"));
    assert!(csv.lines().count() >= 2);
    ok(&["bench", "analyze", "--dataset", p(&ds)]);
}
