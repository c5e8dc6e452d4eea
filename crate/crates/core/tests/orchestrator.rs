use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use promptalign::corpus::{UserPrompt, Verdict};
use promptalign::evaluator::{EvaluatorError, Image, Judge, OracleJudge};
use promptalign::grpo::{self, GrpoConfig, RewardEnv, ToyPolicy};
use promptalign::orchestrator::client::{HttpRequest, HttpResponse, Transport};
use promptalign::orchestrator::*;
use promptalign::synth::synthetic_prompts;
use promptalign::taxonomy::KeyPoint;

fn cfg(batch: usize, epochs: u32) -> GrpoConfig {
    let mut c = GrpoConfig::toy();
    c.batch_size = batch;
    c.epochs = epochs;
    c.seed = 17;
    c
}

fn toy_policy() -> Arc<ToyRewriter> {
    Arc::new(ToyRewriter::new(ToyRewriter::initial_policy(), false, Arc::default()))
}

#[test]
fn hermetic_rollout_has_full_group() {
    let p = &synthetic_prompts(1, 3)[0];
    let r = rollout(p, toy_policy().as_ref(), &MockT2i, &OracleJudge, 8, 5).unwrap();
    assert_eq!(r.group.len(), 8);
    assert_eq!(r.reports.len(), 8);
    assert_eq!(r.images.len(), 8);
    assert_eq!(r.group.actions.len(), 8);
    assert!(r.group.rewards.iter().all(|x| (0.0..=1.0).contains(x)));
    for (i, a) in r.group.actions.iter().enumerate() {
        let expected = ToyRewriter::initial_policy().log_prob(*a);
        assert_eq!(r.group.old_logprobs[i], expected);
    }
}

#[test]
fn greedy_best_action_gives_zero_advantages() {
    let mut policy = ToyRewriter::initial_policy();
    policy.logits[RewriteEdit::ALL.len() - 1] = 2.0;
    let rewriter = ToyRewriter::new(policy, true, Arc::default());
    let p = &synthetic_prompts(1, 3)[0];
    let r = rollout(p, &rewriter, &MockT2i, &OracleJudge, 8, 5).unwrap();
    assert!(r.group.candidates.iter().all(|c| c == &r.group.candidates[0]));
    let adv = grpo::advantages(&r.group.rewards, &GrpoConfig::default()).unwrap();
    assert!(adv.is_zero());
}

/// Renders to a reference naming the candidate; the judge scores the
/// reference's length, so a reordered pipeline would mismatch.
struct TagT2i;
impl T2iBackend for TagT2i {
    fn render(&self, text: &str, seed: u64) -> Result<Image, OrchestratorError> {
        // jitter completion order
        thread::sleep(Duration::from_micros(seed % 700));
        Ok(Image::Reference(format!("tag:{text}")))
    }
}

struct LengthJudge;
fn length_score(text: &str) -> f64 {
    (text.len() % 97) as f64 / 96.0
}
impl Judge for LengthJudge {
    fn id(&self) -> &str {
        "length"
    }
    fn judge(&self, image: &Image, prompt: &UserPrompt, kps: &[&KeyPoint]) -> Result<Vec<Verdict>, EvaluatorError> {
        let Image::Reference(r) = image else {
            return Err(EvaluatorError::UnsupportedImage("reference only".into()));
        };
        let score = length_score(r.strip_prefix("tag:").unwrap());
        Ok(kps
            .iter()
            .map(|kp| Verdict::from_score(&prompt.id, &kp.id, score, Some(true), Some(true), "length", ""))
            .collect())
    }
}

#[test]
fn rewards_follow_candidate_order() {
    for p in synthetic_prompts(20, 8) {
        let r = rollout(&p, toy_policy().as_ref(), &TagT2i, &LengthJudge, 8, 99).unwrap();
        for (c, reward) in r.group.candidates.iter().zip(&r.group.rewards) {
            let scores: Vec<f64> = p
                .keypoint_ids
                .iter()
                .map(|k| Verdict::from_score(&p.id, k, length_score(c), Some(true), Some(true), "length", "").score)
                .collect();
            let expected = scores.iter().sum::<f64>() / scores.len() as f64;
            assert!((reward - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn failing_render_aborts_whole_group_and_requeues() {
    let prompts = synthetic_prompts(6, 2);
    let needle = prompts[3].text.split('.').next().unwrap().to_string();
    let flaky = FlakyT2i {
        inner: MockT2i,
        needle: Some(needle),
        rate: 0.0,
    };
    // the failing group alone would be a partial one
    let direct = rollout(&prompts[3], toy_policy().as_ref(), &flaky, &OracleJudge, 8, 1);
    assert!(matches!(direct, Err(ref e) if e.is_transient()));

    let backends = BackendSet {
        t2i: Arc::new(flaky),
        ..BackendSet::hermetic()
    };
    let mut o = Orchestrator::new(backends, cfg(6, 1), RunConfig::default()).unwrap();
    let report = o.run(&prompts).unwrap();
    let m = &report.epochs[0];
    assert_eq!((m.groups, m.aborted, m.requeued, m.updates), (5, 1, 1, 1));
}

#[test]
fn transient_failures_recover_on_requeue() {
    let prompts = synthetic_prompts(40, 2);
    let backends = BackendSet {
        t2i: Arc::new(FlakyT2i {
            inner: MockT2i,
            needle: None,
            rate: 0.02,
        }),
        ..BackendSet::hermetic()
    };
    let mut o = Orchestrator::new(backends, cfg(40, 1), RunConfig::default()).unwrap();
    let m = o.run(&prompts).unwrap().epochs.remove(0);
    assert!(m.requeued > 0, "{m:?}");
    assert_eq!(m.groups + m.aborted, 40);
    assert!(m.aborted < m.requeued);
}

#[test]
fn full_batch_is_one_update() {
    let prompts = synthetic_prompts(64, 4);
    let mut o = Orchestrator::new(BackendSet::hermetic(), cfg(64, 1), RunConfig::default()).unwrap();
    let report = o.run(&prompts).unwrap();
    assert_eq!(report.epochs[0].updates, 1);
    assert_eq!(report.epochs[0].groups, 64);
    assert_ne!(report.policy.unwrap(), ToyRewriter::initial_policy());
}

#[test]
fn empty_prompt_set_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunConfig {
        checkpoint_dir: Some(dir.path().join("ck")),
        ..RunConfig::default()
    };
    let mut o = Orchestrator::new(BackendSet::hermetic(), cfg(8, 1), run).unwrap();
    assert!(matches!(o.run(&[]), Err(OrchestratorError::EmptyPromptSet)));
    assert_eq!(o.policy(), Some(&ToyRewriter::initial_policy()));
    assert!(!dir.path().join("ck").join(checkpoint::JOURNAL_FILE).exists());
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let prompts = synthetic_prompts(40, 6);
    let grpo = cfg(16, 3);
    let straight = Orchestrator::new(BackendSet::hermetic(), grpo.clone(), RunConfig::default())
        .unwrap()
        .run(&prompts)
        .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let interrupted = RunConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        max_batches: Some(4),
        ..RunConfig::default()
    };
    let partial = Orchestrator::new(BackendSet::hermetic(), grpo.clone(), interrupted.clone())
        .unwrap()
        .run(&prompts)
        .unwrap();
    assert!(!partial.completed);
    assert_eq!(partial.epochs.len(), 1);
    assert!(Orchestrator::new(BackendSet::hermetic(), grpo.clone(), interrupted).is_err());

    let resume = RunConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..RunConfig::default()
    };
    let resumed = Orchestrator::resume(BackendSet::hermetic(), grpo, resume).unwrap().run(&prompts).unwrap();
    assert!(resumed.completed);
    assert_eq!(
        serde_json::to_string(&resumed).unwrap(),
        serde_json::to_string(&straight).unwrap()
    );
}

/// Image endpoint stub that records peak concurrency.
#[derive(Default)]
struct ProbeImages {
    current: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

impl Transport for ProbeImages {
    fn post(&self, req: &HttpRequest) -> Result<HttpResponse, String> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(2));
        self.current.fetch_sub(1, Ordering::SeqCst);
        let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
        Ok(HttpResponse {
            status: 200,
            headers: vec![],
            body: serde_json::json!({"data": [{"url": format!("tag:{}", body["prompt"].as_str().unwrap())}]})
                .to_string(),
        })
    }
}

#[test]
fn endpoint_mode_respects_in_flight_bound_and_emits_preferences() {
    let probe = Arc::new(ProbeImages::default());
    let mut ep = EndpointConfig::new("http://stub/v1");
    ep.max_in_flight = 2;
    ep.auth_env = Some("PROMPTALIGN_TEST_IMAGE_TOKEN".into());
    std::env::set_var("PROMPTALIGN_TEST_IMAGE_TOKEN", "tok-abc-123-secret");
    let client = Arc::new(ChatClient::with_transport(ep.clone(), probe.clone()).unwrap());
    let backends = BackendSet {
        policy: PolicySource::Remote(toy_policy()),
        t2i: Arc::new(HttpImage::new(client.clone())),
        judge: Arc::new(LengthJudge),
    };
    assert!(!backends.is_hermetic());

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prefs.jsonl");
    let run = RunConfig {
        workers: 6,
        preference_output: Some(out.clone()),
        ..RunConfig::default()
    };
    let prompts = synthetic_prompts(12, 1);
    let report = Orchestrator::new(backends, cfg(6, 1), run).unwrap().run(&prompts).unwrap();
    assert_eq!(report.policy, None);
    assert_eq!(probe.calls.load(Ordering::SeqCst), 12 * 8);
    assert!(probe.peak.load(Ordering::SeqCst) <= 2);
    assert_eq!(probe.peak.load(Ordering::SeqCst), 2);

    let lines: Vec<PreferenceRecord> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 12);
    assert_eq!(lines, report.preferences);
    for r in &lines {
        assert_eq!(r.candidates.len(), 8);
        let adv = grpo::advantages(&r.rewards, &GrpoConfig::default()).unwrap();
        assert_eq!(r.advantages, adv.0);
    }

    let log = serde_json::to_string(&client.exchanges()).unwrap();
    assert!(!log.contains("tok-abc-123-secret"));
    assert!(!toml::to_string(&ep).unwrap().contains("tok-abc-123-secret"));
}

#[test]
fn hermetic_metrics_are_reproducible() {
    let prompts = synthetic_prompts(30, 9);
    let run = || {
        let mut o = Orchestrator::new(BackendSet::hermetic(), cfg(10, 2), RunConfig::default()).unwrap();
        serde_json::to_string(&o.run(&prompts).unwrap()).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn mock_pipeline_env_prefers_explicit_rewrites() {
    let env = MockPipelineEnv::new(synthetic_prompts(40, 1));
    let mean = |a: usize| (0..40).map(|p| env.reward(p, a, p as u64)).sum::<f64>() / 40.0;
    let explicit = RewriteEdit::ALL.iter().position(|e| *e == RewriteEdit::ExplicitAll).unwrap();
    assert_eq!(mean(explicit), 1.0);
    assert!(mean(0) < 0.9);
    let _ = ToyPolicy::uniform(env.actions());
}
