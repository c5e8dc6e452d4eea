//! Python bindings. Build with `cargo build -p promptalign-py --release` and
//! import the resulting shared library as `promptalign_py`.

use promptalign::benchmark::{self, AccuracyTable, ReportFormat, ReportTables};
use promptalign::corpus::{Language, UserPrompt};
use promptalign::evaluator::{mock_t2i, Image, Judge, OracleJudge};
use promptalign::grpo::{self, BanditEnv, GrpoConfig, ToyPolicy};
use promptalign::orchestrator::RewriteEdit;
use promptalign::taxonomy;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Keypoint ids in registry order.
#[pyfunction]
pub fn keypoints() -> Vec<String> {
    taxonomy::registry().iter().map(|k| k.id.to_string()).collect()
}

/// Group-normalized advantages with the default epsilon.
#[pyfunction]
pub fn advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    let set = grpo::advantages(&rewards, &GrpoConfig::default()).map_err(value_err)?;
    Ok(set.values().to_vec())
}

/// Applies a named rewrite edit to a prompt.
#[pyfunction]
pub fn rewrite(edit: &str, text: &str) -> PyResult<String> {
    Ok(edit.parse::<RewriteEdit>().map_err(value_err)?.apply(text))
}

/// Renders `image_text` (default: the prompt) with the mock generator and
/// scores it against `prompt` on the given keypoints.
#[pyfunction]
#[pyo3(signature = (prompt, keypoint_ids, image_text=None, seed=0, language="en"))]
pub fn reward(prompt: &str, keypoint_ids: Vec<String>, image_text: Option<&str>, seed: u64, language: &str) -> PyResult<f64> {
    let lang: Language = language.parse().map_err(value_err)?;
    let p = UserPrompt::new("py", prompt, lang).with_keypoints(keypoint_ids);
    let image = Image::Scene(mock_t2i(image_text.unwrap_or(prompt), seed));
    Ok(OracleJudge.reward(&image, &p).map_err(value_err)?.reward)
}

/// Trains a uniform policy on a bandit whose first arm pays. Returns
/// `(step, mean_reward, kl, loss)` per step and the final probabilities.
#[pyfunction]
#[pyo3(signature = (arms=4, seed=0, steps=None))]
pub fn train_bandit(arms: usize, seed: u64, steps: Option<u32>) -> PyResult<(Vec<(u32, f64, f64, f64)>, Vec<f64>)> {
    let mut cfg = GrpoConfig::toy();
    cfg.seed = seed;
    if let Some(s) = steps {
        cfg.steps = s;
    }
    let env = BanditEnv::new(arms, 0);
    let initial = ToyPolicy::uniform((0..arms).map(|i| format!("arm-{i}")).collect());
    let result = grpo::train(&env, initial, &cfg).map_err(value_err)?;
    let history = result.history.iter().map(|s| (s.step, s.mean_reward, s.kl, s.loss)).collect();
    Ok((history, result.policy.probs()))
}

/// Compares two accuracy tables given as JSON and renders the delta report
/// as `text`, `json` or `csv`.
#[pyfunction]
#[pyo3(signature = (baseline_json, enhanced_json, format="text"))]
pub fn compare_tables(baseline_json: &str, enhanced_json: &str, format: &str) -> PyResult<String> {
    let b: AccuracyTable = serde_json::from_str(baseline_json).map_err(value_err)?;
    let e: AccuracyTable = serde_json::from_str(enhanced_json).map_err(value_err)?;
    let fmt: ReportFormat = format.parse().map_err(value_err)?;
    let delta = benchmark::compare(&b, &e).map_err(value_err)?;
    benchmark::render_report(
        &ReportTables {
            baseline: Some(b),
            enhanced: Some(e),
            delta: Some(delta),
        },
        fmt,
    )
    .map_err(value_err)
}

#[pymodule]
fn promptalign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(keypoints, m)?)?;
    m.add_function(wrap_pyfunction!(advantages, m)?)?;
    m.add_function(wrap_pyfunction!(rewrite, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(train_bandit, m)?)?;
    m.add_function(wrap_pyfunction!(compare_tables, m)?)?;
    Ok(())
}
