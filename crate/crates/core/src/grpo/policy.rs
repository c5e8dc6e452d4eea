use rand::Rng;
use serde::{Deserialize, Serialize};

/// Softmax policy over a finite library of named actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub actions: Vec<String>,
    pub logits: Vec<f64>,
    #[serde(default = "one")]
    pub temperature: f64,
}

fn one() -> f64 {
    1.0
}

impl ToyPolicy {
    pub fn new(actions: Vec<String>, logits: Vec<f64>) -> Self {
        assert_eq!(actions.len(), logits.len(), "one logit per action");
        Self {
            actions,
            logits,
            temperature: 1.0,
        }
    }

    pub fn uniform(actions: Vec<String>) -> Self {
        let n = actions.len();
        Self::new(actions, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        let scaled: Vec<f64> = self.logits.iter().map(|l| l / self.temperature).collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let scaled: Vec<f64> = self.logits.iter().map(|l| l / self.temperature).collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scaled.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        scaled.into_iter().map(|l| l - lse).collect()
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs()[action]
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let probs = self.probs();
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Most probable action; the first one on ties.
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.logits.iter().enumerate() {
            if *l > self.logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }
}
