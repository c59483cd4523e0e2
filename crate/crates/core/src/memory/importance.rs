use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixing weights of the importance score and the consolidation threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportanceWeights {
    /// Weight of uncertainty.
    pub alpha: f64,
    /// Weight of difficulty.
    pub beta: f64,
    /// Weight of recency.
    pub gamma: f64,
    /// Records scoring below this move from STM to LTM.
    pub tau: f64,
    /// Age at which the recency term reaches zero.
    pub a_max: u32,
}

impl Default for ImportanceWeights {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.4,
            gamma: 0.3,
            tau: 0.5,
            a_max: 10_000,
        }
    }
}

impl ImportanceWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config {
                field: "importance",
                reason: format!("weights must be non-negative, got {w:?}"),
            });
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config {
                field: "importance",
                reason: format!("weights must sum to 1, got {sum}"),
            });
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config {
                field: "importance.tau",
                reason: format!("must be in [0, 1], got {}", self.tau),
            });
        }
        if self.a_max == 0 {
            return Err(Error::Config {
                field: "importance.a_max",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// `α·U + β·D + γ·(1 − min(A, A_max)/A_max)`.
pub fn importance(uncertainty: f64, difficulty: f64, age: u32, w: &ImportanceWeights) -> Result<f64> {
    if !(0.0..=1.0).contains(&uncertainty) || !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::InvalidArgument(format!(
            "importance inputs must lie in [0, 1], got U={uncertainty}, D={difficulty}"
        )));
    }
    if w.a_max == 0 {
        return Err(Error::InvalidArgument("a_max must be positive".into()));
    }
    let recency = 1.0 - age.min(w.a_max) as f64 / w.a_max as f64;
    Ok(w.alpha * uncertainty + w.beta * difficulty + w.gamma * recency)
}

/// Predictive entropy divided by `ln C`, so it lands in `[0, 1]`.
pub fn normalized_entropy(probs: &[f64]) -> f64 {
    if probs.len() < 2 {
        return 0.0;
    }
    let h: f64 = probs.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    (h / (probs.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Scales losses by the largest loss seen so far.
#[derive(Debug, Clone, Default)]
pub struct DifficultyScale {
    running_max: f64,
}

impl DifficultyScale {
    pub fn observe(&mut self, loss: f64) {
        if loss.is_finite() && loss > self.running_max {
            self.running_max = loss;
        }
    }

    pub fn normalize(&self, loss: f64) -> f64 {
        if self.running_max <= 0.0 {
            return 0.0;
        }
        (loss / self.running_max).clamp(0.0, 1.0)
    }
}
