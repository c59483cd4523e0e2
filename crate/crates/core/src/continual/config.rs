use serde::{Deserialize, Serialize};

use crate::compressor::{MamlConfig, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::memory::{BankConfig, ImportanceWeights, DEFAULT_BUDGET_BYTES};
use crate::ndcore::optim::optimizers;

use super::method::methods;
use super::stream::StreamShape;

/// Everything that determines one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Registered method name.
    pub method: String,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub eval_samples_per_class: usize,
    pub class_radius: f64,
    pub sigma: f64,
    pub d_shift: f64,
    pub code_dim: usize,
    /// 1 for a linear compressor, 2 for one hidden ReLU layer each side.
    pub depth: usize,
    pub maml: MamlConfig,
    pub importance: ImportanceWeights,
    pub budget_bytes: usize,
    pub stm_capacity: usize,
    pub ltm_capacity: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_ewc: f64,
    pub lambda_distill: f64,
    pub replay_n: usize,
    pub replay_sampler: String,
    pub batch_size: usize,
    pub split_ratio: f64,
    pub epochs: usize,
    pub optimizer: String,
    /// Step size of the joint compressor + classifier update.
    pub lr: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: "ahc".into(),
            num_tasks: 5,
            classes_per_task: 2,
            samples_per_class: 100,
            eval_samples_per_class: 100,
            class_radius: 6.0,
            sigma: 0.5,
            d_shift: 2.0,
            code_dim: 10,
            depth: 1,
            maml: MamlConfig::default(),
            importance: ImportanceWeights::default(),
            budget_bytes: DEFAULT_BUDGET_BYTES,
            stm_capacity: 1000,
            ltm_capacity: 5000,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda_ewc: 5000.0,
            lambda_distill: 2.0,
            replay_n: 32,
            replay_sampler: "uniform".into(),
            batch_size: 24,
            split_ratio: 0.3,
            epochs: 5,
            optimizer: "adam".into(),
            lr: 3e-2,
            seed: 42,
        }
    }
}

fn positive(field: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config {
            field,
            reason: "must be positive".into(),
        });
    }
    Ok(())
}

fn non_negative(field: &'static str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config {
            field,
            reason: format!("must be finite and non-negative, got {v}"),
        });
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let unknown = |field: &'static str, e: Error| match e {
            Error::UnknownName { .. } => Error::Config {
                field,
                reason: e.to_string(),
            },
            other => other,
        };
        methods().create(&self.method).map_err(|e| unknown("method", e))?;
        optimizers()
            .create(&self.optimizer)
            .map_err(|e| unknown("optimizer", e))?;
        crate::memory::samplers()
            .create(&self.replay_sampler)
            .map_err(|e| unknown("replay_sampler", e))?;
        positive("num_tasks", self.num_tasks)?;
        positive("classes_per_task", self.classes_per_task)?;
        positive("samples_per_class", self.samples_per_class)?;
        positive("eval_samples_per_class", self.eval_samples_per_class)?;
        positive("code_dim", self.code_dim)?;
        positive("replay_n", self.replay_n)?;
        positive("epochs", self.epochs)?;
        if self.batch_size < 2 {
            return Err(Error::Config {
                field: "batch_size",
                reason: "must be at least 2 to form a support/query split".into(),
            });
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config {
                field: "split_ratio",
                reason: format!("must lie in (0, 1), got {}", self.split_ratio),
            });
        }
        if !(1..=2).contains(&self.depth) {
            return Err(Error::Config {
                field: "depth",
                reason: format!("must be 1 or 2, got {}", self.depth),
            });
        }
        for (field, v) in [
            ("class_radius", self.class_radius),
            ("sigma", self.sigma),
            ("d_shift", self.d_shift),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_ewc", self.lambda_ewc),
            ("lambda_distill", self.lambda_distill),
            ("lr", self.lr),
        ] {
            non_negative(field, v)?;
        }
        self.maml.validate()?;
        self.bank_config().validate()
    }

    pub fn bank_config(&self) -> BankConfig {
        BankConfig {
            code_dim: self.code_dim,
            stm_capacity: self.stm_capacity,
            ltm_capacity: self.ltm_capacity,
            budget_bytes: self.budget_bytes,
            weights: self.importance,
        }
    }

    pub fn stream_shape(&self) -> StreamShape {
        StreamShape {
            num_tasks: self.num_tasks,
            classes_per_task: self.classes_per_task,
            feature_dim: FEATURE_DIM,
            class_radius: self.class_radius,
            sigma: self.sigma,
            d_shift: self.d_shift,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lambda_ewc, 5000.0);
        assert_eq!(c.lambda_distill, 2.0);
        assert_eq!(c.replay_n, 32);
        assert_eq!(c.bank_config().budget_records(), 1163);
    }

    #[test]
    fn bad_fields_are_named() {
        let c = ExperimentConfig {
            method: "nope".into(),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { field: "method", .. })));
        let c = ExperimentConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(matches!(
            c.validate(),
            Err(Error::Config {
                field: "batch_size",
                ..
            })
        ));
        let c = ExperimentConfig {
            sigma: -1.0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { field: "sigma", .. })));
    }
}
