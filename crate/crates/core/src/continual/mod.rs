//! Class-incremental training over a synthetic task stream: replay of
//! compressed features, weight consolidation, feature distillation,
//! evaluation and the forgetting metric.

mod classifier;
mod config;
mod ewc;
mod losses;
mod method;
mod metrics;
mod report;
mod stream;
mod trainer;

pub use classifier::{log_sum_exp, softmax, ModelParams, ReplayClassifier};
pub use config::ExperimentConfig;
pub use ewc::{estimate_fisher, ewc_penalty, ewc_penalty_grad, layer_groups, FisherState};
pub use losses::{distill_loss, distill_loss_grad, materialize, replay_loss, replay_loss_grad, REPLAY_MSE_WEIGHT};
pub use method::{methods, Ahc, AhcFixed, EwcOnly, Finetune, Method, ReplayOnly, Terms};
pub use metrics::{forgetting, AccuracyMatrix};
pub use report::{EpochLosses, MemorySample, Report, StepLosses};
pub use stream::{generate_task_stream, sample_task_batch, StreamSampler, StreamShape, TaskSpec};
pub use trainer::{accuracy, eval_data, evaluate, run_experiment, sub_rng, task_data, train_task, TrainState};
