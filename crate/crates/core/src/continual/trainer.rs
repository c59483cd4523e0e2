//! The per-task training loop, evaluation and whole-stream runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compressor::{
    maml_adapt, pullback, split_sizes, CompressorParams, CompressorShape, MamlConfig, FEATURE_DIM,
};
use crate::error::{Error, Result};
use crate::memory::{normalized_entropy, samplers, DifficultyScale, FeatureRecord, MemoryBank, ReplaySampler};
use crate::ndcore::optim::{apply, optimizers, Optimizer};
use crate::ndcore::{add_scaled, Tensors, Vector};

use super::classifier::{softmax, ModelParams, ReplayClassifier};
use super::config::ExperimentConfig;
use super::ewc::{estimate_fisher, ewc_penalty_grad, FisherState};
use super::losses::{distill_loss_grad, replay_loss_grad};
use super::method::{methods, Method, Terms};
use super::metrics::{forgetting, AccuracyMatrix};
use super::report::{MemorySample, Report, StepLosses};
use super::stream::{generate_task_stream, sample_task_batch, TaskSpec};

// Independent random streams derived from the run seed.
const STREAM_TASKS: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_DATA: u64 = 1 << 16;
const STREAM_EVAL: u64 = 1 << 32;

/// A generator on stream `stream` of `seed`.
pub fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Training data of one task: `classes × samples_per_class` labelled features.
pub fn task_data(task: &TaskSpec, cfg: &ExperimentConfig) -> (Vec<Vector>, Vec<u32>) {
    let mut rng = sub_rng(cfg.seed, STREAM_DATA + task.task_id as u64);
    sample_task_batch(task, task.classes.len() * cfg.samples_per_class, &mut rng)
}

/// Fresh held-out data of one task, identical every time it is requested.
pub fn eval_data(task: &TaskSpec, cfg: &ExperimentConfig) -> (Vec<Vector>, Vec<u32>) {
    let mut rng = sub_rng(cfg.seed, STREAM_EVAL + task.task_id as u64);
    sample_task_batch(task, task.classes.len() * cfg.eval_samples_per_class, &mut rng)
}

/// Model, memory and anchors carried from task to task.
pub struct TrainState {
    pub model: ModelParams,
    pub bank: MemoryBank,
    pub fisher: Option<FisherState<ModelParams>>,
    /// Compressor snapshot taken at the end of the previous task.
    pub frozen: Option<CompressorParams>,
    pub step: u64,
    pub memory_trace: Vec<MemorySample>,
    pub losses: Vec<StepLosses>,
    method: Box<dyn Method>,
    optimizer: Box<dyn Optimizer>,
    sampler: Box<dyn ReplaySampler>,
    difficulty: DifficultyScale,
    rng: ChaCha8Rng,
    bank_events: u64,
}

impl TrainState {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let shape = CompressorShape::new(FEATURE_DIM, cfg.code_dim, cfg.depth)?;
        let compressor = CompressorParams::init(shape, cfg.seed.wrapping_add(STREAM_INIT));
        Ok(Self {
            model: ModelParams::new(compressor, ReplayClassifier::new(cfg.code_dim))?,
            bank: MemoryBank::new(cfg.bank_config())?,
            fisher: None,
            frozen: None,
            step: 0,
            memory_trace: Vec::new(),
            losses: Vec::new(),
            method: methods().create(&cfg.method)?,
            optimizer: optimizers().create(&cfg.optimizer)?,
            sampler: samplers().create(&cfg.replay_sampler)?,
            difficulty: DifficultyScale::default(),
            rng: sub_rng(cfg.seed, STREAM_TRAIN),
            bank_events: 0,
        })
    }

    pub fn terms(&self) -> Terms {
        self.method.terms()
    }

    /// Inner-loop settings used at evaluation time, if the method adapts.
    pub fn eval_adaptation(&self, cfg: &ExperimentConfig) -> Option<MamlConfig> {
        (self.terms().adapt && cfg.maml.inner_steps > 0).then_some(MamlConfig {
            second_order: false,
            ..cfg.maml
        })
    }

    fn trace(&mut self) {
        self.bank_events += 1;
        self.memory_trace.push(MemorySample {
            event: self.bank_events,
            train_step: self.step,
            bytes: self.bank.memory_bytes(),
            records: self.bank.len(),
        });
    }
}

fn add_into(grad: &mut ModelParams, g: &ModelParams) -> Result<()> {
    add_scaled(&mut grad.compressor, &g.compressor, 1.0)?;
    grad.classifier.add_prefix(&g.classifier)
}

/// One optimizer update on a labelled batch.
fn train_step(
    state: &mut TrainState,
    batch: &[Vector],
    labels: &[u32],
    task_id: u32,
    epoch: u32,
    cfg: &ExperimentConfig,
) -> Result<()> {
    let terms = state.terms();
    let maml = MamlConfig {
        inner_steps: if terms.adapt { cfg.maml.inner_steps } else { 0 },
        ..cfg.maml
    };
    let (s, _) = split_sizes(batch.len(), cfg.split_ratio)?;
    let (support, query) = batch.split_at(s);
    let query_labels = &labels[s..];

    // outer loss at the adapted compressor, pulled back to the meta parameters
    let adaptation = if maml.inner_steps > 0 {
        Some(maml_adapt(&state.model.compressor, support, &maml)?)
    } else {
        None
    };
    let adapted = ModelParams {
        compressor: adaptation
            .as_ref()
            .map_or_else(|| state.model.compressor.clone(), |a| a.adapted.clone()),
        classifier: state.model.classifier.clone(),
    };
    let mut g_adapted = adapted.zeros_like();
    let nq = query.len() as f64;
    let mut task_loss = 0.0;
    for (f, y) in query.iter().zip(query_labels) {
        task_loss += adapted.pipeline_ce(f, *y, Some(&mut g_adapted), 1.0 / nq)?;
    }
    task_loss /= nq;
    let (comp, g_comp) = adapted.compressor.recon_loss_grad(query)?;
    add_scaled(&mut g_adapted.compressor, &g_comp, cfg.lambda1)?;
    let mut grad = ModelParams {
        compressor: match &adaptation {
            Some(a) => pullback(a, support, &g_adapted.compressor, &maml)?,
            None => g_adapted.compressor,
        },
        classifier: g_adapted.classifier,
    };

    let replay = if terms.replay && !state.bank.is_empty() {
        let records = state.sampler.sample(&state.bank, cfg.replay_n, &mut state.rng)?;
        let (l, mut g) = replay_loss_grad(&records, &state.model)?;
        g.tensors_mut().into_iter().flatten().for_each(|v| *v *= cfg.lambda2);
        add_into(&mut grad, &g)?;
        Some(cfg.lambda2 * l)
    } else {
        None
    };

    let ewc = match (&state.fisher, terms.ewc) {
        (Some(fs), true) => {
            let view = state.model.truncated(fs.theta_star.classifier.num_classes())?;
            let (l, g) = ewc_penalty_grad(&view, fs, cfg.lambda_ewc)?;
            add_into(&mut grad, &g)?;
            Some(l)
        }
        _ => None,
    };

    let distill = match (&state.frozen, terms.distill) {
        (Some(frozen), true) => {
            let (l, g) = distill_loss_grad(&state.model.compressor, frozen, batch, cfg.lambda_distill)?;
            add_scaled(&mut grad.compressor, &g, 1.0)?;
            Some(l)
        }
        _ => None,
    };

    let losses = StepLosses {
        task: task_id,
        epoch,
        step: state.step,
        task_loss,
        comp: cfg.lambda1 * comp,
        replay,
        ewc,
        distill,
    };
    if !losses.total().is_finite() || !grad.is_finite() {
        return Err(Error::LossDiverged {
            task: task_id as usize,
            step: state.step as usize,
            breakdown: losses.breakdown(),
        });
    }
    apply(state.optimizer.as_mut(), &mut state.model, &grad, cfg.lr)?;
    state.losses.push(losses);
    state.bank.tick_age();
    state.step += 1;
    Ok(())
}

/// Writes every training feature of the task into short-term memory, scored
/// by predictive uncertainty and normalised loss, then consolidates.
fn store_task(state: &mut TrainState, task: &TaskSpec, data: &[Vector], labels: &[u32]) -> Result<()> {
    let mut pending = Vec::with_capacity(data.len());
    for (f, y) in data.iter().zip(labels) {
        let z = state.model.compressor.encode(f)?;
        let probs = softmax(&state.model.classifier.logits(z.as_slice()));
        let loss = state.model.classifier.cross_entropy(z.as_slice(), *y, None, 1.0)?;
        state.difficulty.observe(loss);
        pending.push((z, *y, normalized_entropy(&probs), loss));
    }
    for (z, y, u, loss) in pending {
        let code = z.iter().map(|v| *v as f32).collect();
        let d = state.difficulty.normalize(loss);
        state
            .bank
            .stm_insert(FeatureRecord::new(code, y, task.task_id, u as f32, d as f32))?;
        state.trace();
    }
    state.bank.consolidate();
    state.trace();
    Ok(())
}

/// Trains on one task: expand the classifier, run the epochs, then store
/// features and refresh the consolidation anchors.
pub fn train_task(state: &mut TrainState, task: &TaskSpec, cfg: &ExperimentConfig) -> Result<()> {
    state.model.classifier.expand(&task.classes, &mut state.rng);
    // the parameter layout just changed
    state.optimizer.reset();
    let (data, labels) = task_data(task, cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut state.rng);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<Vector> = chunk.iter().map(|&i| data[i].clone()).collect();
            let ys: Vec<u32> = chunk.iter().map(|&i| labels[i]).collect();
            train_step(state, &batch, &ys, task.task_id, epoch as u32, cfg)?;
        }
    }
    if state.method.stores_features() {
        store_task(state, task, &data, &labels)?;
    }
    if state.terms().ewc {
        state.fisher = match estimate_fisher(&state.model, &data, &labels) {
            Ok(fs) => Some(fs),
            Err(Error::ZeroFisher) => None,
            Err(e) => return Err(e),
        };
    }
    if state.terms().distill {
        state.frozen = Some(state.model.compressor.clone());
    }
    Ok(())
}

/// Accuracy of `encode → classifier` on held-out data.
pub fn accuracy(model: &ModelParams, data: &[Vector], labels: &[u32]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty { op: "accuracy" });
    }
    let mut correct = 0usize;
    for (f, y) in data.iter().zip(labels) {
        if model.predict(f)? == Some(*y) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy on every task in `tasks`, each on its own held-out batch.
///
/// Every batch is split like a training batch. With `adapt`, the compressor
/// first takes the inner-loop steps on the unlabelled support part; either
/// way only the query part is scored, so adapting and non-adapting methods
/// are measured on the same samples. Tasks are scored on parallel threads;
/// every task owns its data stream, so the result does not depend on
/// scheduling.
pub fn evaluate(
    model: &ModelParams,
    tasks: &[TaskSpec],
    cfg: &ExperimentConfig,
    adapt: Option<&MamlConfig>,
) -> Result<Vec<f64>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = tasks
            .iter()
            .map(|task| {
                scope.spawn(move || {
                    let (xs, ys) = eval_data(task, cfg);
                    let (s, _) = split_sizes(xs.len(), cfg.split_ratio)?;
                    match adapt {
                        Some(maml) if maml.inner_steps > 0 => {
                            let adapted = ModelParams {
                                compressor: maml_adapt(&model.compressor, &xs[..s], maml)?.adapted,
                                classifier: model.classifier.clone(),
                            };
                            accuracy(&adapted, &xs[s..], &ys[s..])
                        }
                        _ => accuracy(model, &xs[s..], &ys[s..]),
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    })
}

/// Trains through the whole stream, evaluating after every task.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let mut state = TrainState::new(cfg)?;
    let tasks = generate_task_stream(&cfg.stream_shape(), &mut sub_rng(cfg.seed, STREAM_TASKS))?;
    let mut acc = AccuracyMatrix::new();
    for (t, task) in tasks.iter().enumerate() {
        train_task(&mut state, task, cfg)?;
        acc.push_column(evaluate(
            &state.model,
            &tasks[..=t],
            cfg,
            state.eval_adaptation(cfg).as_ref(),
        )?)?;
    }
    let forgetting = if acc.num_tasks() >= 2 {
        Some(forgetting(&acc)?)
    } else {
        None
    };
    Ok(Report {
        config: cfg.clone(),
        final_accuracy: acc.final_average().unwrap_or(0.0),
        accuracy: acc,
        forgetting,
        stm_records: state.bank.stm_len(),
        ltm_records: state.bank.ltm_len(),
        bank_bytes: state.bank.memory_bytes(),
        memory_trace: state.memory_trace,
        losses: state.losses,
        bank_file: crate::memory::serialize(&state.bank),
    })
}
