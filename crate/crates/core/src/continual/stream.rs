//! Synthetic class-incremental task streams built from Gaussian class clusters.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::compressor::{SupportQuerySplit, TaskSampler};
use crate::error::{Error, Result};
use crate::ndcore::Vector;

/// Parameters of the stream generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamShape {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub feature_dim: usize,
    /// Distance of each class prototype from its task centroid.
    pub class_radius: f64,
    pub sigma: f64,
    pub d_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: u32,
    pub classes: Vec<u32>,
    /// One prototype per entry of `classes`.
    pub prototypes: Vec<Vector>,
    pub sigma: f64,
    pub d_shift: f64,
}

impl TaskSpec {
    pub fn feature_dim(&self) -> usize {
        self.prototypes[0].len()
    }

    /// Mean of the class prototypes.
    pub fn centroid(&self) -> Vector {
        centroid(&self.prototypes)
    }
}

fn centroid(points: &[Vector]) -> Vector {
    let mut c = Vector::zeros(points[0].len());
    for p in points {
        for (a, b) in c.as_mut_slice().iter_mut().zip(p.iter()) {
            *a += b;
        }
    }
    c.scale(1.0 / points.len() as f64)
}

fn gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(dim: usize, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let v = Vector::from(gaussian(dim, rng));
        let n = v.norm();
        if n > 1e-12 {
            return v.scale(1.0 / n);
        }
    }
}

/// Task `t`'s prototype centroid sits exactly `d_shift` from task `t-1`'s, in
/// a random direction; class ids run consecutively across tasks.
pub fn generate_task_stream(shape: &StreamShape, rng: &mut ChaCha8Rng) -> Result<Vec<TaskSpec>> {
    if shape.num_tasks == 0 {
        return Err(Error::InvalidArgument("task stream needs at least one task".into()));
    }
    if shape.classes_per_task == 0 || shape.feature_dim == 0 {
        return Err(Error::InvalidArgument(
            "classes per task and feature dim must be positive".into(),
        ));
    }
    if !(shape.sigma >= 0.0 && shape.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and >= 0, got {}",
            shape.sigma
        )));
    }
    if !(shape.class_radius >= 0.0
        && shape.class_radius.is_finite()
        && shape.d_shift >= 0.0
        && shape.d_shift.is_finite())
    {
        return Err(Error::InvalidArgument(
            "class radius and d_shift must be finite and >= 0".into(),
        ));
    }
    let dim = shape.feature_dim;
    let mut center = Vector::zeros(dim);
    let mut tasks = Vec::with_capacity(shape.num_tasks);
    for t in 0..shape.num_tasks {
        if t > 0 {
            center = center.add(&unit(dim, rng).scale(shape.d_shift))?;
        }
        let offsets: Vec<Vector> = (0..shape.classes_per_task)
            .map(|_| unit(dim, rng).scale(shape.class_radius))
            .collect();
        let mean = centroid(&offsets);
        let prototypes = offsets
            .iter()
            .map(|o| center.add(&o.sub(&mean).expect("same dim")).expect("same dim"))
            .collect();
        let first = (t * shape.classes_per_task) as u32;
        tasks.push(TaskSpec {
            task_id: t as u32,
            classes: (first..first + shape.classes_per_task as u32).collect(),
            prototypes,
            sigma: shape.sigma,
            d_shift: shape.d_shift,
        });
    }
    Ok(tasks)
}

/// `n` labelled features: labels uniform over the task's classes, features
/// the class prototype plus isotropic noise of scale `sigma`.
pub fn sample_task_batch(task: &TaskSpec, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vector>, Vec<u32>) {
    let dim = task.feature_dim();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..task.classes.len());
        let noise = gaussian(dim, rng);
        let f: Vec<f64> = task.prototypes[k]
            .iter()
            .zip(noise)
            .map(|(p, e)| p + task.sigma * e)
            .collect();
        features.push(Vector::from(f));
        labels.push(task.classes[k]);
    }
    (features, labels)
}

/// Episodes for compressor meta-training: a random task, a fresh batch, split.
#[derive(Debug, Clone)]
pub struct StreamSampler {
    pub tasks: Vec<TaskSpec>,
    pub batch: usize,
    pub split_ratio: f64,
}

impl TaskSampler for StreamSampler {
    fn input_dim(&self) -> usize {
        self.tasks[0].feature_dim()
    }

    fn sample(&mut self, rng: &mut ChaCha8Rng) -> Result<SupportQuerySplit> {
        let task = self.tasks.choose(rng).ok_or(Error::Empty { op: "StreamSampler" })?;
        let (features, _) = sample_task_batch(task, self.batch, rng);
        SupportQuerySplit::split(&features, self.split_ratio)
    }
}
