//! Replay sampling policies.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::registry::Registry;

use super::bank::MemoryBank;
use super::record::FeatureRecord;

pub trait ReplaySampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn sample(&self, bank: &MemoryBank, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<FeatureRecord>>;
}

fn check(bank: &MemoryBank, n: usize) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::Empty { op: "sample_replay" });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("replay sample size must be positive".into()));
    }
    Ok(())
}

/// `n` picks from `0..len`: distinct when possible, with replacement otherwise.
fn pick(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len >= n {
        index::sample(rng, len, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Uniform over the union of both stores.
#[derive(Debug, Default, Clone, Copy)]
pub struct UniformSampler;

impl ReplaySampler for UniformSampler {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn sample(&self, bank: &MemoryBank, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<FeatureRecord>> {
        check(bank, n)?;
        Ok(pick(bank.len(), n, rng)
            .into_iter()
            .map(|i| bank.get(i).expect("index in range").1.clone())
            .collect())
    }
}

/// Splits the draw evenly across tasks, then uniform within each task.
#[derive(Debug, Default, Clone, Copy)]
pub struct StratifiedSampler;

impl ReplaySampler for StratifiedSampler {
    fn name(&self) -> &'static str {
        "stratified"
    }

    fn sample(&self, bank: &MemoryBank, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<FeatureRecord>> {
        check(bank, n)?;
        let mut by_task: BTreeMap<u32, Vec<&FeatureRecord>> = BTreeMap::new();
        for r in bank.records() {
            by_task.entry(r.task_id).or_default().push(r);
        }
        let tasks = by_task.len();
        let mut out = Vec::with_capacity(n);
        for (k, members) in by_task.values().enumerate() {
            let quota = n / tasks + usize::from(k < n % tasks);
            if quota == 0 {
                continue;
            }
            out.extend(pick(members.len(), quota, rng).into_iter().map(|i| members[i].clone()));
        }
        Ok(out)
    }
}

pub fn samplers() -> Registry<dyn ReplaySampler> {
    let mut r: Registry<dyn ReplaySampler> = Registry::new("replay sampler");
    r.register("uniform", || Box::new(UniformSampler));
    r.register("stratified", || Box::new(StratifiedSampler));
    r
}
