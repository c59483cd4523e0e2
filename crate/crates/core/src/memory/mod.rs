//! Dual-memory exemplar bank with importance-driven consolidation and
//! eviction under a hard byte budget.

mod bank;
pub mod codec;
mod importance;
mod pool;
mod record;
mod sampler;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub use bank::{BankConfig, MemoryBank, Store, DEFAULT_BUDGET_BYTES};
pub use codec::{deserialize, deserialize_with, serialize, BankFile};
pub use importance::{importance, normalized_entropy, DifficultyScale, ImportanceWeights};
pub use pool::{mean_pool, FeatureMap};
pub use record::{record_size, FeatureRecord, METADATA_BYTES, UNIT_BOX, VALUE_BYTES};
pub use sampler::{samplers, ReplaySampler, StratifiedSampler, UniformSampler};

/// Uniform draw of `n` records from both stores.
pub fn sample_replay(bank: &MemoryBank, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<FeatureRecord>> {
    UniformSampler.sample(bank, n, rng)
}
