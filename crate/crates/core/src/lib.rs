//! Feature-level continual-learning replay engine.
//!
//! Meta-learned autoencoder compressors shrink pooled features into compact
//! codes, a dual short/long-term memory keeps those codes under a hard byte
//! budget, and a training loop mixes replay, weight consolidation and
//! feature distillation to limit forgetting across a stream of tasks.

pub mod compressor;
pub mod continual;
pub mod diagnostics;
pub mod error;
pub mod memory;
pub mod ndcore;
pub mod registry;

pub use error::{Error, Result};
