//! Scale-specific autoencoder compressors with meta-learned initialisation.

mod config;
mod kernel;
mod maml;
mod params;

use std::collections::BTreeMap;

pub use config::{CompressorShape, MamlConfig, Scale, ScaleConfig, DEFAULT_HIDDEN, FEATURE_DIM};
pub use maml::{
    maml_adapt, meta_gradient, meta_train, pullback, recon_hvp, split_sizes, stable_inner_lr, Adaptation, MetaTrainRun,
    SupportQuerySplit, TaskSampler, DEFAULT_SPLIT_RATIO, DIVERGENCE_LOSS,
};
pub use params::{CompressorParams, PARAMS_HEADER_LEN, PARAMS_MAGIC, PARAMS_VERSION};

/// One independent compressor per pyramid level with the canonical widths.
pub fn make_hierarchy(depth: usize, seed: u64) -> BTreeMap<Scale, (ScaleConfig, CompressorParams)> {
    Scale::ALL
        .iter()
        .enumerate()
        .map(|(i, &scale)| {
            let cfg = ScaleConfig::canonical(scale);
            let shape = CompressorShape::from_scale(&cfg, depth).expect("canonical dims are valid");
            (
                scale,
                (cfg, CompressorParams::init(shape, seed.wrapping_add(i as u64 + 1))),
            )
        })
        .collect()
}
