//! Fixtures shared by the benchmarks.

use cnm_core::config::{FusionStrategy, ModelConfig};
use cnm_core::model::CnmModel;
use cnm_core::tensor::init::gaussian;
use cnm_core::tensor::rng::Rng;
use cnm_core::Tensor;

pub const VOCAB: usize = 50;

/// A randomly initialised desk-sized SOFT model with `units` decoder units.
pub fn desk_model(units: usize) -> CnmModel<f32> {
    let cfg = ModelConfig {
        units,
        strategy: FusionStrategy::Soft,
        ..ModelConfig::desk(VOCAB)
    };
    CnmModel::new(cfg, 1).expect("valid desk config")
}

/// Object and attribute features for `regions` regions.
pub fn region_features(model: &CnmModel<f32>, regions: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = Rng::new(seed);
    let d = model.config.d_r;
    (gaussian(&mut rng, &[regions, d], 1.0), gaussian(&mut rng, &[regions, d], 1.0))
}

/// `n` random token sequences of length 4 to 12 over a 20-word vocabulary.
pub fn random_captions(rng: &mut Rng, n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| (0..4 + rng.below(9)).map(|_| 4 + rng.below(20)).collect())
        .collect()
}
