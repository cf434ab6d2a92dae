//! Shared helpers for unit tests: tiny models, random inputs and the
//! central finite-difference oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{FeatureSequence, SpeakerId};
use crate::model::{ModelConfig, SpeakerInventory};

pub const FD_STEP: f64 = 1e-5;

/// Small enough for exhaustive finite differences.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 2,
        frame_stack: 3,
        encoder_layers: 2,
        encoder_hidden: 2,
        speaker_encoder_layers: 1,
        speaker_encoder_hidden: 2,
        speaker_embed_dim: 3,
        decoder_layers: 1,
        decoder_hidden: 4,
        embed_dim: 2,
        attention_dim: 3,
        attention_conv_channels: 2,
        attention_conv_width: 3,
        query_rnn_dim: 3,
        vocab_size: 5,
        use_query_rnn: true,
        use_weighted_profile: true,
    }
}

pub fn random_features(frames: usize, dim: usize, seed: u64) -> FeatureSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureSequence::new(frames, dim, data).unwrap()
}

pub fn random_inventory(k: usize, dim: usize, seed: u64) -> SpeakerInventory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = (0..k).map(|i| SpeakerId::new(format!("spk{i}"))).collect();
    let profiles = (0..k).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    SpeakerInventory::new(ids, profiles).unwrap()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + h;
            let up = f(&xs);
            xs[i] = orig - h;
            let down = f(&xs);
            xs[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with a 1e-3 denominator floor, below which central
/// differences at step 1e-5 are dominated by rounding.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}
