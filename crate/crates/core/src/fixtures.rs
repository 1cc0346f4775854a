//! Small random instances for oracle checks, gradient certification and
//! benchmarks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::model::{EmbeddingDecoderConfig, EncoderConfig, HatConfig, MhatConfig, TokenId};
use crate::numerics::{ParameterSet, Tensor};

pub fn tiny_encoder(d_x: usize) -> EncoderConfig {
    EncoderConfig {
        d_x,
        context: 1,
        layers: 2,
        d_f: 5,
    }
}

pub fn tiny_mhat_config(d_x: usize) -> MhatConfig {
    MhatConfig {
        encoder: tiny_encoder(d_x),
        blank_decoder: EmbeddingDecoderConfig {
            embed_dim: 3,
            tied_tables: true,
        },
        label_decoder: EmbeddingDecoderConfig {
            embed_dim: 4,
            tied_tables: false,
        },
        joint_dim: 4,
    }
}

pub fn tiny_hat_config(d_x: usize) -> HatConfig {
    HatConfig {
        encoder: tiny_encoder(d_x),
        decoder: EmbeddingDecoderConfig {
            embed_dim: 4,
            tied_tables: false,
        },
        joint_dim: 4,
    }
}

/// Overwrites every value (biases included) with `U(-scale, scale)`.
pub fn randomize<R: Rng>(params: &mut ParameterSet, rng: &mut R, scale: f64) {
    let dist = Uniform::new_inclusive(-scale, scale).expect("finite scale");
    for id in 0..params.len() {
        for v in params.tensor_mut(id).data_mut() {
            *v = dist.sample(rng);
        }
    }
}

/// `[frames, d_x]` standard-normal features.
pub fn random_features<R: Rng>(rng: &mut R, frames: usize, d_x: usize) -> Tensor {
    let data = (0..frames * d_x)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::matrix(frames, d_x, data).expect("positive extents")
}

pub fn random_tokens<R: Rng>(rng: &mut R, len: usize, vocab: usize) -> Vec<TokenId> {
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}
