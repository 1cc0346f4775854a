//! Transducer networks: the modular HAT, the baseline HAT, and the shared
//! layers and score heads they are built from.

mod hat;
mod layers;
mod mhat;
mod vocab;


pub use hat::{HatCache, HatConfig, HatContext, HatFrame, HatModel};
pub use layers::{EmbeddingDecoderConfig, EncoderConfig};
pub use mhat::{MhatCache, MhatConfig, MhatContext, MhatFrame, MhatModel};
pub use vocab::{bigram_context, TokenId, Vocabulary};

pub(crate) use layers::{EmbeddingDecoder, Linear};

use crate::error::Result;
use crate::lattice::{ArcScores, Occupancy};
use crate::numerics::{log_softmax_in_place, ParameterSet, Tensor};

/// Scores of the outgoing arcs at one lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores {
    /// `log b_{t,u}`
    pub log_blank: f64,
    /// `log (1 - b_{t,u})`
    pub log_emit: f64,
    /// Label log-posteriors over the vocabulary, blank excluded.
    pub label_log_probs: Vec<f64>,
}

impl NodeScores {
    /// Log-probability of the alignment arc emitting `label`.
    pub fn label_arc(&self, label: TokenId) -> f64 {
        self.log_emit + self.label_log_probs[label]
    }
}

/// A blank-augmented transducer whose decoder conditions on the last two
/// labels. Implemented by [`MhatModel`] and [`HatModel`]; the lattice,
/// losses and beam search are written against this trait.
pub trait Transducer {
    /// Per-frame precomputation derived from the encoder output.
    type Frame;
    /// Per-context precomputation derived from `(y_{u-2}, y_{u-1})`.
    type Context;
    /// Forward state kept by [`Transducer::training_arcs`] for backprop.
    type Cache;

    fn vocab(&self) -> &Vocabulary;

    fn params(&self) -> &ParameterSet;

    fn frames(&self, x: &Tensor) -> Result<Vec<Self::Frame>>;

    fn context(&self, ctx: [TokenId; 2]) -> Result<Self::Context>;

    fn node(&self, frame: &Self::Frame, ctx: &Self::Context) -> NodeScores;

    /// Internal LM log-probabilities at this context.
    fn internal_lm<'a>(&self, ctx: &'a Self::Context) -> &'a [f64];

    /// Arc scores of the full `(T+1) x (U+1)` lattice for `(x, y)`.
    fn training_arcs(&self, x: &Tensor, y: &[TokenId]) -> Result<(ArcScores, Self::Cache)>;

    /// Accumulates `∂ log P(y|x) / ∂θ` into `grads`, given arc occupancies.
    fn backprop(&self, cache: &Self::Cache, occ: &Occupancy, grads: &mut ParameterSet);
}

/// Combined label posterior `log_softmax(a_t + l_u)`.
pub fn label_posterior(am: &[f64], ilm: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = am.iter().zip(ilm).map(|(a, l)| a + l).collect();
    log_softmax_in_place(&mut s);
    s
}

/// Alignment arcs at one node: index 0 is blank (`log b`), index `k + 1`
/// is label `k` (`log(1 - b) + log P(k)`).
pub fn alignment_arc_log_probs(blank_prob: f64, label_log_probs: &[f64]) -> Vec<f64> {
    let log_emit = (1.0 - blank_prob).ln();
    std::iter::once(blank_prob.ln())
        .chain(label_log_probs.iter().map(|lp| log_emit + lp))
        .collect()
}
