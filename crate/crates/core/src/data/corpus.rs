use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DomainSpec;
use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::numerics::Tensor;

/// Longest transcript `gen_corpus` will produce.
pub const MAX_SENTENCE_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `[T, d_x]` frames, absent for text-only data.
    pub features: Option<Tensor>,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub split: Split,
    /// Generation seed, when the corpus came from [`gen_corpus`].
    pub seed: Option<u64>,
    pub items: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.items.iter().map(|u| u.tokens.len()).sum()
    }

    pub fn is_paired(&self) -> bool {
        !self.items.is_empty() && self.items.iter().all(|u| u.features.is_some())
    }

    pub fn texts(&self) -> Vec<&[TokenId]> {
        self.items.iter().map(|u| &u.tokens[..]).collect()
    }

    /// `(features, tokens)` views for training and decoding. Fails if any item
    /// is text-only.
    pub fn pairs(&self) -> Result<Vec<(&Tensor, &[TokenId])>> {
        self.items
            .iter()
            .map(|u| {
                u.features
                    .as_ref()
                    .map(|x| (x, &u.tokens[..]))
                    .ok_or_else(|| Error::Config(format!("utterance {} has no features", u.id)))
            })
            .collect()
    }
}

/// Samples `n_utts` sentences from the domain's bigram chain, and unless
/// `text_only`, renders each label as 1..=3 noisy copies of its prototype.
///
/// Utterance `i` depends only on `(spec, split, seed, i)`. Feature values are
/// rounded to `f32` so that a written and re-read corpus is identical. A
/// sentence that ends immediately gets a single frame of pure noise.
pub fn gen_corpus(
    spec: &DomainSpec,
    split: Split,
    seed: u64,
    n_utts: usize,
    text_only: bool,
) -> Result<Corpus> {
    let rows = spec
        .bigram()
        .iter()
        .map(|r| WeightedIndex::new(r).map_err(|e| Error::Spec(format!("bigram row: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let (sos, eos) = (spec.vocab().sos_id(), spec.eos_id());
    let d = spec.d_x();
    let frames = spec.frames_per_token();

    let mut items = Vec::with_capacity(n_utts);
    for i in 0..n_utts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((split.stream_tag() << 48) | i as u64);

        let mut tokens = Vec::new();
        let mut prev = sos;
        while tokens.len() < MAX_SENTENCE_LEN {
            let next = rows[prev].sample(&mut rng);
            if next == eos {
                break;
            }
            tokens.push(next);
            prev = next;
        }

        let features = if text_only {
            None
        } else {
            let mut data = Vec::new();
            let mut noisy = |base: &[f64], rng: &mut ChaCha8Rng| {
                for &b in base {
                    let z: f64 = StandardNormal.sample(rng);
                    data.push((b + spec.acoustic_shift() + spec.sigma() * z) as f32 as f64);
                }
            };
            if tokens.is_empty() {
                noisy(&vec![0.0; d], &mut rng);
            }
            for &t in &tokens {
                let k = rng.random_range(frames.clone());
                for _ in 0..k {
                    noisy(spec.prototypes().row(t), &mut rng);
                }
            }
            let t = data.len() / d;
            Some(Tensor::matrix(t, d, data)?)
        };
        items.push(Utterance {
            id: format!("{split}-{i:06}"),
            features,
            tokens,
        });
    }
    Ok(Corpus {
        split,
        seed: Some(seed),
        items,
    })
}
