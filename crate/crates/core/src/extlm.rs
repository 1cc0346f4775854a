//! Standalone neural LM over the ASR vocabulary plus an end-of-sentence
//! token, built from the same embedding decoder and output projection as the
//! MHAT internal LM.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    bigram_context, EmbeddingDecoder, EmbeddingDecoderConfig, Linear, TokenId, Vocabulary,
};
use crate::numerics::{log_softmax_in_place, Adam, Group, Optimizer, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExternalLmConfig {
    pub decoder: EmbeddingDecoderConfig,
}

impl Default for ExternalLmConfig {
    fn default() -> Self {
        Self {
            decoder: EmbeddingDecoderConfig {
                embed_dim: 64,
                tied_tables: false,
            },
        }
    }
}

/// Bigram-context LM with `|V| + 1` outputs; index `|V|` is EOS.
#[derive(Debug, Clone)]
pub struct ExternalLm {
    vocab: Vocabulary,
    config: ExternalLmConfig,
    params: ParameterSet,
    decoder: EmbeddingDecoder,
    head: Linear,
}

impl ExternalLm {
    pub fn new<R: Rng>(vocab: Vocabulary, config: ExternalLmConfig, rng: &mut R) -> Result<Self> {
        let mut p = ParameterSet::new();
        let d = config.decoder.embed_dim;
        EmbeddingDecoder::register(
            &mut p,
            "lm_decoder",
            Group::Ilm,
            config.decoder,
            vocab.context_rows(),
            rng,
        )?;
        Linear::register(&mut p, "lm_proj", Group::Ilm, d, vocab.size() + 1, rng)?;
        Self::from_params(vocab, config, p)
    }

    pub fn from_params(
        vocab: Vocabulary,
        config: ExternalLmConfig,
        params: ParameterSet,
    ) -> Result<Self> {
        let d = config.decoder.embed_dim;
        let decoder =
            EmbeddingDecoder::bind(&params, "lm_decoder", config.decoder, vocab.context_rows())?;
        let head = Linear::bind(&params, "lm_proj", d, vocab.size() + 1)?;
        if params.len() != if config.decoder.tied_tables { 5 } else { 6 } {
            return Err(Error::Config(
                "external LM parameter set has unexpected entries".into(),
            ));
        }
        Ok(Self {
            vocab,
            config,
            params,
            decoder,
            head,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &ExternalLmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn eos_id(&self) -> TokenId {
        self.vocab.size()
    }

    pub(crate) fn context_log_probs(&self, ctx: [TokenId; 2]) -> Vec<f64> {
        let g = self.decoder.forward(&self.params, ctx);
        let mut out = vec![0.0; self.vocab.size() + 1];
        self.head.forward(&self.params, &g, &mut out);
        log_softmax_in_place(&mut out);
        out
    }

    /// Log-probabilities over the vocabulary and EOS after `history`.
    pub fn log_probs(&self, history: &[TokenId]) -> Result<Vec<f64>> {
        self.vocab.check_all(history)?;
        Ok(self.context_log_probs(bigram_context(history, self.vocab.sos_id())))
    }

    /// `log P(next | history)`; `next` may be [`ExternalLm::eos_id`].
    pub fn lm_log_prob(&self, history: &[TokenId], next: TokenId) -> Result<f64> {
        if next > self.eos_id() {
            return Err(Error::Vocab(format!(
                "token id {next} is neither a label nor EOS"
            )));
        }
        Ok(self.log_probs(history)?[next])
    }

    /// `log P(Y, EOS)`.
    pub fn sequence_log_prob(&self, y: &[TokenId]) -> Result<f64> {
        self.vocab.check_all(y)?;
        let sos = self.vocab.sos_id();
        let mut total = 0.0;
        for u in 0..=y.len() {
            let next = if u < y.len() { y[u] } else { self.eos_id() };
            total += self.context_log_probs(bigram_context(&y[..u], sos))[next];
        }
        Ok(total)
    }

    fn counts<T: AsRef<[TokenId]>>(
        &self,
        corpus: &[T],
    ) -> Result<(BTreeMap<[TokenId; 2], Vec<f64>>, usize)> {
        let sos = self.vocab.sos_id();
        let mut map: BTreeMap<[TokenId; 2], Vec<f64>> = BTreeMap::new();
        let mut events = 0;
        for y in corpus {
            let y = y.as_ref();
            self.vocab.check_all(y)?;
            for u in 0..=y.len() {
                let next = if u < y.len() { y[u] } else { self.eos_id() };
                map.entry(bigram_context(&y[..u], sos))
                    .or_insert_with(|| vec![0.0; self.vocab.size() + 1])[next] += 1.0;
            }
            events += y.len() + 1;
        }
        Ok((map, events))
    }

    /// Negative log-likelihood of the corpus including one EOS event per
    /// sentence, with its gradient.
    pub fn loss_and_grad<T: AsRef<[TokenId]>>(&self, corpus: &[T]) -> Result<(f64, ParameterSet)> {
        let (map, _) = self.counts(corpus)?;
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        for (ctx, row) in &map {
            let g = self.decoder.forward(&self.params, *ctx);
            let mut lp = vec![0.0; row.len()];
            self.head.forward(&self.params, &g, &mut lp);
            log_softmax_in_place(&mut lp);
            let n: f64 = row.iter().sum();
            let mut d = vec![0.0; row.len()];
            for k in 0..row.len() {
                if row[k] > 0.0 {
                    loss -= row[k] * lp[k];
                }
                d[k] = n * lp[k].exp() - row[k];
            }
            let mut dg = vec![0.0; g.len()];
            self.head
                .backward(&self.params, &g, &d, &mut grads, Some(&mut dg));
            self.decoder.backward(&self.params, *ctx, &dg, &mut grads);
        }
        Ok((loss, grads))
    }

    /// `exp` of the mean negative log-probability per event, where each
    /// sentence contributes its tokens plus EOS.
    pub fn perplexity<T: AsRef<[TokenId]>>(&self, corpus: &[T]) -> Result<f64> {
        let (map, events) = self.counts(corpus)?;
        if events == 0 {
            return Err(Error::Evaluation("perplexity of an empty corpus".into()));
        }
        let mut nll = 0.0;
        for (ctx, row) in &map {
            let lp = self.context_log_probs(*ctx);
            nll -= row
                .iter()
                .zip(&lp)
                .filter(|(c, _)| **c > 0.0)
                .map(|(c, l)| c * l)
                .sum::<f64>();
        }
        Ok((nll / events as f64).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmTrainConfig {
    pub model: ExternalLmConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            model: ExternalLmConfig::default(),
            epochs: 10,
            batch_size: 64,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Trains an external LM with Adam and returns it with its perplexity on
/// the training corpus.
pub fn train_lm<T: AsRef<[TokenId]>>(
    vocab: &Vocabulary,
    corpus: &[T],
    cfg: &LmTrainConfig,
) -> Result<(ExternalLm, f64)> {
    if corpus.is_empty() {
        return Err(Error::Config("LM training needs a non-empty corpus".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("LM batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lm = ExternalLm::new(vocab.clone(), cfg.model, &mut rng)?;
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[TokenId]> = chunk.iter().map(|&i| corpus[i].as_ref()).collect();
            let (loss, grads) = lm.loss_and_grad(&batch)?;
            opt.step(&mut lm.params, &grads, &Group::ALL);
            total += loss;
        }
        log::debug!("lm epoch {epoch}: loss {total:.3}");
    }
    let ppl = lm.perplexity(corpus)?;
    Ok((lm, ppl))
}
