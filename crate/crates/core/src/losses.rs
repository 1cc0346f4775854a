//! Internal LM loss, the combined MHAT objective and ILM perplexity.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::{hat_loss, hat_loss_and_grad};
use crate::model::{bigram_context, MhatModel, TokenId, Transducer, Vocabulary};
use crate::numerics::{Group, ParameterSet, Tensor};

/// Weight of the internal LM term in the MHAT objective. Reduction is a sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Next-token counts grouped by bigram context. Every occurrence of a
/// context shares one decoder evaluation.
#[derive(Debug, Clone, Default)]
pub(crate) struct ContextCounts {
    pub contexts: BTreeMap<[TokenId; 2], Vec<f64>>,
    pub tokens: usize,
}

impl ContextCounts {
    pub fn collect<T: AsRef<[TokenId]>>(vocab: &Vocabulary, transcripts: &[T]) -> Result<Self> {
        let mut out = Self::default();
        let sos = vocab.sos_id();
        for y in transcripts {
            let y = y.as_ref();
            vocab.check_all(y)?;
            for u in 0..y.len() {
                let row = out
                    .contexts
                    .entry(bigram_context(&y[..u], sos))
                    .or_insert_with(|| vec![0.0; vocab.size()]);
                row[y[u]] += 1.0;
            }
            out.tokens += y.len();
        }
        Ok(out)
    }
}

/// `Σ_y count_y · (-l_y)` for one context.
pub(crate) fn context_nll(counts: &[f64], log_probs: &[f64]) -> f64 {
    counts
        .iter()
        .zip(log_probs)
        .filter(|(c, _)| **c > 0.0)
        .map(|(c, l)| -c * l)
        .sum()
}

pub(crate) fn ilm_loss_from_counts(model: &MhatModel, counts: &ContextCounts) -> f64 {
    counts
        .contexts
        .iter()
        .map(|(ctx, row)| context_nll(row, &model.ilm_context(*ctx)))
        .sum()
}

/// `-Σ_Y Σ_u l_{u, y_u}`: negative internal LM log-likelihood of the
/// transcripts, without an end-of-sentence event. Empty transcripts add
/// nothing.
pub fn ilm_loss<T: AsRef<[TokenId]>>(model: &MhatModel, transcripts: &[T]) -> Result<f64> {
    let counts = ContextCounts::collect(model.vocab(), transcripts)?;
    Ok(ilm_loss_from_counts(model, &counts))
}

/// [`ilm_loss`] and its gradient, which is non-zero only on the `ilm` group.
pub fn ilm_loss_and_grad<T: AsRef<[TokenId]>>(
    model: &MhatModel,
    transcripts: &[T],
) -> Result<(f64, ParameterSet)> {
    let counts = ContextCounts::collect(model.vocab(), transcripts)?;
    let mut grads = model.params().zeros_like();
    let mut loss = 0.0;
    for (ctx, row) in &counts.contexts {
        let l = model.ilm_context(*ctx);
        loss += context_nll(row, &l);
        let n: f64 = row.iter().sum();
        let d: Vec<f64> = l.iter().zip(row).map(|(lp, c)| n * lp.exp() - c).collect();
        model.ilm_backward(*ctx, &d, &mut grads);
    }
    Ok((loss, grads))
}

/// `hat_loss + α · ilm_loss` on the batch's transcripts.
pub fn mhat_loss(
    model: &MhatModel,
    batch: &[(&Tensor, &[TokenId])],
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let hat = hat_loss(model, batch)?;
    let texts: Vec<&[TokenId]> = batch.iter().map(|(_, y)| *y).collect();
    Ok(hat + cfg.alpha * ilm_loss(model, &texts)?)
}

pub fn mhat_loss_and_grad(
    model: &MhatModel,
    batch: &[(&Tensor, &[TokenId])],
    cfg: &LossConfig,
) -> Result<(f64, ParameterSet)> {
    cfg.validate()?;
    let (hat, mut grads) = hat_loss_and_grad(model, batch)?;
    let texts: Vec<&[TokenId]> = batch.iter().map(|(_, y)| *y).collect();
    let (ilm, ilm_grads) = ilm_loss_and_grad(model, &texts)?;
    grads.axpy(cfg.alpha, &ilm_grads, &[Group::Ilm]);
    Ok((hat + cfg.alpha * ilm, grads))
}

/// Token-level perplexity of a transducer's internal LM (the MHAT label
/// decoder, or the zeroed-acoustics estimate for HAT).
pub fn perplexity<M: Transducer, T: AsRef<[TokenId]>>(model: &M, corpus: &[T]) -> Result<f64> {
    let counts = ContextCounts::collect(model.vocab(), corpus)?;
    if counts.tokens == 0 {
        return Err(Error::Evaluation(
            "perplexity of a corpus with no tokens".into(),
        ));
    }
    let mut nll = 0.0;
    for (ctx, row) in &counts.contexts {
        let c = model.context(*ctx)?;
        nll += context_nll(row, model.internal_lm(&c));
    }
    Ok((nll / counts.tokens as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_features, random_tokens, randomize, tiny_mhat_config};
    use crate::numerics::{gradient_check, sample_coordinates};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(v: usize, seed: u64) -> MhatModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m =
            MhatModel::new(Vocabulary::new(v).unwrap(), tiny_mhat_config(3), &mut rng).unwrap();
        randomize(m.params_mut(), &mut rng, 1.0);
        m
    }

    fn uniform_ilm(mut m: MhatModel) -> MhatModel {
        for name in ["ilm_proj.weight", "ilm_proj.bias"] {
            m.params_mut().get_mut(name).unwrap().data_mut().fill(0.0);
        }
        m
    }

    #[test]
    fn uniform_ilm_loss_closed_form() {
        let m = uniform_ilm(model(4, 1));
        let loss = ilm_loss(&m, &[vec![0, 3, 2]]).unwrap();
        assert!((loss - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(ilm_loss::<Vec<TokenId>>(&m, &[]).unwrap(), 0.0);
        assert!((perplexity(&m, &[vec![1, 2], vec![3]]).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn half_probability_gives_perplexity_two() {
        let mut m = model(2, 2);
        for name in ["ilm_proj.weight", "ilm_proj.bias"] {
            m.params_mut().get_mut(name).unwrap().data_mut().fill(0.0);
        }
        assert!((perplexity(&m, &[vec![0, 1, 1, 0, 1]]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ilm_loss_matches_direct_sum() {
        let m = model(5, 3);
        let texts = vec![vec![0, 1, 2, 1, 2], vec![4], vec![3, 3, 3]];
        let mut direct = 0.0;
        for y in &texts {
            for u in 0..y.len() {
                direct -= m.ilm_for_history(&y[..u]).unwrap()[y[u]];
            }
        }
        assert!((ilm_loss(&m, &texts).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn ilm_gradient_only_touches_ilm_group() {
        let m = model(4, 4);
        let (_, g) = ilm_loss_and_grad(&m, &[vec![0, 1, 2], vec![3, 1]]).unwrap();
        for (name, group, t) in g.iter() {
            if group != Group::Ilm {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        assert!(g.norm(Some(&[Group::Ilm])) > 0.0);
    }

    #[test]
    fn out_of_vocab_transcript_rejected() {
        let m = model(3, 5);
        assert!(matches!(ilm_loss(&m, &[vec![0, 3]]), Err(Error::Vocab(_))));
    }

    #[test]
    fn zero_alpha_equals_hat_loss_bitwise() {
        let m = model(4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<Tensor> = (0..3)
            .map(|i| random_features(&mut rng, 2 + i, 3))
            .collect();
        let ys: Vec<Vec<TokenId>> = (0..3).map(|i| random_tokens(&mut rng, i + 1, 4)).collect();
        let batch: Vec<(&Tensor, &[TokenId])> =
            xs.iter().zip(&ys).map(|(x, y)| (x, &y[..])).collect();
        let cfg = LossConfig { alpha: 0.0 };
        assert_eq!(
            mhat_loss(&m, &batch, &cfg).unwrap().to_bits(),
            hat_loss(&m, &batch).unwrap().to_bits()
        );
        let (_, hat_g) = hat_loss_and_grad(&m, &batch).unwrap();
        let (_, mhat_g) = mhat_loss_and_grad(&m, &batch, &LossConfig::default()).unwrap();
        for id in 0..hat_g.len() {
            if hat_g.group(id) == Group::Encoder {
                assert_eq!(hat_g.tensor(id), mhat_g.tensor(id));
            }
        }
    }

    #[test]
    fn gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = model(4, 7);
        let x = random_features(&mut rng, 3, 3);
        let y = vec![1, 3];
        let coords = sample_coordinates(m.params(), 200, &mut rng);
        let cfg = LossConfig::default();
        let err = gradient_check(
            |p| mhat_loss_and_grad(&m.with_params(p.clone())?, &[(&x, &y[..])], &cfg),
            m.params(),
            1e-4,
            &coords,
        )
        .unwrap();
        assert!(err <= 1e-4, "mhat_loss relative error {err}");
        let texts = vec![vec![0, 1, 2, 1], vec![3, 3]];
        let err = gradient_check(
            |p| ilm_loss_and_grad(&m.with_params(p.clone())?, &texts),
            m.params(),
            1e-4,
            &coords,
        )
        .unwrap();
        assert!(err <= 1e-4, "ilm_loss relative error {err}");
    }

    #[test]
    fn perplexity_shuffle_invariant() {
        let m = model(5, 8);
        let mut texts = vec![vec![0, 1, 2], vec![4, 4], vec![3, 1, 0, 2]];
        let a = perplexity(&m, &texts).unwrap();
        texts.reverse();
        assert_eq!(a.to_bits(), perplexity(&m, &texts).unwrap().to_bits());
        assert!(a > 1.0);
        assert!(perplexity::<_, Vec<TokenId>>(&m, &[vec![]]).is_err());
    }
}
