use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::parallel_map;
use crate::error::{Error, Result};
use crate::lattice::hat_loss_and_grad;
use crate::losses::{mhat_loss_and_grad, LossConfig};
use crate::model::{HatConfig, HatModel, MhatConfig, MhatModel, TokenId, Transducer, Vocabulary};
use crate::numerics::{Adam, Group, Optimizer, ParameterSet, Tensor};

/// Mini-batch Adam over paired data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 4,
            lr: 0.005,
            seed: 0,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.jobs == 0 {
            return Err(Error::Config("batch_size and jobs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Mean per-utterance loss of every epoch.
pub type EpochLosses = Vec<f64>;

fn run_epochs<M, F>(
    model: &mut M,
    data: &[(&Tensor, &[TokenId])],
    cfg: &TrainConfig,
    label: &str,
    rng: &mut ChaCha8Rng,
    params_mut: impl Fn(&mut M) -> &mut ParameterSet,
    loss_and_grad: F,
) -> Result<EpochLosses>
where
    M: Transducer + Sync,
    F: Fn(&M, (&Tensor, &[TokenId])) -> Result<(f64, ParameterSet)> + Sync,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config(format!(
            "{label} training needs a non-empty corpus"
        )));
    }
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let per_utt = parallel_map(chunk, cfg.jobs, |&i| loss_and_grad(model, data[i]));
            let mut grads = model.params().zeros_like();
            for r in per_utt {
                let (loss, g) = r?;
                total += loss;
                grads.add_assign(&g);
            }
            opt.step(params_mut(model), &grads, &Group::ALL);
        }
        let mean = total / data.len() as f64;
        log::info!("{label} epoch {}/{}: loss {mean:.4}", epoch + 1, cfg.epochs);
        history.push(mean);
    }
    Ok(history)
}

/// Trains an MHAT with `hat_loss + alpha * ilm_loss` and records `alpha` on
/// the returned model. Gradients are computed per utterance and summed in
/// batch order, so results do not depend on `cfg.jobs`.
pub fn train_mhat(
    vocab: &Vocabulary,
    config: MhatConfig,
    data: &[(&Tensor, &[TokenId])],
    alpha: f64,
    cfg: &TrainConfig,
) -> Result<(MhatModel, EpochLosses)> {
    let loss = LossConfig { alpha };
    loss.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MhatModel::new(vocab.clone(), config, &mut rng)?;
    let history = run_epochs(
        &mut model,
        data,
        cfg,
        "mhat",
        &mut rng,
        |m| m.params_mut(),
        |m, item| mhat_loss_and_grad(m, &[item], &loss),
    )?;
    model.set_trained_alpha(Some(alpha));
    Ok((model, history))
}

pub fn train_hat(
    vocab: &Vocabulary,
    config: HatConfig,
    data: &[(&Tensor, &[TokenId])],
    cfg: &TrainConfig,
) -> Result<(HatModel, EpochLosses)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = HatModel::new(vocab.clone(), config, &mut rng)?;
    let history = run_epochs(
        &mut model,
        data,
        cfg,
        "hat",
        &mut rng,
        |m| m.params_mut(),
        |m, item| hat_loss_and_grad(m, &[item]),
    )?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_corpus, uniform_domain, Split};
    use crate::fixtures::{tiny_hat_config, tiny_mhat_config};
    use crate::lattice::hat_loss;

    #[test]
    fn training_reduces_loss_and_ignores_jobs() {
        let spec = uniform_domain(3, 0.4).unwrap();
        let c = gen_corpus(&spec, Split::Train, 1, 24, false).unwrap();
        let data = c.pairs().unwrap();
        let mut cfg = TrainConfig {
            epochs: 4,
            batch_size: 6,
            lr: 0.02,
            seed: 3,
            jobs: 1,
        };
        let (m1, h1) = train_mhat(spec.vocab(), tiny_mhat_config(3), &data, 0.1, &cfg).unwrap();
        assert!(h1.last().unwrap() < h1.first().unwrap(), "{h1:?}");
        assert_eq!(m1.trained_alpha(), Some(0.1));
        cfg.jobs = 3;
        let (m3, h3) = train_mhat(spec.vocab(), tiny_mhat_config(3), &data, 0.1, &cfg).unwrap();
        assert_eq!(m1.params(), m3.params());
        assert_eq!(h1, h3);

        let (hat, hh) = train_hat(spec.vocab(), tiny_hat_config(3), &data, &cfg).unwrap();
        assert!(hh.last().unwrap() < hh.first().unwrap(), "{hh:?}");
        assert!(hat_loss(&hat, &data).unwrap().is_finite());
    }

    #[test]
    fn empty_corpus_rejected() {
        let vocab = Vocabulary::new(3).unwrap();
        let err = train_hat(&vocab, tiny_hat_config(3), &[], &TrainConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
