//! Text-only internal LM adaptation (ILMA) of an MHAT.
//!
//! Only the `ilm` group is updated. The loss mixes cross-entropy on the
//! adaptation text with a KL penalty toward the internal LM as it was before
//! adaptation:
//!
//! `(1 - ρ) · ilm_loss(θ) - ρ · Σ_Y Σ_u Σ_v P(v | ctx; θ*) log P(v | ctx; θ)`

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{context_nll, perplexity, ContextCounts};
use crate::model::{MhatModel, TokenId, Transducer};
use crate::numerics::{Group, OptimizerKind, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlmaConfig {
    pub rho: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for IlmaConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            steps: 400,
            lr: 0.002,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
        }
    }
}

impl IlmaConfig {
    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        if self.batch_size == 0 {
            return Err(Error::Config("ILMA batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "ILMA learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must lie in [0, 1], got {rho}")));
    }
    Ok(())
}

/// Frozen copy of the internal LM taken before the first update.
#[derive(Debug, Clone)]
pub struct IlmSnapshot {
    model: MhatModel,
}

impl IlmSnapshot {
    pub fn capture(model: &MhatModel) -> Self {
        Self {
            model: model.clone(),
        }
    }

    pub fn checksum(&self) -> String {
        self.model.params().checksum(Group::Ilm)
    }

    fn probs(&self, ctx: [TokenId; 2]) -> Vec<f64> {
        self.model
            .ilm_context(ctx)
            .iter()
            .map(|l| l.exp())
            .collect()
    }
}

fn ilma_terms(
    model: &MhatModel,
    teacher: &IlmSnapshot,
    counts: &ContextCounts,
    rho: f64,
    mut grads: Option<&mut ParameterSet>,
) -> f64 {
    let (mut ce, mut cross) = (0.0, 0.0);
    for (ctx, row) in &counts.contexts {
        let l = model.ilm_context(*ctx);
        ce += context_nll(row, &l);
        let n: f64 = row.iter().sum();
        // Skip the teacher entirely at rho = 0 so the loss reduces to the
        // plain cross-entropy bit for bit.
        let q = (rho > 0.0).then(|| teacher.probs(*ctx));
        if let Some(q) = &q {
            cross += n * q.iter().zip(&l).map(|(qv, lv)| qv * lv).sum::<f64>();
        }
        if let Some(g) = grads.as_deref_mut() {
            let d: Vec<f64> = l
                .iter()
                .zip(row)
                .enumerate()
                .map(|(v, (lv, c))| {
                    let p = lv.exp();
                    let kd = q.as_ref().map_or(0.0, |q| n * (p - q[v]));
                    (1.0 - rho) * (n * p - c) + rho * kd
                })
                .collect();
            model.ilm_backward(*ctx, &d, g);
        }
    }
    (1.0 - rho) * ce - rho * cross
}

/// ILMA objective on a text batch.
pub fn ilma_loss<T: AsRef<[TokenId]>>(
    model: &MhatModel,
    teacher: &IlmSnapshot,
    texts: &[T],
    rho: f64,
) -> Result<f64> {
    check_rho(rho)?;
    let counts = ContextCounts::collect(model.vocab(), texts)?;
    Ok(ilma_terms(model, teacher, &counts, rho, None))
}

/// [`ilma_loss`] and its gradient (non-zero only on the `ilm` group).
pub fn ilma_loss_and_grad<T: AsRef<[TokenId]>>(
    model: &MhatModel,
    teacher: &IlmSnapshot,
    texts: &[T],
    rho: f64,
) -> Result<(f64, ParameterSet)> {
    check_rho(rho)?;
    let counts = ContextCounts::collect(model.vocab(), texts)?;
    let mut grads = model.params().zeros_like();
    let loss = ilma_terms(model, teacher, &counts, rho, Some(&mut grads));
    Ok((loss, grads))
}

/// Held-out text used to report perplexity before and after adaptation.
#[derive(Debug, Clone, Default)]
pub struct HeldOut {
    pub source: Vec<Vec<TokenId>>,
    pub target: Vec<Vec<TokenId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationReport {
    pub rho: f64,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub source_ppl_before: Option<f64>,
    pub source_ppl_after: Option<f64>,
    pub target_ppl_before: Option<f64>,
    pub target_ppl_after: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl AdaptationReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ILMA  rho={}  steps={}", self.rho, self.steps);
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>12}",
            "domain", "ppl_before", "ppl_after"
        );
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>12}",
            "source",
            fmt_opt(self.source_ppl_before),
            fmt_opt(self.source_ppl_after)
        );
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>12}",
            "target",
            fmt_opt(self.target_ppl_before),
            fmt_opt(self.target_ppl_after)
        );
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rho = {}", self.rho);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "final_loss = {}", fmt_opt(self.final_loss));
        let _ = writeln!(s, "source_ppl_before = {}", fmt_opt(self.source_ppl_before));
        let _ = writeln!(s, "source_ppl_after = {}", fmt_opt(self.source_ppl_after));
        let _ = writeln!(s, "target_ppl_before = {}", fmt_opt(self.target_ppl_before));
        let _ = writeln!(s, "target_ppl_after = {}", fmt_opt(self.target_ppl_after));
        s
    }

    /// Writes `ilma_report.txt` and `ilma_report.kv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("ilma_report.txt", self.to_table()),
            ("ilma_report.kv", self.to_key_values()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn maybe_ppl(model: &MhatModel, texts: &[Vec<TokenId>]) -> Result<Option<f64>> {
    if texts.iter().all(Vec::is_empty) {
        return Ok(None);
    }
    perplexity(model, texts).map(Some)
}

/// Fine-tunes the internal LM of `model` on `corpus`.
pub fn run_ilma(
    model: &MhatModel,
    corpus: &[Vec<TokenId>],
    cfg: &IlmaConfig,
    heldout: &HeldOut,
) -> Result<(MhatModel, AdaptationReport)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config(
            "ILMA needs a non-empty adaptation corpus".into(),
        ));
    }
    match model.trained_alpha() {
        Some(a) if a > 0.0 => {}
        Some(a) => {
            log::warn!("model was trained with alpha = {a}; its internal LM may not be adaptable")
        }
        None => log::warn!("training alpha of the model is unknown; ILMA assumes alpha > 0"),
    }
    let teacher = IlmSnapshot::capture(model);
    let mut adapted = model.clone();
    let mut report = AdaptationReport {
        rho: cfg.rho,
        steps: cfg.steps,
        final_loss: None,
        source_ppl_before: maybe_ppl(model, &heldout.source)?,
        source_ppl_after: None,
        target_ppl_before: maybe_ppl(model, &heldout.target)?,
        target_ppl_after: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = cfg.optimizer.build(cfg.lr);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(corpus.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&corpus[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = ilma_loss_and_grad(&adapted, &teacher, &batch, cfg.rho)?;
        opt.step(adapted.params_mut(), &grads, &[Group::Ilm]);
        report.final_loss = Some(loss);
        if step % 100 == 0 {
            log::debug!("ilma step {step}: loss {loss:.4}");
        }
    }
    report.source_ppl_after = maybe_ppl(&adapted, &heldout.source)?;
    report.target_ppl_after = maybe_ppl(&adapted, &heldout.target)?;
    Ok((adapted, report))
}
