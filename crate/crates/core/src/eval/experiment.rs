use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{decode_corpus, score_records, train_hat, train_mhat, ErrorTally, ExperimentConfig};
use crate::adapt::{run_ilma, AdaptationReport, HeldOut, IlmaConfig};
use crate::data::{
    gen_corpus, save_checkpoint, write_corpus, write_vocab, Corpus, DomainPair, Split,
};
use crate::decode::{write_decode_tsv, BeamConfig, FusionConfig, FusionMode};
use crate::error::{Error, Result};
use crate::extlm::{train_lm, ExternalLm, LmTrainConfig};
use crate::losses::perplexity;
use crate::model::{HatModel, MhatModel, TokenId, Transducer};

/// Rows of the WER matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Hat,
    Mhat,
    HatLm,
    MhatLm,
    MhatIlma,
    MhatIlmaLm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Hat,
        Method::Mhat,
        Method::HatLm,
        Method::MhatLm,
        Method::MhatIlma,
        Method::MhatIlmaLm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Hat => "HAT",
            Method::Mhat => "MHAT",
            Method::HatLm => "HAT + LM",
            Method::MhatLm => "MHAT + LM",
            Method::MhatIlma => "MHAT + ILMA",
            Method::MhatIlmaLm => "MHAT + ILMA + LM",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Method::Hat => "hat",
            Method::Mhat => "mhat",
            Method::HatLm => "hat_lm",
            Method::MhatLm => "mhat_lm",
            Method::MhatIlma => "mhat_ilma",
            Method::MhatIlmaLm => "mhat_ilma_lm",
        }
    }

    /// Fusion used by the row. The unadapted `+ LM` rows subtract the
    /// internal LM; the adapted model is fused without subtraction.
    pub fn fusion_mode(self) -> FusionMode {
        match self {
            Method::Hat | Method::Mhat | Method::MhatIlma => FusionMode::None,
            Method::HatLm | Method::MhatLm => FusionMode::IlmeSubtract,
            Method::MhatIlmaLm => FusionMode::Shallow,
        }
    }
}

/// Fusion weights picked on the target dev set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionChoice {
    pub mode: FusionMode,
    pub lambda_e: f64,
    pub lambda_i: f64,
    pub dev_wer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub fusion: FusionChoice,
    pub source: ErrorTally,
    pub target: ErrorTally,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityReport {
    pub mhat_source: f64,
    pub mhat_target: f64,
    pub ilma_source: f64,
    pub ilma_target: f64,
    pub hat_source: f64,
    pub hat_target: f64,
    pub lm_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<MethodResult>,
    pub perplexity: PerplexityReport,
    pub adaptation: AdaptationReport,
}

impl ExperimentReport {
    pub fn row(&self, m: Method) -> &MethodResult {
        self.rows
            .iter()
            .find(|r| r.method == m)
            .expect("every method has a row")
    }

    /// Target-domain WER of one row, in percent.
    pub fn target_wer(&self, m: Method) -> f64 {
        self.row(m).target.wer_percent()
    }

    pub fn source_wer(&self, m: Method) -> f64 {
        self.row(m).source.wer_percent()
    }

    /// Tab-separated matrix with a `#` header.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "#method\tfusion\tlambda_e\tlambda_i\ttarget_dev_wer\tsource_wer\ttarget_wer\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                r.method.label(),
                r.fusion.mode.as_str(),
                r.fusion.lambda_e,
                r.fusion.lambda_i,
                r.fusion.dev_wer,
                r.source.wer_percent(),
                r.target.wer_percent()
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:>14} {:>6} {:>6} {:>10} {:>10}",
            "method", "fusion", "lam_e", "lam_i", "source %", "target %"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>14} {:>6} {:>6} {:>10.2} {:>10.2}",
                r.method.label(),
                r.fusion.mode.as_str(),
                r.fusion.lambda_e,
                r.fusion.lambda_i,
                r.source.wer_percent(),
                r.target.wer_percent()
            );
        }
        let p = &self.perplexity;
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>10}",
            "internal LM perplexity", "source", "target"
        );
        let _ = writeln!(
            s,
            "{:<24} {:>10.3} {:>10.3}",
            "HAT (zeroed acoustics)", p.hat_source, p.hat_target
        );
        let _ = writeln!(
            s,
            "{:<24} {:>10.3} {:>10.3}",
            "MHAT", p.mhat_source, p.mhat_target
        );
        let _ = writeln!(
            s,
            "{:<24} {:>10.3} {:>10.3}",
            "MHAT + ILMA", p.ilma_source, p.ilma_target
        );
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>10.3}",
            "external LM (with EOS)", "-", p.lm_target
        );
        s
    }
}

/// Corpora of one run.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub domains: DomainPair,
    pub source_train: Corpus,
    pub source_dev: Corpus,
    pub source_test: Corpus,
    pub target_text: Corpus,
    pub target_dev: Corpus,
    pub target_test: Corpus,
}

impl ExperimentData {
    /// Writes every corpus and the vocabulary under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let vocab = self.domains.source.vocab();
        write_vocab(vocab, &dir.join("vocab.txt"))?;
        write_corpus(&self.source_train, vocab, &dir.join("source_train"))?;
        write_corpus(&self.source_dev, vocab, &dir.join("source_dev"))?;
        write_corpus(&self.source_test, vocab, &dir.join("source_test"))?;
        write_corpus(&self.target_text, vocab, &dir.join("target_train.txt"))?;
        write_corpus(&self.target_dev, vocab, &dir.join("target_dev"))?;
        write_corpus(&self.target_test, vocab, &dir.join("target_test"))
    }
}

pub fn generate_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let domains = DomainPair::build(&cfg.shift)?;
    let seed = cfg.stage_seed(1);
    let (src, tgt) = (&domains.source, &domains.target);
    let tgt_seed = cfg.stage_seed(2);
    Ok(ExperimentData {
        source_train: gen_corpus(src, Split::Train, seed, cfg.n_train, false)?,
        source_dev: gen_corpus(src, Split::Dev, seed, cfg.n_dev, false)?,
        source_test: gen_corpus(src, Split::Test, seed, cfg.n_test, false)?,
        target_text: gen_corpus(tgt, Split::Train, tgt_seed, cfg.n_target_text, true)?,
        target_dev: gen_corpus(tgt, Split::Dev, tgt_seed, cfg.n_dev, false)?,
        target_test: gen_corpus(tgt, Split::Test, tgt_seed, cfg.n_test, false)?,
        domains,
    })
}

/// Searches the fusion grid on `dev`. Ties keep the earlier grid point.
/// Shallow fusion only scans `lambda_e`.
#[allow(clippy::too_many_arguments)]
pub fn select_fusion<M: Transducer + Sync>(
    model: &M,
    lm: &ExternalLm,
    mode: FusionMode,
    dev: &Corpus,
    lambda_e: &[f64],
    lambda_i: &[f64],
    beam: &BeamConfig,
    jobs: usize,
) -> Result<FusionChoice> {
    let lambda_i: &[f64] = match mode {
        FusionMode::None => return Err(Error::Config("grid search needs a fusion mode".into())),
        FusionMode::Shallow => &[0.0],
        FusionMode::IlmeSubtract => lambda_i,
    };
    let mut best: Option<FusionChoice> = None;
    for &le in lambda_e {
        for &li in lambda_i {
            let fusion = FusionConfig {
                mode,
                lambda_e: le,
                lambda_i: li,
                lm: Some(lm),
            };
            let records = decode_corpus(model, dev, beam, &fusion, jobs)?;
            let w = score_records(dev, &records)?.wer_percent();
            log::debug!(
                "{} lambda_e={le} lambda_i={li}: dev WER {w:.3}",
                mode.as_str()
            );
            if best.is_none_or(|b| w < b.dev_wer) {
                best = Some(FusionChoice {
                    mode,
                    lambda_e: le,
                    lambda_i: li,
                    dev_wer: w,
                });
            }
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// Trained models, corpora and the report of one run.
#[derive(Debug, Clone)]
pub struct ExperimentOutputs {
    pub data: ExperimentData,
    pub hat: HatModel,
    pub mhat: MhatModel,
    pub lm: ExternalLm,
    pub adapted: MhatModel,
    pub report: ExperimentReport,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

/// Runs gen-data, HAT and MHAT training, external LM training, ILMA, the
/// fusion grid search and the final decodes, then assembles the WER matrix.
/// Models are rounded to checkpoint precision as soon as they are trained so
/// that in-memory and reloaded models agree. With `out_dir`, each stage
/// writes its artifacts before the next one starts.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<ExperimentOutputs> {
    stage("config", cfg.validate())?;
    let persist = |f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        match out_dir {
            Some(d) => f(d),
            None => Ok(()),
        }
    };
    persist(&|d| {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let p = d.join("config.resolved.txt");
        fs::write(&p, cfg.to_key_values()).map_err(|e| Error::io(&p, e))
    })?;

    log::info!("gen-data");
    let data = stage("gen-data", generate_data(cfg))?;
    stage("gen-data", persist(&|d| data.write(&d.join("data"))))?;
    let vocab = data.domains.source.vocab().clone();
    let train_pairs = stage("gen-data", data.source_train.pairs())?;

    let mut train_cfg = cfg.train;
    train_cfg.jobs = jobs;

    log::info!("train-hat");
    train_cfg.seed = cfg.stage_seed(3);
    let (mut hat, _) = stage(
        "train-hat",
        train_hat(&vocab, cfg.hat, &train_pairs, &train_cfg),
    )?;
    hat.params_mut().round_to_f32();
    stage(
        "train-hat",
        persist(&|d| save_checkpoint(&hat, &d.join("models/hat"))),
    )?;

    log::info!("train-mhat");
    train_cfg.seed = cfg.stage_seed(4);
    let (mut mhat, _) = stage(
        "train-mhat",
        train_mhat(&vocab, cfg.mhat, &train_pairs, cfg.alpha, &train_cfg),
    )?;
    mhat.params_mut().round_to_f32();
    stage(
        "train-mhat",
        persist(&|d| save_checkpoint(&mhat, &d.join("models/mhat"))),
    )?;

    log::info!("train-lm");
    let target_texts: Vec<Vec<TokenId>> = data
        .target_text
        .items
        .iter()
        .map(|u| u.tokens.clone())
        .collect();
    let lm_cfg = LmTrainConfig {
        seed: cfg.stage_seed(5),
        ..cfg.lm
    };
    let (mut lm, _) = stage("train-lm", train_lm(&vocab, &target_texts, &lm_cfg))?;
    lm.params_mut().round_to_f32();
    stage(
        "train-lm",
        persist(&|d| save_checkpoint(&lm, &d.join("models/lm"))),
    )?;

    log::info!("adapt");
    let to_vecs =
        |c: &Corpus| -> Vec<Vec<TokenId>> { c.items.iter().map(|u| u.tokens.clone()).collect() };
    let heldout = HeldOut {
        source: to_vecs(&data.source_dev),
        target: to_vecs(&data.target_dev),
    };
    let ilma_cfg = IlmaConfig {
        seed: cfg.stage_seed(6),
        ..cfg.ilma
    };
    let (mut adapted, adaptation) =
        stage("adapt", run_ilma(&mhat, &target_texts, &ilma_cfg, &heldout))?;
    adapted.params_mut().round_to_f32();
    stage(
        "adapt",
        persist(&|d| {
            save_checkpoint(&adapted, &d.join("models/mhat_ilma"))?;
            adaptation.write(&d.join("models/mhat_ilma"))
        }),
    )?;

    let perplexity = stage(
        "perplexity",
        (|| {
            let src = data.source_dev.texts();
            let tgt = data.target_dev.texts();
            Ok(PerplexityReport {
                mhat_source: perplexity(&mhat, &src)?,
                mhat_target: perplexity(&mhat, &tgt)?,
                ilma_source: perplexity(&adapted, &src)?,
                ilma_target: perplexity(&adapted, &tgt)?,
                hat_source: perplexity(&hat, &src)?,
                hat_target: perplexity(&hat, &tgt)?,
                lm_target: lm.perplexity(&tgt)?,
            })
        })(),
    )?;

    log::info!("decode");
    let beam = BeamConfig::with_beam(cfg.beam);
    let mut rows = Vec::with_capacity(Method::ALL.len());
    for method in Method::ALL {
        let result = stage(
            "decode",
            (|| {
                let model: &dyn DecodeTarget = match method {
                    Method::Hat | Method::HatLm => &hat,
                    Method::Mhat | Method::MhatLm => &mhat,
                    Method::MhatIlma | Method::MhatIlmaLm => &adapted,
                };
                let mode = method.fusion_mode();
                let choice = match mode {
                    FusionMode::None => FusionChoice {
                        mode,
                        lambda_e: 0.0,
                        lambda_i: 0.0,
                        dev_wer: model.decode_wer(
                            &data.target_dev,
                            &beam,
                            &FusionConfig::none(),
                            jobs,
                            None,
                        )?,
                    },
                    _ => model.select(
                        &lm,
                        mode,
                        &data.target_dev,
                        &cfg.lambda_e,
                        &cfg.lambda_i,
                        &beam,
                        jobs,
                    )?,
                };
                let fusion = FusionConfig {
                    mode,
                    lambda_e: choice.lambda_e,
                    lambda_i: choice.lambda_i,
                    lm: (mode != FusionMode::None).then_some(&lm),
                };
                let dir = out_dir.map(|d| d.join("decode"));
                let mut tallies = Vec::new();
                for (domain, corpus) in
                    [("source", &data.source_test), ("target", &data.target_test)]
                {
                    let path = dir
                        .as_ref()
                        .map(|d| d.join(format!("{}_{domain}.tsv", method.slug())));
                    tallies.push(model.decode_tally(
                        corpus,
                        &beam,
                        &fusion,
                        jobs,
                        path.as_deref(),
                    )?);
                }
                log::info!(
                    "{}: source {:.2}%  target {:.2}%",
                    method.label(),
                    tallies[0].wer_percent(),
                    tallies[1].wer_percent()
                );
                Ok(MethodResult {
                    method,
                    fusion: choice,
                    source: tallies[0],
                    target: tallies[1],
                })
            })(),
        )?;
        rows.push(result);
    }

    let report = ExperimentReport {
        rows,
        perplexity,
        adaptation,
    };
    stage(
        "report",
        persist(&|d| {
            for (name, text) in [
                ("results.tsv", report.to_tsv()),
                ("report.txt", report.to_table()),
            ] {
                let p = d.join(name);
                fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            }
            Ok(())
        }),
    )?;
    Ok(ExperimentOutputs {
        data,
        hat,
        mhat,
        lm,
        adapted,
        report,
    })
}

/// Object-safe decoding entry points so that HAT and MHAT rows share one
/// code path.
trait DecodeTarget: Sync {
    fn decode_tally(
        &self,
        corpus: &Corpus,
        beam: &BeamConfig,
        fusion: &FusionConfig,
        jobs: usize,
        out: Option<&Path>,
    ) -> Result<ErrorTally>;

    fn decode_wer(
        &self,
        corpus: &Corpus,
        beam: &BeamConfig,
        fusion: &FusionConfig,
        jobs: usize,
        out: Option<&Path>,
    ) -> Result<f64> {
        Ok(self
            .decode_tally(corpus, beam, fusion, jobs, out)?
            .wer_percent())
    }

    #[allow(clippy::too_many_arguments)]
    fn select(
        &self,
        lm: &ExternalLm,
        mode: FusionMode,
        dev: &Corpus,
        lambda_e: &[f64],
        lambda_i: &[f64],
        beam: &BeamConfig,
        jobs: usize,
    ) -> Result<FusionChoice>;
}

impl<M: Transducer + Sync> DecodeTarget for M {
    fn decode_tally(
        &self,
        corpus: &Corpus,
        beam: &BeamConfig,
        fusion: &FusionConfig,
        jobs: usize,
        out: Option<&Path>,
    ) -> Result<ErrorTally> {
        let records = decode_corpus(self, corpus, beam, fusion, jobs)?;
        if let Some(path) = out {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_decode_tsv(path, &records, self.vocab())?;
        }
        score_records(corpus, &records)
    }

    fn select(
        &self,
        lm: &ExternalLm,
        mode: FusionMode,
        dev: &Corpus,
        lambda_e: &[f64],
        lambda_i: &[f64],
        beam: &BeamConfig,
        jobs: usize,
    ) -> Result<FusionChoice> {
        select_fusion(self, lm, mode, dev, lambda_e, lambda_i, beam, jobs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in [
            ("data.n_train", "40"),
            ("data.n_dev", "6"),
            ("data.n_test", "6"),
            ("data.n_target_text", "60"),
            ("encoder.d_f", "8"),
            ("mhat.label_dim", "8"),
            ("mhat.blank_dim", "4"),
            ("mhat.joint_dim", "4"),
            ("hat.decoder_dim", "8"),
            ("hat.joint_dim", "8"),
            ("lm.embed_dim", "8"),
            ("lm.epochs", "2"),
            ("train.epochs", "1"),
            ("ilma.steps", "5"),
            ("decode.beam", "2"),
            ("fusion.lambda_e", "0.1,0.3"),
            ("fusion.lambda_i", "0.1"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    #[test]
    fn matrix_has_the_six_rows_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let a = run_experiment(&cfg, Some(dir.path()), 2).unwrap();
        let labels: Vec<&str> = a.report.rows.iter().map(|r| r.method.label()).collect();
        assert_eq!(
            labels,
            [
                "HAT",
                "MHAT",
                "HAT + LM",
                "MHAT + LM",
                "MHAT + ILMA",
                "MHAT + ILMA + LM"
            ]
        );
        let b = run_experiment(&cfg, None, 1).unwrap();
        assert_eq!(a.report, b.report);
        for f in [
            "results.tsv",
            "report.txt",
            "config.resolved.txt",
            "models/mhat/manifest.txt",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(dir.path().join("decode/mhat_ilma_lm_target.tsv").exists());
    }

    #[test]
    fn fusion_modes_per_row() {
        assert_eq!(Method::MhatIlmaLm.fusion_mode(), FusionMode::Shallow);
        assert_eq!(Method::MhatLm.fusion_mode(), FusionMode::IlmeSubtract);
        assert_eq!(Method::HatLm.fusion_mode(), FusionMode::IlmeSubtract);
        assert_eq!(Method::MhatIlma.fusion_mode(), FusionMode::None);
    }

    #[test]
    fn failing_stage_is_named() {
        let mut cfg = tiny();
        cfg.shift.stop_prob = 0.0;
        match run_experiment(&cfg, None, 1) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "gen-data"),
            other => panic!("expected stage error, got {other:?}"),
        }
    }
}
