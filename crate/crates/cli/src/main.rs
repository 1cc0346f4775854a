use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mhat::adapt::{run_ilma, HeldOut, IlmaConfig};
use mhat::data::{
    load_checkpoint, read_corpus, read_vocab, save_checkpoint, Checkpoint, Corpus, Split,
};
use mhat::decode::{write_decode_tsv, BeamConfig, FusionConfig, FusionMode};
use mhat::eval::{
    decode_corpus, generate_data, run_experiment, train_hat, train_mhat, EvalReport,
    ExperimentConfig,
};
use mhat::extlm::{train_lm, LmTrainConfig};
use mhat::model::{TokenId, Transducer};

#[derive(Parser, Debug)]
#[command(
    name = "mhat",
    version,
    about = "Modular HAT training, adaptation, decoding and scoring"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Master seed; stage seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for every output of the command.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for training and decoding.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Mhat,
    Hat,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Fusion {
    None,
    Shallow,
    IlmeSubtract,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate source and target corpora.
    GenData,
    /// Train an ASR model on the source training set.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "mhat")]
        model: ModelKind,
    },
    /// Train the external LM on the target text.
    TrainLm {
        #[arg(long)]
        data: PathBuf,
    },
    /// Adapt an MHAT's internal LM to the target text.
    Adapt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Beam-search decode a paired corpus.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "none")]
        fusion: Fusion,
        #[arg(long, default_value_t = 0.0)]
        lambda_e: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda_i: f64,
    },
    /// Score a decode file against its reference corpus.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Run the whole pipeline and write the WER matrix.
    Experiment,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    Ok(cfg)
}

fn write_snapshot(dir: &Path, cfg: &ExperimentConfig, extra: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut text = cfg.to_key_values();
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let path = dir.join("config.resolved.txt");
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn texts(c: &Corpus) -> Vec<Vec<TokenId>> {
    c.items.iter().map(|u| u.tokens.clone()).collect()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out_dir;
    let jobs = cli.common.jobs;
    let path_str = |p: &Path| p.display().to_string();
    match &cli.command {
        Command::GenData => {
            write_snapshot(out, &cfg, &[("cli.command", "gen-data".into())])?;
            let data = generate_data(&cfg)?;
            data.write(out)?;
            info!(
                "wrote {} source and {} target text utterances to {}",
                data.source_train.len(),
                data.target_text.len(),
                out.display()
            );
        }
        Command::Train { data, model } => {
            let kind = match model {
                ModelKind::Mhat => "mhat",
                ModelKind::Hat => "hat",
            };
            write_snapshot(
                out,
                &cfg,
                &[
                    ("cli.command", "train".into()),
                    ("cli.data", path_str(data)),
                    ("cli.model", kind.into()),
                ],
            )?;
            let vocab = read_vocab(&data.join("vocab.txt"))?;
            let corpus = read_corpus(&data.join("source_train"), &vocab, Split::Train)?;
            let pairs = corpus.pairs()?;
            let mut tc = cfg.train;
            tc.jobs = jobs;
            match model {
                ModelKind::Hat => {
                    tc.seed = cfg.stage_seed(3);
                    let (m, _) = train_hat(&vocab, cfg.hat, &pairs, &tc)?;
                    save_checkpoint(&m, out)?;
                }
                ModelKind::Mhat => {
                    tc.seed = cfg.stage_seed(4);
                    let (m, _) = train_mhat(&vocab, cfg.mhat, &pairs, cfg.alpha, &tc)?;
                    save_checkpoint(&m, out)?;
                }
            }
            info!("saved {kind} checkpoint to {}", out.display());
        }
        Command::TrainLm { data } => {
            write_snapshot(
                out,
                &cfg,
                &[
                    ("cli.command", "train-lm".into()),
                    ("cli.data", path_str(data)),
                ],
            )?;
            let vocab = read_vocab(&data.join("vocab.txt"))?;
            let corpus = read_corpus(&data.join("target_train.txt"), &vocab, Split::Train)?;
            let lm_cfg = LmTrainConfig {
                seed: cfg.stage_seed(5),
                ..cfg.lm
            };
            let (lm, ppl) = train_lm(&vocab, &texts(&corpus), &lm_cfg)?;
            save_checkpoint(&lm, out)?;
            info!("external LM training perplexity {ppl:.3}");
        }
        Command::Adapt { data, model } => {
            write_snapshot(
                out,
                &cfg,
                &[
                    ("cli.command", "adapt".into()),
                    ("cli.data", path_str(data)),
                    ("cli.model", path_str(model)),
                ],
            )?;
            let mhat = load_checkpoint(model)?.into_mhat()?;
            let vocab = mhat.vocab().clone();
            let target = read_corpus(&data.join("target_train.txt"), &vocab, Split::Train)?;
            let heldout = HeldOut {
                source: texts(&read_corpus(&data.join("source_dev"), &vocab, Split::Dev)?),
                target: texts(&read_corpus(&data.join("target_dev"), &vocab, Split::Dev)?),
            };
            let ilma_cfg = IlmaConfig {
                seed: cfg.stage_seed(6),
                ..cfg.ilma
            };
            let (adapted, report) = run_ilma(&mhat, &texts(&target), &ilma_cfg, &heldout)?;
            save_checkpoint(&adapted, out)?;
            report.write(out)?;
            eprint!("{}", report.to_table());
        }
        Command::Decode {
            model,
            corpus,
            lm,
            fusion,
            lambda_e,
            lambda_i,
        } => {
            let mut extra = vec![
                ("cli.command", "decode".to_string()),
                ("cli.model", path_str(model)),
                ("cli.corpus", path_str(corpus)),
                ("cli.fusion", format!("{fusion:?}").to_lowercase()),
                ("cli.lambda_e", lambda_e.to_string()),
                ("cli.lambda_i", lambda_i.to_string()),
            ];
            if let Some(lm) = lm {
                extra.push(("cli.lm", path_str(lm)));
            }
            write_snapshot(out, &cfg, &extra)?;
            let lm = lm
                .as_deref()
                .map(|p| load_checkpoint(p)?.into_lm())
                .transpose()?;
            let mode = match fusion {
                Fusion::None => FusionMode::None,
                Fusion::Shallow => FusionMode::Shallow,
                Fusion::IlmeSubtract => FusionMode::IlmeSubtract,
            };
            let fusion = FusionConfig {
                mode,
                lambda_e: *lambda_e,
                lambda_i: *lambda_i,
                lm: lm.as_ref(),
            };
            let beam = BeamConfig::with_beam(cfg.beam);
            let ckpt = load_checkpoint(model)?;
            let (records, vocab) = match &ckpt {
                Checkpoint::Mhat(m) => {
                    let c = read_corpus(corpus, m.vocab(), Split::Test)?;
                    (decode_corpus(m, &c, &beam, &fusion, jobs)?, m.vocab())
                }
                Checkpoint::Hat(m) => {
                    let c = read_corpus(corpus, m.vocab(), Split::Test)?;
                    (decode_corpus(m, &c, &beam, &fusion, jobs)?, m.vocab())
                }
                Checkpoint::Lm(_) => {
                    return Err(mhat::Error::KindMismatch {
                        expected: "mhat or hat".into(),
                        found: "lm".into(),
                    }
                    .into())
                }
            };
            let path = out.join("decode.tsv");
            write_decode_tsv(&path, &records, vocab)?;
            info!("decoded {} utterances to {}", records.len(), path.display());
        }
        Command::Eval { hyp, corpus, vocab } => {
            write_snapshot(
                out,
                &cfg,
                &[
                    ("cli.command", "eval".into()),
                    ("cli.hyp", path_str(hyp)),
                    ("cli.corpus", path_str(corpus)),
                    ("cli.vocab", path_str(vocab)),
                ],
            )?;
            let vocab = read_vocab(vocab)?;
            let reference = read_corpus(corpus, &vocab, Split::Test)?;
            let hyps = mhat::decode::read_decode_tsv(hyp)?;
            let by_id: std::collections::HashMap<&str, &[TokenId]> =
                hyps.iter().map(|(id, t)| (id.as_str(), &t[..])).collect();
            let mut refs = Vec::new();
            let mut outs = Vec::new();
            for u in &reference.items {
                let h = by_id
                    .get(u.id.as_str())
                    .with_context(|| format!("no hypothesis for utterance {}", u.id))?;
                refs.push(&u.tokens[..]);
                outs.push(*h);
            }
            if hyps.len() != reference.len() {
                bail!(
                    "{} hypotheses for {} reference utterances",
                    hyps.len(),
                    reference.len()
                );
            }
            let mut report = EvalReport::default();
            let domain = corpus
                .file_name()
                .map_or("corpus".into(), |n| n.to_string_lossy().into_owned());
            report.add_domain(&domain, &refs, &outs)?;
            let kv = out.join("eval.kv");
            std::fs::write(&kv, report.to_key_values())
                .with_context(|| format!("writing {}", kv.display()))?;
            let txt = out.join("eval.txt");
            std::fs::write(&txt, report.to_string())
                .with_context(|| format!("writing {}", txt.display()))?;
            eprint!("{report}");
        }
        Command::Experiment => {
            let outputs = run_experiment(&cfg, Some(out), jobs)?;
            eprint!("{}", outputs.report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
