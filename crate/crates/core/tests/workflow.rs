use mhat::adapt::{run_ilma, HeldOut, IlmaConfig};
use mhat::data::{load_checkpoint, read_corpus, save_checkpoint, Split};
use mhat::eval::{generate_data, train_mhat, ExperimentConfig, TrainConfig};
use mhat::losses::perplexity;
use mhat::model::{TokenId, Transducer};
use mhat::numerics::Group;
use tempfile::TempDir;

fn tiny() -> ExperimentConfig {
    let base = ExperimentConfig::default();
    ExperimentConfig {
        seed: 11,
        n_train: 40,
        n_dev: 10,
        n_test: 10,
        n_target_text: 60,
        train: TrainConfig {
            epochs: 2,
            ..base.train
        },
        ilma: IlmaConfig {
            steps: 30,
            ..base.ilma
        },
        ..base
    }
}

fn texts(c: &mhat::data::Corpus) -> Vec<Vec<TokenId>> {
    c.items.iter().map(|u| u.tokens.clone()).collect()
}

#[test]
fn corpora_survive_a_disk_round_trip() {
    let data = generate_data(&tiny()).unwrap();
    let dir = TempDir::new().unwrap();
    data.write(dir.path()).unwrap();
    let vocab = data.domains.source.vocab();
    let back = read_corpus(&dir.path().join("source_train"), vocab, Split::Train).unwrap();
    assert_eq!(back.len(), data.source_train.len());
    assert_eq!(texts(&back), texts(&data.source_train));
    for (a, b) in back.items.iter().zip(&data.source_train.items) {
        let (fa, fb) = (a.features.as_ref().unwrap(), b.features.as_ref().unwrap());
        assert_eq!(fa.shape(), fb.shape());
        for (x, y) in fa.data().iter().zip(fb.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
    let text = read_corpus(&dir.path().join("target_train.txt"), vocab, Split::Train).unwrap();
    assert_eq!(texts(&text), texts(&data.target_text));
}

#[test]
fn train_save_adapt_reload() {
    let cfg = tiny();
    let data = generate_data(&cfg).unwrap();
    let vocab = data.domains.source.vocab();
    let pairs = data.source_train.pairs().unwrap();
    let (mut model, losses) = train_mhat(vocab, cfg.mhat, &pairs, cfg.alpha, &cfg.train).unwrap();
    assert_eq!(losses.len(), cfg.train.epochs);
    assert!(losses.iter().all(|l| l.is_finite()));

    model.params_mut().round_to_f32();
    let dir = TempDir::new().unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    let reloaded = load_checkpoint(dir.path()).unwrap().into_mhat().unwrap();
    for g in Group::ALL {
        assert_eq!(reloaded.params().checksum(g), model.params().checksum(g));
    }

    let heldout = HeldOut {
        source: texts(&data.source_dev),
        target: texts(&data.target_dev),
    };
    let target = texts(&data.target_text);
    let (adapted, report) = run_ilma(&reloaded, &target, &cfg.ilma, &heldout).unwrap();
    assert_eq!(report.steps, cfg.ilma.steps);
    for g in [Group::Encoder, Group::BlankBranch] {
        assert_eq!(adapted.params().checksum(g), model.params().checksum(g));
    }
    assert_ne!(
        adapted.params().checksum(Group::Ilm),
        model.params().checksum(Group::Ilm)
    );

    let before = perplexity(&model, &heldout.target).unwrap();
    let after = perplexity(&adapted, &heldout.target).unwrap();
    assert!(after < before, "target perplexity {before} -> {after}");
}
