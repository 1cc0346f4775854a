use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
data.n_train = 24
data.n_dev = 6
data.n_test = 6
data.n_target_text = 40
train.epochs = 1
lm.epochs = 1
ilma.steps = 4
decode.beam = 2
";

fn mhat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mhat")
}

fn ok(args: &[&str]) -> Output {
    let out = mhat(args);
    assert!(
        out.status.success(),
        "mhat {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let out = mhat(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-data"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(mhat(&[]).status.code(), Some(1));
    assert_eq!(mhat(&["train"]).status.code(), Some(1));
    assert_eq!(mhat(&["gen-data", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        mhat(&["decode", "--model", "m", "--corpus", "c", "--fusion", "deep"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "train.nonsense = 3\n").unwrap();
    let out = mhat(&[
        "gen-data",
        "--config",
        s(&bad),
        "--out-dir",
        s(&tmp.path().join("a")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let missing = tmp.path().join("nowhere");
    let out = mhat(&[
        "train",
        "--data",
        s(&missing),
        "--out-dir",
        s(&tmp.path().join("b")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = mhat(&[
        "gen-data",
        "--jobs",
        "0",
        "--out-dir",
        s(&tmp.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resolved_config_snapshot() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let out_dir = tmp.path().join("data");
    ok(&[
        "gen-data",
        "--seed",
        "42",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&out_dir),
    ]);
    let text = fs::read_to_string(out_dir.join("config.resolved.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    for want in [
        "seed = 42",
        "data.n_train = 24",
        "train.epochs = 1",
        "decode.beam = 2",
        "train.alpha = 0.1",
        "cli.command = gen-data",
    ] {
        assert!(lines.contains(&want), "missing {want:?} in\n{text}");
    }
    for line in &lines {
        assert!(line.contains(" = "), "malformed line {line:?}");
    }

    let again = tmp.path().join("again");
    ok(&[
        "gen-data",
        "--config",
        s(&out_dir.join("config.resolved.txt")),
        "--out-dir",
        s(&again),
    ]);
    assert_eq!(
        fs::read_to_string(again.join("config.resolved.txt")).unwrap(),
        text
    );
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    ok(&[
        "gen-data",
        "--seed",
        "5",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&a),
    ]);
    ok(&[
        "gen-data",
        "--seed",
        "5",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&b),
    ]);
    ok(&[
        "gen-data",
        "--seed",
        "6",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&c),
    ]);
    let read = |d: &Path| fs::read(d.join("target_train.txt")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn tiny_pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let p = |n: &str| tmp.path().join(n);
    let common = ["--seed", "3", "--config", s(&cfg)];
    let run = |extra: &[&str]| {
        let mut args: Vec<&str> = extra.to_vec();
        args.extend_from_slice(&common);
        ok(&args)
    };

    run(&["gen-data", "--out-dir", s(&p("data"))]);
    for f in [
        "vocab.txt",
        "target_train.txt",
        "source_train",
        "source_test",
        "target_test",
    ] {
        assert!(p("data").join(f).exists(), "missing {f}");
    }
    run(&["train", "--data", s(&p("data")), "--out-dir", s(&p("mhat"))]);
    run(&[
        "train",
        "--data",
        s(&p("data")),
        "--model",
        "hat",
        "--out-dir",
        s(&p("hat")),
    ]);
    run(&[
        "train-lm",
        "--data",
        s(&p("data")),
        "--out-dir",
        s(&p("lm")),
    ]);
    run(&[
        "adapt",
        "--data",
        s(&p("data")),
        "--model",
        s(&p("mhat")),
        "--out-dir",
        s(&p("ilma")),
    ]);

    let corpus = p("data").join("target_test");
    run(&[
        "decode",
        "--model",
        s(&p("ilma")),
        "--corpus",
        s(&corpus),
        "--lm",
        s(&p("lm")),
        "--fusion",
        "shallow",
        "--lambda-e",
        "0.3",
        "--out-dir",
        s(&p("dec")),
    ]);
    run(&[
        "decode",
        "--model",
        s(&p("hat")),
        "--corpus",
        s(&corpus),
        "--out-dir",
        s(&p("dec_hat")),
    ]);
    let hyp = p("dec").join("decode.tsv");
    let rows = fs::read_to_string(&hyp).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 6);

    let vocab = p("data").join("vocab.txt");
    run(&[
        "eval",
        "--hyp",
        s(&hyp),
        "--corpus",
        s(&corpus),
        "--vocab",
        s(&vocab),
        "--out-dir",
        s(&p("eval")),
    ]);
    let kv = fs::read_to_string(p("eval").join("eval.kv")).unwrap();
    assert!(kv.contains("target_test"), "{kv}");

    let out = mhat(&[
        "decode",
        "--model",
        s(&p("lm")),
        "--corpus",
        s(&corpus),
        "--out-dir",
        s(&p("bad")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
