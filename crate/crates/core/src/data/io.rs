use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Corpus, Split, Utterance};
use crate::error::{Error, Result};
use crate::model::{TokenId, Vocabulary};
use crate::numerics::Tensor;

const MANIFEST: &str = "manifest.tsv";
const FEATURE_DIR: &str = "feats";

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_tokens(vocab: &Vocabulary, text: &str, path: &Path, line: usize) -> Result<Vec<TokenId>> {
    text.split_whitespace()
        .map(|w| {
            vocab.id(w).ok_or_else(|| {
                Error::Vocab(format!("{}:{line}: unknown token {w:?}", path.display()))
            })
        })
        .collect()
}

/// One label name per line.
pub fn write_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut s = vocab.names().join("\n");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::with_names(
        text.lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect(),
    )
}

/// One sentence per line of space-separated label names. Empty lines are
/// empty sentences.
pub fn write_text_corpus(texts: &[&[TokenId]], vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut out = String::new();
    for y in texts {
        vocab.check_all(y)?;
        out.push_str(&vocab.detokenize(y));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_text_corpus(path: &Path, vocab: &Vocabulary, split: Split) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let items = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            Ok(Utterance {
                id: format!("{split}-{i:06}"),
                features: None,
                tokens: parse_tokens(vocab, line, path, i + 1)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        split,
        seed: None,
        items,
    })
}

/// Writes a paired corpus as a directory holding `manifest.tsv` and one
/// `feats/<id>.feat` record per utterance, or a text-only corpus as a single
/// text file at `path`.
pub fn write_corpus(corpus: &Corpus, vocab: &Vocabulary, path: &Path) -> Result<()> {
    if !corpus.is_paired() {
        return write_text_corpus(&corpus.texts(), vocab, path);
    }
    let feat_dir = path.join(FEATURE_DIR);
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut manifest = format!("# split={}", corpus.split);
    if let Some(seed) = corpus.seed {
        let _ = write!(manifest, " seed={seed}");
    }
    manifest.push('\n');
    for u in &corpus.items {
        vocab.check_all(&u.tokens)?;
        if u.id.is_empty() || u.id.contains(['\t', '/', '\\']) || u.id.starts_with('.') {
            return Err(Error::Config(format!(
                "utterance id {:?} cannot name a file",
                u.id
            )));
        }
        let x = u.features.as_ref().expect("paired corpus");
        let file = feat_dir.join(format!("{}.feat", u.id));
        write_features(x, &file)?;
        let _ = writeln!(
            manifest,
            "{}\t{}\t{}",
            u.id,
            x.rows(),
            vocab.detokenize(&u.tokens)
        );
    }
    let mpath = path.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

/// Reads what [`write_corpus`] wrote: a directory is a paired corpus, a file
/// is text-only.
pub fn read_corpus(path: &Path, vocab: &Vocabulary, split: Split) -> Result<Corpus> {
    if !path.is_dir() {
        return read_text_corpus(path, vocab, split);
    }
    let mpath = path.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut seed = None;
    let mut file_split = split;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(header) = line.strip_prefix('#') {
            for kv in header.split_whitespace() {
                match kv.split_once('=') {
                    Some(("seed", v)) => {
                        seed = Some(
                            v.parse()
                                .map_err(|_| parse_err(&mpath, lineno, "bad seed"))?,
                        );
                    }
                    Some(("split", v)) => file_split = v.parse()?,
                    _ => {}
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let (Some(id), Some(frames), tokens) =
            (cols.next(), cols.next(), cols.next().unwrap_or(""))
        else {
            return Err(parse_err(
                &mpath,
                lineno,
                "expected id, frame count and tokens",
            ));
        };
        let frames: usize = frames
            .parse()
            .map_err(|_| parse_err(&mpath, lineno, format!("bad frame count {frames:?}")))?;
        let tokens = parse_tokens(vocab, tokens, &mpath, lineno)?;
        let x = read_features(&path.join(FEATURE_DIR).join(format!("{id}.feat")))?;
        if x.rows() != frames {
            return Err(parse_err(
                &mpath,
                lineno,
                format!(
                    "manifest says {frames} frames, feature file has {}",
                    x.rows()
                ),
            ));
        }
        items.push(Utterance {
            id: id.to_string(),
            features: Some(x),
            tokens,
        });
    }
    Ok(Corpus {
        split: file_split,
        seed,
        items,
    })
}

/// Little-endian `u32 T`, `u32 d_x`, then `T * d_x` `f32` values row by row.
pub fn write_features(x: &Tensor, path: &Path) -> Result<()> {
    let (t, d) = (x.rows(), x.cols());
    let mut buf = Vec::with_capacity(8 + 4 * x.len());
    for n in [t, d] {
        let n =
            u32::try_from(n).map_err(|_| Error::Dimension(format!("extent {n} exceeds u32")))?;
        buf.extend_from_slice(&n.to_le_bytes());
    }
    for v in x.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| parse_err(path, 0, reason);
    if bytes.len() < 8 {
        return Err(bad(format!(
            "feature record of {} bytes has no header",
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (t, d) = (word(0), word(4));
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| bad(format!("header {t}x{d} overflows")))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "header {t}x{d} needs {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::matrix(t, d, data).map_err(|e| bad(e.to_string()))
}

/// Directory layout shared by the CLI stages.
pub fn corpus_path(root: &Path, domain: &str, split: Split, text_only: bool) -> PathBuf {
    if text_only {
        root.join(format!("{domain}_{split}.txt"))
    } else {
        root.join(format!("{domain}_{split}"))
    }
}
