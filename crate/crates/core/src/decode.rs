//! Frame-synchronous beam search with external LM fusion.
//!
//! Hypotheses that reach the same label prefix at the same frame are merged
//! by summing their alignment probabilities, so with an unpruned beam the
//! model score of every prefix is its exact lattice log-probability.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::extlm::ExternalLm;
use crate::lattice::forward_log_prob;
use crate::model::{bigram_context, NodeScores, TokenId, Transducer, Vocabulary};
use crate::numerics::{lse2, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    None,
    Shallow,
    IlmeSubtract,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Shallow => "shallow",
            FusionMode::IlmeSubtract => "ilme_subtract",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "shallow" => Ok(FusionMode::Shallow),
            "ilme_subtract" | "ilme" => Ok(FusionMode::IlmeSubtract),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Fusion strategy. Shallow fusion on an adapted MHAT is the adapted-ILM
/// fusion of the method: the internal LM score is never subtracted.
#[derive(Debug, Clone, Copy)]
pub struct FusionConfig<'a> {
    pub mode: FusionMode,
    pub lambda_e: f64,
    pub lambda_i: f64,
    pub lm: Option<&'a ExternalLm>,
}

impl<'a> FusionConfig<'a> {
    pub fn none() -> Self {
        Self {
            mode: FusionMode::None,
            lambda_e: 0.0,
            lambda_i: 0.0,
            lm: None,
        }
    }

    pub fn shallow(lm: &'a ExternalLm, lambda_e: f64) -> Self {
        Self {
            mode: FusionMode::Shallow,
            lambda_e,
            lambda_i: 0.0,
            lm: Some(lm),
        }
    }

    pub fn ilme_subtract(lm: &'a ExternalLm, lambda_e: f64, lambda_i: f64) -> Self {
        Self {
            mode: FusionMode::IlmeSubtract,
            lambda_e,
            lambda_i,
            lm: Some(lm),
        }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for (name, v) in [("lambda_e", self.lambda_e), ("lambda_i", self.lambda_i)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        match (self.mode, self.lm) {
            (FusionMode::None, _) if self.lambda_e != 0.0 || self.lambda_i != 0.0 => Err(
                Error::Config("fusion mode none requires lambda_e = lambda_i = 0".into()),
            ),
            (FusionMode::Shallow | FusionMode::IlmeSubtract, None) => Err(Error::Config(format!(
                "fusion mode {} requires an external LM",
                self.mode.as_str()
            ))),
            (_, Some(lm)) if lm.vocab() != vocab => Err(Error::Config(
                "external LM vocabulary differs from the ASR model's".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Weights `(w_e, w_i)` actually applied to the external and internal
    /// LM components.
    pub fn weights(&self) -> (f64, f64) {
        match self.mode {
            FusionMode::None => (0.0, 0.0),
            FusionMode::Shallow => (self.lambda_e, 0.0),
            FusionMode::IlmeSubtract => (self.lambda_e, self.lambda_i),
        }
    }
}

/// Score components of one hypothesis and their weighted combination
/// `model + w_e · ext - w_i · ilm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBreakdown {
    pub model: f64,
    pub ext: f64,
    pub ilm: f64,
    pub total: f64,
}

impl ScoreBreakdown {
    fn new(model: f64, ext: f64, ilm: f64, (we, wi): (f64, f64)) -> Self {
        Self {
            model,
            ext,
            ilm,
            total: model + we * ext - wi * ilm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<TokenId>,
    pub scores: ScoreBreakdown,
    /// Number of frames consumed.
    pub frame: usize,
    pub finalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam: usize,
    /// Consecutive label emissions allowed within one frame.
    pub max_symbols_per_frame: usize,
    /// Optional hard limit on hypothesis length.
    pub max_output_len: Option<usize>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 8,
            max_symbols_per_frame: 10,
            max_output_len: None,
        }
    }
}

impl BeamConfig {
    pub fn with_beam(beam: usize) -> Self {
        Self {
            beam,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    model: f64,
    ext: f64,
    ilm: f64,
    emitted: usize,
}

impl Hyp {
    fn total(&self, (we, wi): (f64, f64)) -> f64 {
        self.model + we * self.ext - wi * self.ilm
    }
}

/// Best first; ties go to the shorter sequence, then the lexicographically
/// smaller one.
fn rank(a: &Hyp, b: &Hyp, w: (f64, f64)) -> std::cmp::Ordering {
    b.total(w)
        .total_cmp(&a.total(w))
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn prune(mut hyps: Vec<Hyp>, beam: usize, w: (f64, f64)) -> Vec<Hyp> {
    hyps.sort_by(|a, b| rank(a, b, w));
    hyps.truncate(beam);
    hyps
}

struct Scorer<'m, M: Transducer> {
    model: &'m M,
    lm: Option<&'m ExternalLm>,
    contexts: HashMap<[TokenId; 2], (M::Context, Option<Vec<f64>>)>,
}

impl<'m, M: Transducer> Scorer<'m, M> {
    fn new(model: &'m M, lm: Option<&'m ExternalLm>) -> Self {
        Self {
            model,
            lm,
            contexts: HashMap::new(),
        }
    }

    fn entry(&mut self, tokens: &[TokenId]) -> Result<&(M::Context, Option<Vec<f64>>)> {
        let ctx = bigram_context(tokens, self.model.vocab().sos_id());
        if !self.contexts.contains_key(&ctx) {
            let c = self.model.context(ctx)?;
            let ext = self.lm.map(|lm| lm.context_log_probs(ctx));
            self.contexts.insert(ctx, (c, ext));
        }
        Ok(&self.contexts[&ctx])
    }

    fn expand(
        &mut self,
        frame: &M::Frame,
        tokens: &[TokenId],
    ) -> Result<(NodeScores, Vec<f64>, Option<Vec<f64>>)> {
        let model = self.model;
        let (c, ext) = self.entry(tokens)?;
        Ok((
            model.node(frame, c),
            model.internal_lm(c).to_vec(),
            ext.clone(),
        ))
    }

    fn blank(&mut self, frame: &M::Frame, tokens: &[TokenId]) -> Result<f64> {
        let model = self.model;
        let (c, _) = self.entry(tokens)?;
        Ok(model.node(frame, c).log_blank)
    }

    fn eos(&mut self, tokens: &[TokenId]) -> Result<f64> {
        let eos = self.model.vocab().size();
        Ok(self.entry(tokens)?.1.as_ref().map_or(0.0, |e| e[eos]))
    }
}

/// Ranked hypotheses for `x`, best first, at most `cfg.beam` of them.
pub fn beam_search<M: Transducer>(
    model: &M,
    x: &Tensor,
    cfg: &BeamConfig,
    fusion: &FusionConfig,
) -> Result<Vec<BeamHypothesis>> {
    if cfg.beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    fusion.validate(model.vocab())?;
    let w = fusion.weights();
    let frames = model.frames(x)?;
    if frames.is_empty() {
        return Err(Error::Structural("cannot decode zero frames".into()));
    }
    let vocab = model.vocab().size();
    let mut scorer = Scorer::new(model, fusion.lm);
    let mut carried = vec![Hyp {
        tokens: Vec::new(),
        model: 0.0,
        ext: 0.0,
        ilm: 0.0,
        emitted: 0,
    }];
    for frame in &frames {
        let mut by_len: HashMap<usize, Vec<Hyp>> = HashMap::new();
        for h in carried.drain(..) {
            by_len.entry(h.tokens.len()).or_default().push(h);
        }
        let mut len = by_len.keys().copied().min().unwrap_or(0);
        let mut pending: Vec<Hyp> = Vec::new();
        let mut done: Vec<Hyp> = Vec::new();
        loop {
            let mut level = by_len.remove(&len).unwrap_or_default();
            level.append(&mut pending);
            if level.is_empty() && by_len.is_empty() {
                break;
            }
            let level = prune(merge(level), cfg.beam, w);
            for h in &level {
                let room = cfg.max_output_len.is_none_or(|m| h.tokens.len() < m);
                if h.emitted >= cfg.max_symbols_per_frame || !room {
                    continue;
                }
                let (node, ilm, ext) = scorer.expand(frame, &h.tokens)?;
                for k in 0..vocab {
                    let mut tokens = h.tokens.clone();
                    tokens.push(k);
                    pending.push(Hyp {
                        tokens,
                        model: h.model + node.label_arc(k),
                        ext: h.ext + ext.as_ref().map_or(0.0, |e| e[k]),
                        ilm: h.ilm + ilm[k],
                        emitted: h.emitted + 1,
                    });
                }
            }
            done.extend(level);
            len += 1;
        }
        for h in &mut done {
            h.model += scorer.blank(frame, &h.tokens)?;
            h.emitted = 0;
        }
        carried = prune(done, cfg.beam, w);
    }
    for h in &mut carried {
        h.ext += scorer.eos(&h.tokens)?;
    }
    let finals = prune(carried, cfg.beam, w);
    Ok(finals
        .into_iter()
        .map(|h| BeamHypothesis {
            scores: ScoreBreakdown::new(h.model, h.ext, h.ilm, w),
            tokens: h.tokens,
            frame: frames.len(),
            finalized: true,
        })
        .collect())
}

/// Sums the model scores of hypotheses sharing a prefix. The LM components
/// depend only on the prefix and are equal across duplicates.
fn merge(level: Vec<Hyp>) -> Vec<Hyp> {
    let mut index: HashMap<Vec<TokenId>, usize> = HashMap::with_capacity(level.len());
    let mut out: Vec<Hyp> = Vec::with_capacity(level.len());
    for h in level {
        match index.get(&h.tokens) {
            Some(&i) => {
                let e = &mut out[i];
                e.model = lse2(e.model, h.model);
                e.emitted = e.emitted.min(h.emitted);
            }
            None => {
                index.insert(h.tokens.clone(), out.len());
                out.push(h);
            }
        }
    }
    out
}

/// Best hypothesis of a width-1 beam without fusion.
pub fn greedy_decode<M: Transducer>(model: &M, x: &Tensor) -> Result<Vec<TokenId>> {
    let best = beam_search(model, x, &BeamConfig::with_beam(1), &FusionConfig::none())?;
    Ok(best
        .into_iter()
        .next()
        .map(|h| h.tokens)
        .unwrap_or_default())
}

/// Score components of a fixed transcript: the exact lattice
/// log-probability, the external LM log-probability including EOS, and the
/// internal LM log-probability.
pub fn score_sequence<M: Transducer>(
    model: &M,
    x: &Tensor,
    y: &[TokenId],
    fusion: &FusionConfig,
) -> Result<ScoreBreakdown> {
    fusion.validate(model.vocab())?;
    let lp = forward_log_prob(model, x, y)?;
    let sos = model.vocab().sos_id();
    let mut ilm = 0.0;
    for u in 0..y.len() {
        let c = model.context(bigram_context(&y[..u], sos))?;
        ilm += model.internal_lm(&c)[y[u]];
    }
    let ext = match fusion.lm {
        Some(lm) => lm.sequence_log_prob(y)?,
        None => 0.0,
    };
    Ok(ScoreBreakdown::new(lp, ext, ilm, fusion.weights()))
}

/// Exhaustive search over every label sequence up to `max_len`, ranked by
/// [`score_sequence`]. Oracle for small vocabularies.
pub fn exhaustive_search<M: Transducer>(
    model: &M,
    x: &Tensor,
    max_len: usize,
    fusion: &FusionConfig,
) -> Result<(Vec<TokenId>, ScoreBreakdown)> {
    let v = model.vocab().size();
    let count: usize = (0..=max_len).map(|l| v.pow(l as u32)).sum();
    if count > 100_000 {
        return Err(Error::Config(format!(
            "exhaustive search over {count} sequences refused"
        )));
    }
    let mut best: Option<(Vec<TokenId>, ScoreBreakdown)> = None;
    let mut seq: Vec<TokenId> = Vec::new();
    loop {
        let s = score_sequence(model, x, &seq, fusion)?;
        let better = match &best {
            None => true,
            Some((b, bs)) => s
                .total
                .total_cmp(&bs.total)
                .then(b.len().cmp(&seq.len()))
                .then_with(|| b.cmp(&seq))
                .is_gt(),
        };
        if better {
            best = Some((seq.clone(), s));
        }
        if !next_sequence(&mut seq, v, max_len) {
            break;
        }
    }
    Ok(best.expect("at least the empty sequence is scored"))
}

/// Advances `seq` through all sequences of length `0..=max_len`, shortest
/// first and lexicographic within a length.
fn next_sequence(seq: &mut Vec<TokenId>, v: usize, max_len: usize) -> bool {
    for i in (0..seq.len()).rev() {
        if seq[i] + 1 < v {
            seq[i] += 1;
            for s in &mut seq[i + 1..] {
                *s = 0;
            }
            return true;
        }
    }
    if seq.len() < max_len {
        let n = seq.len() + 1;
        seq.clear();
        seq.resize(n, 0);
        return true;
    }
    false
}

/// One decoded utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRecord {
    pub utt_id: String,
    pub tokens: Vec<TokenId>,
    pub scores: ScoreBreakdown,
}

/// Column order of decode output files.
pub const DECODE_COLUMNS: [&str; 6] = [
    "utt_id",
    "token_ids",
    "text",
    "model_score",
    "ext_lm_score",
    "ilm_score",
];

/// Tab-separated decode output: a `#`-prefixed header naming the columns,
/// then one line per utterance.
pub fn format_decode_tsv(records: &[DecodeRecord], vocab: &Vocabulary) -> String {
    let mut s = format!("#{}\n", DECODE_COLUMNS.join("\t"));
    for r in records {
        let ids: Vec<String> = r.tokens.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.utt_id,
            ids.join(" "),
            vocab.detokenize(&r.tokens),
            r.scores.model,
            r.scores.ext,
            r.scores.ilm
        );
    }
    s
}

pub fn write_decode_tsv(path: &Path, records: &[DecodeRecord], vocab: &Vocabulary) -> Result<()> {
    std::fs::write(path, format_decode_tsv(records, vocab)).map_err(|e| Error::io(path, e))
}

/// Utterance ids and hypothesis token ids from a file written by
/// [`write_decode_tsv`].
pub fn read_decode_tsv(path: &Path) -> Result<Vec<(String, Vec<TokenId>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != DECODE_COLUMNS.len() {
            return Err(bad(format!(
                "expected {} columns, found {}",
                DECODE_COLUMNS.len(),
                cols.len()
            )));
        }
        let tokens = cols[1]
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad token id {t:?}"))))
            .collect::<Result<Vec<TokenId>>>()?;
        out.push((cols[0].to_string(), tokens));
    }
    Ok(out)
}
