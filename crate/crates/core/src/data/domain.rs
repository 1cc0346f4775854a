use std::ops::RangeInclusive;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{TokenId, Vocabulary};
use crate::numerics::Tensor;

const ROW_TOLERANCE: f64 = 1e-9;

/// Generative description of a synthetic domain: a bigram chain over labels
/// plus EOS, and one prototype feature vector per label.
///
/// Bigram rows are indexed by the previous label, with row `|V|` for SOS.
/// Columns are the next label, with column `|V|` for EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    vocab: Vocabulary,
    bigram: Vec<Vec<f64>>,
    prototypes: Tensor,
    frames_per_token: RangeInclusive<usize>,
    sigma: f64,
    acoustic_shift: f64,
}

impl DomainSpec {
    pub fn new(
        vocab: Vocabulary,
        bigram: Vec<Vec<f64>>,
        prototypes: Tensor,
        frames_per_token: RangeInclusive<usize>,
        sigma: f64,
    ) -> Result<Self> {
        let v = vocab.size();
        if prototypes.shape().len() != 2 || prototypes.rows() != v || prototypes.cols() == 0 {
            return Err(Error::Spec(format!(
                "prototype matrix has shape {:?}, expected [{v}, d_x]",
                prototypes.shape()
            )));
        }
        if prototypes.data().iter().any(|p| !p.is_finite()) {
            return Err(Error::Spec(
                "prototype matrix contains non-finite values".into(),
            ));
        }
        for a in 0..v {
            for b in a + 1..v {
                if prototypes.row(a) == prototypes.row(b) {
                    return Err(Error::Spec(format!(
                        "prototypes of {} and {} are identical",
                        vocab.name(a).unwrap_or("?"),
                        vocab.name(b).unwrap_or("?")
                    )));
                }
            }
        }
        if *frames_per_token.start() == 0 || frames_per_token.is_empty() {
            return Err(Error::Spec(format!(
                "frames per token range {frames_per_token:?} must be non-empty and start at 1 or more"
            )));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Spec(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        let spec = Self {
            vocab,
            bigram: Vec::new(),
            prototypes,
            frames_per_token,
            sigma,
            acoustic_shift: 0.0,
        };
        spec.with_bigram(bigram)
    }

    /// Same vocabulary, prototypes, frame range and noise, different bigram
    /// table. Source/target pairs are built this way so that they differ only
    /// in their label statistics.
    pub fn with_bigram(&self, bigram: Vec<Vec<f64>>) -> Result<Self> {
        let n = self.vocab.size() + 1;
        if bigram.len() != n {
            return Err(Error::Spec(format!(
                "bigram table has {} rows, expected {n}",
                bigram.len()
            )));
        }
        for (r, row) in bigram.iter().enumerate() {
            let label = self.row_label(r);
            if row.len() != n {
                return Err(Error::Spec(format!(
                    "bigram row {label} has {} columns, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Spec(format!(
                    "bigram row {label} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Spec(format!("bigram row {label} sums to {sum}")));
            }
        }
        Ok(Self {
            bigram,
            ..self.clone()
        })
    }

    /// Adds a constant offset to every generated feature value.
    pub fn with_acoustic_shift(&self, shift: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(Error::Spec(format!(
                "acoustic shift must be finite, got {shift}"
            )));
        }
        Ok(Self {
            acoustic_shift: shift,
            ..self.clone()
        })
    }

    fn row_label(&self, r: usize) -> String {
        self.vocab
            .name(r)
            .map_or_else(|| "<sos>".to_string(), str::to_string)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn bigram(&self) -> &[Vec<f64>] {
        &self.bigram
    }

    pub fn prototypes(&self) -> &Tensor {
        &self.prototypes
    }

    pub fn d_x(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn frames_per_token(&self) -> RangeInclusive<usize> {
        self.frames_per_token.clone()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn acoustic_shift(&self) -> f64 {
        self.acoustic_shift
    }

    pub fn eos_id(&self) -> TokenId {
        self.vocab.size()
    }

    /// `P(next | prev)` where `prev` may be SOS and `next` may be EOS.
    pub fn transition(&self, prev: TokenId, next: TokenId) -> f64 {
        self.bigram[prev][next]
    }

    /// Mean negative log-probability per event (labels plus the closing EOS)
    /// of `texts` under this chain. Sentences cut at the length cap have no
    /// EOS event.
    pub fn log_loss<T: AsRef<[TokenId]>>(&self, texts: &[T], length_cap: usize) -> Result<f64> {
        let (sos, eos) = (self.vocab.sos_id(), self.eos_id());
        let mut nll = 0.0;
        let mut events = 0usize;
        for y in texts {
            let y = y.as_ref();
            self.vocab.check_all(y)?;
            let mut prev = sos;
            for &t in y {
                nll -= self.transition(prev, t).ln();
                prev = t;
            }
            events += y.len();
            if y.len() < length_cap {
                nll -= self.transition(prev, eos).ln();
                events += 1;
            }
        }
        if events == 0 {
            return Err(Error::Evaluation("log loss of an empty text set".into()));
        }
        Ok(nll / events as f64)
    }

    /// Entropy per event of the chain run as a renewal process (every EOS
    /// restarts at SOS), in nats.
    pub fn entropy_rate(&self) -> Result<f64> {
        let v = self.vocab.size();
        let sos = self.vocab.sos_id();
        let mut visits = vec![0.0; v + 1];
        let mut mass = vec![0.0; v + 1];
        mass[sos] = 1.0;
        for _ in 0..100_000 {
            let live: f64 = mass.iter().sum();
            if live < 1e-15 {
                let row_entropy = |r: &[f64]| -> f64 {
                    r.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
                };
                let total: f64 = visits.iter().sum();
                let h: f64 = visits
                    .iter()
                    .zip(&self.bigram)
                    .map(|(w, r)| w * row_entropy(r))
                    .sum();
                return Ok(h / total);
            }
            let mut next = vec![0.0; v + 1];
            for (s, m) in mass.iter().enumerate() {
                if *m == 0.0 {
                    continue;
                }
                visits[s] += m;
                for (t, p) in self.bigram[s][..v].iter().enumerate() {
                    next[t] += m * p;
                }
            }
            mass = next;
        }
        Err(Error::Spec("bigram chain does not reach EOS".into()))
    }
}

/// Knobs of the synthetic source/target shift.
///
/// The vocabulary has `4 * pairs` labels: `2 * pairs` confusable pair members
/// (`2j` and `2j + 1` sit `pair_distance` apart), then `pairs` shared cues and
/// `pairs` shifted cues. Sentences alternate cue, pair member, cue, ... and may
/// stop after any pair member. Cue `j` of either kind is always followed by a
/// member of pair `j`. Unless `repeat_pairs` is set, a member of pair `j` is
/// never followed by a cue of pair `j`. In the target a member of pair `j` is
/// followed by a cue of pair `j + 1 (mod pairs)` with `target_target_cue_order`; the
/// remaining mass is spread evenly over the other allowed pairs.
///
/// Shared cues dominate the source and pick member `2j` with
/// `shared_preference` in both domains. Shifted cues dominate the target,
/// where they pick member `2j + 1` with `target_preference`; in the source
/// they are rare and pick member `2j + 1` with `source_shifted_preference`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftConfig {
    pub pairs: usize,
    pub d_x: usize,
    pub sigma: f64,
    pub pair_distance: f64,
    pub min_cue_distance: f64,
    pub stop_prob: f64,
    pub shared_preference: f64,
    pub target_preference: f64,
    pub source_shifted_preference: f64,
    pub source_shifted_rate: f64,
    pub target_shared_rate: f64,
    pub target_cue_order: f64,
    pub repeat_pairs: bool,
    pub prototype_seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            pairs: 4,
            d_x: 8,
            sigma: 0.3,
            pair_distance: 0.5,
            min_cue_distance: 2.5,
            stop_prob: 0.2,
            shared_preference: 0.9,
            target_preference: 0.95,
            source_shifted_preference: 0.2,
            source_shifted_rate: 0.05,
            target_shared_rate: 0.05,
            target_cue_order: 0.9,
            repeat_pairs: false,
            prototype_seed: 7,
        }
    }
}

/// Source and target domains with identical acoustics.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source: DomainSpec,
    pub target: DomainSpec,
}

impl DomainPair {
    pub fn build(cfg: &ShiftConfig) -> Result<Self> {
        let prob = |x: f64, what: &str| -> Result<()> {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Spec(format!("{what} must lie in [0, 1], got {x}")))
            }
        };
        prob(cfg.stop_prob, "stop_prob")?;
        prob(cfg.shared_preference, "shared_preference")?;
        prob(cfg.target_preference, "target_preference")?;
        prob(cfg.source_shifted_preference, "source_shifted_preference")?;
        prob(cfg.source_shifted_rate, "source_shifted_rate")?;
        prob(cfg.target_shared_rate, "target_shared_rate")?;
        prob(cfg.target_cue_order, "target_cue_order")?;
        if cfg.pairs == 0 || cfg.d_x == 0 {
            return Err(Error::Spec("pairs and d_x must be positive".into()));
        }
        if cfg.pairs == 1 && !cfg.repeat_pairs {
            return Err(Error::Spec("a single pair needs repeat_pairs".into()));
        }
        if cfg.stop_prob == 0.0 {
            return Err(Error::Spec(
                "stop_prob must be positive for sentences to end".into(),
            ));
        }

        let p = cfg.pairs;
        let v = 4 * p;
        let mut names = Vec::with_capacity(v);
        for j in 0..p {
            names.push(format!("p{j}a"));
            names.push(format!("p{j}b"));
        }
        names.extend((0..p).map(|j| format!("c{j}")));
        names.extend((0..p).map(|j| format!("s{j}")));
        let vocab = Vocabulary::with_names(names)?;

        let prototypes = shift_prototypes(cfg)?;
        let shared = |j: usize| 2 * p + j;
        let shifted = |j: usize| 3 * p + j;

        let table =
            |shifted_rate: f64, shifted_pick: (f64, f64), order: Option<f64>| -> Vec<Vec<f64>> {
                let cues = |family: &[f64]| -> Vec<f64> {
                    let mut dist = vec![0.0; v + 1];
                    for (j, w) in family.iter().enumerate() {
                        dist[shared(j)] = w * (1.0 - shifted_rate);
                        dist[shifted(j)] = w * shifted_rate;
                    }
                    dist
                };
                let mut rows = vec![vec![0.0; v + 1]; v + 1];
                rows[v] = cues(&vec![1.0 / p as f64; p]);
                for j in 0..p {
                    let allowed: Vec<usize> =
                        (0..p).filter(|&k| cfg.repeat_pairs || k != j).collect();
                    let succ = (j + 1) % p;
                    let mut family = vec![0.0; p];
                    match order {
                        Some(q) if allowed.len() > 1 && succ != j => {
                            for &k in &allowed {
                                family[k] = if k == succ {
                                    q
                                } else {
                                    (1.0 - q) / (allowed.len() - 1) as f64
                                };
                            }
                        }
                        _ => {
                            for &k in &allowed {
                                family[k] = 1.0 / allowed.len() as f64;
                            }
                        }
                    }
                    let next = cues(&family);
                    for m in [2 * j, 2 * j + 1] {
                        rows[m] = next.iter().map(|c| c * (1.0 - cfg.stop_prob)).collect();
                        rows[m][v] = cfg.stop_prob;
                    }
                    rows[shared(j)][2 * j] = cfg.shared_preference;
                    rows[shared(j)][2 * j + 1] = 1.0 - cfg.shared_preference;
                    rows[shifted(j)][2 * j] = shifted_pick.0;
                    rows[shifted(j)][2 * j + 1] = shifted_pick.1;
                }
                rows
            };

        let source_table = table(
            cfg.source_shifted_rate,
            (
                1.0 - cfg.source_shifted_preference,
                cfg.source_shifted_preference,
            ),
            None,
        );
        let target_table = table(
            1.0 - cfg.target_shared_rate,
            (1.0 - cfg.target_preference, cfg.target_preference),
            Some(cfg.target_cue_order),
        );
        let source = DomainSpec::new(vocab, source_table, prototypes, 1..=3, cfg.sigma)?;
        let target = source.with_bigram(target_table)?;
        Ok(Self { source, target })
    }
}

/// Cue and pair centres are rejection-sampled to sit at least
/// `min_cue_distance` apart; pair members straddle their centre along a
/// random unit direction. Values are rounded to `f32`.
fn shift_prototypes(cfg: &ShiftConfig) -> Result<Tensor> {
    let p = cfg.pairs;
    let d = cfg.d_x;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.prototype_seed);
    let gauss =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(3 * p);
    let mut attempts = 0;
    while centres.len() < 3 * p {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Spec(format!(
                "cannot place {} prototypes {} apart in {d} dimensions",
                3 * p,
                cfg.min_cue_distance
            )));
        }
        let c = gauss(&mut rng);
        if centres.iter().all(|o| dist(o, &c) >= cfg.min_cue_distance) {
            centres.push(c);
        }
    }

    let mut data = Vec::with_capacity(4 * p * d);
    for centre in &centres[..p] {
        let dir = gauss(&mut rng);
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let half = 0.5 * cfg.pair_distance / norm;
        data.extend(centre.iter().zip(&dir).map(|(c, u)| c - half * u));
        data.extend(centre.iter().zip(&dir).map(|(c, u)| c + half * u));
    }
    for centre in &centres[p..] {
        data.extend(centre.iter().copied());
    }
    for x in &mut data {
        *x = *x as f32 as f64;
    }
    Tensor::matrix(4 * p, d, data)
}
