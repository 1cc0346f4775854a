//! Exact sequence log-likelihood over blank-augmented alignments.
//!
//! Nodes are `(t, u)` with `t` in `1..=T` (frames, 1-based) and `u` in
//! `0..=U` (labels emitted so far). From `(t, u)` a blank advances to
//! `(t + 1, u)` and a label `y_{u+1}` advances to `(t, u + 1)`. Every path
//! starts at `(1, 0)` and ends with a mandatory blank out of `(T, U)`.

use crate::error::{Error, Result};
use crate::model::{bigram_context, TokenId, Transducer};
use crate::numerics::{lse, lse2, ParameterSet, Tensor};

/// Arc log-scores of one utterance's lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcScores {
    frames: usize,
    labels: usize,
    blank: Vec<f64>,
    label: Vec<f64>,
}

impl ArcScores {
    pub fn new(frames: usize, labels: usize) -> Self {
        Self {
            frames,
            labels,
            blank: vec![f64::NEG_INFINITY; frames * (labels + 1)],
            label: vec![f64::NEG_INFINITY; frames * labels],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    /// Blank arc out of `(t, u)`, `t` 1-based.
    pub fn blank(&self, t: usize, u: usize) -> f64 {
        self.blank[(t - 1) * (self.labels + 1) + u]
    }

    /// Label arc `y_{u+1}` out of `(t, u)`.
    pub fn label(&self, t: usize, u: usize) -> f64 {
        self.label[(t - 1) * self.labels + u]
    }

    pub fn set_blank(&mut self, t: usize, u: usize, v: f64) {
        self.blank[(t - 1) * (self.labels + 1) + u] = v;
    }

    pub fn set_label(&mut self, t: usize, u: usize, v: f64) {
        self.label[(t - 1) * self.labels + u] = v;
    }
}

/// Posterior arc occupancies, same layout as [`ArcScores`]. Each value is the
/// gradient of the total log-probability with respect to that arc score.
pub type Occupancy = ArcScores;

/// Forward and backward log quantities of one utterance.
#[derive(Debug, Clone)]
pub struct AlignmentLattice {
    arcs: ArcScores,
    log_alpha: Vec<f64>,
    log_beta: Vec<f64>,
    total: f64,
}

impl AlignmentLattice {
    pub fn new(arcs: ArcScores) -> Result<Self> {
        let (t_len, u_len) = (arcs.frames, arcs.labels);
        if t_len == 0 {
            return Err(Error::Structural(format!(
                "no alignment exists for {u_len} labels over 0 frames"
            )));
        }
        let log_alpha = forward_alphas(&arcs);
        let log_beta = backward_betas(&arcs);
        let total = log_alpha[t_len * (u_len + 1) + u_len] + arcs.blank(t_len, u_len);
        Ok(Self {
            arcs,
            log_alpha,
            log_beta,
            total,
        })
    }

    pub fn frames(&self) -> usize {
        self.arcs.frames
    }

    pub fn labels(&self) -> usize {
        self.arcs.labels
    }

    pub fn arcs(&self) -> &ArcScores {
        &self.arcs
    }

    /// `log P(Y|X)`.
    pub fn log_prob(&self) -> f64 {
        self.total
    }

    /// `α(t, u)`; `t = 0` is the unused row and holds `-inf`.
    pub fn log_alpha(&self, t: usize, u: usize) -> f64 {
        self.log_alpha[t * (self.arcs.labels + 1) + u]
    }

    /// `β(t, u)`; `t = 0` is the unused row and holds `-inf`.
    pub fn log_beta(&self, t: usize, u: usize) -> f64 {
        self.log_beta[t * (self.arcs.labels + 1) + u]
    }

    /// `(T+1) x (U+1)` tensor of α with `-inf` replaced by `f64::MIN` so that
    /// the tensor invariant (finite values) holds.
    pub fn alpha_tensor(&self) -> Tensor {
        to_tensor(&self.log_alpha, self.arcs.frames + 1, self.arcs.labels + 1)
    }

    pub fn beta_tensor(&self) -> Tensor {
        to_tensor(&self.log_beta, self.arcs.frames + 1, self.arcs.labels + 1)
    }

    pub fn occupancy(&self) -> Occupancy {
        let (t_len, u_len) = (self.arcs.frames, self.arcs.labels);
        let mut occ = ArcScores::new(t_len, u_len);
        for t in 1..=t_len {
            for u in 0..=u_len {
                let a = self.log_alpha(t, u);
                let after_blank = if t < t_len {
                    self.log_beta(t + 1, u)
                } else if u == u_len {
                    0.0
                } else {
                    f64::NEG_INFINITY
                };
                occ.set_blank(
                    t,
                    u,
                    (a + self.arcs.blank(t, u) + after_blank - self.total).exp(),
                );
                if u < u_len {
                    let after_label = self.log_beta(t, u + 1);
                    occ.set_label(
                        t,
                        u,
                        (a + self.arcs.label(t, u) + after_label - self.total).exp(),
                    );
                }
            }
        }
        occ
    }
}

fn to_tensor(v: &[f64], rows: usize, cols: usize) -> Tensor {
    let data = v
        .iter()
        .map(|&x| if x.is_finite() { x } else { f64::MIN })
        .collect();
    Tensor::matrix(rows, cols, data).expect("lattice extents are positive")
}

fn forward_alphas(arcs: &ArcScores) -> Vec<f64> {
    let (t_len, u_len) = (arcs.frames, arcs.labels);
    let w = u_len + 1;
    let mut alpha = vec![f64::NEG_INFINITY; (t_len + 1) * w];
    for t in 1..=t_len {
        for u in 0..=u_len {
            let v = if t == 1 && u == 0 {
                0.0
            } else {
                let from_blank = if t > 1 {
                    alpha[(t - 1) * w + u] + arcs.blank(t - 1, u)
                } else {
                    f64::NEG_INFINITY
                };
                let from_label = if u > 0 {
                    alpha[t * w + u - 1] + arcs.label(t, u - 1)
                } else {
                    f64::NEG_INFINITY
                };
                lse2(from_blank, from_label)
            };
            alpha[t * w + u] = v;
        }
    }
    alpha
}

fn backward_betas(arcs: &ArcScores) -> Vec<f64> {
    let (t_len, u_len) = (arcs.frames, arcs.labels);
    let w = u_len + 1;
    let mut beta = vec![f64::NEG_INFINITY; (t_len + 1) * w];
    for t in (1..=t_len).rev() {
        for u in (0..=u_len).rev() {
            let v = if t == t_len && u == u_len {
                arcs.blank(t, u)
            } else {
                let via_blank = if t < t_len {
                    arcs.blank(t, u) + beta[(t + 1) * w + u]
                } else {
                    f64::NEG_INFINITY
                };
                let via_label = if u < u_len {
                    arcs.label(t, u) + beta[t * w + u + 1]
                } else {
                    f64::NEG_INFINITY
                };
                lse2(via_blank, via_label)
            };
            beta[t * w + u] = v;
        }
    }
    beta
}

/// Builds the lattice of `(x, y)` under `model`.
pub fn build_lattice<M: Transducer>(
    model: &M,
    x: &Tensor,
    y: &[TokenId],
) -> Result<AlignmentLattice> {
    check_structure(x, y)?;
    let (arcs, _) = model.training_arcs(x, y)?;
    AlignmentLattice::new(arcs)
}

fn check_structure(x: &Tensor, y: &[TokenId]) -> Result<()> {
    if x.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "features must be [T, d_x], got {:?}",
            x.shape()
        )));
    }
    let _ = y;
    Ok(())
}

/// `log P(Y|X)` by the forward recursion.
pub fn forward_log_prob<M: Transducer>(model: &M, x: &Tensor, y: &[TokenId]) -> Result<f64> {
    Ok(build_lattice(model, x, y)?.log_prob())
}

/// `β` table of a lattice as a `(T+1) x (U+1)` tensor.
pub fn backward_log_betas(lattice: &AlignmentLattice) -> Tensor {
    lattice.beta_tensor()
}

/// Largest `T + U` accepted by [`brute_force_log_prob`].
pub const BRUTE_FORCE_LIMIT: usize = 12;

/// `log P(Y|X)` by explicit enumeration of every alignment, scoring each
/// path node by node. Test oracle only.
pub fn brute_force_log_prob<M: Transducer>(model: &M, x: &Tensor, y: &[TokenId]) -> Result<f64> {
    check_structure(x, y)?;
    model.vocab().check_all(y)?;
    let frames = model.frames(x)?;
    let (t_len, u_len) = (frames.len(), y.len());
    if t_len == 0 {
        return Err(Error::Structural(
            "no alignment exists over 0 frames".into(),
        ));
    }
    if t_len + u_len > BRUTE_FORCE_LIMIT {
        return Err(Error::Config(format!(
            "enumeration refused for T + U = {} > {BRUTE_FORCE_LIMIT}",
            t_len + u_len
        )));
    }
    let sos = model.vocab().sos_id();
    let contexts = (0..=u_len)
        .map(|u| model.context(bigram_context(&y[..u], sos)))
        .collect::<Result<Vec<_>>>()?;
    // Free slots before the mandatory final blank.
    let slots = t_len + u_len - 1;
    let mut paths = Vec::new();
    for mask in 0u32..(1u32 << slots) {
        if mask.count_ones() as usize != u_len {
            continue;
        }
        let (mut t, mut u, mut score) = (0usize, 0usize, 0.0);
        for k in 0..slots {
            let node = model.node(&frames[t], &contexts[u]);
            if mask >> k & 1 == 1 {
                score += node.label_arc(y[u]);
                u += 1;
            } else {
                score += node.log_blank;
                t += 1;
            }
        }
        debug_assert_eq!((t, u), (t_len - 1, u_len));
        score += model.node(&frames[t], &contexts[u]).log_blank;
        paths.push(score);
    }
    Ok(lse(&paths))
}

/// Sum of values in a fixed canonical order, so the result does not depend
/// on the order in which batch items were supplied.
pub(crate) fn canonical_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

/// `-Σ log P(Y|X)` over the batch.
pub fn hat_loss<M: Transducer>(model: &M, batch: &[(&Tensor, &[TokenId])]) -> Result<f64> {
    let values = batch
        .iter()
        .map(|(x, y)| forward_log_prob(model, x, y).map(|lp| -lp))
        .collect::<Result<Vec<_>>>()?;
    Ok(canonical_sum(values))
}

/// [`hat_loss`] together with its gradient over every model parameter.
pub fn hat_loss_and_grad<M: Transducer>(
    model: &M,
    batch: &[(&Tensor, &[TokenId])],
) -> Result<(f64, ParameterSet)> {
    let mut grads = model.params().zeros_like();
    let mut values = Vec::with_capacity(batch.len());
    for (x, y) in batch {
        check_structure(x, y)?;
        let (arcs, cache) = model.training_arcs(x, y)?;
        let lattice = AlignmentLattice::new(arcs)?;
        values.push(-lattice.log_prob());
        model.backprop(&cache, &lattice.occupancy(), &mut grads);
    }
    // backprop accumulates ∂ log P; the loss is its negation.
    grads.scale(-1.0);
    Ok((canonical_sum(values), grads))
}
