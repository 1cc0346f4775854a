use rand::Rng;

use super::layers::{
    register_matrix, EmbeddingDecoder, EmbeddingDecoderConfig, Encoder, EncoderCache,
    EncoderConfig, Linear,
};
use super::vocab::{bigram_context, TokenId, Vocabulary};
use super::{NodeScores, Transducer};
use crate::error::{Error, Result};
use crate::lattice::{ArcScores, Occupancy};
use crate::numerics::{
    add_into, dot, log_sigmoid, log_softmax_backward, log_softmax_in_place, lse, matvec_into,
    matvec_t_acc, outer_acc, sigmoid, Group, ParameterSet, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MhatConfig {
    pub encoder: EncoderConfig,
    pub blank_decoder: EmbeddingDecoderConfig,
    pub label_decoder: EmbeddingDecoderConfig,
    /// Hidden width of the blank joint network.
    pub joint_dim: usize,
}

impl Default for MhatConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            blank_decoder: EmbeddingDecoderConfig {
                embed_dim: 16,
                tied_tables: true,
            },
            label_decoder: EmbeddingDecoderConfig {
                embed_dim: 64,
                tied_tables: false,
            },
            joint_dim: 16,
        }
    }
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Encoder,
    am: Linear,
    blank_decoder: EmbeddingDecoder,
    joint_enc: usize,
    joint_dec: Linear,
    blank_out: Linear,
    label_decoder: EmbeddingDecoder,
    ilm: Linear,
}

/// Modular HAT: shared encoder, a blank decoder feeding a Bernoulli blank
/// head, and a label decoder whose projection is a standalone internal LM.
///
/// Parameter groups: `encoder` holds the encoder and the AM projection,
/// `blank_branch` holds the blank decoder and blank joint network, and `ilm`
/// holds exactly the label decoder and its output projection.
#[derive(Debug, Clone)]
pub struct MhatModel {
    vocab: Vocabulary,
    config: MhatConfig,
    params: ParameterSet,
    layout: Layout,
    trained_alpha: Option<f64>,
}

/// Per-frame quantities: encoder output, `W1 f_t`, AM log-probs.
#[derive(Debug, Clone)]
pub struct MhatFrame {
    pub f: Vec<f64>,
    enc_proj: Vec<f64>,
    pub am: Vec<f64>,
}

/// Per-context quantities: blank decoder embedding (pre-activation joint
/// term) and the internal LM distribution.
#[derive(Debug, Clone)]
pub struct MhatContext {
    dec_proj: Vec<f64>,
    pub ilm: Vec<f64>,
}

impl MhatModel {
    pub fn new<R: Rng>(vocab: Vocabulary, config: MhatConfig, rng: &mut R) -> Result<Self> {
        if !config.blank_decoder.tied_tables || config.label_decoder.tied_tables {
            return Err(Error::Config(
                "blank decoder tables must be tied and label decoder tables independent".into(),
            ));
        }
        let v = vocab.size();
        let rows = vocab.context_rows();
        let (df, dh) = (config.encoder.d_f, config.joint_dim);
        let (db, dl) = (
            config.blank_decoder.embed_dim,
            config.label_decoder.embed_dim,
        );
        let mut p = ParameterSet::new();
        Encoder::register(&mut p, config.encoder, rng)?;
        Linear::register(&mut p, "am_proj", Group::Encoder, df, v, rng)?;
        EmbeddingDecoder::register(
            &mut p,
            "blank_decoder",
            Group::BlankBranch,
            config.blank_decoder,
            rows,
            rng,
        )?;
        // W1 carries no bias; the joint bias lives on the decoder side.
        register_matrix(
            &mut p,
            "joint.enc_proj.weight",
            Group::BlankBranch,
            dh,
            df,
            rng,
        )?;
        Linear::register(&mut p, "joint.dec_proj", Group::BlankBranch, db, dh, rng)?;
        Linear::register(&mut p, "joint.blank_out", Group::BlankBranch, dh, 1, rng)?;
        EmbeddingDecoder::register(
            &mut p,
            "label_decoder",
            Group::Ilm,
            config.label_decoder,
            rows,
            rng,
        )?;
        Linear::register(&mut p, "ilm_proj", Group::Ilm, dl, v, rng)?;
        Self::from_params(vocab, config, p)
    }

    pub fn from_params(
        vocab: Vocabulary,
        config: MhatConfig,
        params: ParameterSet,
    ) -> Result<Self> {
        let v = vocab.size();
        let rows = vocab.context_rows();
        let (df, dh) = (config.encoder.d_f, config.joint_dim);
        let (db, dl) = (
            config.blank_decoder.embed_dim,
            config.label_decoder.embed_dim,
        );
        let layout = Layout {
            encoder: Encoder::bind(&params, config.encoder)?,
            am: Linear::bind(&params, "am_proj", df, v)?,
            blank_decoder: EmbeddingDecoder::bind(
                &params,
                "blank_decoder",
                config.blank_decoder,
                rows,
            )?,
            joint_enc: {
                let id = params.id("joint.enc_proj.weight").ok_or_else(|| {
                    Error::Config("missing parameter \"joint.enc_proj.weight\"".into())
                })?;
                if params.tensor(id).shape() != [dh, df] {
                    return Err(Error::Dimension(format!(
                        "joint.enc_proj.weight has shape {:?}, expected [{dh}, {df}]",
                        params.tensor(id).shape()
                    )));
                }
                id
            },
            joint_dec: Linear::bind(&params, "joint.dec_proj", db, dh)?,
            blank_out: Linear::bind(&params, "joint.blank_out", dh, 1)?,
            label_decoder: EmbeddingDecoder::bind(
                &params,
                "label_decoder",
                config.label_decoder,
                rows,
            )?,
            ilm: Linear::bind(&params, "ilm_proj", dl, v)?,
        };
        for (name, group, _) in params.iter() {
            let expected = if name.starts_with("encoder.") || name.starts_with("am_proj.") {
                Group::Encoder
            } else if name.starts_with("label_decoder.") || name.starts_with("ilm_proj.") {
                Group::Ilm
            } else {
                Group::BlankBranch
            };
            if group != expected {
                return Err(Error::Config(format!(
                    "parameter {name:?} is in group {group}, expected {expected}"
                )));
            }
        }
        Ok(Self {
            vocab,
            config,
            params,
            layout,
            trained_alpha: None,
        })
    }

    pub fn config(&self) -> &MhatConfig {
        &self.config
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    /// Replaces all parameter values; names and shapes must match.
    pub fn with_params(&self, params: ParameterSet) -> Result<Self> {
        let mut m = Self::from_params(self.vocab.clone(), self.config, params)?;
        m.trained_alpha = self.trained_alpha;
        Ok(m)
    }

    /// Internal LM loss weight the model was trained with, when known.
    pub fn trained_alpha(&self) -> Option<f64> {
        self.trained_alpha
    }

    pub fn set_trained_alpha(&mut self, alpha: Option<f64>) {
        self.trained_alpha = alpha;
    }

    /// Acoustic embeddings `f_1..f_T`, shape `[T, d_f]`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let cache = self.layout.encoder.forward(&self.params, x)?;
        Tensor::matrix(
            cache.frames,
            self.config.encoder.d_f,
            cache.output().to_vec(),
        )
    }

    fn checked_context(&self, history: &[TokenId]) -> Result<[TokenId; 2]> {
        self.vocab.check_all(history)?;
        Ok(bigram_context(history, self.vocab.sos_id()))
    }

    /// Blank decoder embedding `g^B` for the next label after `history`
    /// (`history` holds `y_1..y_{u-1}`; SOS is implicit).
    pub fn decode_blank(&self, history: &[TokenId]) -> Result<Vec<f64>> {
        let ctx = self.checked_context(history)?;
        Ok(self.layout.blank_decoder.forward(&self.params, ctx))
    }

    /// Label decoder embedding `g^L` for the next label after `history`.
    pub fn decode_label(&self, history: &[TokenId]) -> Result<Vec<f64>> {
        let ctx = self.checked_context(history)?;
        Ok(self.layout.label_decoder.forward(&self.params, ctx))
    }

    fn blank_logit(&self, enc_proj: &[f64], dec_proj: &[f64]) -> f64 {
        let h: Vec<f64> = enc_proj
            .iter()
            .zip(dec_proj)
            .map(|(a, b)| (a + b).tanh())
            .collect();
        dot(self.params.values(self.layout.blank_out.w), &h)
            + self.params.values(self.layout.blank_out.b)[0]
    }

    fn enc_proj(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.config.joint_dim];
        matvec_into(self.params.values(self.layout.joint_enc), f, &mut out);
        out
    }

    fn dec_proj(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.config.joint_dim];
        self.layout.joint_dec.forward(&self.params, g, &mut out);
        out
    }

    /// `b = sigmoid(wᵀ tanh(W1 f + W2 g^B + b_h) + b_w)`.
    pub fn blank_posterior(&self, f: &[f64], g_blank: &[f64]) -> Result<f64> {
        self.check_len("f", f, self.config.encoder.d_f)?;
        self.check_len("g_blank", g_blank, self.config.blank_decoder.embed_dim)?;
        Ok(sigmoid(
            self.blank_logit(&self.enc_proj(f), &self.dec_proj(g_blank)),
        ))
    }

    /// `a_t = log_softmax(W3 f + b3)`.
    pub fn am_log_probs(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len("f", f, self.config.encoder.d_f)?;
        Ok(self.am_unchecked(f))
    }

    fn am_unchecked(&self, f: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.vocab.size()];
        self.layout.am.forward(&self.params, f, &mut a);
        log_softmax_in_place(&mut a);
        a
    }

    /// `l_u = log_softmax(W4 g^L + b4)`: the internal LM distribution.
    pub fn ilm_log_probs(&self, g_label: &[f64]) -> Result<Vec<f64>> {
        self.check_len("g_label", g_label, self.config.label_decoder.embed_dim)?;
        Ok(self.ilm_unchecked(g_label))
    }

    fn ilm_unchecked(&self, g: &[f64]) -> Vec<f64> {
        let mut l = vec![0.0; self.vocab.size()];
        self.layout.ilm.forward(&self.params, g, &mut l);
        log_softmax_in_place(&mut l);
        l
    }

    fn check_len(&self, what: &str, v: &[f64], n: usize) -> Result<()> {
        if v.len() != n {
            return Err(Error::Dimension(format!(
                "{what} has length {}, expected {n}",
                v.len()
            )));
        }
        Ok(())
    }

    /// Internal LM log-probs for the label following `history`.
    pub fn ilm_for_history(&self, history: &[TokenId]) -> Result<Vec<f64>> {
        let ctx = self.checked_context(history)?;
        Ok(self.ilm_context(ctx))
    }

    pub(crate) fn ilm_context(&self, ctx: [TokenId; 2]) -> Vec<f64> {
        let g = self.layout.label_decoder.forward(&self.params, ctx);
        self.ilm_unchecked(&g)
    }

    /// Backpropagates `d_logits` (gradient on the internal LM logits at
    /// context `ctx`) into the `ilm` group of `grads`.
    pub(crate) fn ilm_backward(
        &self,
        ctx: [TokenId; 2],
        d_logits: &[f64],
        grads: &mut ParameterSet,
    ) {
        let g = self.layout.label_decoder.forward(&self.params, ctx);
        let mut dg = vec![0.0; g.len()];
        self.layout
            .ilm
            .backward(&self.params, &g, d_logits, grads, Some(&mut dg));
        self.layout
            .label_decoder
            .backward(&self.params, ctx, &dg, grads);
    }

    pub fn parameter_report(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = self
            .params
            .group_counts()
            .into_iter()
            .map(|(g, n)| (g.to_string(), n))
            .collect();
        let blank_decoder: usize = self
            .params
            .iter()
            .filter(|(n, _, _)| n.starts_with("blank_decoder."))
            .map(|(_, _, t)| t.len())
            .sum();
        out.push(("blank_decoder".into(), blank_decoder));
        out.push(("total".into(), self.params.num_values()));
        out
    }
}

/// Per-utterance forward state kept for backpropagation.
pub struct MhatCache {
    enc: EncoderCache,
    labels: Vec<TokenId>,
    contexts: Vec<[TokenId; 2]>,
    g_blank: Vec<f64>,
    hidden: Vec<f64>,
    blank_prob: Vec<f64>,
    am_probs: Vec<f64>,
    g_label: Vec<f64>,
    ilm_probs: Vec<f64>,
    label_probs: Vec<f64>,
}

impl Transducer for MhatModel {
    type Frame = MhatFrame;
    type Context = MhatContext;
    type Cache = MhatCache;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn frames(&self, x: &Tensor) -> Result<Vec<MhatFrame>> {
        let cache = self.layout.encoder.forward(&self.params, x)?;
        let df = self.config.encoder.d_f;
        Ok(cache
            .output()
            .chunks(df)
            .map(|f| MhatFrame {
                f: f.to_vec(),
                enc_proj: self.enc_proj(f),
                am: self.am_unchecked(f),
            })
            .collect())
    }

    fn context(&self, ctx: [TokenId; 2]) -> Result<MhatContext> {
        self.layout.blank_decoder.check_context(ctx)?;
        let gb = self.layout.blank_decoder.forward(&self.params, ctx);
        Ok(MhatContext {
            dec_proj: self.dec_proj(&gb),
            ilm: self.ilm_context(ctx),
        })
    }

    fn node(&self, frame: &MhatFrame, ctx: &MhatContext) -> NodeScores {
        let z = self.blank_logit(&frame.enc_proj, &ctx.dec_proj);
        let mut labels: Vec<f64> = frame.am.iter().zip(&ctx.ilm).map(|(a, l)| a + l).collect();
        log_softmax_in_place(&mut labels);
        NodeScores {
            log_blank: log_sigmoid(z),
            log_emit: log_sigmoid(-z),
            label_log_probs: labels,
        }
    }

    fn internal_lm<'a>(&self, ctx: &'a MhatContext) -> &'a [f64] {
        &ctx.ilm
    }

    fn training_arcs(&self, x: &Tensor, y: &[TokenId]) -> Result<(ArcScores, MhatCache)> {
        self.vocab.check_all(y)?;
        let enc = self.layout.encoder.forward(&self.params, x)?;
        let (t_len, u_len) = (enc.frames, y.len());
        let v = self.vocab.size();
        let (df, dh) = (self.config.encoder.d_f, self.config.joint_dim);
        let f = enc.output();
        let sos = self.vocab.sos_id();
        let contexts: Vec<[TokenId; 2]> =
            (0..=u_len).map(|u| bigram_context(&y[..u], sos)).collect();

        let mut enc_proj = vec![0.0; t_len * dh];
        let mut am_probs = vec![0.0; t_len * v];
        let mut am = vec![0.0; t_len * v];
        for t in 0..t_len {
            let ft = &f[t * df..(t + 1) * df];
            matvec_into(
                self.params.values(self.layout.joint_enc),
                ft,
                &mut enc_proj[t * dh..(t + 1) * dh],
            );
            let a = self.am_unchecked(ft);
            for (p, &lp) in am_probs[t * v..(t + 1) * v].iter_mut().zip(&a) {
                *p = lp.exp();
            }
            am[t * v..(t + 1) * v].copy_from_slice(&a);
        }

        let db = self.config.blank_decoder.embed_dim;
        let dl = self.config.label_decoder.embed_dim;
        let mut g_blank = Vec::with_capacity((u_len + 1) * db);
        let mut dec_proj = Vec::with_capacity((u_len + 1) * dh);
        for &ctx in &contexts {
            let gb = self.layout.blank_decoder.forward(&self.params, ctx);
            dec_proj.extend(self.dec_proj(&gb));
            g_blank.extend(gb);
        }
        let mut g_label = Vec::with_capacity(u_len * dl);
        let mut ilm = Vec::with_capacity(u_len * v);
        for &ctx in &contexts[..u_len] {
            let gl = self.layout.label_decoder.forward(&self.params, ctx);
            ilm.extend(self.ilm_unchecked(&gl));
            g_label.extend(gl);
        }
        let ilm_probs: Vec<f64> = ilm.iter().map(|l| l.exp()).collect();

        let w = self.params.values(self.layout.blank_out.w);
        let bw = self.params.values(self.layout.blank_out.b)[0];
        let mut arcs = ArcScores::new(t_len, u_len);
        let mut hidden = vec![0.0; t_len * (u_len + 1) * dh];
        let mut blank_prob = vec![0.0; t_len * (u_len + 1)];
        let mut label_probs = vec![0.0; t_len * u_len * v];
        let mut s = vec![0.0; v];
        for t in 0..t_len {
            let ep = &enc_proj[t * dh..(t + 1) * dh];
            for u in 0..=u_len {
                let node = t * (u_len + 1) + u;
                let h = &mut hidden[node * dh..(node + 1) * dh];
                for ((hv, a), b) in h.iter_mut().zip(ep).zip(&dec_proj[u * dh..(u + 1) * dh]) {
                    *hv = (a + b).tanh();
                }
                let z = dot(w, h) + bw;
                blank_prob[node] = sigmoid(z);
                arcs.set_blank(t + 1, u, log_sigmoid(z));
                if u < u_len {
                    for ((sv, a), l) in s
                        .iter_mut()
                        .zip(&am[t * v..(t + 1) * v])
                        .zip(&ilm[u * v..(u + 1) * v])
                    {
                        *sv = a + l;
                    }
                    let norm = lse(&s);
                    let base = (t * u_len + u) * v;
                    for (p, sv) in label_probs[base..base + v].iter_mut().zip(&s) {
                        *p = (sv - norm).exp();
                    }
                    arcs.set_label(t + 1, u, log_sigmoid(-z) + s[y[u]] - norm);
                }
            }
        }
        Ok((
            arcs,
            MhatCache {
                enc,
                labels: y.to_vec(),
                contexts,
                g_blank,
                hidden,
                blank_prob,
                am_probs,
                g_label,
                ilm_probs,
                label_probs,
            },
        ))
    }

    fn backprop(&self, c: &MhatCache, occ: &Occupancy, grads: &mut ParameterSet) {
        let (t_len, u_len) = (c.enc.frames, c.labels.len());
        let v = self.vocab.size();
        let (df, dh) = (self.config.encoder.d_f, self.config.joint_dim);
        let db = self.config.blank_decoder.embed_dim;
        let dl = self.config.label_decoder.embed_dim;
        let l = &self.layout;
        let w = self.params.values(l.blank_out.w).to_vec();

        let mut d_enc_proj = vec![0.0; t_len * dh];
        let mut d_dec_proj = vec![0.0; (u_len + 1) * dh];
        let mut d_am = vec![0.0; t_len * v];
        let mut d_ilm = vec![0.0; u_len * v];
        let mut dw = vec![0.0; dh];
        let mut dbw = 0.0;
        for t in 0..t_len {
            for u in 0..=u_len {
                let node = t * (u_len + 1) + u;
                let gb = occ.blank(t + 1, u);
                let gl = if u < u_len { occ.label(t + 1, u) } else { 0.0 };
                let b = c.blank_prob[node];
                let dz = gb * (1.0 - b) - gl * b;
                let h = &c.hidden[node * dh..(node + 1) * dh];
                if dz != 0.0 {
                    dbw += dz;
                    for k in 0..dh {
                        dw[k] += dz * h[k];
                        let dpre = dz * w[k] * (1.0 - h[k] * h[k]);
                        d_enc_proj[t * dh + k] += dpre;
                        d_dec_proj[u * dh + k] += dpre;
                    }
                }
                if u < u_len && gl != 0.0 {
                    let base = (t * u_len + u) * v;
                    let p = &c.label_probs[base..base + v];
                    for k in 0..v {
                        let ds = gl * ((k == c.labels[u]) as u8 as f64 - p[k]);
                        d_am[t * v + k] += ds;
                        d_ilm[u * v + k] += ds;
                    }
                }
            }
        }
        add_into(grads.values_mut(l.blank_out.w), &dw);
        grads.values_mut(l.blank_out.b)[0] += dbw;

        let f = c.enc.output();
        let mut d_f = vec![0.0; t_len * df];
        let mut d_logits = vec![0.0; v];
        for t in 0..t_len {
            let ft = &f[t * df..(t + 1) * df];
            let de = &d_enc_proj[t * dh..(t + 1) * dh];
            outer_acc(grads.values_mut(l.joint_enc), de, ft);
            matvec_t_acc(
                self.params.values(l.joint_enc),
                de,
                &mut d_f[t * df..(t + 1) * df],
            );
            log_softmax_backward(
                &d_am[t * v..(t + 1) * v],
                &c.am_probs[t * v..(t + 1) * v],
                &mut d_logits,
            );
            l.am.backward(
                &self.params,
                ft,
                &d_logits,
                grads,
                Some(&mut d_f[t * df..(t + 1) * df]),
            );
        }
        l.encoder.backward(&self.params, &c.enc, &d_f, grads);

        let mut dg = vec![0.0; db];
        for (u, &ctx) in c.contexts.iter().enumerate() {
            dg.iter_mut().for_each(|x| *x = 0.0);
            l.joint_dec.backward(
                &self.params,
                &c.g_blank[u * db..(u + 1) * db],
                &d_dec_proj[u * dh..(u + 1) * dh],
                grads,
                Some(&mut dg),
            );
            l.blank_decoder.backward(&self.params, ctx, &dg, grads);
        }

        let mut dg = vec![0.0; dl];
        for u in 0..u_len {
            dg.iter_mut().for_each(|x| *x = 0.0);
            log_softmax_backward(
                &d_ilm[u * v..(u + 1) * v],
                &c.ilm_probs[u * v..(u + 1) * v],
                &mut d_logits,
            );
            l.ilm.backward(
                &self.params,
                &c.g_label[u * dl..(u + 1) * dl],
                &d_logits,
                grads,
                Some(&mut dg),
            );
            l.label_decoder
                .backward(&self.params, c.contexts[u], &dg, grads);
        }
    }
}
