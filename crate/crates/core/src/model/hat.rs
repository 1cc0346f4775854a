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
    dot, log_sigmoid, log_softmax_in_place, matvec_into, matvec_t_acc, outer_acc, sigmoid, Group,
    ParameterSet, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HatConfig {
    pub encoder: EncoderConfig,
    pub decoder: EmbeddingDecoderConfig,
    pub joint_dim: usize,
}

impl Default for HatConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: EmbeddingDecoderConfig {
                embed_dim: 64,
                tied_tables: false,
            },
            joint_dim: 64,
        }
    }
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Encoder,
    decoder: EmbeddingDecoder,
    joint_enc: usize,
    joint_dec: Linear,
    blank_out: Linear,
    label_out: Linear,
}

/// Baseline HAT: one decoder shared by a Bernoulli blank head and a label
/// softmax head over a common joint hidden layer.
///
/// The encoder is in group `encoder`; the decoder and joint network are all
/// in `blank_branch` since every one of them shapes the blank distribution.
#[derive(Debug, Clone)]
pub struct HatModel {
    vocab: Vocabulary,
    config: HatConfig,
    params: ParameterSet,
    layout: Layout,
}

#[derive(Debug, Clone)]
pub struct HatFrame {
    enc_proj: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HatContext {
    dec_proj: Vec<f64>,
    ilm: Vec<f64>,
}

impl HatModel {
    pub fn new<R: Rng>(vocab: Vocabulary, config: HatConfig, rng: &mut R) -> Result<Self> {
        let v = vocab.size();
        let (df, dh, dg) = (
            config.encoder.d_f,
            config.joint_dim,
            config.decoder.embed_dim,
        );
        let mut p = ParameterSet::new();
        Encoder::register(&mut p, config.encoder, rng)?;
        EmbeddingDecoder::register(
            &mut p,
            "decoder",
            Group::BlankBranch,
            config.decoder,
            vocab.context_rows(),
            rng,
        )?;
        register_matrix(
            &mut p,
            "joint.enc_proj.weight",
            Group::BlankBranch,
            dh,
            df,
            rng,
        )?;
        Linear::register(&mut p, "joint.dec_proj", Group::BlankBranch, dg, dh, rng)?;
        Linear::register(&mut p, "joint.blank_out", Group::BlankBranch, dh, 1, rng)?;
        Linear::register(&mut p, "joint.label_out", Group::BlankBranch, dh, v, rng)?;
        Self::from_params(vocab, config, p)
    }

    pub fn from_params(vocab: Vocabulary, config: HatConfig, params: ParameterSet) -> Result<Self> {
        let v = vocab.size();
        let (df, dh, dg) = (
            config.encoder.d_f,
            config.joint_dim,
            config.decoder.embed_dim,
        );
        let joint_enc = params
            .id("joint.enc_proj.weight")
            .ok_or_else(|| Error::Config("missing parameter \"joint.enc_proj.weight\"".into()))?;
        if params.tensor(joint_enc).shape() != [dh, df] {
            return Err(Error::Dimension(format!(
                "joint.enc_proj.weight has shape {:?}, expected [{dh}, {df}]",
                params.tensor(joint_enc).shape()
            )));
        }
        let layout = Layout {
            encoder: Encoder::bind(&params, config.encoder)?,
            decoder: EmbeddingDecoder::bind(
                &params,
                "decoder",
                config.decoder,
                vocab.context_rows(),
            )?,
            joint_enc,
            joint_dec: Linear::bind(&params, "joint.dec_proj", dg, dh)?,
            blank_out: Linear::bind(&params, "joint.blank_out", dh, 1)?,
            label_out: Linear::bind(&params, "joint.label_out", dh, v)?,
        };
        Ok(Self {
            vocab,
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &HatConfig {
        &self.config
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn with_params(&self, params: ParameterSet) -> Result<Self> {
        Self::from_params(self.vocab.clone(), self.config, params)
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let cache = self.layout.encoder.forward(&self.params, x)?;
        Tensor::matrix(
            cache.frames,
            self.config.encoder.d_f,
            cache.output().to_vec(),
        )
    }

    /// Decoder embedding `g_u` for the label following `history`.
    pub fn decode(&self, history: &[TokenId]) -> Result<Vec<f64>> {
        self.vocab.check_all(history)?;
        let ctx = bigram_context(history, self.vocab.sos_id());
        Ok(self.layout.decoder.forward(&self.params, ctx))
    }

    fn hidden(&self, enc_proj: &[f64], dec_proj: &[f64]) -> Vec<f64> {
        enc_proj
            .iter()
            .zip(dec_proj)
            .map(|(a, b)| (a + b).tanh())
            .collect()
    }

    fn heads(&self, h: &[f64]) -> (f64, Vec<f64>) {
        let z = dot(self.params.values(self.layout.blank_out.w), h)
            + self.params.values(self.layout.blank_out.b)[0];
        let mut labels = vec![0.0; self.vocab.size()];
        self.layout.label_out.forward(&self.params, h, &mut labels);
        log_softmax_in_place(&mut labels);
        (z, labels)
    }

    fn dec_proj(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.config.joint_dim];
        self.layout.joint_dec.forward(&self.params, g, &mut out);
        out
    }

    fn enc_proj(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.config.joint_dim];
        matvec_into(self.params.values(self.layout.joint_enc), f, &mut out);
        out
    }

    /// Joint network: returns the blank probability and the label
    /// log-posteriors over the vocabulary (blank excluded).
    pub fn hat_joint(&self, f: &[f64], g: &[f64]) -> Result<(f64, Vec<f64>)> {
        if f.len() != self.config.encoder.d_f || g.len() != self.config.decoder.embed_dim {
            return Err(Error::Dimension(format!(
                "joint inputs have lengths {} and {}, expected {} and {}",
                f.len(),
                g.len(),
                self.config.encoder.d_f,
                self.config.decoder.embed_dim
            )));
        }
        let h = self.hidden(&self.enc_proj(f), &self.dec_proj(g));
        let (z, labels) = self.heads(&h);
        Ok((sigmoid(z), labels))
    }

    /// Internal LM estimate: the label head with the acoustic term removed.
    pub fn hat_ilm_log_probs(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.config.decoder.embed_dim {
            return Err(Error::Dimension(format!(
                "decoder embedding has length {}, expected {}",
                g.len(),
                self.config.decoder.embed_dim
            )));
        }
        Ok(self.ilm_unchecked(g))
    }

    fn ilm_unchecked(&self, g: &[f64]) -> Vec<f64> {
        let zero = vec![0.0; self.config.joint_dim];
        let h = self.hidden(&zero, &self.dec_proj(g));
        self.heads(&h).1
    }
}

pub struct HatCache {
    enc: EncoderCache,
    labels: Vec<TokenId>,
    contexts: Vec<[TokenId; 2]>,
    g: Vec<f64>,
    hidden: Vec<f64>,
    blank_prob: Vec<f64>,
    label_probs: Vec<f64>,
}

impl Transducer for HatModel {
    type Frame = HatFrame;
    type Context = HatContext;
    type Cache = HatCache;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn frames(&self, x: &Tensor) -> Result<Vec<HatFrame>> {
        let cache = self.layout.encoder.forward(&self.params, x)?;
        Ok(cache
            .output()
            .chunks(self.config.encoder.d_f)
            .map(|f| HatFrame {
                enc_proj: self.enc_proj(f),
            })
            .collect())
    }

    fn context(&self, ctx: [TokenId; 2]) -> Result<HatContext> {
        self.layout.decoder.check_context(ctx)?;
        let g = self.layout.decoder.forward(&self.params, ctx);
        Ok(HatContext {
            dec_proj: self.dec_proj(&g),
            ilm: self.ilm_unchecked(&g),
        })
    }

    fn node(&self, frame: &HatFrame, ctx: &HatContext) -> NodeScores {
        let h = self.hidden(&frame.enc_proj, &ctx.dec_proj);
        let (z, labels) = self.heads(&h);
        NodeScores {
            log_blank: log_sigmoid(z),
            log_emit: log_sigmoid(-z),
            label_log_probs: labels,
        }
    }

    fn internal_lm<'a>(&self, ctx: &'a HatContext) -> &'a [f64] {
        &ctx.ilm
    }

    fn training_arcs(&self, x: &Tensor, y: &[TokenId]) -> Result<(ArcScores, HatCache)> {
        self.vocab.check_all(y)?;
        let enc = self.layout.encoder.forward(&self.params, x)?;
        let (t_len, u_len) = (enc.frames, y.len());
        let v = self.vocab.size();
        let (df, dh, dg) = (
            self.config.encoder.d_f,
            self.config.joint_dim,
            self.config.decoder.embed_dim,
        );
        let sos = self.vocab.sos_id();
        let contexts: Vec<[TokenId; 2]> =
            (0..=u_len).map(|u| bigram_context(&y[..u], sos)).collect();
        let f = enc.output();
        let enc_proj: Vec<Vec<f64>> = f.chunks(df).map(|ft| self.enc_proj(ft)).collect();
        let mut g = Vec::with_capacity((u_len + 1) * dg);
        let mut dec_proj = Vec::with_capacity(u_len + 1);
        for &ctx in &contexts {
            let gu = self.layout.decoder.forward(&self.params, ctx);
            dec_proj.push(self.dec_proj(&gu));
            g.extend(gu);
        }

        let mut arcs = ArcScores::new(t_len, u_len);
        let mut hidden = vec![0.0; t_len * (u_len + 1) * dh];
        let mut blank_prob = vec![0.0; t_len * (u_len + 1)];
        let mut label_probs = vec![0.0; t_len * u_len * v];
        for t in 0..t_len {
            for u in 0..=u_len {
                let node = t * (u_len + 1) + u;
                let h = self.hidden(&enc_proj[t], &dec_proj[u]);
                let z = dot(self.params.values(self.layout.blank_out.w), &h)
                    + self.params.values(self.layout.blank_out.b)[0];
                blank_prob[node] = sigmoid(z);
                arcs.set_blank(t + 1, u, log_sigmoid(z));
                if u < u_len {
                    let mut s = vec![0.0; v];
                    self.layout.label_out.forward(&self.params, &h, &mut s);
                    log_softmax_in_place(&mut s);
                    let base = (t * u_len + u) * v;
                    for (p, lp) in label_probs[base..base + v].iter_mut().zip(&s) {
                        *p = lp.exp();
                    }
                    arcs.set_label(t + 1, u, log_sigmoid(-z) + s[y[u]]);
                }
                hidden[node * dh..(node + 1) * dh].copy_from_slice(&h);
            }
        }
        Ok((
            arcs,
            HatCache {
                enc,
                labels: y.to_vec(),
                contexts,
                g,
                hidden,
                blank_prob,
                label_probs,
            },
        ))
    }

    fn backprop(&self, c: &HatCache, occ: &Occupancy, grads: &mut ParameterSet) {
        let (t_len, u_len) = (c.enc.frames, c.labels.len());
        let v = self.vocab.size();
        let (df, dh, dg) = (
            self.config.encoder.d_f,
            self.config.joint_dim,
            self.config.decoder.embed_dim,
        );
        let l = &self.layout;
        let w = self.params.values(l.blank_out.w).to_vec();

        let mut d_enc_proj = vec![0.0; t_len * dh];
        let mut d_dec_proj = vec![0.0; (u_len + 1) * dh];
        let mut dh_buf = vec![0.0; dh];
        let mut ds = vec![0.0; v];
        for t in 0..t_len {
            for u in 0..=u_len {
                let node = t * (u_len + 1) + u;
                let gb = occ.blank(t + 1, u);
                let gl = if u < u_len { occ.label(t + 1, u) } else { 0.0 };
                if gb == 0.0 && gl == 0.0 {
                    continue;
                }
                let b = c.blank_prob[node];
                let dz = gb * (1.0 - b) - gl * b;
                let h = &c.hidden[node * dh..(node + 1) * dh];
                for k in 0..dh {
                    dh_buf[k] = dz * w[k];
                }
                for (g, hk) in grads.values_mut(l.blank_out.w).iter_mut().zip(h) {
                    *g += dz * hk;
                }
                grads.values_mut(l.blank_out.b)[0] += dz;
                if u < u_len && gl != 0.0 {
                    let base = (t * u_len + u) * v;
                    let p = &c.label_probs[base..base + v];
                    for k in 0..v {
                        ds[k] = gl * ((k == c.labels[u]) as u8 as f64 - p[k]);
                    }
                    l.label_out
                        .backward(&self.params, h, &ds, grads, Some(&mut dh_buf));
                }
                for k in 0..dh {
                    let dpre = dh_buf[k] * (1.0 - h[k] * h[k]);
                    d_enc_proj[t * dh + k] += dpre;
                    d_dec_proj[u * dh + k] += dpre;
                }
            }
        }

        let f = c.enc.output();
        let mut d_f = vec![0.0; t_len * df];
        for t in 0..t_len {
            let de = &d_enc_proj[t * dh..(t + 1) * dh];
            outer_acc(grads.values_mut(l.joint_enc), de, &f[t * df..(t + 1) * df]);
            matvec_t_acc(
                self.params.values(l.joint_enc),
                de,
                &mut d_f[t * df..(t + 1) * df],
            );
        }
        l.encoder.backward(&self.params, &c.enc, &d_f, grads);

        let mut dgu = vec![0.0; dg];
        for (u, &ctx) in c.contexts.iter().enumerate() {
            dgu.iter_mut().for_each(|x| *x = 0.0);
            l.joint_dec.backward(
                &self.params,
                &c.g[u * dg..(u + 1) * dg],
                &d_dec_proj[u * dh..(u + 1) * dh],
                grads,
                Some(&mut dgu),
            );
            l.decoder.backward(&self.params, ctx, &dgu, grads);
        }
    }
}
