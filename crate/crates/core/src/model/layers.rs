use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::vocab::TokenId;
use crate::error::{Error, Result};
use crate::numerics::{affine_into, matvec_t_acc, outer_acc, Group, ParameterSet, Tensor};

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-s, s).expect("finite bound");
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    )
    .expect("positive extents")
}

pub(crate) fn register_matrix<R: Rng>(
    params: &mut ParameterSet,
    name: &str,
    group: Group,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<usize> {
    params.insert(name, group, glorot(rng, rows, cols))
}

fn expect_shape(params: &ParameterSet, name: &str, shape: &[usize]) -> Result<usize> {
    let id = params
        .id(name)
        .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))?;
    if params.tensor(id).shape() != shape {
        return Err(Error::Dimension(format!(
            "parameter {name:?} has shape {:?}, expected {shape:?}",
            params.tensor(id).shape()
        )));
    }
    Ok(id)
}

/// `y = W x + b` with `W: out x inp`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn register<R: Rng>(
        params: &mut ParameterSet,
        prefix: &str,
        group: Group,
        inp: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = params.insert(format!("{prefix}.weight"), group, glorot(rng, out, inp))?;
        let b = params.insert(format!("{prefix}.bias"), group, Tensor::zeros(&[out]))?;
        Ok(Self { w, b, inp, out })
    }

    pub fn bind(params: &ParameterSet, prefix: &str, inp: usize, out: usize) -> Result<Self> {
        Ok(Self {
            w: expect_shape(params, &format!("{prefix}.weight"), &[out, inp])?,
            b: expect_shape(params, &format!("{prefix}.bias"), &[out])?,
            inp,
            out,
        })
    }

    pub fn forward(&self, params: &ParameterSet, x: &[f64], y: &mut [f64]) {
        affine_into(params.values(self.w), params.values(self.b), x, y);
    }

    /// Accumulates weight/bias gradients for upstream `dy` at input `x`, and
    /// adds `Wᵀ dy` into `dx` when given.
    pub fn backward(
        &self,
        params: &ParameterSet,
        x: &[f64],
        dy: &[f64],
        grads: &mut ParameterSet,
        dx: Option<&mut [f64]>,
    ) {
        outer_acc(grads.values_mut(self.w), dy, x);
        for (g, d) in grads.values_mut(self.b).iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            matvec_t_acc(params.values(self.w), dy, dx);
        }
    }
}

/// Configuration of a two-label-context embedding decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingDecoderConfig {
    pub embed_dim: usize,
    pub tied_tables: bool,
}

/// Looks up `y_{u-2}` and `y_{u-1}` in one table per position (or one shared
/// table), concatenates, and applies an affine projection back down to
/// `embed_dim`. No activation follows the projection.
#[derive(Debug, Clone)]
pub(crate) struct EmbeddingDecoder {
    pub tables: [usize; 2],
    pub proj: Linear,
    pub dim: usize,
    pub rows: usize,
}

impl EmbeddingDecoder {
    pub fn register<R: Rng>(
        params: &mut ParameterSet,
        prefix: &str,
        group: Group,
        cfg: EmbeddingDecoderConfig,
        rows: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.embed_dim;
        let normal = Normal::new(0.0, 0.5).expect("valid std");
        let mut table = || {
            Tensor::matrix(rows, d, (0..rows * d).map(|_| normal.sample(rng)).collect())
                .expect("positive extents")
        };
        let tables = if cfg.tied_tables {
            let id = params.insert(format!("{prefix}.table"), group, table())?;
            [id, id]
        } else {
            let a = params.insert(format!("{prefix}.table0"), group, table())?;
            let b = params.insert(format!("{prefix}.table1"), group, table())?;
            [a, b]
        };
        let proj = Linear::register(params, &format!("{prefix}.proj"), group, 2 * d, d, rng)?;
        Ok(Self {
            tables,
            proj,
            dim: d,
            rows,
        })
    }

    pub fn bind(
        params: &ParameterSet,
        prefix: &str,
        cfg: EmbeddingDecoderConfig,
        rows: usize,
    ) -> Result<Self> {
        let d = cfg.embed_dim;
        let tables = if cfg.tied_tables {
            let id = expect_shape(params, &format!("{prefix}.table"), &[rows, d])?;
            [id, id]
        } else {
            [
                expect_shape(params, &format!("{prefix}.table0"), &[rows, d])?,
                expect_shape(params, &format!("{prefix}.table1"), &[rows, d])?,
            ]
        };
        let proj = Linear::bind(params, &format!("{prefix}.proj"), 2 * d, d)?;
        Ok(Self {
            tables,
            proj,
            dim: d,
            rows,
        })
    }

    pub fn check_context(&self, ctx: [TokenId; 2]) -> Result<()> {
        for &c in &ctx {
            if c >= self.rows {
                return Err(Error::Vocab(format!(
                    "context token id {c} outside table of {} rows",
                    self.rows
                )));
            }
        }
        Ok(())
    }

    fn gather(&self, params: &ParameterSet, ctx: [TokenId; 2]) -> Vec<f64> {
        let d = self.dim;
        let mut cat = Vec::with_capacity(2 * d);
        for (pos, &tok) in ctx.iter().enumerate() {
            cat.extend_from_slice(&params.values(self.tables[pos])[tok * d..(tok + 1) * d]);
        }
        cat
    }

    /// Caller guarantees `ctx` is in range (see [`Self::check_context`]).
    pub fn forward(&self, params: &ParameterSet, ctx: [TokenId; 2]) -> Vec<f64> {
        let cat = self.gather(params, ctx);
        let mut out = vec![0.0; self.dim];
        self.proj.forward(params, &cat, &mut out);
        out
    }

    pub fn backward(
        &self,
        params: &ParameterSet,
        ctx: [TokenId; 2],
        d_out: &[f64],
        grads: &mut ParameterSet,
    ) {
        let d = self.dim;
        let cat = self.gather(params, ctx);
        let mut d_cat = vec![0.0; 2 * d];
        self.proj
            .backward(params, &cat, d_out, grads, Some(&mut d_cat));
        for (pos, &tok) in ctx.iter().enumerate() {
            let row = &mut grads.values_mut(self.tables[pos])[tok * d..(tok + 1) * d];
            for (g, v) in row.iter_mut().zip(&d_cat[pos * d..(pos + 1) * d]) {
                *g += v;
            }
        }
    }
}

/// Acoustic encoder shape: a stack of affine+tanh layers over a window of
/// `2 * context + 1` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub d_x: usize,
    pub context: usize,
    pub layers: usize,
    pub d_f: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_x: 8,
            context: 1,
            layers: 2,
            d_f: 64,
        }
    }
}

impl EncoderConfig {
    pub fn window(&self) -> usize {
        2 * self.context + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 || self.d_f == 0 || self.layers == 0 {
            return Err(Error::Config(format!("invalid encoder config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    pub cfg: EncoderConfig,
    pub layers: Vec<Linear>,
}

/// Per-layer activations for one utterance; `acts.last()` is the encoder output.
#[derive(Debug, Clone)]
pub(crate) struct EncoderCache {
    pub frames: usize,
    pub input: Vec<f64>,
    pub acts: Vec<Vec<f64>>,
}

impl EncoderCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }
}

impl Encoder {
    pub fn register<R: Rng>(
        params: &mut ParameterSet,
        cfg: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut inp = cfg.window() * cfg.d_x;
        for i in 0..cfg.layers {
            layers.push(Linear::register(
                params,
                &format!("encoder.layer{i}"),
                Group::Encoder,
                inp,
                cfg.d_f,
                rng,
            )?);
            inp = cfg.d_f;
        }
        Ok(Self { cfg, layers })
    }

    pub fn bind(params: &ParameterSet, cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut inp = cfg.window() * cfg.d_x;
        for i in 0..cfg.layers {
            layers.push(Linear::bind(
                params,
                &format!("encoder.layer{i}"),
                inp,
                cfg.d_f,
            )?);
            inp = cfg.d_f;
        }
        Ok(Self { cfg, layers })
    }

    pub fn forward(&self, params: &ParameterSet, x: &Tensor) -> Result<EncoderCache> {
        let c = self.cfg;
        if x.shape().len() != 2 || x.shape()[1] != c.d_x {
            return Err(Error::Config(format!(
                "features have shape {:?}, encoder expects [T, {}]",
                x.shape(),
                c.d_x
            )));
        }
        let frames = x.rows();
        let win = c.window() * c.d_x;
        let mut input = vec![0.0; frames * win];
        for t in 0..frames {
            for k in 0..c.window() {
                let src = t as isize + k as isize - c.context as isize;
                if src < 0 || src >= frames as isize {
                    continue;
                }
                input[t * win + k * c.d_x..t * win + (k + 1) * c.d_x]
                    .copy_from_slice(x.row(src as usize));
            }
        }
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev: &[f64] = acts.last().map(Vec::as_slice).unwrap_or(&input);
            let mut out = vec![0.0; frames * layer.out];
            for t in 0..frames {
                let o = &mut out[t * layer.out..(t + 1) * layer.out];
                layer.forward(params, &prev[t * layer.inp..(t + 1) * layer.inp], o);
                for v in o.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(out);
        }
        Ok(EncoderCache {
            frames,
            input,
            acts,
        })
    }

    /// `d_out` is the gradient on the encoder output, `T x d_f`.
    pub fn backward(
        &self,
        params: &ParameterSet,
        cache: &EncoderCache,
        d_out: &[f64],
        grads: &mut ParameterSet,
    ) {
        let frames = cache.frames;
        let mut d = d_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let act = &cache.acts[li];
            for (g, a) in d.iter_mut().zip(act) {
                *g *= 1.0 - a * a;
            }
            let prev: &[f64] = if li == 0 {
                &cache.input
            } else {
                &cache.acts[li - 1]
            };
            let mut d_prev = if li == 0 {
                Vec::new()
            } else {
                vec![0.0; frames * layer.inp]
            };
            for t in 0..frames {
                let x = &prev[t * layer.inp..(t + 1) * layer.inp];
                let dy = &d[t * layer.out..(t + 1) * layer.out];
                let dx = (li > 0).then(|| &mut d_prev[t * layer.inp..(t + 1) * layer.inp]);
                layer.backward(params, x, dy, grads, dx);
            }
            d = d_prev;
        }
    }
}
