//! Column-based cross attention.
//!
//! Each image column `j` owns a learnable query `Q[j] ∈ R^C`. The keys of that
//! column (features plus row encoding, passed through a small pointwise MLP)
//! are scored against the query and normalised with a softmax over the rows
//! of the column only. The resulting scalar per pixel re-weights the backbone
//! feature across all channels.
//!
//! Logits are not scaled by `1/√C`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::graph::{DiffGraph, Var};
use crate::ops;
use crate::posenc::{self, PositionalEncoding};
use crate::tensor::Tensor;

pub const QUERY_INIT_STD: f64 = 0.02;

/// One learnable query row per feature-map column, `W×C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnQueries {
    q: Tensor,
}

impl ColumnQueries {
    pub fn new(q: Tensor) -> Result<Self> {
        q.expect_rank(2, "ColumnQueries")?;
        Ok(Self { q })
    }

    pub fn init<R: Rng + ?Sized>(width: usize, channels: usize, rng: &mut R) -> Self {
        Self {
            q: Tensor::normal(&[width, channels], QUERY_INIT_STD, rng),
        }
    }

    pub fn zeros(width: usize, channels: usize) -> Self {
        Self {
            q: Tensor::zeros(&[width, channels]),
        }
    }

    pub fn width(&self) -> usize {
        self.q.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.q.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.q
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.q
    }
}

/// Pointwise key encoder: 1×1 conv → ReLU → 1×1 conv, channel count preserved.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyEncoder {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl KeyEncoder {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        Self {
            w1: Tensor::uniform(&[channels, channels], -bound, bound, rng),
            b1: Tensor::zeros(&[channels]),
            w2: Tensor::uniform(&[channels, channels], -bound, bound, rng),
            b2: Tensor::zeros(&[channels]),
        }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            w1: Tensor::identity(channels),
            b1: Tensor::zeros(&[channels]),
            w2: Tensor::identity(channels),
            b2: Tensor::zeros(&[channels]),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[channels, channels]),
            b1: Tensor::zeros(&[channels]),
            w2: Tensor::zeros(&[channels, channels]),
            b2: Tensor::zeros(&[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.w1.shape()[0]
    }

    /// Applies the MLP to an already position-encoded map.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(*x.shape().last().unwrap_or(&0))?;
        let hidden = ops::relu(&ops::channel_linear(x, &self.w1, &self.b1)?);
        ops::channel_linear(&hidden, &self.w2, &self.b2)
    }

    fn check(&self, c: usize) -> Result<()> {
        for w in [&self.w1, &self.w2] {
            if w.shape() != [c, c] {
                return Err(Error::shape("KeyEncoder", w.shape(), &[c, c]));
            }
        }
        for b in [&self.b1, &self.b2] {
            if b.shape() != [c] {
                return Err(Error::shape("KeyEncoder", b.shape(), &[c]));
            }
        }
        Ok(())
    }
}

/// Per-pixel attention scalars, `H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    w: Tensor,
}

impl AttentionWeights {
    pub fn new(w: Tensor) -> Result<Self> {
        w.expect_rank(2, "AttentionWeights")?;
        Ok(Self { w })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.w
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.w.get(&[row, col])
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let (h, w) = (self.w.shape()[0], self.w.shape()[1]);
        (0..w)
            .map(|j| (0..h).map(|i| self.w.data()[i * w + j]).sum())
            .collect()
    }
}

/// `F_k = proj2(relu(proj1(F_b + P)))`.
pub fn encode_keys(features: &FeatureMap, pe: &PositionalEncoding, enc: &KeyEncoder) -> Result<FeatureMap> {
    enc.check(features.channels())?;
    let with_pe = posenc::add_encoding(features, pe)?;
    FeatureMap::new(enc.forward(with_pe.tensor())?)
}

/// Per-column softmax of `⟨F_k[i][j], Q[j]⟩` over the rows `i`.
pub fn column_attention(keys: &FeatureMap, queries: &ColumnQueries) -> Result<AttentionWeights> {
    let logits = column_logits(keys.tensor(), queries.tensor())?;
    AttentionWeights::new(softmax_columns(&logits))
}

/// Single query shared by every pixel, softmax over the whole plane.
pub fn global_attention(keys: &FeatureMap, query: &Tensor) -> Result<AttentionWeights> {
    let logits = global_logits(keys.tensor(), query)?;
    AttentionWeights::new(ops::softmax(&logits))
}

/// `F_c[i][j][c] = W[i][j] · F_b[i][j][c]`.
pub fn apply_weights(features: &FeatureMap, weights: &AttentionWeights) -> Result<FeatureMap> {
    FeatureMap::new(scale_channels(weights.tensor(), features.tensor())?)
}

/// Multiply-accumulates performed by [`column_attention`] plus
/// [`apply_weights`]: one `C`-long dot product and one `C`-wide scaling per pixel.
pub fn cca_cost_model(h: usize, w: usize, c: usize) -> u64 {
    2 * (h as u64) * (w as u64) * (c as u64)
}

pub(crate) fn column_logits(keys: &Tensor, queries: &Tensor) -> Result<Tensor> {
    keys.expect_rank(3, "column_attention")?;
    let (h, w, c) = keys.dims3();
    if queries.shape() != [w, c] {
        return Err(Error::shape("column_attention", keys.shape(), queries.shape()));
    }
    let (k, q) = (keys.data(), queries.data());
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let off = (i * w + j) * c;
            out[i * w + j] = ops::dot(&k[off..off + c], &q[j * c..(j + 1) * c]);
        }
    }
    Ok(Tensor::from_parts(vec![h, w], out))
}

pub(crate) fn global_logits(keys: &Tensor, query: &Tensor) -> Result<Tensor> {
    keys.expect_rank(3, "global_attention")?;
    let (h, w, c) = keys.dims3();
    if query.shape() != [c] {
        return Err(Error::shape("global_attention", keys.shape(), query.shape()));
    }
    let out = keys.data().chunks(c).map(|px| ops::dot(px, query.data())).collect();
    Ok(Tensor::from_parts(vec![h, w], out))
}

/// Softmax down each column of an `H×W` matrix. Columns are normalised
/// independently, so a change in one column cannot reach another.
pub(crate) fn softmax_columns(x: &Tensor) -> Tensor {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; h * w];
    let mut col = vec![0.0; h];
    for j in 0..w {
        for i in 0..h {
            col[i] = x.data()[i * w + j];
        }
        ops::softmax_in_place(&mut col);
        for i in 0..h {
            out[i * w + j] = col[i];
        }
    }
    Tensor::from_parts(vec![h, w], out)
}

pub(crate) fn scale_channels(weights: &Tensor, features: &Tensor) -> Result<Tensor> {
    features.expect_rank(3, "apply_weights")?;
    let (h, w, c) = features.dims3();
    if weights.shape() != [h, w] {
        return Err(Error::shape("apply_weights", features.shape(), weights.shape()));
    }
    let mut out = features.data().to_vec();
    for (px, &s) in out.chunks_mut(c).zip(weights.data()) {
        for v in px {
            *v *= s;
        }
    }
    Ok(Tensor::from_parts(vec![h, w, c], out))
}

// Tape versions.

pub fn encode_keys_var(
    g: &mut DiffGraph,
    features: Var,
    pe: &PositionalEncoding,
    enc: &KeyEncoderVars,
) -> Result<Var> {
    let with_pe = posenc::add_encoding_var(g, features, pe)?;
    let hidden = g.channel_linear(with_pe, enc.w1, enc.b1)?;
    let hidden = g.relu(hidden);
    g.channel_linear(hidden, enc.w2, enc.b2)
}

/// Tape handles for the four key-encoder tensors.
#[derive(Clone, Copy, Debug)]
pub struct KeyEncoderVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl KeyEncoderVars {
    pub fn params(g: &mut DiffGraph, enc: &KeyEncoder) -> Self {
        Self {
            w1: g.param(enc.w1.clone()),
            b1: g.param(enc.b1.clone()),
            w2: g.param(enc.w2.clone()),
            b2: g.param(enc.b2.clone()),
        }
    }
}

pub fn column_logits_var(g: &mut DiffGraph, keys: Var, queries: Var) -> Result<Var> {
    let value = column_logits(g.value(keys), g.value(queries))?;
    Ok(g.custom(
        value,
        &[keys, queries],
        Box::new(|args| {
            let [k, q] = args.inputs else { unreachable!() };
            let (h, w, c) = k.dims3();
            let gl = args.grad.data();
            let dk = args.needs[0].then(|| {
                let mut dk = vec![0.0; h * w * c];
                for i in 0..h {
                    for j in 0..w {
                        let s = gl[i * w + j];
                        let off = (i * w + j) * c;
                        for (d, qv) in dk[off..off + c].iter_mut().zip(&q.data()[j * c..(j + 1) * c]) {
                            *d = s * qv;
                        }
                    }
                }
                Tensor::from_parts(vec![h, w, c], dk)
            });
            let dq = args.needs[1].then(|| {
                let mut dq = vec![0.0; w * c];
                for i in 0..h {
                    for j in 0..w {
                        let s = gl[i * w + j];
                        let off = (i * w + j) * c;
                        for (d, kv) in dq[j * c..(j + 1) * c].iter_mut().zip(&k.data()[off..off + c]) {
                            *d += s * kv;
                        }
                    }
                }
                Tensor::from_parts(vec![w, c], dq)
            });
            vec![dk, dq]
        }),
    ))
}

pub fn softmax_columns_var(g: &mut DiffGraph, logits: Var) -> Result<Var> {
    g.value(logits).expect_rank(2, "softmax_columns")?;
    let value = softmax_columns(g.value(logits));
    Ok(g.custom(
        value,
        &[logits],
        Box::new(|args| {
            let s = args.output;
            let (h, w) = (s.shape()[0], s.shape()[1]);
            let mut out = vec![0.0; h * w];
            let mut sc = vec![0.0; h];
            let mut gc = vec![0.0; h];
            for j in 0..w {
                for i in 0..h {
                    sc[i] = s.data()[i * w + j];
                    gc[i] = args.grad.data()[i * w + j];
                }
                for (i, v) in ops::softmax_vjp(&sc, &gc).into_iter().enumerate() {
                    out[i * w + j] = v;
                }
            }
            vec![Some(Tensor::from_parts(vec![h, w], out))]
        }),
    ))
}

pub fn column_attention_var(g: &mut DiffGraph, keys: Var, queries: Var) -> Result<Var> {
    let logits = column_logits_var(g, keys, queries)?;
    softmax_columns_var(g, logits)
}

pub fn global_logits_var(g: &mut DiffGraph, keys: Var, query: Var) -> Result<Var> {
    let value = global_logits(g.value(keys), g.value(query))?;
    Ok(g.custom(
        value,
        &[keys, query],
        Box::new(|args| {
            let [k, q] = args.inputs else { unreachable!() };
            let c = q.numel();
            let gl = args.grad.data();
            let dk = args.needs[0].then(|| {
                let mut dk = Vec::with_capacity(k.numel());
                for &s in gl {
                    dk.extend(q.data().iter().map(|qv| s * qv));
                }
                Tensor::from_parts(k.shape().to_vec(), dk)
            });
            let dq = args.needs[1].then(|| {
                let mut dq = vec![0.0; c];
                for (px, &s) in k.data().chunks(c).zip(gl) {
                    for (d, kv) in dq.iter_mut().zip(px) {
                        *d += s * kv;
                    }
                }
                Tensor::from_parts(vec![c], dq)
            });
            vec![dk, dq]
        }),
    ))
}

pub fn global_attention_var(g: &mut DiffGraph, keys: Var, query: Var) -> Result<Var> {
    let logits = global_logits_var(g, keys, query)?;
    Ok(g.softmax(logits))
}

pub fn apply_weights_var(g: &mut DiffGraph, features: Var, weights: Var) -> Result<Var> {
    let value = scale_channels(g.value(weights), g.value(features))?;
    Ok(g.custom(
        value,
        &[features, weights],
        Box::new(|args| {
            let [f, w] = args.inputs else { unreachable!() };
            let c = f.shape()[2];
            let df = args.needs[0].then(|| scale_channels(w, args.grad).expect("shape"));
            let dw = args.needs[1].then(|| {
                let v = f
                    .data()
                    .chunks(c)
                    .zip(args.grad.data().chunks(c))
                    .map(|(fp, gp)| ops::dot(fp, gp))
                    .collect();
                Tensor::from_parts(w.shape().to_vec(), v)
            });
            vec![df, dw]
        }),
    ))
}
