//! Forward-only temporal instance resampler.
//!
//! Each layer runs an inter-frame module (per-instance temporal
//! self-attention, a width-5 depthwise 1-D convolution over time with a
//! shortcut from the attention output, then layernorm) followed by an
//! intra-frame module (per-frame cross-attention to context tokens, instance
//! self-attention, layernorm). Layer l attends context scale l % 3.
//!
//! Attention is single-head; there is no backward pass.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{softmax_inplace, Mat};

pub const CONV_WIDTH: usize = 5;

/// N instances x T frames x d channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVolume {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl QueryVolume {
    pub fn zeros(n: usize, t: usize, d: usize) -> Self {
        QueryVolume {
            n,
            t,
            d,
            data: vec![0.0; n * t * d],
        }
    }

    pub fn get(&self, i: usize, t: usize) -> &[f64] {
        let base = (i * self.t + t) * self.d;
        &self.data[base..base + self.d]
    }

    pub fn get_mut(&mut self, i: usize, t: usize) -> &mut [f64] {
        let base = (i * self.t + t) * self.d;
        &mut self.data[base..base + self.d]
    }

    /// T x d matrix for one instance.
    pub fn instance_slice(&self, i: usize) -> Mat {
        let mut m = Mat::zeros(self.t, self.d);
        for t in 0..self.t {
            m.row_mut(t).copy_from_slice(self.get(i, t));
        }
        m
    }

    /// N x d matrix for one frame.
    pub fn frame_slice(&self, t: usize) -> Mat {
        let mut m = Mat::zeros(self.n, self.d);
        for i in 0..self.n {
            m.row_mut(i).copy_from_slice(self.get(i, t));
        }
        m
    }
}

/// Per-scale, per-frame context token matrices (tokens x d).
#[derive(Debug, Clone)]
pub struct ContextFeatures {
    pub scales: [Vec<Mat>; 3],
}

#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TirLayer {
    pub temporal_attn: AttentionWeights,
    /// depthwise kernel, d x CONV_WIDTH
    pub conv_kernel: Mat,
    pub conv_bias: Vec<f64>,
    pub inter_norm: LayerNormParams,
    pub cross_attn: AttentionWeights,
    pub self_attn: AttentionWeights,
    pub intra_norm: LayerNormParams,
}

#[derive(Debug, Clone)]
pub struct TirWeights {
    pub d: usize,
    pub layers: Vec<TirLayer>,
}

/// Single-head scaled dot-product attention with residual:
/// out = x_q + softmax(Q K^T / sqrt(d)) V Wo.
fn attention(x_q: &Mat, x_kv: &Mat, w: &AttentionWeights) -> Mat {
    let d = x_q.cols;
    let q = x_q.matmul(&w.wq);
    let k = x_kv.matmul(&w.wk);
    let v = x_kv.matmul(&w.wv).matmul(&w.wo);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = x_q.clone();
    let mut scores = vec![0.0; x_kv.rows];
    for i in 0..x_q.rows {
        for (j, s) in scores.iter_mut().enumerate() {
            *s = crate::linalg::dot(q.row(i), k.row(j)) * scale;
        }
        softmax_inplace(&mut scores);
        let row = out.row_mut(i);
        for (j, &p) in scores.iter().enumerate() {
            crate::linalg::axpy(p, v.row(j), row);
        }
    }
    out
}

/// Attention output without the residual; used by tests probing the raw map.
pub fn attention_pre_residual(x_q: &Mat, x_kv: &Mat, w: &AttentionWeights) -> Mat {
    let mut a = attention(x_q, x_kv, w);
    for i in 0..x_q.rows {
        for (o, x) in a.row_mut(i).iter_mut().zip(x_q.row(i)) {
            *o -= x;
        }
    }
    a
}

/// Depthwise width-5 stride-1 convolution over time with replicate padding.
fn conv1d_same(x: &Mat, kernel: &Mat, bias: &[f64]) -> Mat {
    let t = x.rows;
    let d = x.cols;
    let half = CONV_WIDTH / 2;
    let mut out = Mat::zeros(t, d);
    for ti in 0..t {
        for c in 0..d {
            let mut acc = bias[c];
            for k in 0..CONV_WIDTH {
                let src = (ti + k).saturating_sub(half).min(t - 1);
                acc += kernel.data[c * CONV_WIDTH + k] * x.data[src * d + c];
            }
            out.data[ti * d + c] = acc;
        }
    }
    out
}

fn layernorm_row(row: &mut [f64], ln: &LayerNormParams) {
    let d = row.len() as f64;
    let mean: f64 = row.iter().sum::<f64>() / d;
    let var: f64 = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + 1e-5).sqrt();
    for (i, x) in row.iter_mut().enumerate() {
        *x = (*x - mean) * inv * ln.gain[i] + ln.bias[i];
    }
}

fn check_dims(q: &QueryVolume, weights_d: usize) -> Result<()> {
    if q.d != weights_d {
        return Err(Error::ShapeMismatch(format!(
            "query dim {} vs weight dim {}",
            q.d, weights_d
        )));
    }
    Ok(())
}

/// Inter-frame module: per instance, temporal self-attention, depthwise
/// convolution over time, shortcut from the attention output, layernorm.
pub fn inter_frame_forward(queries: &QueryVolume, layer: &TirLayer) -> Result<QueryVolume> {
    check_dims(queries, layer.conv_bias.len())?;
    let mut out = QueryVolume::zeros(queries.n, queries.t, queries.d);
    for i in 0..queries.n {
        let x = queries.instance_slice(i);
        let a = attention(&x, &x, &layer.temporal_attn);
        let c = conv1d_same(&a, &layer.conv_kernel, &layer.conv_bias);
        for t in 0..queries.t {
            let row = out.get_mut(i, t);
            for (k, o) in row.iter_mut().enumerate() {
                *o = a.data[t * queries.d + k] + c.data[t * queries.d + k];
            }
            layernorm_row(row, &layer.inter_norm);
        }
    }
    Ok(out)
}

/// Inter-frame output before the final layernorm; exposed for the
/// convolution-locality diagnostic.
pub fn inter_frame_pre_norm(queries: &QueryVolume, layer: &TirLayer) -> Result<QueryVolume> {
    check_dims(queries, layer.conv_bias.len())?;
    let mut out = QueryVolume::zeros(queries.n, queries.t, queries.d);
    for i in 0..queries.n {
        let x = queries.instance_slice(i);
        let a = attention(&x, &x, &layer.temporal_attn);
        let c = conv1d_same(&a, &layer.conv_kernel, &layer.conv_bias);
        for t in 0..queries.t {
            let row = out.get_mut(i, t);
            for (k, o) in row.iter_mut().enumerate() {
                *o = a.data[t * queries.d + k] + c.data[t * queries.d + k];
            }
        }
    }
    Ok(out)
}

/// Intra-frame module: per frame, cross-attention to the frame's context
/// tokens at `scale`, then self-attention over instances, then layernorm.
pub fn intra_frame_forward(
    queries: &QueryVolume,
    context: &ContextFeatures,
    scale: usize,
    layer: &TirLayer,
) -> Result<QueryVolume> {
    check_dims(queries, layer.conv_bias.len())?;
    if scale >= 3 {
        return Err(Error::InvalidConfig(format!("scale {scale} out of range")));
    }
    let frames = &context.scales[scale];
    if frames.len() != queries.t {
        return Err(Error::ShapeMismatch(format!(
            "context frames {} vs queries {}",
            frames.len(),
            queries.t
        )));
    }
    let mut out = QueryVolume::zeros(queries.n, queries.t, queries.d);
    for t in 0..queries.t {
        let x = queries.frame_slice(t);
        let mem = &frames[t];
        if mem.cols != queries.d {
            return Err(Error::ShapeMismatch("context token dim".into()));
        }
        let x1 = attention(&x, mem, &layer.cross_attn);
        let x2 = attention(&x1, &x1, &layer.self_attn);
        for i in 0..queries.n {
            let row = out.get_mut(i, t);
            row.copy_from_slice(x2.row(i));
            layernorm_row(row, &layer.intra_norm);
        }
    }
    Ok(out)
}

/// Full stack: layer l applies the inter-frame module then the intra-frame
/// module with context scale l % 3.
pub fn tir_forward(
    queries: &QueryVolume,
    context: &ContextFeatures,
    weights: &TirWeights,
) -> Result<QueryVolume> {
    if weights.layers.is_empty() {
        return Err(Error::InvalidConfig("need at least one layer".into()));
    }
    let mut q = queries.clone();
    for (l, layer) in weights.layers.iter().enumerate() {
        q = inter_frame_forward(&q, layer)?;
        q = intra_frame_forward(&q, context, l % 3, layer)?;
    }
    Ok(q)
}

/// Context-scale visitation order for an L-layer stack.
pub fn scale_schedule(layers: usize) -> Vec<usize> {
    (0..layers).map(|l| l % 3).collect()
}

fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, sd: f64) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for x in m.data.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *x = sd * g;
    }
    m
}

fn random_attention<R: Rng>(rng: &mut R, d: usize) -> AttentionWeights {
    let sd = 1.0 / (d as f64).sqrt();
    AttentionWeights {
        wq: random_mat(rng, d, d, sd),
        wk: random_mat(rng, d, d, sd),
        wv: random_mat(rng, d, d, sd),
        wo: random_mat(rng, d, d, sd),
    }
}

/// Projections drawn from N(0, 1/d); layernorm gains 1, biases 0.
pub fn init_tir_weights<R: Rng>(rng: &mut R, d: usize, layers: usize) -> Result<TirWeights> {
    if d < 1 || layers < 1 {
        return Err(Error::InvalidConfig("d and layers must be >= 1".into()));
    }
    let sd = 1.0 / (d as f64).sqrt();
    let layers = (0..layers)
        .map(|_| TirLayer {
            temporal_attn: random_attention(rng, d),
            conv_kernel: random_mat(rng, d, CONV_WIDTH, sd),
            conv_bias: vec![0.0; d],
            inter_norm: LayerNormParams {
                gain: vec![1.0; d],
                bias: vec![0.0; d],
            },
            cross_attn: random_attention(rng, d),
            self_attn: random_attention(rng, d),
            intra_norm: LayerNormParams {
                gain: vec![1.0; d],
                bias: vec![0.0; d],
            },
        })
        .collect();
    Ok(TirWeights { d, layers })
}
