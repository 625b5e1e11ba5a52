//! Layer vocabulary: affine, conv2d, relu, gelu, layer-norm, positional add,
//! attention block, plus the shape plumbing (tokens, flatten, mean-pool).
//!
//! Every forward records the intermediates its backward needs into a
//! [`Cache`] value; backward consumes the cache and returns parameter
//! gradients in the same order as [`Layer::params`].

use super::fastmath::{exp_approx, tanh_approx};
use super::linalg::{add_inplace, matmul, transpose};
use super::tensor::Tensor;
use super::NnError;

pub const LN_EPS: f32 = 1e-5;
const GELU_A: f32 = 0.044_715;

/// One layer of a sequential module.
#[derive(Clone, Debug)]
pub enum Layer {
    /// y = x W^T + b, weight stored [out, in].
    Affine { weight: Tensor, bias: Tensor },
    /// 2-D convolution over [C,H,W] input, weight stored [oc, ic*kh*kw].
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        sh: usize,
        sw: usize,
        ph: usize,
        pw: usize,
    },
    Relu,
    Gelu,
    /// Normalizes over the last dimension.
    LayerNorm { gamma: Tensor, beta: Tensor },
    /// Adds a learned [rows, dim] table to a token matrix.
    PosAdd { pos: Tensor },
    Block(Box<TransformerBlock>),
    /// [C,H,W] -> [H*W, C] token matrix.
    Tokens,
    /// Any shape -> flat vector.
    Flatten,
    /// [N,D] -> [D] mean over rows.
    MeanRows,
}

/// Pre-norm transformer block: x + Attn(LN(x)), then u + Mlp(LN(u)).
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub dim: usize,
    pub heads: usize,
    pub mlp: usize,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w_qkv: Tensor, // [3*dim, dim]
    pub b_qkv: Tensor, // [3*dim]
    pub w_out: Tensor, // [dim, dim]
    pub b_out: Tensor, // [dim]
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub w_mlp1: Tensor, // [mlp, dim]
    pub b_mlp1: Tensor,
    pub w_mlp2: Tensor, // [dim, mlp]
    pub b_mlp2: Tensor,
}

/// Saved intermediates for one layer's backward pass.
pub enum Cache {
    Affine { input: Tensor },
    Conv2d { cols: Vec<f32>, in_shape: [usize; 3], out_hw: (usize, usize) },
    Relu { input: Tensor },
    Gelu { input: Tensor },
    LayerNorm { xhat: Vec<f32>, inv_std: Vec<f32>, rows: usize, dim: usize },
    PosAdd,
    Block(Box<BlockCache>),
    Tokens { ch: usize, h: usize, w: usize },
    Flatten { shape: Vec<usize> },
    MeanRows { rows: usize, dim: usize },
}

pub struct BlockCache {
    n: usize,
    ln1: (Vec<f32>, Vec<f32>), // xhat, inv_std
    z1: Vec<f32>,              // LN1 output [n, d]
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    probs: Vec<Vec<f32>>, // per head [n, n]
    attn_concat: Vec<f32>, // heads concatenated [n, d]
    ln2: (Vec<f32>, Vec<f32>),
    z2: Vec<f32>,
    h1: Vec<f32>, // pre-gelu [n, mlp]
    a1: Vec<f32>, // post-gelu
}

fn gelu_scalar(x: f32) -> f32 {
    let c = (2.0 / std::f32::consts::PI).sqrt();
    let u = c * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + tanh_approx(u))
}

fn gelu_grad_scalar(x: f32) -> f32 {
    let c = (2.0 / std::f32::consts::PI).sqrt();
    let u = c * (x + GELU_A * x * x * x);
    let t = tanh_approx(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax in place over an [n, m] buffer.
fn softmax_rows(buf: &mut [f32], n: usize, m: usize) {
    for i in 0..n {
        let row = &mut buf[i * m..(i + 1) * m];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        for x in row.iter_mut() {
            *x = exp_approx(*x - max);
        }
        let sum: f32 = row.iter().sum();
        let inv = 1.0 / sum;
        for x in row.iter_mut() {
            *x *= inv;
        }
    }
}

/// y = x W^T + b for x of shape [rows, in].
fn affine_fwd(x: &[f32], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f32> {
    let (out_dim, in_dim) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(x.len(), rows * in_dim);
    let wt = transpose(&w.data, out_dim, in_dim);
    let mut y = matmul(x, &wt, rows, in_dim, out_dim);
    for r in 0..rows {
        add_inplace(&mut y[r * out_dim..(r + 1) * out_dim], &b.data);
    }
    y
}

/// Backward of `affine_fwd`; returns (dW, db, dx).
fn affine_bwd(
    x: &[f32],
    dy: &[f32],
    rows: usize,
    w: &Tensor,
) -> (Tensor, Tensor, Vec<f32>) {
    let (out_dim, in_dim) = (w.shape[0], w.shape[1]);
    // dW = dy^T x
    let dyt = transpose(dy, rows, out_dim);
    let dw = matmul(&dyt, x, out_dim, rows, in_dim);
    // db = column sums of dy
    let mut db = vec![0.0f32; out_dim];
    for r in 0..rows {
        add_inplace(&mut db, &dy[r * out_dim..(r + 1) * out_dim]);
    }
    // dx = dy W
    let dx = matmul(dy, &w.data, rows, out_dim, in_dim);
    (
        Tensor { shape: vec![out_dim, in_dim], data: dw },
        Tensor { shape: vec![out_dim], data: db },
        dx,
    )
}

fn layernorm_fwd(
    x: &[f32],
    rows: usize,
    dim: usize,
    gamma: &[f32],
    beta: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut y = vec![0.0f32; rows * dim];
    let mut xhat = vec![0.0f32; rows * dim];
    let mut inv_std = vec![0.0f32; rows];
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mut mean = 0.0f32;
        for &v in xr {
            mean += v;
        }
        mean /= dim as f32;
        let mut var = 0.0f32;
        for &v in xr {
            let d = v - mean;
            var += d * d;
        }
        var /= dim as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = inv;
        for c in 0..dim {
            let h = (xr[c] - mean) * inv;
            xhat[r * dim + c] = h;
            y[r * dim + c] = gamma[c] * h + beta[c];
        }
    }
    (y, xhat, inv_std)
}

/// Returns (dgamma, dbeta, dx).
fn layernorm_bwd(
    dy: &[f32],
    xhat: &[f32],
    inv_std: &[f32],
    rows: usize,
    dim: usize,
    gamma: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut dgamma = vec![0.0f32; dim];
    let mut dbeta = vec![0.0f32; dim];
    let mut dx = vec![0.0f32; rows * dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let hr = &xhat[r * dim..(r + 1) * dim];
        let mut mean_dh = 0.0f32;
        let mut mean_dh_h = 0.0f32;
        for c in 0..dim {
            dgamma[c] += dyr[c] * hr[c];
            dbeta[c] += dyr[c];
            let dh = dyr[c] * gamma[c];
            mean_dh += dh;
            mean_dh_h += dh * hr[c];
        }
        mean_dh /= dim as f32;
        mean_dh_h /= dim as f32;
        let inv = inv_std[r];
        for c in 0..dim {
            let dh = dyr[c] * gamma[c];
            dx[r * dim + c] = inv * (dh - mean_dh - hr[c] * mean_dh_h);
        }
    }
    (dgamma, dbeta, dx)
}

fn copy_cols(src: &[f32], rows: usize, width: usize, c0: usize, c1: usize) -> Vec<f32> {
    let w = c1 - c0;
    let mut out = vec![0.0f32; rows * w];
    for r in 0..rows {
        out[r * w..(r + 1) * w].copy_from_slice(&src[r * width + c0..r * width + c1]);
    }
    out
}

fn add_cols(dst: &mut [f32], rows: usize, width: usize, c0: usize, src: &[f32], w: usize) {
    for r in 0..rows {
        for j in 0..w {
            dst[r * width + c0 + j] += src[r * w + j];
        }
    }
}

impl Layer {
    /// Human-readable layer kind, used in shape errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Affine { .. } => "affine",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::Gelu => "gelu",
            Layer::LayerNorm { .. } => "layer_norm",
            Layer::PosAdd { .. } => "pos_add",
            Layer::Block(_) => "block",
            Layer::Tokens => "tokens",
            Layer::Flatten => "flatten",
            Layer::MeanRows => "mean_rows",
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Affine { weight, bias } => vec![("weight", weight), ("bias", bias)],
            Layer::Conv2d { weight, bias, .. } => vec![("weight", weight), ("bias", bias)],
            Layer::LayerNorm { gamma, beta } => vec![("gamma", gamma), ("beta", beta)],
            Layer::PosAdd { pos } => vec![("pos", pos)],
            Layer::Block(b) => vec![
                ("ln1.gamma", &b.ln1_gamma),
                ("ln1.beta", &b.ln1_beta),
                ("attn.qkv.weight", &b.w_qkv),
                ("attn.qkv.bias", &b.b_qkv),
                ("attn.out.weight", &b.w_out),
                ("attn.out.bias", &b.b_out),
                ("ln2.gamma", &b.ln2_gamma),
                ("ln2.beta", &b.ln2_beta),
                ("mlp.fc1.weight", &b.w_mlp1),
                ("mlp.fc1.bias", &b.b_mlp1),
                ("mlp.fc2.weight", &b.w_mlp2),
                ("mlp.fc2.bias", &b.b_mlp2),
            ],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Affine { weight, bias } => vec![weight, bias],
            Layer::Conv2d { weight, bias, .. } => vec![weight, bias],
            Layer::LayerNorm { gamma, beta } => vec![gamma, beta],
            Layer::PosAdd { pos } => vec![pos],
            Layer::Block(b) => vec![
                &mut b.ln1_gamma,
                &mut b.ln1_beta,
                &mut b.w_qkv,
                &mut b.b_qkv,
                &mut b.w_out,
                &mut b.b_out,
                &mut b.ln2_gamma,
                &mut b.ln2_beta,
                &mut b.w_mlp1,
                &mut b.b_mlp1,
                &mut b.w_mlp2,
                &mut b.b_mlp2,
            ],
            _ => vec![],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache), NnError> {
        match self {
            Layer::Affine { weight, bias } => {
                let in_dim = weight.shape[1];
                let out_dim = weight.shape[0];
                let rows = match x.shape.as_slice() {
                    [n] if *n == in_dim => 1,
                    [r, n] if *n == in_dim => *r,
                    other => {
                        return Err(NnError::Shape(format!(
                            "affine wants [..,{in_dim}], got {other:?}"
                        )))
                    }
                };
                let y = affine_fwd(&x.data, rows, weight, bias);
                let shape = if x.shape.len() == 1 {
                    vec![out_dim]
                } else {
                    vec![rows, out_dim]
                };
                Ok((
                    Tensor { shape, data: y },
                    Cache::Affine { input: x.clone() },
                ))
            }
            Layer::Conv2d {
                weight,
                bias,
                in_ch,
                out_ch,
                kh,
                kw,
                sh,
                sw,
                ph,
                pw,
            } => {
                let [c, h, w] = match x.shape.as_slice() {
                    [c, h, w] if c == in_ch => [*c, *h, *w],
                    other => {
                        return Err(NnError::Shape(format!(
                            "conv2d wants [{in_ch},H,W], got {other:?}"
                        )))
                    }
                };
                let oh = (h + 2 * ph - kh) / sh + 1;
                let ow = (w + 2 * pw - kw) / sw + 1;
                let patch = in_ch * kh * kw;
                let cols_n = oh * ow;
                let mut cols = vec![0.0f32; patch * cols_n];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let col = oy * ow + ox;
                        for ci in 0..c {
                            for ky in 0..*kh {
                                let iy = oy * sh + ky;
                                if iy < *ph || iy - ph >= h {
                                    continue;
                                }
                                let iy = iy - ph;
                                for kx in 0..*kw {
                                    let ix = ox * sw + kx;
                                    if ix < *pw || ix - pw >= w {
                                        continue;
                                    }
                                    let ix = ix - pw;
                                    let row = (ci * kh + ky) * kw + kx;
                                    cols[row * cols_n + col] = x.data[(ci * h + iy) * w + ix];
                                }
                            }
                        }
                    }
                }
                let mut y = matmul(&weight.data, &cols, *out_ch, patch, cols_n);
                for oc in 0..*out_ch {
                    let b = bias.data[oc];
                    for v in &mut y[oc * cols_n..(oc + 1) * cols_n] {
                        *v += b;
                    }
                }
                Ok((
                    Tensor { shape: vec![*out_ch, oh, ow], data: y },
                    Cache::Conv2d { cols, in_shape: [c, h, w], out_hw: (oh, ow) },
                ))
            }
            Layer::Relu => {
                let y = x.data.iter().map(|&v| v.max(0.0)).collect();
                Ok((
                    Tensor { shape: x.shape.clone(), data: y },
                    Cache::Relu { input: x.clone() },
                ))
            }
            Layer::Gelu => {
                let y = x.data.iter().map(|&v| gelu_scalar(v)).collect();
                Ok((
                    Tensor { shape: x.shape.clone(), data: y },
                    Cache::Gelu { input: x.clone() },
                ))
            }
            Layer::LayerNorm { gamma, beta } => {
                let dim = gamma.len();
                let last = *x.shape.last().ok_or_else(|| {
                    NnError::Shape("layer_norm on empty shape".into())
                })?;
                if last != dim {
                    return Err(NnError::Shape(format!(
                        "layer_norm wants last dim {dim}, got {:?}",
                        x.shape
                    )));
                }
                let rows = x.len() / dim;
                let (y, xhat, inv_std) =
                    layernorm_fwd(&x.data, rows, dim, &gamma.data, &beta.data);
                Ok((
                    Tensor { shape: x.shape.clone(), data: y },
                    Cache::LayerNorm { xhat, inv_std, rows, dim },
                ))
            }
            Layer::PosAdd { pos } => {
                if x.shape != pos.shape {
                    return Err(NnError::Shape(format!(
                        "pos_add wants {:?}, got {:?}",
                        pos.shape, x.shape
                    )));
                }
                let mut y = x.data.clone();
                add_inplace(&mut y, &pos.data);
                Ok((Tensor { shape: x.shape.clone(), data: y }, Cache::PosAdd))
            }
            Layer::Block(b) => b.forward(x),
            Layer::Tokens => {
                let [c, h, w] = match x.shape.as_slice() {
                    [c, h, w] => [*c, *h, *w],
                    other => {
                        return Err(NnError::Shape(format!(
                            "tokens wants [C,H,W], got {other:?}"
                        )))
                    }
                };
                let n = h * w;
                let mut y = vec![0.0f32; n * c];
                for ci in 0..c {
                    for s in 0..n {
                        y[s * c + ci] = x.data[ci * n + s];
                    }
                }
                Ok((
                    Tensor { shape: vec![n, c], data: y },
                    Cache::Tokens { ch: c, h, w },
                ))
            }
            Layer::Flatten => Ok((
                Tensor { shape: vec![x.len()], data: x.data.clone() },
                Cache::Flatten { shape: x.shape.clone() },
            )),
            Layer::MeanRows => {
                let (rows, dim) = x.dims2().map_err(|_| {
                    NnError::Shape(format!("mean_rows wants [N,D], got {:?}", x.shape))
                })?;
                let mut y = vec![0.0f32; dim];
                for r in 0..rows {
                    add_inplace(&mut y, &x.data[r * dim..(r + 1) * dim]);
                }
                let inv = 1.0 / rows as f32;
                for v in &mut y {
                    *v *= inv;
                }
                Ok((
                    Tensor { shape: vec![dim], data: y },
                    Cache::MeanRows { rows, dim },
                ))
            }
        }
    }

    /// Returns (param grads in `params` order, input grad).
    pub fn backward(&self, cache: &Cache, dy: &Tensor) -> Result<(Vec<Tensor>, Tensor), NnError> {
        match (self, cache) {
            (Layer::Affine { weight, .. }, Cache::Affine { input }) => {
                let rows = if input.shape.len() == 1 { 1 } else { input.shape[0] };
                let (dw, db, dx) = affine_bwd(&input.data, &dy.data, rows, weight);
                Ok((
                    vec![dw, db],
                    Tensor { shape: input.shape.clone(), data: dx },
                ))
            }
            (
                Layer::Conv2d { weight, out_ch, in_ch, kh, kw, sh, sw, ph, pw, .. },
                Cache::Conv2d { cols, in_shape, out_hw },
            ) => {
                let (oh, ow) = *out_hw;
                let cols_n = oh * ow;
                let patch = in_ch * kh * kw;
                // dW = dY cols^T
                let colst = transpose(cols, patch, cols_n);
                let dw = matmul(&dy.data, &colst, *out_ch, cols_n, patch);
                let mut db = vec![0.0f32; *out_ch];
                for oc in 0..*out_ch {
                    db[oc] = dy.data[oc * cols_n..(oc + 1) * cols_n].iter().sum();
                }
                // dcols = W^T dY
                let wt = transpose(&weight.data, *out_ch, patch);
                let dcols = matmul(&wt, &dy.data, patch, *out_ch, cols_n);
                // col2im scatter
                let [c, h, w] = *in_shape;
                let mut dx = vec![0.0f32; c * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let col = oy * ow + ox;
                        for ci in 0..c {
                            for ky in 0..*kh {
                                let iy = oy * sh + ky;
                                if iy < *ph || iy - ph >= h {
                                    continue;
                                }
                                let iy = iy - ph;
                                for kx in 0..*kw {
                                    let ix = ox * sw + kx;
                                    if ix < *pw || ix - pw >= w {
                                        continue;
                                    }
                                    let ix = ix - pw;
                                    let row = (ci * kh + ky) * kw + kx;
                                    dx[(ci * h + iy) * w + ix] += dcols[row * cols_n + col];
                                }
                            }
                        }
                    }
                }
                Ok((
                    vec![
                        Tensor { shape: weight.shape.clone(), data: dw },
                        Tensor { shape: vec![*out_ch], data: db },
                    ],
                    Tensor { shape: vec![c, h, w], data: dx },
                ))
            }
            (Layer::Relu, Cache::Relu { input }) => {
                let dx = input
                    .data
                    .iter()
                    .zip(&dy.data)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Ok((vec![], Tensor { shape: input.shape.clone(), data: dx }))
            }
            (Layer::Gelu, Cache::Gelu { input }) => {
                let dx = input
                    .data
                    .iter()
                    .zip(&dy.data)
                    .map(|(&x, &g)| g * gelu_grad_scalar(x))
                    .collect();
                Ok((vec![], Tensor { shape: input.shape.clone(), data: dx }))
            }
            (Layer::LayerNorm { gamma, .. }, Cache::LayerNorm { xhat, inv_std, rows, dim }) => {
                let (dg, db, dx) =
                    layernorm_bwd(&dy.data, xhat, inv_std, *rows, *dim, &gamma.data);
                Ok((
                    vec![
                        Tensor { shape: vec![*dim], data: dg },
                        Tensor { shape: vec![*dim], data: db },
                    ],
                    Tensor { shape: dy.shape.clone(), data: dx },
                ))
            }
            (Layer::PosAdd { pos }, Cache::PosAdd) => Ok((
                vec![Tensor { shape: pos.shape.clone(), data: dy.data.clone() }],
                dy.clone(),
            )),
            (Layer::Block(b), Cache::Block(cache)) => b.backward(cache, dy),
            (Layer::Tokens, Cache::Tokens { ch, h, w }) => {
                let n = h * w;
                let mut dx = vec![0.0f32; ch * n];
                for ci in 0..*ch {
                    for s in 0..n {
                        dx[ci * n + s] = dy.data[s * ch + ci];
                    }
                }
                Ok((vec![], Tensor { shape: vec![*ch, *h, *w], data: dx }))
            }
            (Layer::Flatten, Cache::Flatten { shape }) => Ok((
                vec![],
                Tensor { shape: shape.clone(), data: dy.data.clone() },
            )),
            (Layer::MeanRows, Cache::MeanRows { rows, dim }) => {
                let inv = 1.0 / *rows as f32;
                let mut dx = vec![0.0f32; rows * dim];
                for r in 0..*rows {
                    for c in 0..*dim {
                        dx[r * dim + c] = dy.data[c] * inv;
                    }
                }
                Ok((vec![], Tensor { shape: vec![*rows, *dim], data: dx }))
            }
            _ => Err(NnError::Shape("cache does not match layer".into())),
        }
    }
}

impl TransformerBlock {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache), NnError> {
        let (n, d) = x.dims2().map_err(|_| {
            NnError::Shape(format!("block wants [N,{}], got {:?}", self.dim, x.shape))
        })?;
        if d != self.dim {
            return Err(NnError::Shape(format!(
                "block wants width {}, got {d}",
                self.dim
            )));
        }
        let heads = self.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();

        let (z1, xhat1, inv1) =
            layernorm_fwd(&x.data, n, d, &self.ln1_gamma.data, &self.ln1_beta.data);
        let qkv = affine_fwd(&z1, n, &self.w_qkv, &self.b_qkv);
        let q = copy_cols(&qkv, n, 3 * d, 0, d);
        let k = copy_cols(&qkv, n, 3 * d, d, 2 * d);
        let v = copy_cols(&qkv, n, 3 * d, 2 * d, 3 * d);

        let mut probs = Vec::with_capacity(heads);
        let mut attn_concat = vec![0.0f32; n * d];
        for hd in 0..heads {
            let qh = copy_cols(&q, n, d, hd * dh, (hd + 1) * dh);
            let kh = copy_cols(&k, n, d, hd * dh, (hd + 1) * dh);
            let vh = copy_cols(&v, n, d, hd * dh, (hd + 1) * dh);
            let kht = transpose(&kh, n, dh);
            let mut scores = matmul(&qh, &kht, n, dh, n);
            for s in scores.iter_mut() {
                *s *= scale;
            }
            softmax_rows(&mut scores, n, n);
            let oh = matmul(&scores, &vh, n, n, dh);
            add_cols(&mut attn_concat, n, d, hd * dh, &oh, dh);
            probs.push(scores);
        }
        let attn_out = affine_fwd(&attn_concat, n, &self.w_out, &self.b_out);
        let mut u = x.data.clone();
        add_inplace(&mut u, &attn_out);

        let (z2, xhat2, inv2) =
            layernorm_fwd(&u, n, d, &self.ln2_gamma.data, &self.ln2_beta.data);
        let h1 = affine_fwd(&z2, n, &self.w_mlp1, &self.b_mlp1);
        let a1: Vec<f32> = h1.iter().map(|&v| gelu_scalar(v)).collect();
        let m = affine_fwd(&a1, n, &self.w_mlp2, &self.b_mlp2);
        let mut y = u;
        add_inplace(&mut y, &m);

        Ok((
            Tensor { shape: vec![n, d], data: y },
            Cache::Block(Box::new(BlockCache {
                n,
                ln1: (xhat1, inv1),
                z1,
                q,
                k,
                v,
                probs,
                attn_concat,
                ln2: (xhat2, inv2),
                z2,
                h1,
                a1,
            })),
        ))
    }

    fn backward(&self, c: &BlockCache, dy: &Tensor) -> Result<(Vec<Tensor>, Tensor), NnError> {
        let n = c.n;
        let d = self.dim;
        let heads = self.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();

        // y = u + m: grads flow to both
        let dm = &dy.data;
        // MLP backward
        let (dw2, db2, da1) = affine_bwd(&c.a1, dm, n, &self.w_mlp2);
        let dh1: Vec<f32> = c
            .h1
            .iter()
            .zip(&da1)
            .map(|(&x, &g)| g * gelu_grad_scalar(x))
            .collect();
        let (dw1, db1, dz2) = affine_bwd(&c.z2, &dh1, n, &self.w_mlp1);
        let (dg2, dbe2, du_ln) =
            layernorm_bwd(&dz2, &c.ln2.0, &c.ln2.1, n, d, &self.ln2_gamma.data);
        // du = dy + du_ln
        let mut du = dy.data.clone();
        add_inplace(&mut du, &du_ln);

        // u = x + attn_out
        let (dwo, dbo, d_attn_concat) = affine_bwd(&c.attn_concat, &du, n, &self.w_out);

        let mut dq = vec![0.0f32; n * d];
        let mut dk = vec![0.0f32; n * d];
        let mut dv = vec![0.0f32; n * d];
        for hd in 0..heads {
            let d_oh = copy_cols(&d_attn_concat, n, d, hd * dh, (hd + 1) * dh);
            let p = &c.probs[hd];
            let vh = copy_cols(&c.v, n, d, hd * dh, (hd + 1) * dh);
            let qh = copy_cols(&c.q, n, d, hd * dh, (hd + 1) * dh);
            let kh = copy_cols(&c.k, n, d, hd * dh, (hd + 1) * dh);
            // dP = dOh Vh^T
            let vht = transpose(&vh, n, dh);
            let dp = matmul(&d_oh, &vht, n, dh, n);
            // dVh = P^T dOh
            let pt = transpose(p, n, n);
            let dvh = matmul(&pt, &d_oh, n, n, dh);
            // softmax backward rows: ds = P (dp - rowdot(P, dp))
            let mut ds = vec![0.0f32; n * n];
            for i in 0..n {
                let prow = &p[i * n..(i + 1) * n];
                let dprow = &dp[i * n..(i + 1) * n];
                let dot: f32 = prow.iter().zip(dprow).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    ds[i * n + j] = prow[j] * (dprow[j] - dot) * scale;
                }
            }
            // dQh = ds Kh ; dKh = ds^T Qh
            let dqh = matmul(&ds, &kh, n, n, dh);
            let dst = transpose(&ds, n, n);
            let dkh = matmul(&dst, &qh, n, n, dh);
            add_cols(&mut dq, n, d, hd * dh, &dqh, dh);
            add_cols(&mut dk, n, d, hd * dh, &dkh, dh);
            add_cols(&mut dv, n, d, hd * dh, &dvh, dh);
        }
        let mut dqkv = vec![0.0f32; n * 3 * d];
        add_cols(&mut dqkv, n, 3 * d, 0, &dq, d);
        add_cols(&mut dqkv, n, 3 * d, d, &dk, d);
        add_cols(&mut dqkv, n, 3 * d, 2 * d, &dv, d);
        let (dwqkv, dbqkv, dz1) = affine_bwd(&c.z1, &dqkv, n, &self.w_qkv);
        let (dg1, dbe1, dx_ln) =
            layernorm_bwd(&dz1, &c.ln1.0, &c.ln1.1, n, d, &self.ln1_gamma.data);
        let mut dx = du;
        add_inplace(&mut dx, &dx_ln);

        Ok((
            vec![
                Tensor { shape: vec![d], data: dg1 },
                Tensor { shape: vec![d], data: dbe1 },
                dwqkv,
                dbqkv,
                dwo,
                dbo,
                Tensor { shape: vec![d], data: dg2 },
                Tensor { shape: vec![d], data: dbe2 },
                dw1,
                db1,
                dw2,
                db2,
            ],
            Tensor { shape: vec![n, d], data: dx },
        ))
    }
}

/// Concatenate vectors; gradient is `split_grad`.
pub fn concat(parts: &[&[f32]]) -> Vec<f32> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

/// Split a concatenated gradient back into per-part gradients.
pub fn split_grad(grad: &[f32], lens: &[usize]) -> Vec<Vec<f32>> {
    assert_eq!(grad.len(), lens.iter().sum::<usize>());
    let mut out = Vec::with_capacity(lens.len());
    let mut off = 0;
    for &l in lens {
        out.push(grad[off..off + l].to_vec());
        off += l;
    }
    out
}

/// Numerically stable softmax of a small vector.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let mut out = logits.to_vec();
    softmax_rows(&mut out, 1, logits.len());
    out
}
