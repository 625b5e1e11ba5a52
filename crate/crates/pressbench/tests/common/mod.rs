//! Shared test oracles.
//!
//! `gradcheck` re-implements every layer's forward in f64 with plain loops,
//! independent of the library's matmul-based f32 path, and compares the
//! library's reverse-mode gradients against central finite differences of
//! that oracle.

#![allow(dead_code)]

pub mod gradcheck {
    use pressbench::nn::{Layer, Tensor, TransformerBlock};
    use pressbench::rng::SeededRng;

    const FD_H: f64 = 1e-4;
    pub const REL_TOL: f64 = 1e-3;
    const ABS_FLOOR: f64 = 1e-6;

    /// All scalars a layer exposes to differentiation: parameters first (in
    /// the library's params order), then the input.
    #[derive(Clone)]
    pub struct Scene {
        pub layer: Layer,
        pub input: Tensor,
        /// Random projection weights turning the output into a scalar loss.
        pub loss_w: Vec<f64>,
    }

    fn gelu64(x: f64) -> f64 {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let a = 0.044715_f64;
        0.5 * x * (1.0 + (c * (x + a * x * x * x)).tanh())
    }

    fn layernorm64(x: &[f64], dim: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
        let rows = x.len() / dim;
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let xr = &x[r * dim..(r + 1) * dim];
            let mean = xr.iter().sum::<f64>() / dim as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for c in 0..dim {
                y[r * dim + c] = gamma[c] * (xr[c] - mean) * inv + beta[c];
            }
        }
        y
    }

    fn softmax64_rows(buf: &mut [f64], n: usize, m: usize) {
        for i in 0..n {
            let row = &mut buf[i * m..(i + 1) * m];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }

    /// f64 oracle forward for one layer, given flattened (params, input).
    fn oracle_forward(layer: &Layer, params: &[Vec<f64>], input: &[f64], in_shape: &[usize]) -> Vec<f64> {
        match layer {
            Layer::Affine { weight, .. } => {
                let (o, i) = (weight.shape[0], weight.shape[1]);
                let rows = input.len() / i;
                let (w, b) = (&params[0], &params[1]);
                let mut y = vec![0.0; rows * o];
                for r in 0..rows {
                    for oo in 0..o {
                        let mut acc = b[oo];
                        for ii in 0..i {
                            acc += input[r * i + ii] * w[oo * i + ii];
                        }
                        y[r * o + oo] = acc;
                    }
                }
                y
            }
            Layer::Conv2d { in_ch, out_ch, kh, kw, sh, sw, ph, pw, .. } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                assert_eq!(c, *in_ch);
                let oh = (h + 2 * ph - kh) / sh + 1;
                let ow = (w + 2 * pw - kw) / sw + 1;
                let (wt, b) = (&params[0], &params[1]);
                let mut y = vec![0.0; out_ch * oh * ow];
                for oc in 0..*out_ch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b[oc];
                            for ci in 0..c {
                                for ky in 0..*kh {
                                    for kx in 0..*kw {
                                        let iy = (oy * sh + ky) as isize - *ph as isize;
                                        let ix = (ox * sw + kx) as isize - *pw as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize
                                        {
                                            continue;
                                        }
                                        let xv = input[(ci * h + iy as usize) * w + ix as usize];
                                        let wv = wt[(oc * c + ci) * kh * kw + ky * kw + kx];
                                        acc += xv * wv;
                                    }
                                }
                            }
                            y[(oc * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                y
            }
            Layer::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
            Layer::Gelu => input.iter().map(|&v| gelu64(v)).collect(),
            Layer::LayerNorm { gamma, .. } => {
                layernorm64(input, gamma.len(), &params[0], &params[1])
            }
            Layer::PosAdd { .. } => input.iter().zip(&params[0]).map(|(a, b)| a + b).collect(),
            Layer::Block(b) => oracle_block(b, params, input),
            Layer::Tokens => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let n = h * w;
                let mut y = vec![0.0; n * c];
                for ci in 0..c {
                    for s in 0..n {
                        y[s * c + ci] = input[ci * n + s];
                    }
                }
                y
            }
            Layer::Flatten => input.to_vec(),
            Layer::MeanRows => {
                let (n, d) = (in_shape[0], in_shape[1]);
                let mut y = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        y[c] += input[r * d + c] / n as f64;
                    }
                }
                y
            }
        }
    }

    fn oracle_block(b: &TransformerBlock, p: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        let d = b.dim;
        let n = x.len() / d;
        let heads = b.heads;
        let dh = d / heads;
        let (ln1g, ln1b, wqkv, bqkv, wo, bo, ln2g, ln2b, w1, b1, w2, b2) = (
            &p[0], &p[1], &p[2], &p[3], &p[4], &p[5], &p[6], &p[7], &p[8], &p[9], &p[10], &p[11],
        );
        let z1 = layernorm64(x, d, ln1g, ln1b);
        // qkv projection
        let mut qkv = vec![0.0; n * 3 * d];
        for r in 0..n {
            for o in 0..3 * d {
                let mut acc = bqkv[o];
                for i in 0..d {
                    acc += z1[r * d + i] * wqkv[o * d + i];
                }
                qkv[r * 3 * d + o] = acc;
            }
        }
        let mut attn = vec![0.0; n * d];
        for hd in 0..heads {
            let mut scores = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..dh {
                        let q = qkv[i * 3 * d + hd * dh + k];
                        let kk = qkv[j * 3 * d + d + hd * dh + k];
                        acc += q * kk;
                    }
                    scores[i * n + j] = acc / (dh as f64).sqrt();
                }
            }
            softmax64_rows(&mut scores, n, n);
            for i in 0..n {
                for k in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += scores[i * n + j] * qkv[j * 3 * d + 2 * d + hd * dh + k];
                    }
                    attn[i * d + hd * dh + k] = acc;
                }
            }
        }
        // output projection + residual
        let mut u = vec![0.0; n * d];
        for r in 0..n {
            for o in 0..d {
                let mut acc = bo[o];
                for i in 0..d {
                    acc += attn[r * d + i] * wo[o * d + i];
                }
                u[r * d + o] = x[r * d + o] + acc;
            }
        }
        let z2 = layernorm64(&u, d, ln2g, ln2b);
        let m = b.mlp;
        let mut y = u.clone();
        for r in 0..n {
            let mut hid = vec![0.0; m];
            for o in 0..m {
                let mut acc = b1[o];
                for i in 0..d {
                    acc += z2[r * d + i] * w1[o * d + i];
                }
                hid[o] = gelu64(acc);
            }
            for o in 0..d {
                let mut acc = b2[o];
                for i in 0..m {
                    acc += hid[i] * w2[o * m + i];
                }
                y[r * d + o] += acc;
            }
        }
        y
    }

    fn loss64(out: &[f64], w: &[f64]) -> f64 {
        out.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// Check one scene; returns the worst relative error over all parameter
    /// tensors and the input gradient.
    pub fn check(scene: &Scene) -> f64 {
        let layer = &scene.layer;
        let input = &scene.input;

        // library gradients
        let (out, cache) = layer.forward(input).expect("forward");
        assert_eq!(out.len(), scene.loss_w.len(), "loss projection length");
        let dy = Tensor::from_vec(
            &out.shape,
            scene.loss_w.iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let (pgrads, dx) = layer.backward(&cache, &dy).expect("backward");

        // oracle setup
        let mut params: Vec<Vec<f64>> = layer
            .params()
            .iter()
            .map(|(_, t)| t.data.iter().map(|&v| v as f64).collect())
            .collect();
        let mut input64: Vec<f64> = input.data.iter().map(|&v| v as f64).collect();

        let mut worst: f64 = 0.0;
        // parameter tensors
        for (pi, grad) in pgrads.iter().enumerate() {
            let mut fd = vec![0.0f64; grad.len()];
            for ei in 0..grad.len() {
                let orig = params[pi][ei];
                params[pi][ei] = orig + FD_H;
                let lp = loss64(
                    &oracle_forward(layer, &params, &input64, &input.shape),
                    &scene.loss_w,
                );
                params[pi][ei] = orig - FD_H;
                let lm = loss64(
                    &oracle_forward(layer, &params, &input64, &input.shape),
                    &scene.loss_w,
                );
                params[pi][ei] = orig;
                fd[ei] = (lp - lm) / (2.0 * FD_H);
            }
            worst = worst.max(tensor_rel_err(&grad.data, &fd));
        }
        // input gradient
        let mut fd = vec![0.0f64; input.len()];
        for ei in 0..input.len() {
            let orig = input64[ei];
            input64[ei] = orig + FD_H;
            let lp = loss64(
                &oracle_forward(layer, &params, &input64, &input.shape),
                &scene.loss_w,
            );
            input64[ei] = orig - FD_H;
            let lm = loss64(
                &oracle_forward(layer, &params, &input64, &input.shape),
                &scene.loss_w,
            );
            input64[ei] = orig;
            fd[ei] = (lp - lm) / (2.0 * FD_H);
        }
        worst.max(tensor_rel_err(&dx.data, &fd))
    }

    fn tensor_rel_err(got: &[f32], fd: &[f64]) -> f64 {
        let scale = fd
            .iter()
            .map(|v| v.abs())
            .chain(got.iter().map(|v| v.abs() as f64))
            .fold(0.0f64, f64::max);
        let max_diff = got
            .iter()
            .zip(fd)
            .map(|(&g, &f)| (g as f64 - f).abs())
            .fold(0.0f64, f64::max);
        if max_diff <= ABS_FLOOR {
            return 0.0;
        }
        max_diff / scale.max(ABS_FLOOR)
    }

    fn randn_vec(n: usize, std: f64, rng: &mut SeededRng) -> Vec<f64> {
        (0..n).map(|_| rng.gauss() * std).collect()
    }

    /// Random scene for each layer kind. Sizes stay small so finite
    /// differences over every scalar remain fast.
    pub fn random_scene(kind: &str, rng: &mut SeededRng) -> Scene {
        let dims = |lo: usize, hi: usize, rng: &mut SeededRng| lo + rng.index(hi - lo + 1);
        match kind {
            "affine" => {
                let i = dims(2, 6, rng);
                let o = dims(2, 6, rng);
                let rows = dims(1, 4, rng);
                let layer = Layer::Affine {
                    weight: Tensor::randn(&[o, i], 0.6, rng),
                    bias: Tensor::randn(&[o], 0.3, rng),
                };
                let shape = if rows == 1 { vec![i] } else { vec![rows, i] };
                Scene {
                    layer,
                    input: Tensor::randn(&shape, 1.0, rng),
                    loss_w: randn_vec(rows * o, 1.0, rng),
                }
            }
            "conv2d" => {
                let ic = dims(1, 3, rng);
                let oc = dims(1, 3, rng);
                let k = [1, 3, 4][rng.index(3)];
                let s = dims(1, 2, rng);
                let p = rng.index(2);
                let h = k + s * dims(1, 3, rng);
                let w = k + s * dims(1, 3, rng);
                let oh = (h + 2 * p - k) / s + 1;
                let ow = (w + 2 * p - k) / s + 1;
                let layer = Layer::Conv2d {
                    weight: Tensor::randn(&[oc, ic * k * k], 0.5, rng),
                    bias: Tensor::randn(&[oc], 0.2, rng),
                    in_ch: ic,
                    out_ch: oc,
                    kh: k,
                    kw: k,
                    sh: s,
                    sw: s,
                    ph: p,
                    pw: p,
                };
                Scene {
                    layer,
                    input: Tensor::randn(&[ic, h, w], 1.0, rng),
                    loss_w: randn_vec(oc * oh * ow, 1.0, rng),
                }
            }
            "relu" | "gelu" => {
                let n = dims(3, 10, rng);
                let layer = if kind == "relu" { Layer::Relu } else { Layer::Gelu };
                Scene {
                    layer,
                    input: Tensor::randn(&[n], 1.2, rng),
                    loss_w: randn_vec(n, 1.0, rng),
                }
            }
            "layer_norm" => {
                let d = dims(3, 8, rng);
                let rows = dims(1, 4, rng);
                let layer = Layer::LayerNorm {
                    gamma: Tensor::randn(&[d], 0.5, rng),
                    beta: Tensor::randn(&[d], 0.3, rng),
                };
                let shape = if rows == 1 { vec![d] } else { vec![rows, d] };
                Scene {
                    layer,
                    input: Tensor::randn(&shape, 1.0, rng),
                    loss_w: randn_vec(rows * d, 1.0, rng),
                }
            }
            "pos_add" => {
                let n = dims(2, 5, rng);
                let d = dims(2, 6, rng);
                Scene {
                    layer: Layer::PosAdd { pos: Tensor::randn(&[n, d], 0.5, rng) },
                    input: Tensor::randn(&[n, d], 1.0, rng),
                    loss_w: randn_vec(n * d, 1.0, rng),
                }
            }
            "block" => {
                let heads = [1, 2][rng.index(2)];
                let dh = dims(2, 4, rng);
                let d = heads * dh;
                let mlp = dims(3, 8, rng);
                let n = dims(2, 5, rng);
                let block = TransformerBlock {
                    dim: d,
                    heads,
                    mlp,
                    ln1_gamma: Tensor::randn(&[d], 0.4, rng),
                    ln1_beta: Tensor::randn(&[d], 0.2, rng),
                    w_qkv: Tensor::randn(&[3 * d, d], 0.5, rng),
                    b_qkv: Tensor::randn(&[3 * d], 0.2, rng),
                    w_out: Tensor::randn(&[d, d], 0.5, rng),
                    b_out: Tensor::randn(&[d], 0.2, rng),
                    ln2_gamma: Tensor::randn(&[d], 0.4, rng),
                    ln2_beta: Tensor::randn(&[d], 0.2, rng),
                    w_mlp1: Tensor::randn(&[mlp, d], 0.5, rng),
                    b_mlp1: Tensor::randn(&[mlp], 0.2, rng),
                    w_mlp2: Tensor::randn(&[d, mlp], 0.5, rng),
                    b_mlp2: Tensor::randn(&[d], 0.2, rng),
                };
                Scene {
                    layer: Layer::Block(Box::new(block)),
                    input: Tensor::randn(&[n, d], 1.0, rng),
                    loss_w: randn_vec(n * d, 1.0, rng),
                }
            }
            "tokens" => {
                let c = dims(1, 3, rng);
                let h = dims(2, 4, rng);
                let w = dims(2, 4, rng);
                Scene {
                    layer: Layer::Tokens,
                    input: Tensor::randn(&[c, h, w], 1.0, rng),
                    loss_w: randn_vec(c * h * w, 1.0, rng),
                }
            }
            "flatten" => {
                let a = dims(2, 4, rng);
                let b = dims(2, 4, rng);
                Scene {
                    layer: Layer::Flatten,
                    input: Tensor::randn(&[a, b], 1.0, rng),
                    loss_w: randn_vec(a * b, 1.0, rng),
                }
            }
            "mean_rows" => {
                let n = dims(2, 6, rng);
                let d = dims(2, 6, rng);
                Scene {
                    layer: Layer::MeanRows,
                    input: Tensor::randn(&[n, d], 1.0, rng),
                    loss_w: randn_vec(d, 1.0, rng),
                }
            }
            other => panic!("unknown layer kind {other}"),
        }
    }

    pub const ALL_KINDS: &[&str] = &[
        "affine", "conv2d", "relu", "gelu", "layer_norm", "pos_add", "block", "tokens",
        "flatten", "mean_rows",
    ];

    /// Run `instances` random checks for one layer kind; returns worst error.
    pub fn check_kind(kind: &str, instances: usize, seed: u64) -> f64 {
        let mut rng = SeededRng::derived(seed, kind);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let scene = random_scene(kind, &mut rng);
            worst = worst.max(check(&scene));
        }
        worst
    }
}
