//! Rough single-core throughput probe (ignored by default; run with
//! `cargo test --test speed_probe -- --ignored --nocapture`).

use pressbench::nn::{Layer, Module, Tensor, TransformerBlock};
use pressbench::rng::SeededRng;
use std::time::Instant;

fn audio_encoder_like(seed: u64) -> Module {
    let mut rng = SeededRng::new(seed);
    let dim = 64;
    let mk_block = |rng: &mut SeededRng| {
        Layer::Block(Box::new(TransformerBlock {
            dim,
            heads: 4,
            mlp: 128,
            ln1_gamma: Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap(),
            ln1_beta: Tensor::zeros(&[dim]),
            w_qkv: Tensor::randn(&[3 * dim, dim], 0.08, rng),
            b_qkv: Tensor::zeros(&[3 * dim]),
            w_out: Tensor::randn(&[dim, dim], 0.08, rng),
            b_out: Tensor::zeros(&[dim]),
            ln2_gamma: Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap(),
            ln2_beta: Tensor::zeros(&[dim]),
            w_mlp1: Tensor::randn(&[128, dim], 0.08, rng),
            b_mlp1: Tensor::zeros(&[128]),
            w_mlp2: Tensor::randn(&[dim, 128], 0.08, rng),
            b_mlp2: Tensor::zeros(&[dim]),
        }))
    };
    Module::new(vec![
        Layer::Conv2d {
            weight: Tensor::randn(&[dim, 256], 0.05, &mut rng),
            bias: Tensor::zeros(&[dim]),
            in_ch: 1,
            out_ch: dim,
            kh: 16,
            kw: 16,
            sh: 10,
            sw: 10,
            ph: 0,
            pw: 0,
        },
        Layer::Tokens,
        Layer::PosAdd { pos: Tensor::randn(&[348, dim], 0.02, &mut rng) },
        mk_block(&mut rng),
        mk_block(&mut rng),
        Layer::LayerNorm {
            gamma: Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap(),
            beta: Tensor::zeros(&[dim]),
        },
        Layer::MeanRows,
        Layer::Affine {
            weight: Tensor::randn(&[2, dim], 0.1, &mut rng),
            bias: Tensor::zeros(&[2]),
        },
    ])
}

#[test]
#[ignore]
fn probe_audio_encoder_throughput() {
    let m = audio_encoder_like(1);
    let x = Tensor::randn(&[1, 298, 128], 1.0, &mut SeededRng::new(2));

    let t0 = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let _ = m.forward(&x).unwrap();
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;

    let t0 = Instant::now();
    for _ in 0..reps {
        let (out, tape) = m.forward_train(&x).unwrap();
        let dy = Tensor::from_vec(&out.shape, vec![1.0; out.len()]).unwrap();
        let _ = m.backward(&tape, &dy).unwrap();
    }
    let step = t0.elapsed().as_secs_f64() / reps as f64;

    println!("audio-encoder forward: {:.1} ms, fwd+bwd: {:.1} ms", fwd * 1e3, step * 1e3);
    println!("params: {}", m.param_count());
}

#[test]
#[ignore]
fn probe_raw_matmul() {
    use pressbench::nn::linalg::matmul;
    let mut rng = SeededRng::new(3);
    let (m, k, n) = (348, 64, 192);
    let a: Vec<f32> = (0..m * k).map(|_| rng.gauss() as f32).collect();
    let b: Vec<f32> = (0..k * n).map(|_| rng.gauss() as f32).collect();
    let t0 = Instant::now();
    let reps = 2000;
    let mut sink = 0.0f32;
    for _ in 0..reps {
        let c = matmul(&a, &b, m, k, n);
        sink += c[0];
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let macs = (m * k * n) as f64;
    println!("matmul {m}x{k}x{n}: {:.3} ms, {:.2} GMAC/s (sink {sink})", dt * 1e3, macs / dt / 1e9);
}
