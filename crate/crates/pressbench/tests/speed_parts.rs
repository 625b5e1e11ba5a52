//! Per-op timing at transformer shapes (ignored; diagnostic only).

use pressbench::nn::linalg::{matmul, transpose};
use pressbench::rng::SeededRng;
use std::time::Instant;

fn randv(n: usize, rng: &mut SeededRng) -> Vec<f32> {
    (0..n).map(|_| rng.gauss() as f32).collect()
}

fn time_ms(mut f: impl FnMut(), reps: usize) -> f64 {
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    t0.elapsed().as_secs_f64() * 1e3 / reps as f64
}

#[test]
#[ignore]
fn parts() {
    let mut rng = SeededRng::new(1);
    let n = 348;
    let d = 64;
    let dh = 16;

    let q = randv(n * dh, &mut rng);
    let kt = randv(dh * n, &mut rng);
    let p = randv(n * n, &mut rng);
    let vh = randv(n * dh, &mut rng);
    let z = randv(n * d, &mut rng);
    let w = randv(192 * d, &mut rng);
    let cols = randv(256 * n, &mut rng);
    let wconv = randv(64 * 256, &mut rng);

    let mut sink = 0.0f32;
    let ms = time_ms(|| sink += matmul(&q, &kt, n, dh, n)[0], 200);
    println!("scores  348x16x348: {ms:.3} ms ({:.2} G)", (n * dh * n) as f64 / ms / 1e6);
    let ms = time_ms(|| sink += matmul(&p, &vh, n, n, dh)[0], 200);
    println!("attnV   348x348x16: {ms:.3} ms ({:.2} G)", (n * n * dh) as f64 / ms / 1e6);
    let ms = time_ms(|| sink += matmul(&z, &w, n, d, 192)[0], 200);
    println!("qkv     348x64x192: {ms:.3} ms ({:.2} G)", (n * d * 192) as f64 / ms / 1e6);
    let ms = time_ms(|| sink += matmul(&wconv, &cols, 64, 256, n)[0], 200);
    println!("conv    64x256x348: {ms:.3} ms ({:.2} G)", (64 * 256 * n) as f64 / ms / 1e6);
    let ms = time_ms(|| sink += transpose(&p, n, n)[0], 200);
    println!("transpose 348x348:  {ms:.3} ms");
    let ms = time_ms(
        || {
            let mut buf = p.clone();
            for v in buf.iter_mut() {
                *v = pressbench::nn::fastmath::exp_approx(*v);
            }
            sink += buf[0];
        },
        200,
    );
    println!("exp 121k + clone:   {ms:.3} ms");
    println!("(sink {sink})");
}
