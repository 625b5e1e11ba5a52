//! Built-in oracle suites: quick independent checks of the numerical core,
//! runnable from a fresh checkout as a release gate.

use crate::dsp;
use crate::eval::{beta_credible_interval, wasserstein1};
use crate::nn::{Layer, Tensor, TransformerBlock};
use crate::rng::SeededRng;

/// Deliberate defects for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scale one parameter gradient before comparison.
    GradientBug,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_selftest(fault: Option<Fault>) -> SelftestReport {
    let checks = vec![
        check_spectrogram_shape(),
        check_gradients(fault),
        check_wasserstein_oracle(),
        check_beta_oracle(),
        check_determinism(),
    ];
    SelftestReport { checks }
}

fn result(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: name.to_string(), passed, detail }
}

fn check_spectrogram_shape() -> CheckResult {
    let cfg = dsp::MelConfig::default();
    let spec = match dsp::log_mel(&vec![0.0; dsp::WINDOW_SAMPLES], &cfg) {
        Ok(s) => s,
        Err(e) => return result("spectrogram-shape", false, e.to_string()),
    };
    let want = (cfg.log_floor.ln()) as f32;
    let shape_ok = spec.values.len() == dsp::SPEC_FRAMES * dsp::SPEC_BINS;
    let silence_ok = spec.values.iter().all(|&v| v == want);
    result(
        "spectrogram-shape",
        shape_ok && silence_ok,
        format!(
            "298x128 exact: {shape_ok}, silence at log floor: {silence_ok}"
        ),
    )
}

/// Finite differences on the layers' own forward at h = 5e-3; coarse but
/// sensitive to any real gradient defect.
fn check_gradients(fault: Option<Fault>) -> CheckResult {
    let mut rng = SeededRng::new(0x5E1F);
    let mut worst = 0.0f64;
    let mut layers: Vec<(&str, Layer, Vec<usize>)> = vec![
        (
            "affine",
            Layer::Affine {
                weight: Tensor::randn(&[4, 3], 0.5, &mut rng),
                bias: Tensor::randn(&[4], 0.2, &mut rng),
            },
            vec![3],
        ),
        (
            "conv2d",
            Layer::Conv2d {
                weight: Tensor::randn(&[2, 2 * 9], 0.4, &mut rng),
                bias: Tensor::randn(&[2], 0.2, &mut rng),
                in_ch: 2,
                out_ch: 2,
                kh: 3,
                kw: 3,
                sh: 1,
                sw: 1,
                ph: 1,
                pw: 1,
            },
            vec![2, 5, 5],
        ),
        ("gelu", Layer::Gelu, vec![6]),
        (
            "layer_norm",
            Layer::LayerNorm {
                gamma: Tensor::randn(&[5], 0.4, &mut rng),
                beta: Tensor::randn(&[5], 0.2, &mut rng),
            },
            vec![5],
        ),
        (
            "block",
            Layer::Block(Box::new(TransformerBlock {
                dim: 4,
                heads: 2,
                mlp: 6,
                ln1_gamma: Tensor::randn(&[4], 0.3, &mut rng),
                ln1_beta: Tensor::randn(&[4], 0.2, &mut rng),
                w_qkv: Tensor::randn(&[12, 4], 0.4, &mut rng),
                b_qkv: Tensor::randn(&[12], 0.1, &mut rng),
                w_out: Tensor::randn(&[4, 4], 0.4, &mut rng),
                b_out: Tensor::randn(&[4], 0.1, &mut rng),
                ln2_gamma: Tensor::randn(&[4], 0.3, &mut rng),
                ln2_beta: Tensor::randn(&[4], 0.2, &mut rng),
                w_mlp1: Tensor::randn(&[6, 4], 0.4, &mut rng),
                b_mlp1: Tensor::randn(&[6], 0.1, &mut rng),
                w_mlp2: Tensor::randn(&[4, 6], 0.4, &mut rng),
                b_mlp2: Tensor::randn(&[4], 0.1, &mut rng),
            })),
            vec![3, 4],
        ),
    ];

    for (name, layer, in_shape) in layers.iter_mut() {
        let input = Tensor::randn(in_shape, 0.8, &mut rng);
        let (out, cache) = match layer.forward(&input) {
            Ok(v) => v,
            Err(e) => return result("gradient-check", false, format!("{name}: {e}")),
        };
        let loss_w: Vec<f32> = (0..out.len()).map(|_| rng.gauss() as f32).collect();
        let dy = Tensor::from_vec(&out.shape, loss_w.clone()).unwrap();
        let (mut grads, _) = match layer.backward(&cache, &dy) {
            Ok(v) => v,
            Err(e) => return result("gradient-check", false, format!("{name}: {e}")),
        };
        if fault == Some(Fault::GradientBug) && *name == "affine" {
            for v in grads[0].data.iter_mut() {
                *v *= 1.5;
            }
        }
        // finite differences over each parameter
        let h = 5e-3f32;
        let loss = |layer: &Layer| -> f64 {
            let (o, _) = layer.forward(&input).unwrap();
            o.data.iter().zip(&loss_w).map(|(&a, &b)| (a * b) as f64).sum()
        };
        for (pi, grad) in grads.iter().enumerate() {
            let n = grad.len();
            for ei in (0..n).step_by((n / 12).max(1)) {
                let orig = layer.params()[pi].1.data[ei];
                layer.params_mut()[pi].data[ei] = orig + h;
                let lp = loss(layer);
                layer.params_mut()[pi].data[ei] = orig - h;
                let lm = loss(layer);
                layer.params_mut()[pi].data[ei] = orig;
                let fd = (lp - lm) / (2.0 * h as f64);
                let got = grad.data[ei] as f64;
                let denom = fd.abs().max(got.abs()).max(0.05);
                worst = worst.max((got - fd).abs() / denom);
            }
        }
    }
    result(
        "gradient-check",
        worst < 2e-2,
        format!("worst relative error {worst:.2e} (tolerance 2e-2)"),
    )
}

/// Brute-force 1-D transport: replicate both sample lists to a common length
/// and match sorted order.
pub fn w1_sorted_matching_oracle(a: &[f64], b: &[f64]) -> f64 {
    fn lcm(a: usize, b: usize) -> usize {
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        a / gcd(a, b) * b
    }
    let l = lcm(a.len(), b.len());
    let expand = |xs: &[f64]| {
        let rep = l / xs.len();
        let mut out: Vec<f64> = xs.iter().flat_map(|&v| std::iter::repeat(v).take(rep)).collect();
        out.sort_by(|x, y| x.partial_cmp(y).unwrap());
        out
    };
    let ea = expand(a);
    let eb = expand(b);
    ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum::<f64>() / l as f64
}

fn check_wasserstein_oracle() -> CheckResult {
    let mut rng = SeededRng::new(0x57A7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = 1 + rng.index(8);
        let m = 1 + rng.index(8);
        let a: Vec<f64> = (0..n).map(|_| rng.gauss() * 4.0).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gauss() * 4.0).collect();
        let got = match wasserstein1(&a, &b) {
            Ok(v) => v,
            Err(e) => return result("wasserstein-oracle", false, e.to_string()),
        };
        let want = w1_sorted_matching_oracle(&a, &b);
        worst = worst.max((got - want).abs());
    }
    result(
        "wasserstein-oracle",
        worst < 1e-9,
        format!("worst |impl - oracle| = {worst:.2e}"),
    )
}

/// Quadrature oracle for the Beta CDF: Simpson integration of the
/// unnormalized density, self-normalized over [0, 1].
pub fn beta_cdf_quadrature(a: f64, b: f64, x: f64) -> f64 {
    // posterior shapes are always >= 1, so endpoint powers are finite
    // (0^0 = 1 covers the shape-1 edges)
    let pdf = |t: f64| {
        if !(0.0..=1.0).contains(&t) {
            0.0
        } else {
            t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0)
        }
    };
    let simpson = |lo: f64, hi: f64, n: usize| {
        let h = (hi - lo) / n as f64;
        let mut acc = pdf(lo) + pdf(hi);
        for i in 1..n {
            let t = lo + i as f64 * h;
            acc += pdf(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let total = simpson(0.0, 1.0, 4096);
    simpson(0.0, x.clamp(0.0, 1.0), 4096) / total
}

pub fn beta_quantile_quadrature(a: f64, b: f64, p: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if beta_cdf_quadrature(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_beta_oracle() -> CheckResult {
    // analytic case: Beta(2,1) has CDF x^2
    let ci = match beta_credible_interval(1, 1, 0.95) {
        Ok(v) => v,
        Err(e) => return result("beta-ci-oracle", false, e.to_string()),
    };
    let analytic_ok =
        (ci.lo - 0.025f64.sqrt()).abs() < 1e-5 && (ci.hi - 0.975f64.sqrt()).abs() < 1e-5;
    let mut worst = 0.0f64;
    for (s, n) in [(0usize, 0usize), (3, 9), (22, 40), (40, 40)] {
        let ci = beta_credible_interval(s, n, 0.95).unwrap();
        let lo_o = beta_quantile_quadrature(ci.alpha, ci.beta, 0.025);
        let hi_o = beta_quantile_quadrature(ci.alpha, ci.beta, 0.975);
        worst = worst.max((ci.lo - lo_o).abs()).max((ci.hi - hi_o).abs());
    }
    result(
        "beta-ci-oracle",
        analytic_ok && worst < 1e-6,
        format!("analytic Beta(2,1): {analytic_ok}, worst quadrature gap {worst:.2e}"),
    )
}

fn check_determinism() -> CheckResult {
    let cfg = crate::sim::SimConfig::default();
    let run = || {
        let mut sim = crate::sim::new_sim(&cfg, 99).unwrap();
        let mut blob = Vec::new();
        for _ in 0..5 {
            let out = sim.step([0.2, -0.1, -0.8]);
            for v in out.audio_chunk.iter().chain(out.image.iter()) {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        blob
    };
    let sims_match = run() == run();
    let mut r1 = SeededRng::new(4);
    let mut r2 = SeededRng::new(4);
    let rng_match = (0..64).all(|_| r1.gauss().to_bits() == r2.gauss().to_bits());
    result(
        "determinism",
        sims_match && rng_match,
        format!("sim bit-identical: {sims_match}, rng bit-identical: {rng_match}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_selftest_passes() {
        let report = run_selftest(None);
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert!(report.passed());
    }

    #[test]
    fn injected_gradient_bug_is_detected() {
        let report = run_selftest(Some(Fault::GradientBug));
        assert!(!report.passed());
        let grad = report.checks.iter().find(|c| c.name == "gradient-check").unwrap();
        assert!(!grad.passed);
    }
}
