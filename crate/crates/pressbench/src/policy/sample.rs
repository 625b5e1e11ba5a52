//! Reverse (sampling) chain.

use super::schedule::NoiseSchedule;
use super::PolicyError;
use crate::nn::{concat, Module, Tensor};
use crate::rng::SeededRng;

fn clip3(x: &mut [f32; 3]) {
    for v in x.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
}

/// Run the reverse chain with an arbitrary noise predictor. Every
/// intermediate (including the initial draw) is clipped to [-1,1]^3;
/// `trace`, when provided, records each state after clipping.
pub fn reverse_chain<F>(
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
    mut predict: F,
    mut trace: Option<&mut Vec<[f32; 3]>>,
) -> [f32; 3]
where
    F: FnMut(&[f32; 3], usize) -> [f32; 3],
{
    let mut x = [
        rng.gauss() as f32,
        rng.gauss() as f32,
        rng.gauss() as f32,
    ];
    clip3(&mut x);
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(x);
    }
    for t in (1..=schedule.t_steps).rev() {
        let eps = predict(&x, t);
        let ab_t = schedule.alpha_bar_at(t);
        let ab_prev = schedule.alpha_bar_at(t - 1);
        let beta = schedule.beta_at(t);
        let alpha = 1.0 - beta;
        let mut next = [0.0f32; 3];
        for i in 0..3 {
            let mu = (x[i] as f64 - beta / (1.0 - ab_t).sqrt() * eps[i] as f64) / alpha.sqrt();
            let v = if t > 1 {
                // posterior variance of the fixed-small parameterization
                let var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
                mu + var.sqrt() * rng.gauss()
            } else {
                mu
            };
            next[i] = v as f32;
        }
        clip3(&mut next);
        x = next;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(x);
        }
    }
    x
}

fn predict_with_module(
    denoiser: &Module,
    temb_dim: usize,
    cond: &[f32],
    x: &[f32; 3],
    t: usize,
) -> Result<[f32; 3], PolicyError> {
    let temb = super::timestep_embedding(t, temb_dim);
    let input = concat(&[x.as_slice(), &temb, cond]);
    let out = denoiser.forward(&Tensor::from_vec(&[input.len()], input).expect("flat input"))?;
    Ok([out.data[0], out.data[1], out.data[2]])
}

/// Sample one normalized action in [-1,1]^3 for a fixed conditioning vector.
pub fn sample_action(
    denoiser: &Module,
    schedule: &NoiseSchedule,
    cond: &[f32],
    temb_dim: usize,
    rng: &mut SeededRng,
) -> Result<[f32; 3], PolicyError> {
    let mut err = None;
    let out = reverse_chain(
        schedule,
        rng,
        |x, t| match predict_with_module(denoiser, temb_dim, cond, x, t) {
            Ok(eps) => eps,
            Err(e) => {
                err.get_or_insert(e);
                [0.0; 3]
            }
        },
        None,
    );
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Like [`sample_action`] but returning every intermediate state.
pub fn sample_action_traced(
    denoiser: &Module,
    schedule: &NoiseSchedule,
    cond: &[f32],
    temb_dim: usize,
    rng: &mut SeededRng,
) -> Result<([f32; 3], Vec<[f32; 3]>), PolicyError> {
    let mut trace = Vec::with_capacity(schedule.t_steps + 1);
    let mut err = None;
    let out = reverse_chain(
        schedule,
        rng,
        |x, t| match predict_with_module(denoiser, temb_dim, cond, x, t) {
            Ok(eps) => eps,
            Err(e) => {
                err.get_or_insert(e);
                [0.0; 3]
            }
        },
        Some(&mut trace),
    );
    match err {
        Some(e) => Err(e),
        None => Ok((out, trace)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::make_schedule;

    #[test]
    fn zero_predictor_chain_is_centered() {
        // Monte-Carlo oracle: the clipped reverse chain of pure noise is
        // symmetric around zero, so the sample mean must vanish.
        let s = make_schedule(50).unwrap();
        let mut rng = SeededRng::new(1);
        let n = 10_000;
        let mut mean = [0.0f64; 3];
        for _ in 0..n {
            let x = reverse_chain(&s, &mut rng, |_, _| [0.0; 3], None);
            for i in 0..3 {
                mean[i] += x[i] as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        for i in 0..3 {
            assert!(mean[i].abs() < 0.05, "axis {i}: mean {}", mean[i]);
        }
    }

    #[test]
    fn optimal_delta_denoiser_recovers_the_target() {
        // for a point target a*, the optimal predictor is
        // eps(x,t) = (x - sqrt(abar) a*) / sqrt(1-abar); the chain mean must
        // land on a*
        let s = make_schedule(50).unwrap();
        let target = [0.3f32, -0.6, 0.8];
        let mut rng = SeededRng::new(2);
        let n = 3000;
        let mut mean = [0.0f64; 3];
        for _ in 0..n {
            let x = reverse_chain(
                &s,
                &mut rng,
                |x, t| {
                    let ab = s.alpha_bar_at(t);
                    let mut e = [0.0f32; 3];
                    for i in 0..3 {
                        e[i] = ((x[i] as f64 - ab.sqrt() * target[i] as f64)
                            / (1.0 - ab).sqrt()) as f32;
                    }
                    e
                },
                None,
            );
            for i in 0..3 {
                mean[i] += x[i] as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        for i in 0..3 {
            assert!(
                (mean[i] - target[i] as f64).abs() < 0.05,
                "axis {i}: {} vs {}",
                mean[i],
                target[i]
            );
        }
    }

    #[test]
    fn every_intermediate_is_clipped() {
        let s = make_schedule(50).unwrap();
        let mut rng = SeededRng::new(3);
        for _ in 0..50 {
            let mut trace = Vec::new();
            // a predictor that tries hard to blow the state up
            reverse_chain(&s, &mut rng, |_, _| [50.0, -50.0, 10.0], Some(&mut trace));
            assert_eq!(trace.len(), 51);
            for x in trace {
                for v in x {
                    assert!((-1.0..=1.0).contains(&v), "{v}");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_action() {
        let s = make_schedule(50).unwrap();
        let d = crate::policy::denoiser_module(65, 64, 32, 5);
        let cond = vec![0.1f32; 65];
        let a = sample_action(&d, &s, &cond, 32, &mut SeededRng::new(9)).unwrap();
        let b = sample_action(&d, &s, &cond, 32, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
        let c = sample_action(&d, &s, &cond, 32, &mut SeededRng::new(10)).unwrap();
        assert_ne!(a, c);
    }
}
