//! Squared-cosine noise schedule and the forward-noising map.

use super::PolicyError;

/// Diffusion schedule over T steps: cumulative signal fractions
/// alpha_bar[0..=T] and per-step betas[1..=T] (stored 0-indexed).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub t_steps: usize,
    pub alpha_bar: Vec<f64>,
    pub betas: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const BETA_CLIP: f64 = 0.999;

/// Squared-cosine schedule, normalized so alpha_bar(0) = 1; betas derived
/// from consecutive ratios and clipped to (0, 0.999].
pub fn make_schedule(t_steps: usize) -> Result<NoiseSchedule, PolicyError> {
    if t_steps < 1 {
        return Err(PolicyError::Config("schedule needs at least one step".into()));
    }
    let f = |t: f64| {
        let x = ((t / t_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET))
            * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0.0);
    let mut alpha_bar = Vec::with_capacity(t_steps + 1);
    let mut betas = Vec::with_capacity(t_steps);
    alpha_bar.push(1.0);
    let mut prev = f0;
    let mut cum = 1.0f64;
    for t in 1..=t_steps {
        let ft = f(t as f64);
        let beta = (1.0 - ft / prev).clamp(f64::MIN_POSITIVE, BETA_CLIP);
        cum *= 1.0 - beta;
        alpha_bar.push(cum);
        betas.push(beta);
        prev = ft;
    }
    Ok(NoiseSchedule { t_steps, alpha_bar, betas })
}

impl NoiseSchedule {
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn beta_at(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }
}

/// Forward noising: a_t = sqrt(abar_t) a0 + sqrt(1 - abar_t) eps.
pub fn q_sample(
    a0: [f32; 3],
    t: usize,
    eps: [f32; 3],
    schedule: &NoiseSchedule,
) -> Result<[f32; 3], PolicyError> {
    if t < 1 || t > schedule.t_steps {
        return Err(PolicyError::Domain(format!(
            "diffusion step {t} outside 1..={}",
            schedule.t_steps
        )));
    }
    let ab = schedule.alpha_bar[t];
    let sa = ab.sqrt();
    let sn = (1.0 - ab).sqrt();
    Ok([
        (sa * a0[0] as f64 + sn * eps[0] as f64) as f32,
        (sa * a0[1] as f64 + sn * eps[1] as f64) as f32,
        (sa * a0[2] as f64 + sn * eps[2] as f64) as f32,
    ])
}
