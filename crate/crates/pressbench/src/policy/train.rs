//! Policy training: epsilon-prediction MSE over uniformly sampled dataset
//! ticks, with the vision encoder trained jointly and audio features frozen.

use super::schedule::{make_schedule, q_sample};
use super::{
    build_conditioning, denoiser_module, timestep_embedding, AudioFeature, DiffusionPolicy,
    Phase, PolicyError, Variant,
};
use crate::data::{augment_image, image_tensor, AugmentConfig, Dataset};
use crate::dsp::{self, MelConfig, SpecStats};
use crate::nn::{concat, split_grad, AdamState, LrSchedule, Module, Tensor};
use crate::percept::{vision_encoder, AudioEncoder, FEATURE_DIM};
use crate::rng::SeededRng;

/// Frozen audio features for every (episode, tick) of a dataset.
#[derive(Clone, Debug)]
pub struct AudioFeatures {
    pub embeds: Vec<Vec<Vec<f32>>>,
    pub logits: Vec<Vec<[f32; 2]>>,
}

/// One encoder sweep over all per-tick windows.
pub fn precompute_features(
    ds: &Dataset,
    mel: &MelConfig,
    stats: &SpecStats,
    encoder: &AudioEncoder,
) -> Result<AudioFeatures, PolicyError> {
    let mut embeds = Vec::with_capacity(ds.episodes.len());
    let mut logits = Vec::with_capacity(ds.episodes.len());
    for ep in &ds.episodes {
        let mut ep_embeds = Vec::with_capacity(ep.steps.len());
        let mut ep_logits = Vec::with_capacity(ep.steps.len());
        for t in 0..ep.steps.len() {
            let spec = dsp::log_mel(&ep.window_at(t, mel), mel)?;
            let spec = dsp::normalize_spec(&spec, stats)?;
            let tensor = Tensor::from_vec(&[1, spec.frames(), spec.bins()], spec.values)
                .expect("spec shape");
            let (e, l) = encoder.embed_and_logits(&tensor)?;
            ep_embeds.push(e);
            ep_logits.push([l[0], l[1]]);
        }
        embeds.push(ep_embeds);
        logits.push(ep_logits);
    }
    Ok(AudioFeatures { embeds, logits })
}

#[derive(Clone, Debug)]
pub struct PolicyTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f32,
    pub diffusion_steps: usize,
    pub denoiser_width: usize,
    pub temb_dim: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct PolicyTrainReport {
    /// Per-step mean loss.
    pub losses: Vec<f64>,
}

/// Mean epsilon-prediction error of an arbitrary predictor over a batch of
/// (normalized action, conditioning) pairs; draws (t, eps) per item.
pub fn training_loss<F>(
    schedule: &super::NoiseSchedule,
    items: &[([f32; 3], Vec<f32>)],
    rng: &mut SeededRng,
    mut predict: F,
) -> Result<f64, PolicyError>
where
    F: FnMut(&[f32; 3], usize, &[f32]) -> [f32; 3],
{
    if items.is_empty() {
        return Err(PolicyError::Config("empty loss batch".into()));
    }
    let mut total = 0.0f64;
    for (action, cond) in items {
        let t = 1 + rng.index(schedule.t_steps);
        let eps = [rng.gauss() as f32, rng.gauss() as f32, rng.gauss() as f32];
        let noisy = q_sample(*action, t, eps, schedule)?;
        let pred = predict(&noisy, t, cond);
        for i in 0..3 {
            let d = (pred[i] - eps[i]) as f64;
            total += d * d;
        }
    }
    Ok(total / (items.len() * 3) as f64)
}

/// Train a policy for one variant over a collected dataset.
///
/// `features` must come from [`precompute_features`] with the same encoder
/// for the generic and fusion variants; the soft sensor trains on the
/// privileged button state and needs none.
pub fn train_policy(
    ds: &Dataset,
    aug: &AugmentConfig,
    img_side: usize,
    variant: Variant,
    audio_encoder: AudioEncoder,
    features: Option<&AudioFeatures>,
    threshold: f32,
    latency_s: f64,
    cfg: &PolicyTrainConfig,
) -> Result<(DiffusionPolicy, PolicyTrainReport), PolicyError> {
    if ds.flat_len() == 0 {
        return Err(PolicyError::Config("dataset is empty".into()));
    }
    if variant != Variant::SoftSensor && features.is_none() {
        return Err(PolicyError::Config(format!(
            "variant {} needs precomputed audio features",
            variant.name()
        )));
    }
    if variant == Variant::SoftSensor && audio_encoder.n_classes() != 2 {
        return Err(PolicyError::Config(
            "soft sensor needs the fine-tuned 2-class detector encoder".into(),
        ));
    }
    let norm = ds.norm_stats()?.clone();
    let schedule = make_schedule(cfg.diffusion_steps)?;
    let mut vision = vision_encoder(crate::rng::derive_seed(cfg.seed, "policy-vision"));
    let mut denoiser = denoiser_module(
        variant.conditioning_dim(),
        cfg.denoiser_width,
        cfg.temb_dim,
        crate::rng::derive_seed(cfg.seed, "policy-denoiser"),
    );

    let lr_schedule = LrSchedule::new(cfg.base_lr, cfg.warmup_steps, cfg.steps)?;
    let mut adam = {
        let mut params = vision.params();
        params.extend(denoiser.params());
        AdamState::new(&params, cfg.weight_decay)
    };
    let n_vision = vision.params().len();

    let mut sample_rng = SeededRng::derived(cfg.seed, "policy-batch");
    let mut aug_rng = SeededRng::derived(cfg.seed, "policy-augment");
    let mut noise_rng = SeededRng::derived(cfg.seed, "policy-noise");

    let mut losses = Vec::with_capacity(cfg.steps);
    let cond_off = 3 + cfg.temb_dim;
    for step in 0..cfg.steps {
        let picks = ds.sample_indices(cfg.batch_size, &mut sample_rng);
        let mut vision_grads = vision.zeros_like_params();
        let mut denoiser_grads = denoiser.zeros_like_params();
        let mut batch_loss = 0.0f64;
        let inv = 1.0 / (cfg.batch_size * 3) as f32;

        for (e, t) in picks {
            let ts = &ds.episodes[e].steps[t];
            let img = crate::data::dequantize_image(&ts.image);
            let cropped = augment_image(&img, img_side, img_side, aug, &mut aug_rng);
            let img_tensor = image_tensor(&cropped, aug.crop_width, aug.crop_height);
            let (vfeat, vision_tape) = vision.forward_train(&img_tensor)?;

            let audio = match variant {
                Variant::Generic | Variant::FusionEmbed => Some(AudioFeature::Embed(
                    features.unwrap().embeds[e][t].clone(),
                )),
                Variant::FusionLogits => {
                    Some(AudioFeature::Logits(features.unwrap().logits[e][t]))
                }
                Variant::SoftSensor => None,
            };
            let privileged = match variant {
                Variant::SoftSensor => Some(ts.button_state as f32),
                _ => None,
            };
            let cond = build_conditioning(
                variant,
                Phase::Train,
                &vfeat.data,
                audio.as_ref(),
                privileged,
            )?;

            let action = norm.normalize_action(ts.action);
            let dt = 1 + noise_rng.index(schedule.t_steps);
            let eps = [
                noise_rng.gauss() as f32,
                noise_rng.gauss() as f32,
                noise_rng.gauss() as f32,
            ];
            let noisy = q_sample(action, dt, eps, &schedule)?;
            let temb = timestep_embedding(dt, cfg.temb_dim);
            let input = concat(&[noisy.as_slice(), &temb, &cond.values]);
            let input_t = Tensor::from_vec(&[input.len()], input).expect("flat input");
            let (pred, den_tape) = denoiser.forward_train(&input_t)?;

            let mut dy = Tensor::zeros(&[3]);
            for i in 0..3 {
                let d = pred.data[i] - eps[i];
                batch_loss += (d as f64) * (d as f64);
                dy.data[i] = 2.0 * d * inv;
            }
            let (dgrads, dinput) = denoiser.backward(&den_tape, &dy)?;
            Module::accumulate(&mut denoiser_grads, &dgrads);

            // gradient flows into the vision half of the conditioning
            let parts = split_grad(
                &dinput.data,
                &[cond_off, FEATURE_DIM, variant.audio_dim()],
            );
            let dvis = Tensor::from_vec(&[FEATURE_DIM], parts[1].clone()).expect("vision grad");
            let (vgrads, _) = vision.backward(&vision_tape, &dvis)?;
            Module::accumulate(&mut vision_grads, &vgrads);
        }

        batch_loss /= (cfg.batch_size * 3) as f64;
        if !batch_loss.is_finite() {
            return Err(PolicyError::Config(format!(
                "training diverged: non-finite loss at step {step} (lr {:.3e})",
                lr_schedule.lr_at(step)
            )));
        }
        losses.push(batch_loss);

        let lr = lr_schedule.lr_at(step);
        let mut params = vision.params_mut();
        params.extend(denoiser.params_mut());
        let mut grads = vision_grads;
        grads.extend(denoiser_grads);
        debug_assert_eq!(params.len(), grads.len());
        debug_assert!(params.len() > n_vision);
        adam.step(&mut params, &grads, lr);
    }

    let policy = DiffusionPolicy {
        variant,
        schedule,
        vision,
        denoiser,
        audio_encoder,
        threshold,
        latency_s,
        norm,
        spec_stats: ds.norm_stats()?.spec,
        temb_dim: cfg.temb_dim,
        trained_steps: cfg.steps,
        train_seed: cfg.seed,
    };
    Ok((policy, PolicyTrainReport { losses }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::sample_action;

    #[test]
    fn perfect_predictor_has_zero_loss() {
        // with a0 = 0 the noise is recoverable from the noisy action alone
        let s = make_schedule(50).unwrap();
        let items: Vec<([f32; 3], Vec<f32>)> =
            (0..64).map(|_| ([0.0f32; 3], vec![0.0f32; 4])).collect();
        let mut rng = SeededRng::new(1);
        let loss = training_loss(&s, &items, &mut rng, |x, t, _| {
            let sn = (1.0 - s.alpha_bar_at(t)).sqrt();
            [
                (x[0] as f64 / sn) as f32,
                (x[1] as f64 / sn) as f32,
                (x[2] as f64 / sn) as f32,
            ]
        })
        .unwrap();
        assert!(loss < 1e-10, "loss {loss}");
    }

    #[test]
    fn zero_predictor_loss_is_unit_noise_energy() {
        let s = make_schedule(50).unwrap();
        let items: Vec<([f32; 3], Vec<f32>)> =
            (0..2000).map(|_| ([0.2f32, -0.1, 0.5], vec![])).collect();
        let mut rng = SeededRng::new(2);
        let loss = training_loss(&s, &items, &mut rng, |_, _, _| [0.0; 3]).unwrap();
        assert!((loss - 1.0).abs() < 0.05, "loss {loss}");
    }

    #[test]
    fn loss_is_seed_deterministic() {
        let s = make_schedule(50).unwrap();
        let items: Vec<([f32; 3], Vec<f32>)> =
            (0..32).map(|i| ([(i as f32 * 0.01) - 0.15, 0.0, 0.3], vec![])).collect();
        let a = training_loss(&s, &items, &mut SeededRng::new(7), |_, _, _| [0.1; 3]).unwrap();
        let b = training_loss(&s, &items, &mut SeededRng::new(7), |_, _, _| [0.1; 3]).unwrap();
        assert_eq!(a, b);
    }

    /// End-to-end diffusion learning on a toy problem: all targets equal a
    /// constant action, so samples from the trained denoiser must
    /// concentrate there.
    #[test]
    fn toy_training_concentrates_samples_on_the_target() {
        let schedule = make_schedule(50).unwrap();
        let temb_dim = 32;
        let cond = vec![0.5f32; 8];
        let target = [0.0f32, 0.0, 0.5];
        let mut denoiser = denoiser_module(cond.len(), 64, temb_dim, 11);
        let mut adam = AdamState::new(&denoiser.params(), 0.0);
        let lr_schedule = LrSchedule::new(2e-3, 50, 1500).unwrap();
        let mut rng = SeededRng::new(12);
        let batch = 16;
        for step in 0..1500 {
            let mut grads = denoiser.zeros_like_params();
            let inv = 1.0 / (batch * 3) as f32;
            for _ in 0..batch {
                let t = 1 + rng.index(50);
                let eps = [rng.gauss() as f32, rng.gauss() as f32, rng.gauss() as f32];
                let noisy = q_sample(target, t, eps, &schedule).unwrap();
                let temb = timestep_embedding(t, temb_dim);
                let input = concat(&[noisy.as_slice(), &temb, &cond]);
                let (pred, tape) = denoiser
                    .forward_train(&Tensor::from_vec(&[input.len()], input).unwrap())
                    .unwrap();
                let mut dy = Tensor::zeros(&[3]);
                for i in 0..3 {
                    dy.data[i] = 2.0 * (pred.data[i] - eps[i]) * inv;
                }
                let (g, _) = denoiser.backward(&tape, &dy).unwrap();
                Module::accumulate(&mut grads, &g);
            }
            adam.step(&mut denoiser.params_mut(), &grads, lr_schedule.lr_at(step));
        }
        let mut sample_rng = SeededRng::new(13);
        let mut worst = 0.0f32;
        let mut mean = [0.0f64; 3];
        let n = 50;
        for _ in 0..n {
            let a = sample_action(&denoiser, &schedule, &cond, temb_dim, &mut sample_rng).unwrap();
            for i in 0..3 {
                mean[i] += a[i] as f64;
                worst = worst.max((a[i] - target[i]).abs());
            }
        }
        for (i, m) in mean.iter().enumerate() {
            let m = m / n as f64;
            assert!(
                (m - target[i] as f64).abs() < 0.05,
                "axis {i}: mean {m} target {}",
                target[i]
            );
        }
        assert!(worst < 0.2, "sample spread too wide: {worst}");
    }
}
