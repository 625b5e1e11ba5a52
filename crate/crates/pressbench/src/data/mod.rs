//! Demonstration collection, dataset persistence, normalization statistics,
//! and train-time augmentation.
//!
//! A [`TimeStep`] pairs the observation at tick k (image, button state,
//! fingertip position, the 3-second audio history implied by earlier chunks)
//! with the displacement commanded at that tick and the step's products
//! (audio chunk, end-of-step force, press edge).

pub mod augment;
pub mod collect;
pub mod episode_io;
pub mod expert;

pub use augment::{augment_image, center_crop, AugmentConfig};
pub use collect::{collect, CollectStats, EpisodeEntry, Manifest};
pub use expert::{scripted_expert, ExpertConfig, ExpertEpisode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, DspError, MelConfig, SpecStats};
use crate::nn::Tensor;
use crate::rng::SeededRng;
use crate::sim::{SimConfig, SimError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// One 10 Hz record.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeStep {
    /// Observation image at this tick, quantized HxWx3 bytes.
    pub image: Vec<u8>,
    /// Audio synthesized during this step (after the action was issued).
    pub audio: Vec<f32>,
    /// Privileged button state at this tick.
    pub button_state: u8,
    /// Fingertip position at this tick, m.
    pub eef_position: [f32; 3],
    /// Displacement commanded at this tick, m (pre-normalization).
    pub action: [f32; 3],
    /// Contact force at step end, N.
    pub force: [f32; 3],
    /// True when a press event occurred during this step.
    pub press_edge: bool,
    /// Tick time, s.
    pub t: f32,
}

/// One demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub steps: Vec<TimeStep>,
    pub seed: u64,
    pub success: bool,
    pub config_hash: String,
}

impl Episode {
    /// Concatenated audio over all steps (gap-free by construction).
    pub fn audio_stream(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.steps.len() * 1600);
        for s in &self.steps {
            out.extend_from_slice(&s.audio);
        }
        out
    }

    /// The 3-second window ending at tick `t` (audio of steps 0..t,
    /// zero-padded on the left).
    pub fn window_at(&self, t: usize, mel: &MelConfig) -> Vec<f32> {
        let want = mel.window_samples();
        let spt = self.steps.first().map(|s| s.audio.len()).unwrap_or(0);
        let end = t * spt;
        let start = end.saturating_sub(want);
        let mut out = vec![0.0f32; want];
        let pad = want - (end - start);
        let stream_off = |i: usize| (i / spt, i % spt);
        for (k, src) in (start..end).enumerate() {
            let (ep, off) = stream_off(src);
            out[pad + k] = self.steps[ep].audio[off];
        }
        out
    }

    /// True when a press edge happened within the 3 s window ending at tick
    /// `t`; this is the detector label rule.
    pub fn click_in_window(&self, t: usize, window_steps: usize) -> bool {
        let lo = t.saturating_sub(window_steps);
        self.steps[lo..t].iter().any(|s| s.press_edge)
    }
}

/// Quantize a [0,1] float image to bytes.
pub fn quantize_image(img: &[f32]) -> Vec<u8> {
    img.iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Bytes back to [0,1] floats.
pub fn dequantize_image(img: &[u8]) -> Vec<f32> {
    img.iter().map(|&v| v as f32 / 255.0).collect()
}

/// Per-dimension normalization bounds plus spectrogram statistics.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub action_min: [f32; 3],
    pub action_max: [f32; 3],
    pub eef_min: [f32; 3],
    pub eef_max: [f32; 3],
    pub spec: SpecStats,
}

impl NormStats {
    pub fn validate(&self) -> Result<(), DataError> {
        for i in 0..3 {
            if self.action_max[i] <= self.action_min[i] {
                return Err(DataError::Config(format!(
                    "action axis {i}: max {} <= min {}",
                    self.action_max[i], self.action_min[i]
                )));
            }
            if self.eef_max[i] <= self.eef_min[i] {
                return Err(DataError::Config(format!(
                    "eef axis {i}: max {} <= min {}",
                    self.eef_max[i], self.eef_min[i]
                )));
            }
        }
        self.spec.validate()?;
        Ok(())
    }

    pub fn normalize_action(&self, a: [f32; 3]) -> [f32; 3] {
        [
            normalize_unchecked(a[0], self.action_min[0], self.action_max[0]),
            normalize_unchecked(a[1], self.action_min[1], self.action_max[1]),
            normalize_unchecked(a[2], self.action_min[2], self.action_max[2]),
        ]
    }

    pub fn denormalize_action(&self, a: [f32; 3]) -> [f32; 3] {
        [
            denormalize_unchecked(a[0], self.action_min[0], self.action_max[0]),
            denormalize_unchecked(a[1], self.action_min[1], self.action_max[1]),
            denormalize_unchecked(a[2], self.action_min[2], self.action_max[2]),
        ]
    }
}

/// Affine map lo -> -1, hi -> +1, clamped outside.
pub fn normalize(value: f32, lo: f32, hi: f32) -> Result<f32, DataError> {
    if hi <= lo {
        return Err(DataError::Config(format!("normalize needs hi > lo, got {lo}..{hi}")));
    }
    Ok(normalize_unchecked(value, lo, hi))
}

fn normalize_unchecked(value: f32, lo: f32, hi: f32) -> f32 {
    ((2.0 * (value - lo) / (hi - lo)) - 1.0).clamp(-1.0, 1.0)
}

/// Inverse of [`normalize`] on [lo, hi].
pub fn denormalize(value: f32, lo: f32, hi: f32) -> Result<f32, DataError> {
    if hi <= lo {
        return Err(DataError::Config(format!("denormalize needs hi > lo, got {lo}..{hi}")));
    }
    Ok(denormalize_unchecked(value, lo, hi))
}

fn denormalize_unchecked(value: f32, lo: f32, hi: f32) -> f32 {
    lo + (value.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo)
}

/// A collected dataset held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
    pub manifest: Manifest,
    /// Flattened (episode, tick) pairs.
    index: Vec<(u32, u32)>,
}

impl Dataset {
    pub fn new(episodes: Vec<Episode>, manifest: Manifest) -> Self {
        let mut index = Vec::new();
        for (e, ep) in episodes.iter().enumerate() {
            for t in 0..ep.steps.len() {
                index.push((e as u32, t as u32));
            }
        }
        Self { episodes, manifest, index }
    }

    pub fn load(dir: &std::path::Path) -> Result<Self, DataError> {
        let manifest = collect::read_manifest(dir)?;
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for entry in &manifest.episodes {
            episodes.push(episode_io::read_episode(&dir.join(&entry.file))?);
        }
        Ok(Self::new(episodes, manifest))
    }

    /// Total (episode, tick) pairs.
    pub fn flat_len(&self) -> usize {
        self.index.len()
    }

    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let (e, t) = self.index[flat];
        (e as usize, t as usize)
    }

    pub fn norm_stats(&self) -> Result<&NormStats, DataError> {
        self.manifest
            .norm_stats
            .as_ref()
            .ok_or_else(|| DataError::Config("dataset manifest has no normalization stats".into()))
    }

    /// Uniform (episode, tick) draws.
    pub fn sample_indices(&self, n: usize, rng: &mut SeededRng) -> Vec<(usize, usize)> {
        (0..n)
            .map(|_| {
                let (e, t) = self.index[rng.index(self.index.len())];
                (e as usize, t as usize)
            })
            .collect()
    }

    /// 3 s window steps for the configured chunk length.
    pub fn window_steps(&self, mel: &MelConfig) -> usize {
        let spt = self.episodes[0].steps[0].audio.len();
        mel.window_samples().div_ceil(spt)
    }
}

/// One supervised item: augmented image, normalized spectrogram, privileged
/// button state, normalized action.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub image: Tensor,
    pub spec: Tensor,
    pub button: f32,
    pub action: [f32; 3],
    pub episode: usize,
    pub tick: usize,
}

/// HWC bytes -> CHW float tensor in [0,1].
pub fn image_tensor(img: &[f32], width: usize, height: usize) -> Tensor {
    let mut chw = vec![0.0f32; 3 * width * height];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                chw[(c * height + y) * width + x] = img[(y * width + x) * 3 + c];
            }
        }
    }
    Tensor { shape: vec![3, height, width], data: chw }
}

/// Uniformly sampled supervised batch.
pub fn sample_batch(
    ds: &Dataset,
    mel: &MelConfig,
    aug: &AugmentConfig,
    img_w: usize,
    img_h: usize,
    n: usize,
    train: bool,
    rng: &mut SeededRng,
) -> Result<Vec<BatchItem>, DataError> {
    if ds.flat_len() == 0 {
        return Err(DataError::Config("dataset is empty".into()));
    }
    let stats = ds.norm_stats()?;
    let picks = ds.sample_indices(n, rng);
    let mut out = Vec::with_capacity(n);
    for (e, t) in picks {
        let ep = &ds.episodes[e];
        let step = &ep.steps[t];
        let float_img = dequantize_image(&step.image);
        let cropped = if train {
            augment_image(&float_img, img_w, img_h, aug, rng)
        } else {
            center_crop(&float_img, img_w, img_h, aug)
        };
        let spec = dsp::log_mel(&ep.window_at(t, mel), mel)?;
        let spec = dsp::normalize_spec(&spec, &stats.spec)?;
        let spec_tensor =
            Tensor::from_vec(&[1, spec.frames(), spec.bins()], spec.values.clone())
                .expect("spectrogram shape");
        out.push(BatchItem {
            image: image_tensor(&cropped, aug.crop_width, aug.crop_height),
            spec: spec_tensor,
            button: step.button_state as f32,
            action: stats.normalize_action(step.action),
            episode: e,
            tick: t,
        });
    }
    Ok(out)
}

/// Replay an episode's recorded actions through a fresh sim with the
/// episode's seed and compare every recorded field bit-exactly.
pub fn replay_matches(config: &SimConfig, ep: &Episode) -> Result<bool, DataError> {
    let mut sim = crate::sim::new_sim(config, ep.seed)?;
    let obs0 = sim.start_observation();
    let max_step = config.max_step_m() as f32;
    let mut image = obs0.image;
    let mut button = obs0.button_state.read();
    let mut eef = obs0.eef_position;
    for step in &ep.steps {
        if quantize_image(&image) != step.image
            || button != step.button_state
            || eef != step.eef_position
        {
            return Ok(false);
        }
        let sim_action = [
            step.action[0] / max_step,
            step.action[1] / max_step,
            step.action[2] / max_step,
        ];
        let out = sim.step(sim_action);
        if out.audio_chunk != step.audio
            || out.force != step.force
            || out.press_edge != step.press_edge
        {
            return Ok(false);
        }
        image = out.image;
        button = out.button_state.read();
        eef = out.eef_position;
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_maps_bounds_to_unit_interval() {
        assert_eq!(normalize(2.0, 2.0, 6.0).unwrap(), -1.0);
        assert_eq!(normalize(6.0, 2.0, 6.0).unwrap(), 1.0);
        assert_eq!(normalize(4.0, 2.0, 6.0).unwrap(), 0.0);
        // clamped outside
        assert_eq!(normalize(10.0, 2.0, 6.0).unwrap(), 1.0);
        assert_eq!(normalize(-10.0, 2.0, 6.0).unwrap(), -1.0);
    }

    #[test]
    fn normalize_rejects_degenerate_bounds() {
        assert!(normalize(0.0, 1.0, 1.0).is_err());
        assert!(denormalize(0.0, 3.0, 2.0).is_err());
    }

    #[test]
    fn denormalize_inverts_normalize_inside_bounds() {
        for i in 0..100 {
            let x = -0.5 + i as f32 * 0.017;
            let n = normalize(x, -0.5, 1.2).unwrap();
            let back = denormalize(n, -0.5, 1.2).unwrap();
            assert!((back - x).abs() < 1e-6, "{x} -> {n} -> {back}");
        }
    }

    #[test]
    fn quantize_round_trips_within_half_a_level() {
        let img = vec![0.0f32, 0.25, 0.5, 0.75, 1.0, 0.123];
        let q = quantize_image(&img);
        let back = dequantize_image(&q);
        for (a, b) in img.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn image_tensor_is_chw() {
        // 2x2 image, distinct channels
        let mut img = vec![0.0f32; 2 * 2 * 3];
        img[(0 * 2 + 1) * 3 + 2] = 0.7; // y=0, x=1, ch=2
        let t = image_tensor(&img, 2, 2);
        assert_eq!(t.shape, vec![3, 2, 2]);
        assert_eq!(t.data[(2 * 2 + 0) * 2 + 1], 0.7);
    }
}
