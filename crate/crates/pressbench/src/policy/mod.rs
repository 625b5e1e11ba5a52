//! Conditional diffusion policy: noise schedule, denoiser, reverse sampling,
//! and the four audio-conditioning variants.
//!
//! Variants differ only in the audio half of the conditioning vector:
//! embeddings from a generic pretrained encoder, embeddings or logits from
//! the fine-tuned click detector, or a single button bit (privileged at
//! training, detector-predicted at inference).

pub mod ckpt;
pub mod sample;
pub mod schedule;
pub mod train;

pub use ckpt::{load_policy, save_policy};
pub use sample::{reverse_chain, sample_action, sample_action_traced};
pub use schedule::{make_schedule, q_sample, NoiseSchedule};
pub use train::{
    precompute_features, train_policy, training_loss, AudioFeatures, PolicyTrainConfig,
    PolicyTrainReport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AugmentConfig, DataError, NormStats};
use crate::dsp::{self, AudioRing, DspError, MelConfig, SpecStats};
use crate::nn::{Layer, Module, NnError, Tensor};
use crate::percept::{AudioEncoder, PerceptError, FEATURE_DIM};
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("privileged leak: {0}")]
    PrivilegedLeak(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Percept(#[from] PerceptError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Audio-integration strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Embeddings from the generic pretrained encoder (no fine-tuning).
    Generic,
    /// Raw 2-class logits of the fine-tuned click detector.
    FusionLogits,
    /// Penultimate embeddings of the fine-tuned click detector.
    FusionEmbed,
    /// Button bit: privileged at training, detector prediction at inference.
    SoftSensor,
}

pub const ALL_VARIANTS: [Variant; 4] = [
    Variant::Generic,
    Variant::FusionLogits,
    Variant::FusionEmbed,
    Variant::SoftSensor,
];

impl Variant {
    pub fn audio_dim(self) -> usize {
        match self {
            Variant::Generic | Variant::FusionEmbed => FEATURE_DIM,
            Variant::FusionLogits => 2,
            Variant::SoftSensor => 1,
        }
    }

    pub fn conditioning_dim(self) -> usize {
        FEATURE_DIM + self.audio_dim()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Generic => "generic",
            Variant::FusionLogits => "fusion-logits",
            Variant::FusionEmbed => "fusion-embed",
            Variant::SoftSensor => "soft-sensor",
        }
    }

    pub fn parse(s: &str) -> Result<Self, PolicyError> {
        match s {
            "generic" => Ok(Variant::Generic),
            "fusion-logits" => Ok(Variant::FusionLogits),
            "fusion-embed" => Ok(Variant::FusionEmbed),
            "soft-sensor" => Ok(Variant::SoftSensor),
            other => Err(PolicyError::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Whether conditioning is being assembled for training or inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Inference,
}

/// The audio half of the conditioning, as computed by the caller.
#[derive(Clone, Debug)]
pub enum AudioFeature {
    Embed(Vec<f32>),
    Logits([f32; 2]),
    /// Detector-predicted button state (inference-time soft sensor).
    Button(f32),
}

/// Assembled conditioning vector plus its provenance.
#[derive(Clone, Debug)]
pub struct Conditioning {
    pub variant: Variant,
    pub values: Vec<f32>,
}

/// Concatenate vision and audio halves according to the variant, enforcing
/// the no-privileged-inference rule.
///
/// `privileged_button` may only be provided for the soft-sensor variant at
/// training time; any other use is a contract violation.
pub fn build_conditioning(
    variant: Variant,
    phase: Phase,
    vision: &[f32],
    audio: Option<&AudioFeature>,
    privileged_button: Option<f32>,
) -> Result<Conditioning, PolicyError> {
    if vision.len() != FEATURE_DIM {
        return Err(PolicyError::Config(format!(
            "vision feature must be {FEATURE_DIM}-dim, got {}",
            vision.len()
        )));
    }
    if privileged_button.is_some() && !(variant == Variant::SoftSensor && phase == Phase::Train) {
        return Err(PolicyError::PrivilegedLeak(format!(
            "privileged button state offered to {} at {:?}",
            variant.name(),
            phase
        )));
    }
    let mut values = Vec::with_capacity(variant.conditioning_dim());
    values.extend_from_slice(vision);
    match (variant, audio, privileged_button) {
        (Variant::Generic | Variant::FusionEmbed, Some(AudioFeature::Embed(e)), None) => {
            if e.len() != FEATURE_DIM {
                return Err(PolicyError::Config(format!(
                    "audio embedding must be {FEATURE_DIM}-dim, got {}",
                    e.len()
                )));
            }
            values.extend_from_slice(e);
        }
        (Variant::FusionLogits, Some(AudioFeature::Logits(l)), None) => {
            values.extend_from_slice(l);
        }
        (Variant::SoftSensor, None, Some(b)) => {
            values.push(b);
        }
        (Variant::SoftSensor, Some(AudioFeature::Button(b)), None) => {
            if phase == Phase::Train {
                return Err(PolicyError::Config(
                    "soft sensor trains on the privileged button state, not detector output"
                        .into(),
                ));
            }
            values.push(*b);
        }
        _ => {
            return Err(PolicyError::Config(format!(
                "variant {} was given the wrong audio feature kind",
                variant.name()
            )))
        }
    }
    debug_assert_eq!(values.len(), variant.conditioning_dim());
    Ok(Conditioning { variant, values })
}

/// Sinusoidal timestep embedding.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / (half - 1) as f64).exp();
        out.push((t as f64 * freq).sin() as f32);
    }
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / (half - 1) as f64).exp();
        out.push((t as f64 * freq).cos() as f32);
    }
    out
}

/// Denoiser: a conditioned MLP mapping (noisy action, timestep embedding,
/// conditioning) to predicted noise.
pub fn denoiser_module(cond_dim: usize, width: usize, temb_dim: usize, seed: u64) -> Module {
    let mut rng = SeededRng::derived(seed, "denoiser-init");
    let input = 3 + temb_dim + cond_dim;
    let aff = |i: usize, o: usize, std: f64, rng: &mut SeededRng| Layer::Affine {
        weight: Tensor::randn(&[o, i], std, rng),
        bias: Tensor::zeros(&[o]),
    };
    Module::new(vec![
        aff(input, width, (2.0 / input as f64).sqrt(), &mut rng),
        Layer::Gelu,
        aff(width, width, (2.0 / width as f64).sqrt(), &mut rng),
        Layer::Gelu,
        aff(width, width, (2.0 / width as f64).sqrt(), &mut rng),
        Layer::Gelu,
        aff(width, 3, 0.02, &mut rng),
    ])
}

/// A trained policy: denoiser, schedule, jointly-trained vision encoder, the
/// frozen audio encoder its variant conditions on, and normalization state.
#[derive(Clone, Debug)]
pub struct DiffusionPolicy {
    pub variant: Variant,
    pub schedule: NoiseSchedule,
    pub vision: Module,
    pub denoiser: Module,
    pub audio_encoder: AudioEncoder,
    /// Soft-sensor decision threshold on the positive-class probability.
    pub threshold: f32,
    /// Soft-sensor audio window lag, seconds.
    pub latency_s: f64,
    pub norm: NormStats,
    pub spec_stats: SpecStats,
    pub temb_dim: usize,
    pub trained_steps: usize,
    pub train_seed: u64,
}

impl DiffusionPolicy {
    /// Inference-time audio feature from the rolling microphone history.
    pub fn audio_feature(
        &self,
        ring: &AudioRing,
        t_now: f64,
        mel: &MelConfig,
    ) -> Result<AudioFeature, PolicyError> {
        let window_end = if self.variant == Variant::SoftSensor {
            (t_now - self.latency_s).max(0.0)
        } else {
            t_now
        };
        let window = ring.window_ending_at(window_end)?;
        let spec = dsp::log_mel(&window, mel)?;
        let spec = dsp::normalize_spec(&spec, &self.spec_stats)?;
        let tensor = Tensor::from_vec(&[1, spec.frames(), spec.bins()], spec.values)
            .expect("spectrogram shape");
        Ok(match self.variant {
            Variant::Generic | Variant::FusionEmbed => {
                AudioFeature::Embed(self.audio_encoder.embed(&tensor)?)
            }
            Variant::FusionLogits => {
                let l = self.audio_encoder.logits(&tensor)?;
                AudioFeature::Logits([l[0], l[1]])
            }
            Variant::SoftSensor => {
                let det = crate::percept::ClickDetector::new(
                    self.audio_encoder.clone(),
                    self.threshold,
                )?;
                AudioFeature::Button(det.detect(&tensor)?.state as f32)
            }
        })
    }

    /// One inference action in meters, from the raw 96x96 observation image
    /// and the audio history. Never touches the privileged channel.
    pub fn act(
        &self,
        image: &[f32],
        img_side: usize,
        ring: &AudioRing,
        t_now: f64,
        mel: &MelConfig,
        aug: &AugmentConfig,
        rng: &mut SeededRng,
    ) -> Result<[f32; 3], PolicyError> {
        // match the dataset path: images pass through u8 quantization
        let quantized = crate::data::dequantize_image(&crate::data::quantize_image(image));
        let crop = crate::data::center_crop(&quantized, img_side, img_side, aug);
        let img_tensor = crate::data::image_tensor(&crop, aug.crop_width, aug.crop_height);
        let vision_feat = crate::percept::encode_image(&self.vision, &img_tensor)?;
        let audio = self.audio_feature(ring, t_now, mel)?;
        let cond = build_conditioning(
            self.variant,
            Phase::Inference,
            &vision_feat,
            Some(&audio),
            None,
        )?;
        let normalized = sample_action(&self.denoiser, &self.schedule, &cond.values, self.temb_dim, rng)?;
        Ok(self.norm.denormalize_action(normalized))
    }
}
