//! Observation encoders: a small vision CNN, a small audio transformer with a
//! synthetic pretraining task, and the instrumentation-supervised click
//! detector.

pub mod events;
pub mod train;

pub use events::{synth_event_wave, EventClass, EVENT_CLASSES};
pub use train::{
    detector_windows, finetune_click_detector, pretrain_audio, FinetuneReport, PretrainReport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{SPEC_BINS, SPEC_FRAMES};
use crate::nn::{Layer, Module, NnError, Tensor, TransformerBlock};
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum PerceptError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
}

/// Width of every observation feature.
pub const FEATURE_DIM: usize = 64;
/// Transformer token count for a 298x128 spectrogram under 16x16 patches
/// with stride 10.
pub const AUDIO_TOKENS: usize = 348;

fn layer_norm(dim: usize) -> Layer {
    Layer::LayerNorm {
        gamma: Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap(),
        beta: Tensor::zeros(&[dim]),
    }
}

fn block(dim: usize, heads: usize, mlp: usize, rng: &mut SeededRng) -> Layer {
    let w = |shape: &[usize], rng: &mut SeededRng| Tensor::randn(shape, 0.08, rng);
    Layer::Block(Box::new(TransformerBlock {
        dim,
        heads,
        mlp,
        ln1_gamma: Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap(),
        ln1_beta: Tensor::zeros(&[dim]),
        w_qkv: w(&[3 * dim, dim], rng),
        b_qkv: Tensor::zeros(&[3 * dim]),
        w_out: w(&[dim, dim], rng),
        b_out: Tensor::zeros(&[dim]),
        ln2_gamma: Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap(),
        ln2_beta: Tensor::zeros(&[dim]),
        w_mlp1: w(&[mlp, dim], rng),
        b_mlp1: Tensor::zeros(&[mlp]),
        w_mlp2: w(&[dim, mlp], rng),
        b_mlp2: Tensor::zeros(&[dim]),
    }))
}

fn conv(ic: usize, oc: usize, k: usize, s: usize, p: usize, rng: &mut SeededRng) -> Layer {
    let fan_in = (ic * k * k) as f64;
    Layer::Conv2d {
        weight: Tensor::randn(&[oc, ic * k * k], (2.0 / fan_in).sqrt(), rng),
        bias: Tensor::zeros(&[oc]),
        in_ch: ic,
        out_ch: oc,
        kh: k,
        kw: k,
        sh: s,
        sw: s,
        ph: p,
        pw: p,
    }
}

fn affine(i: usize, o: usize, std: f64, rng: &mut SeededRng) -> Layer {
    Layer::Affine {
        weight: Tensor::randn(&[o, i], std, rng),
        bias: Tensor::zeros(&[o]),
    }
}

/// Small CNN mapping an 86x86x3 crop to a 64-dim feature; trained jointly
/// with the policy.
pub fn vision_encoder(seed: u64) -> Module {
    let mut rng = SeededRng::derived(seed, "vision-init");
    Module::new(vec![
        conv(3, 8, 3, 2, 1, &mut rng), // 86 -> 43
        Layer::Relu,
        conv(8, 16, 3, 2, 1, &mut rng), // 43 -> 22
        Layer::Relu,
        conv(16, 16, 3, 2, 1, &mut rng), // 22 -> 11
        Layer::Relu,
        conv(16, 16, 3, 2, 1, &mut rng), // 11 -> 6
        Layer::Relu,
        Layer::Flatten,
        affine(16 * 6 * 6, FEATURE_DIM, (2.0 / 576.0f64).sqrt(), &mut rng),
    ])
}

/// Input crop side the vision encoder expects.
pub const VISION_INPUT: usize = 86;

/// Encode an 86x86x3 CHW image tensor to its 64-dim feature.
pub fn encode_image(encoder: &Module, image: &Tensor) -> Result<Vec<f32>, PerceptError> {
    if image.shape != [3, VISION_INPUT, VISION_INPUT] {
        return Err(PerceptError::Shape(format!(
            "vision encoder wants [3,{VISION_INPUT},{VISION_INPUT}], got {:?}",
            image.shape
        )));
    }
    Ok(encoder.forward(image)?.data)
}

/// Audio transformer: 16x16 patches at stride 10 over the spectrogram, two
/// attention blocks at width 64, mean-pooled, with a classification head as
/// the final layer. The pre-head pooled vector is the embedding.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    pub net: Module,
}

impl AudioEncoder {
    pub fn new(n_classes: usize, seed: u64) -> Self {
        let mut rng = SeededRng::derived(seed, "audio-init");
        let d = FEATURE_DIM;
        let net = Module::new(vec![
            conv(1, d, 16, 10, 0, &mut rng), // [1,298,128] -> [64,29,12]
            Layer::Tokens,                   // -> [348,64]
            Layer::PosAdd { pos: Tensor::randn(&[AUDIO_TOKENS, d], 0.02, &mut rng) },
            block(d, 4, 128, &mut rng),
            block(d, 4, 128, &mut rng),
            layer_norm(d),
            Layer::MeanRows,
            affine(d, n_classes, 0.05, &mut rng),
        ]);
        Self { net }
    }

    pub fn n_classes(&self) -> usize {
        match self.net.layers.last() {
            Some(Layer::Affine { weight, .. }) => weight.shape[0],
            _ => 0,
        }
    }

    /// Same trunk, new zero-initialized classification head.
    pub fn with_fresh_head(&self, n_classes: usize) -> Self {
        let mut net = self.net.clone();
        let last = net.layers.len() - 1;
        net.layers[last] = Layer::Affine {
            weight: Tensor::zeros(&[n_classes, FEATURE_DIM]),
            bias: Tensor::zeros(&[n_classes]),
        };
        Self { net }
    }

    fn check_shape(&self, spec: &Tensor) -> Result<(), PerceptError> {
        if spec.shape != [1, SPEC_FRAMES, SPEC_BINS] {
            return Err(PerceptError::Shape(format!(
                "audio encoder wants [1,{SPEC_FRAMES},{SPEC_BINS}], got {:?}",
                spec.shape
            )));
        }
        Ok(())
    }

    pub fn logits(&self, spec: &Tensor) -> Result<Vec<f32>, PerceptError> {
        self.check_shape(spec)?;
        Ok(self.net.forward(spec)?.data)
    }

    /// Mean-pooled pre-head representation (invariant to head parameters).
    pub fn embed(&self, spec: &Tensor) -> Result<Vec<f32>, PerceptError> {
        self.check_shape(spec)?;
        Ok(self.net.forward_partial(spec, self.net.layers.len() - 1)?.data)
    }

    /// One trunk pass serving both fusion conditioners.
    pub fn embed_and_logits(&self, spec: &Tensor) -> Result<(Vec<f32>, Vec<f32>), PerceptError> {
        self.check_shape(spec)?;
        let emb = self.net.forward_partial(spec, self.net.layers.len() - 1)?;
        let logits = match self.net.layers.last() {
            Some(head @ Layer::Affine { .. }) => head.forward(&emb)?.0.data,
            _ => return Err(PerceptError::Config("encoder has no affine head".into())),
        };
        Ok((emb.data, logits))
    }
}

/// Binary click detector: fine-tuned audio encoder plus a decision threshold
/// on the positive-class probability.
#[derive(Clone, Debug)]
pub struct ClickDetector {
    pub encoder: AudioEncoder,
    pub threshold: f32,
}

/// One detector decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub state: u8,
    pub logits: [f32; 2],
    pub prob: f32,
}

impl ClickDetector {
    pub fn new(encoder: AudioEncoder, threshold: f32) -> Result<Self, PerceptError> {
        if encoder.n_classes() != 2 {
            return Err(PerceptError::Config(format!(
                "click detector needs a 2-class head, got {}",
                encoder.n_classes()
            )));
        }
        Ok(Self { encoder, threshold })
    }

    /// Predict the button state for one normalized spectrogram. Probability
    /// ties at the threshold resolve positive.
    pub fn detect(&self, spec: &Tensor) -> Result<Detection, PerceptError> {
        let logits = self.encoder.logits(spec)?;
        let probs = crate::nn::softmax(&logits);
        let prob = probs[1];
        Ok(Detection {
            state: (prob >= self.threshold) as u8,
            logits: [logits[0], logits[1]],
            prob,
        })
    }

    pub fn embed(&self, spec: &Tensor) -> Result<Vec<f32>, PerceptError> {
        self.encoder.embed(spec)
    }
}

/// Confusion counts and the derived detector scores.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct DetectorMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
    pub false_negative_rate: f64,
}

impl DetectorMetrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom > 0 { 2.0 * tp as f64 / denom as f64 } else { 0.0 };
        let pos = tp + fn_;
        let false_negative_rate = if pos > 0 { fn_ as f64 / pos as f64 } else { 0.0 };
        Self { tp, fp, tn, fn_, f1, false_negative_rate }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Score a detector over labeled normalized spectrograms.
pub fn eval_detector(
    detector: &ClickDetector,
    samples: &[(Tensor, bool)],
) -> Result<DetectorMetrics, PerceptError> {
    if samples.is_empty() {
        return Err(PerceptError::Config("empty detector test set".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (spec, label) in samples {
        let got = detector.detect(spec)?.state == 1;
        match (got, *label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(DetectorMetrics::from_counts(tp, fp, tn, fn_))
}
