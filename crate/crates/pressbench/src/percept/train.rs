//! Encoder pretraining on synthetic events and click-detector fine-tuning on
//! privileged labels.

use super::events::{synth_event_wave, EventClass, EVENT_CLASSES};
use super::{AudioEncoder, ClickDetector, PerceptError};
use crate::data::Dataset;
use crate::dsp::{self, MelConfig, SpecStats};
use crate::nn::{train_epochs, LossKind, LrPlan, Target, Tensor, TrainConfig, TrainReport};
use crate::rng::SeededRng;

#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub heldout_accuracy: f64,
    pub train: TrainReport,
    /// Normalization moments of the synthetic corpus.
    pub spec_stats: SpecStats,
    pub train_examples: usize,
    pub heldout_examples: usize,
}

#[derive(Clone, Debug)]
pub struct FinetuneReport {
    pub train: TrainReport,
    pub train_windows: usize,
    pub positive_fraction: f64,
}

/// Classification pretraining over the synthetic event corpus. Returns the
/// trained encoder and held-out accuracy.
pub fn pretrain_audio(
    classes: &[EventClass],
    per_class: usize,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
    mel: &MelConfig,
) -> Result<(AudioEncoder, PretrainReport), PerceptError> {
    if classes.len() < 2 {
        return Err(PerceptError::Config(format!(
            "pretraining needs at least 2 event classes, got {}",
            classes.len()
        )));
    }
    if per_class < 2 {
        return Err(PerceptError::Config("need at least 2 examples per class".into()));
    }
    let mut rng = SeededRng::derived(seed, "pretrain-corpus");
    let mut specs: Vec<crate::dsp::LogMelSpectrogram> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for &class in classes {
        for _ in 0..per_class {
            let wave = synth_event_wave(class, &mut rng);
            let spec = dsp::log_mel(&wave, mel).map_err(|e| PerceptError::Config(e.to_string()))?;
            specs.push(spec);
            labels.push(class.label());
        }
    }
    let spec_stats = SpecStats::from_corpus(specs.iter())
        .map_err(|e| PerceptError::Config(e.to_string()))?;

    let inputs: Vec<Tensor> = specs
        .iter()
        .map(|s| {
            let n = dsp::normalize_spec(s, &spec_stats).expect("stats are valid");
            Tensor::from_vec(&[1, s.frames(), s.bins()], n.values).expect("spec shape")
        })
        .collect();

    // seeded split: hold out one example in five
    let mut split_rng = SeededRng::derived(seed, "pretrain-split");
    let perm = split_rng.permutation(inputs.len());
    let heldout_n = (inputs.len() / 5).max(classes.len());
    let (hold_idx, train_idx) = perm.split_at(heldout_n);

    let train_inputs: Vec<Tensor> = train_idx.iter().map(|&i| inputs[i].clone()).collect();
    let train_targets: Vec<Target> = train_idx.iter().map(|&i| Target::Class(labels[i])).collect();

    let mut encoder = AudioEncoder::new(classes.iter().map(|c| c.label()).max().unwrap() + 1, seed);
    let train = train_epochs(
        &mut encoder.net,
        &train_inputs,
        &train_targets,
        LossKind::CrossEntropy,
        &TrainConfig {
            epochs,
            batch_size,
            lr: LrPlan::Constant(lr),
            weight_decay: 1e-6,
            seed,
        },
    )?;

    let mut correct = 0usize;
    for &i in hold_idx {
        let logits = encoder.logits(&inputs[i])?;
        let pred = argmax(&logits);
        if pred == labels[i] {
            correct += 1;
        }
    }
    let heldout_accuracy = correct as f64 / hold_idx.len() as f64;
    Ok((
        encoder,
        PretrainReport {
            heldout_accuracy,
            train,
            spec_stats,
            train_examples: train_idx.len(),
            heldout_examples: hold_idx.len(),
        },
    ))
}

/// Convenience: pretrain over all four event families.
pub fn pretrain_audio_default(
    per_class: usize,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
    mel: &MelConfig,
) -> Result<(AudioEncoder, PretrainReport), PerceptError> {
    pretrain_audio(&EVENT_CLASSES, per_class, epochs, lr, batch_size, seed, mel)
}

fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Build labeled detector windows for the given (episode, tick) picks.
/// Label rule: positive iff a press event occurred within the 3 s window.
pub fn detector_windows(
    ds: &Dataset,
    mel: &MelConfig,
    stats: &SpecStats,
    picks: &[(usize, usize)],
) -> Result<Vec<(Tensor, bool)>, PerceptError> {
    let window_steps = ds.window_steps(mel);
    let mut out = Vec::with_capacity(picks.len());
    for &(e, t) in picks {
        let ep = &ds.episodes[e];
        let spec = dsp::log_mel(&ep.window_at(t, mel), mel)
            .and_then(|s| dsp::normalize_spec(&s, stats))
            .map_err(|e| PerceptError::Config(e.to_string()))?;
        let tensor = Tensor::from_vec(&[1, spec.frames(), spec.bins()], spec.values)
            .expect("spec shape");
        out.push((tensor, ep.click_in_window(t, window_steps)));
    }
    Ok(out)
}

/// Fine-tune the pretrained encoder into a binary click detector. The class
/// head is re-initialized (zeros) and the whole network trains with
/// cross-entropy at the given rate.
pub fn finetune_click_detector(
    pretrained: &AudioEncoder,
    train_set: &[(Tensor, bool)],
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
    threshold: f32,
) -> Result<(ClickDetector, FinetuneReport), PerceptError> {
    let positives = train_set.iter().filter(|(_, l)| *l).count();
    if positives == 0 || positives == train_set.len() {
        return Err(PerceptError::Config(format!(
            "fine-tuning needs both classes, got {positives}/{} positive",
            train_set.len()
        )));
    }
    let mut encoder = pretrained.with_fresh_head(2);
    let inputs: Vec<Tensor> = train_set.iter().map(|(s, _)| s.clone()).collect();
    let targets: Vec<Target> = train_set
        .iter()
        .map(|(_, l)| Target::Class(*l as usize))
        .collect();
    let train = train_epochs(
        &mut encoder.net,
        &inputs,
        &targets,
        LossKind::CrossEntropy,
        &TrainConfig {
            epochs,
            batch_size,
            lr: LrPlan::Constant(lr),
            weight_decay: 1e-6,
            seed,
        },
    )?;
    let detector = ClickDetector::new(encoder, threshold)?;
    Ok((
        detector,
        FinetuneReport {
            train,
            train_windows: train_set.len(),
            positive_fraction: positives as f64 / train_set.len() as f64,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretrain_rejects_single_class() {
        let err = pretrain_audio(
            &[EventClass::NoiseOnly],
            4,
            1,
            1e-3,
            2,
            0,
            &MelConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PerceptError::Config(_)));
    }

    #[test]
    fn zero_epochs_keeps_the_initialization() {
        let mel = MelConfig::default();
        let (enc, report) =
            pretrain_audio(&EVENT_CLASSES, 2, 0, 1e-3, 2, 9, &mel).unwrap();
        let fresh = AudioEncoder::new(4, 9);
        assert_eq!(enc.net.params(), fresh.net.params());
        assert!(report.train.epoch_losses.is_empty());
    }

    #[test]
    fn finetune_rejects_single_class_data() {
        let enc = AudioEncoder::new(4, 1);
        let spec = Tensor::zeros(&[1, 298, 128]);
        let one_class = vec![(spec.clone(), true), (spec, true)];
        assert!(finetune_click_detector(&enc, &one_class, 1, 1e-5, 2, 0, 0.5).is_err());
    }

    #[test]
    fn finetune_zero_epochs_is_pretrained_trunk_plus_fresh_head() {
        let enc = AudioEncoder::new(4, 1);
        let spec = Tensor::randn(&[1, 298, 128], 0.3, &mut SeededRng::new(2));
        let data = vec![(spec.clone(), true), (spec, false)];
        let (det, _) = finetune_click_detector(&enc, &data, 0, 1e-5, 2, 0, 0.5).unwrap();
        // trunk parameters equal the pretrained checkpoint bit for bit
        let trunk_n = det.encoder.net.layers.len() - 1;
        for i in 0..trunk_n {
            assert_eq!(det.encoder.net.layers[i].params(), enc.net.layers[i].params());
        }
        // fresh zero head: logits are exactly zero
        let d = det.detect(&data[0].0).unwrap();
        assert_eq!(d.logits, [0.0, 0.0]);
    }
}
