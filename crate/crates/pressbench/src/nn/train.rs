//! Generic seeded training loop over a sequential module.

use super::module::Module;
use super::optim::{AdamState, LrSchedule};
use super::tensor::Tensor;
use super::NnError;
use crate::rng::SeededRng;

/// Supervised target for one sample.
#[derive(Clone, Debug)]
pub enum Target {
    /// Class index for cross-entropy.
    Class(usize),
    /// Regression target for mean squared error.
    Values(Tensor),
}

#[derive(Clone, Copy, Debug)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Learning-rate plan for a run.
#[derive(Clone, Copy, Debug)]
pub enum LrPlan {
    Constant(f64),
    /// Warmup then cosine decay over the run's total step count.
    WarmupCosine { base_lr: f64, warmup_steps: usize },
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrPlan,
    pub weight_decay: f32,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Loss value and gradient with respect to the network output.
pub fn loss_and_grad(kind: LossKind, output: &Tensor, target: &Target) -> (f64, Tensor) {
    match (kind, target) {
        (LossKind::Mse, Target::Values(want)) => {
            assert_eq!(output.shape, want.shape, "mse target shape mismatch");
            let n = output.len() as f64;
            let mut grad = Tensor::zeros(&output.shape);
            let mut loss = 0.0f64;
            for i in 0..output.len() {
                let d = (output.data[i] - want.data[i]) as f64;
                loss += d * d;
                grad.data[i] = (2.0 * d / n) as f32;
            }
            (loss / n, grad)
        }
        (LossKind::CrossEntropy, Target::Class(k)) => {
            let probs = super::layers::softmax(&output.data);
            let loss = -(probs[*k].max(1e-12) as f64).ln();
            let mut grad = Tensor::zeros(&output.shape);
            for i in 0..output.len() {
                grad.data[i] = probs[i] - if i == *k { 1.0 } else { 0.0 };
            }
            (loss, grad)
        }
        _ => panic!("loss kind does not match target kind"),
    }
}

/// Seeded epoch training: shuffled minibatches, Adam, optional cosine
/// schedule. Aborts with diagnostics when the loss stops being finite.
pub fn train_epochs(
    module: &mut Module,
    inputs: &[Tensor],
    targets: &[Target],
    loss_kind: LossKind,
    cfg: &TrainConfig,
) -> Result<TrainReport, NnError> {
    if inputs.is_empty() {
        return Err(NnError::Config("training dataset is empty".into()));
    }
    assert_eq!(inputs.len(), targets.len());
    if cfg.epochs == 0 {
        return Ok(TrainReport::default());
    }
    let n = inputs.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let schedule = match cfg.lr {
        LrPlan::Constant(_) => None,
        LrPlan::WarmupCosine { base_lr, warmup_steps } => {
            Some(LrSchedule::new(base_lr, warmup_steps, total_steps)?)
        }
    };

    let mut rng = SeededRng::derived(cfg.seed, "train-epochs");
    let mut state = AdamState::new(&module.params(), cfg.weight_decay);
    let mut report = TrainReport::default();
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        let perm = rng.permutation(n);
        let mut epoch_loss = 0.0f64;
        for chunk in perm.chunks(cfg.batch_size) {
            let mut grads = module.zeros_like_params();
            let mut batch_loss = 0.0f64;
            let inv = 1.0 / chunk.len() as f32;
            for &idx in chunk {
                let (out, tape) = module.forward_train(&inputs[idx])?;
                let (loss, mut dy) = loss_and_grad(loss_kind, &out, &targets[idx]);
                batch_loss += loss;
                super::linalg::scale_inplace(&mut dy.data, inv);
                let (pg, _) = module.backward(&tape, &dy)?;
                Module::accumulate(&mut grads, &pg);
            }
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                let lr = current_lr(&cfg.lr, &schedule, step);
                return Err(NnError::NonFinite(format!(
                    "loss at step {step} (lr {lr:.3e})"
                )));
            }
            let lr = current_lr(&cfg.lr, &schedule, step);
            state.step(&mut module.params_mut(), &grads, lr);
            epoch_loss += batch_loss;
            step += 1;
        }
        report.epoch_losses.push(epoch_loss / batches_per_epoch as f64);
    }
    report.steps = step;
    Ok(report)
}

fn current_lr(plan: &LrPlan, schedule: &Option<LrSchedule>, step: usize) -> f64 {
    match (plan, schedule) {
        (LrPlan::Constant(lr), _) => *lr,
        (_, Some(s)) => s.lr_at(step),
        _ => unreachable!(),
    }
}
