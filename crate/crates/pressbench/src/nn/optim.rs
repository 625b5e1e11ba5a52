//! Adam with bias correction and the linear-warmup cosine schedule.

use super::tensor::Tensor;
use super::NnError;

/// Adam moments, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: usize,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl AdamState {
    pub fn new(params: &[&Tensor], weight_decay: f32) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(&p.shape)).collect(),
            v: params.iter().map(|p| Tensor::zeros(&p.shape)).collect(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One Adam update. Weight decay enters as an L2 term added to the
    /// gradient (coupled form). Each parameter's update depends only on its
    /// own moments, so registration order is irrelevant to trajectories.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as f64;
        let bc1 = (1.0 - (self.beta1 as f64).powf(t)) as f32;
        let bc2 = (1.0 - (self.beta2 as f64).powf(t)) as f32;
        let lr = lr as f32;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let grad = g.data[i] + self.weight_decay * p.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * grad;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * grad * grad;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Linear warmup followed by cosine decay to zero.
#[derive(Clone, Copy, Debug)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: usize, total_steps: usize) -> Result<Self, NnError> {
        if warmup_steps == 0 || warmup_steps >= total_steps {
            return Err(NnError::Config(format!(
                "schedule wants 0 < warmup ({warmup_steps}) < total ({total_steps})"
            )));
        }
        Ok(Self { base_lr, warmup_steps, total_steps })
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        if step > self.total_steps {
            return 0.0;
        }
        let progress =
            (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn schedule_boundaries() {
        let s = LrSchedule::new(1e-4, 500, 4000).unwrap();
        assert_eq!(s.lr_at(0), 0.0);
        assert!((s.lr_at(500) - 1e-4).abs() < 1e-18);
        assert!(s.lr_at(4000).abs() < 1e-12);
        // halfway through decay: base/2 from the cos(pi/2) term
        assert!((s.lr_at(500 + (4000 - 500) / 2) - 0.5e-4).abs() < 1e-12);
        // past the end clamps to zero
        assert_eq!(s.lr_at(5000), 0.0);
    }

    #[test]
    fn schedule_rejects_bad_warmup() {
        assert!(LrSchedule::new(1e-4, 0, 100).is_err());
        assert!(LrSchedule::new(1e-4, 100, 100).is_err());
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        // bias-corrected first step: update = -lr * g / (|g| + eps)
        let mut p = Tensor::zeros(&[3]);
        let g = Tensor::from_vec(&[3], vec![0.3, -2.0, 0.001]).unwrap();
        let mut state = AdamState::new(&[&p], 0.0);
        state.step(&mut [&mut p], std::slice::from_ref(&g), 0.01);
        for i in 0..3 {
            let want = -0.01 * g.data[i] / (g.data[i].abs() + 1e-8);
            assert!((p.data[i] - want).abs() < 1e-6, "{} vs {}", p.data[i], want);
        }
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params() {
        let mut p = Tensor::randn(&[4], 1.0, &mut SeededRng::new(5));
        let before = p.clone();
        let g = Tensor::zeros(&[4]);
        let mut state = AdamState::new(&[&p], 0.0);
        state.step(&mut [&mut p], std::slice::from_ref(&g), 0.01);
        assert_eq!(p, before);
    }

    #[test]
    fn equal_grads_give_identical_updates() {
        let mut a = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut b = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let g = Tensor::from_vec(&[1], vec![0.7]).unwrap();
        let mut state = AdamState::new(&[&a, &b], 0.0);
        state.step(&mut [&mut a, &mut b], &[g.clone(), g], 0.01);
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn trajectories_ignore_registration_order() {
        let g1 = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let g2 = Tensor::from_vec(&[2], vec![-0.25, 1.5]).unwrap();
        let mut p1a = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let mut p2a = Tensor::from_vec(&[2], vec![-1.0, 0.5]).unwrap();
        let mut p1b = p1a.clone();
        let mut p2b = p2a.clone();
        let mut sa = AdamState::new(&[&p1a, &p2a], 1e-6);
        let mut sb = AdamState::new(&[&p2b, &p1b], 1e-6);
        for _ in 0..25 {
            sa.step(&mut [&mut p1a, &mut p2a], &[g1.clone(), g2.clone()], 0.05);
            sb.step(&mut [&mut p2b, &mut p1b], &[g2.clone(), g1.clone()], 0.05);
        }
        assert_eq!(p1a, p1b);
        assert_eq!(p2a, p2b);
    }
}
