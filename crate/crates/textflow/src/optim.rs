//! First-order adaptive-moment optimizer.

use crate::tensor::Tensor;

/// Adam with bias correction and optional global-norm gradient clipping.
/// State is keyed by parameter order, so the parameter list must stay
/// stable across steps.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// When set, gradients are rescaled so their global norm never exceeds
    /// this bound (rare spiky batches otherwise derail long runs).
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn with_clip(params: &[Tensor], lr: f64, clip_norm: f64) -> Self {
        let mut adam = Adam::new(params, lr);
        adam.clip_norm = Some(clip_norm);
        adam
    }

    pub fn zero_grad(&self, params: &[Tensor]) {
        for p in params {
            p.zero_grad();
        }
    }

    /// Applies one update from the gradients currently stored on `params`.
    pub fn step(&mut self, params: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed");
        self.step += 1;
        let scale = match self.clip_norm {
            Some(max_norm) => {
                let total: f64 = params
                    .iter()
                    .map(|p| p.grad_or_zeros().iter().map(|g| g * g).sum::<f64>())
                    .sum();
                let norm = total.sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter().enumerate() {
            let grad = p.grad_or_zeros();
            let mut data = p.to_vec();
            for (j, g) in grad.iter().enumerate() {
                let g = &(g * scale);
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.set_data(&data);
        }
    }
}
