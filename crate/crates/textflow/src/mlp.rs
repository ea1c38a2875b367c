//! Minimal fully connected network, used for toy velocity fields in the
//! validation and diagnostics paths.

use crate::optim::Adam;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

pub struct Mlp {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Mlp {
    /// `dims` = [input, hidden..., output]; gelu between layers.
    pub fn init(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2);
        let mut rng = Rng::new(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            weights.push(Tensor::param(
                &[w[0], w[1]],
                (0..w[0] * w[1]).map(|_| rng.normal() * scale).collect(),
            ));
            biases.push(Tensor::param(&[w[1]], vec![0.0; w[1]]));
        }
        Mlp { weights, biases }
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.clone());
            out.push(b.clone());
        }
        out
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w)?.add_row_broadcast(b)?;
            if i != last {
                h = h.gelu();
            }
        }
        Ok(h)
    }

    /// Plain evaluation on a single flat input row.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let t = Tensor::new(&[1, x.len()], x.to_vec());
        self.forward(&t).expect("mlp forward").to_vec()
    }
}

/// A velocity field v(z, t) realized by an MLP over [z, t] features.
pub struct MlpField(pub Mlp);

impl MlpField {
    /// Trains v(z, t) on straight-line interpolation targets between prior
    /// draws and data samples. Returns the per-step losses.
    pub fn train_cfm(
        &self,
        data: &[Vec<f64>],
        steps: usize,
        batch: usize,
        lr: f64,
        seed: u64,
    ) -> Vec<f64> {
        assert!(!data.is_empty());
        let dim = data[0].len();
        let params = self.0.params();
        let mut opt = Adam::new(&params, lr);
        let mut rng = Rng::new(seed);
        let mut history = Vec::with_capacity(steps);
        for _ in 0..steps {
            opt.zero_grad(&params);
            let mut rows = Vec::with_capacity(batch * (dim + 1));
            let mut targets = Vec::with_capacity(batch * dim);
            for _ in 0..batch {
                let z1 = &data[rng.below(data.len())];
                let z0 = rng.normal_vec(dim);
                let t = rng.uniform();
                for i in 0..dim {
                    rows.push((1.0 - t) * z0[i] + t * z1[i]);
                }
                rows.push(t);
                for i in 0..dim {
                    targets.push(z1[i] - z0[i]);
                }
            }
            let x = Tensor::new(&[batch, dim + 1], rows);
            let y = Tensor::new(&[batch, dim], targets);
            let v = self.0.forward(&x).unwrap();
            let loss = v.sub(&y).unwrap().square().mean();
            history.push(loss.item());
            loss.backward().unwrap();
            opt.step(&params);
        }
        history
    }
}

impl crate::sampler::VelocityFn for MlpField {
    fn eval(&self, z: &[f64], t: f64) -> Vec<f64> {
        let mut input = z.to_vec();
        input.push(t);
        self.0.eval(&input)
    }
}
