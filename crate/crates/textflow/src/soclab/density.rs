//! Analytic toy densities: diagonal Gaussian mixtures with closed-form
//! log-density, score, sampling, coordinate marginals, noise convolution,
//! and the marginal straight-path velocity field.

use crate::rng::Rng;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    /// Per-coordinate variances (diagonal covariance, all positive).
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    Gaussian,
    GaussianMixture,
    RidgeManifold,
}

#[derive(Debug, Clone)]
pub struct ToyDensity {
    pub kind: DensityKind,
    pub weights: Vec<f64>,
    pub comps: Vec<GaussianComponent>,
}

fn log_normal_1d(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln()) - d * d / (2.0 * var)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ToyDensity {
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Self {
        assert_eq!(mean.len(), var.len());
        assert!(var.iter().all(|&v| v > 0.0));
        ToyDensity {
            kind: DensityKind::Gaussian,
            weights: vec![1.0],
            comps: vec![GaussianComponent { mean, var }],
        }
    }

    pub fn mixture(weights: Vec<f64>, comps: Vec<GaussianComponent>) -> Self {
        assert_eq!(weights.len(), comps.len());
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "weights must sum to 1");
        assert!(comps
            .iter()
            .all(|c| c.var.iter().all(|&v| v > 0.0) && c.mean.len() == c.var.len()));
        ToyDensity {
            kind: DensityKind::GaussianMixture,
            weights,
            comps,
        }
    }

    /// High-curvature density ridge: a Gaussian tube around the parabola
    /// x₂ = curvature · x₁², built from components spaced along the curve.
    pub fn ridge(curvature: f64, span: f64, n_comps: usize, tube_var: f64) -> Self {
        assert!(n_comps >= 2 && tube_var > 0.0 && span > 0.0);
        let mut comps = Vec::with_capacity(n_comps);
        for i in 0..n_comps {
            let x1 = -span + 2.0 * span * i as f64 / (n_comps - 1) as f64;
            comps.push(GaussianComponent {
                mean: vec![x1, curvature * x1 * x1],
                var: vec![tube_var, tube_var],
            });
        }
        ToyDensity {
            kind: DensityKind::RidgeManifold,
            weights: vec![1.0 / n_comps as f64; n_comps],
            comps,
        }
    }

    pub fn dim(&self) -> usize {
        self.comps[0].mean.len()
    }

    fn comp_log_density(&self, k: usize, z: &[f64]) -> f64 {
        let c = &self.comps[k];
        z.iter()
            .enumerate()
            .map(|(j, &x)| log_normal_1d(x, c.mean[j], c.var[j]))
            .sum()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.dim());
        let terms: Vec<f64> = (0..self.comps.len())
            .map(|k| self.weights[k].ln() + self.comp_log_density(k, z))
            .collect();
        log_sum_exp(&terms)
    }

    /// ∇ log p(z), exact.
    pub fn score(&self, z: &[f64]) -> Vec<f64> {
        let log_terms: Vec<f64> = (0..self.comps.len())
            .map(|k| self.weights[k].ln() + self.comp_log_density(k, z))
            .collect();
        let total = log_sum_exp(&log_terms);
        let mut out = vec![0.0; z.len()];
        for (k, c) in self.comps.iter().enumerate() {
            let resp = (log_terms[k] - total).exp();
            for j in 0..z.len() {
                out[j] += resp * (c.mean[j] - z[j]) / c.var[j];
            }
        }
        out
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let k = rng.categorical(&self.weights);
        let c = &self.comps[k];
        c.mean
            .iter()
            .zip(&c.var)
            .map(|(m, v)| m + v.sqrt() * rng.normal())
            .collect()
    }

    /// Mean of the heaviest-density component, used as the analytic target
    /// mode for terminal-error measurements.
    pub fn mode(&self) -> Vec<f64> {
        let best = (0..self.comps.len())
            .max_by(|&a, &b| {
                let da = self.weights[a].ln() + self.comp_log_density(a, &self.comps[a].mean);
                let db = self.weights[b].ln() + self.comp_log_density(b, &self.comps[b].mean);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        self.comps[best].mean.clone()
    }

    /// Log-density of the marginal over a coordinate subset (diagonal
    /// components marginalize by dropping coordinates).
    pub fn marginal_log_density(&self, coords: &[usize], values: &[f64]) -> f64 {
        assert_eq!(coords.len(), values.len());
        let terms: Vec<f64> = (0..self.comps.len())
            .map(|k| {
                let c = &self.comps[k];
                self.weights[k].ln()
                    + coords
                        .iter()
                        .zip(values)
                        .map(|(&j, &x)| log_normal_1d(x, c.mean[j], c.var[j]))
                        .sum::<f64>()
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// The density of `alpha * X + noise` with per-coordinate noise variance
    /// `sigma2` (the forward diffusion marginal).
    pub fn convolved(&self, alpha: f64, sigma2: f64) -> ToyDensity {
        ToyDensity {
            kind: self.kind,
            weights: self.weights.clone(),
            comps: self
                .comps
                .iter()
                .map(|c| GaussianComponent {
                    mean: c.mean.iter().map(|m| alpha * m).collect(),
                    var: c.var.iter().map(|v| alpha * alpha * v + sigma2).collect(),
                })
                .collect(),
        }
    }

    /// Closed-form transport field from N(0, I) to this density.
    ///
    /// For a single Gaussian the optimal-transport map is affine per
    /// coordinate and the field follows its straight paths (so equal prior
    /// and target give a zero field). For mixtures the field is the marginal
    /// velocity of straight interpolation paths under the independent
    /// coupling: a posterior-weighted blend of per-component affine fields.
    pub fn flow_field(&self, z: &[f64], t: f64) -> Vec<f64> {
        assert!((0.0..=1.0).contains(&t));
        let dim = self.dim();
        if self.comps.len() == 1 {
            let c = &self.comps[0];
            return (0..dim)
                .map(|j| {
                    let sigma = c.var[j].sqrt();
                    let scale = (1.0 - t) + t * sigma;
                    c.mean[j] + (sigma - 1.0) * (z[j] - t * c.mean[j]) / scale
                })
                .collect();
        }
        // z_t | component k is Gaussian with mean t·mu and diagonal variance
        // (1-t)^2 + t^2 var
        let log_w: Vec<f64> = (0..self.comps.len())
            .map(|k| {
                let c = &self.comps[k];
                self.weights[k].ln()
                    + (0..dim)
                        .map(|j| {
                            let s = (1.0 - t) * (1.0 - t) + t * t * c.var[j];
                            log_normal_1d(z[j], t * c.mean[j], s)
                        })
                        .sum::<f64>()
            })
            .collect();
        let total = log_sum_exp(&log_w);
        let mut out = vec![0.0; dim];
        for (k, c) in self.comps.iter().enumerate() {
            let resp = (log_w[k] - total).exp();
            for j in 0..dim {
                let s = (1.0 - t) * (1.0 - t) + t * t * c.var[j];
                let v = c.mean[j] + (t * c.var[j] - (1.0 - t)) / s * (z[j] - t * c.mean[j]);
                out[j] += resp * v;
            }
        }
        out
    }
}
