//! Flow-matching training for the velocity field.
//!
//! The controller is regressed onto the constant velocities of straight
//! interpolation paths between prior noise and encoded data latents, under a
//! stochastic curriculum of boundary patterns. Context positions carry clean
//! data during training (mirroring how they are pinned at sampling time) and
//! contribute nothing to the loss.

use thiserror::Error;

use crate::controller::{ConditionState, Controller, ControllerError};
use crate::corpus::{pad_to, TokenSequence};
use crate::mask::BoundaryMask;
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};
use crate::vae::{Vae, VaeError};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error("{0}")]
    Contract(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

/// One training batch: prior draws, encoded data latents, times, boundary
/// masks, and conditions, one row set per example.
pub struct FlowBatch {
    pub z0: Vec<Vec<f64>>,
    pub z1: Vec<Vec<f64>>,
    pub t: Vec<f64>,
    pub mask: Vec<BoundaryMask>,
    pub cond: Vec<ConditionState>,
    pub rows: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Free,
    CausalPrefix,
    Suffix,
    Infill,
    Scattered,
}

impl PatternKind {
    pub const ALL: [PatternKind; 5] = [
        PatternKind::Free,
        PatternKind::CausalPrefix,
        PatternKind::Suffix,
        PatternKind::Infill,
        PatternKind::Scattered,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PatternKind::Free => "free",
            PatternKind::CausalPrefix => "causal_prefix",
            PatternKind::Suffix => "suffix",
            PatternKind::Infill => "infill",
            PatternKind::Scattered => "scattered",
        }
    }
}

/// Straight-line interpolation: `z_t = (1-t) z0 + t z1` with constant target
/// velocity `z1 - z0`.
pub fn interpolate(z0: &[f64], z1: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(z0.len(), z1.len(), "endpoint shapes must match");
    assert!((0.0..=1.0).contains(&t));
    let z_t = z0
        .iter()
        .zip(z1)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    let u = z1.iter().zip(z0).map(|(b, a)| b - a).collect();
    (z_t, u)
}

/// Overwrites context rows of `z_t` with the corresponding `z1` rows:
/// boundary values are exact data, never noised.
pub fn apply_boundary(z_t: &mut [f64], z1: &[f64], mask: &BoundaryMask, dim: usize) {
    assert_eq!(z_t.len(), z1.len());
    assert_eq!(z_t.len(), mask.len() * dim);
    for i in 0..mask.len() {
        if mask.is_constrained(i) {
            z_t[i * dim..(i + 1) * dim].copy_from_slice(&z1[i * dim..(i + 1) * dim]);
        }
    }
}

/// Draws a boundary mask of the given kind. Degenerate lengths (too short
/// for the kind) fall back to an unconstrained mask.
pub fn sample_boundary_pattern(kind: PatternKind, length: usize, rng: &mut Rng) -> BoundaryMask {
    assert!(length >= 1);
    match kind {
        PatternKind::Free => BoundaryMask::free(length),
        PatternKind::CausalPrefix => {
            if length < 2 {
                return BoundaryMask::free(length);
            }
            let prefix = rng.range_inclusive(1, length - 1);
            let mut mask = BoundaryMask::free(length);
            for i in 0..prefix {
                mask.set(i, true);
            }
            mask
        }
        PatternKind::Suffix => {
            if length < 2 {
                return BoundaryMask::free(length);
            }
            let suffix = rng.range_inclusive(1, length - 1);
            let mut mask = BoundaryMask::free(length);
            for i in (length - suffix)..length {
                mask.set(i, true);
            }
            mask
        }
        PatternKind::Infill => {
            if length < 3 {
                return BoundaryMask::free(length);
            }
            let prefix = rng.range_inclusive(1, length - 2);
            let suffix = rng.range_inclusive(1, length - 1 - prefix);
            BoundaryMask::infill(length, prefix, suffix)
        }
        PatternKind::Scattered => {
            let p = rng.uniform_in(0.1, 0.5);
            BoundaryMask::new((0..length).map(|_| rng.bernoulli(p)).collect())
        }
    }
}

/// With probability p, replaces the condition by the learned null embedding.
pub fn condition_dropout(cond: ConditionState, p: f64, rng: &mut Rng) -> ConditionState {
    assert!((0.0..=1.0).contains(&p));
    if rng.bernoulli(p) {
        cond.with_null(true)
    } else {
        cond
    }
}

/// Anything that can serve as the regression target of the matching loss.
/// The learned controller is the real implementor; test oracles provide the
/// independent side of the check.
pub trait VelocityModel {
    fn velocity(
        &self,
        z: &Tensor,
        t: f64,
        mask: &BoundaryMask,
        cond: &ConditionState,
    ) -> Result<Tensor, ControllerError>;
}

impl VelocityModel for Controller {
    fn velocity(
        &self,
        z: &Tensor,
        t: f64,
        mask: &BoundaryMask,
        cond: &ConditionState,
    ) -> Result<Tensor, ControllerError> {
        Controller::velocity(self, z, t, mask, cond)
    }
}

/// Differentiable batch loss plus the detached per-example values.
fn cfm_example_losses(
    model: &dyn VelocityModel,
    batch: &FlowBatch,
) -> Result<(Tensor, Vec<f64>), FlowError> {
    if batch.z0.is_empty() {
        return Err(FlowError::Contract("empty batch".into()));
    }
    let (rows, dim) = (batch.rows, batch.dim);
    let mut total = Tensor::scalar(0.0);
    let mut per_example = Vec::with_capacity(batch.z0.len());
    for ex in 0..batch.z0.len() {
        let (z_t, u) = interpolate(&batch.z0[ex], &batch.z1[ex], batch.t[ex]);
        let mut z_t = z_t;
        apply_boundary(&mut z_t, &batch.z1[ex], &batch.mask[ex], dim);
        let free = batch.mask[ex].free_count();
        if free == 0 {
            per_example.push(0.0);
            continue;
        }
        let z = Tensor::new(&[rows, dim], z_t);
        let v = model.velocity(&z, batch.t[ex], &batch.mask[ex], &batch.cond[ex])?;
        let target = Tensor::new(&[rows, dim], u);
        let row_mask: Vec<f64> = (0..rows * dim)
            .map(|i| {
                if batch.mask[ex].is_constrained(i / dim) {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        let diff = v.sub(&target)?.mul(&Tensor::new(&[rows, dim], row_mask))?;
        let ex_loss = diff.square().sum().scale(1.0 / free as f64);
        per_example.push(ex_loss.item());
        total = total.add(&ex_loss)?;
    }
    Ok((total.scale(1.0 / batch.z0.len() as f64), per_example))
}

/// Mean over examples of the per-example mean over free latent positions of
/// the squared velocity-target error. Context positions contribute zero.
/// Returns a differentiable scalar.
pub fn cfm_loss(model: &dyn VelocityModel, batch: &FlowBatch) -> Result<Tensor, FlowError> {
    Ok(cfm_example_losses(model, batch)?.0)
}

/// One training example: a clean target sequence and an optional condition
/// sequence (e.g. its corrupted variant for the correction task).
#[derive(Debug, Clone)]
pub struct FlowExample {
    pub target: TokenSequence,
    pub condition: Option<TokenSequence>,
}

#[derive(Debug, Clone)]
pub struct FlowTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Grouped token length (multiple of the VAE factor) every example is
    /// padded to.
    pub seq_len: usize,
    /// Probability of replacing the condition with the null embedding, the
    /// unconditional branch required for guidance.
    pub cond_dropout: f64,
}

#[derive(Debug, Clone)]
pub struct FlowStepRecord {
    pub step: usize,
    pub loss: f64,
    /// Mean loss per boundary-pattern kind present in the step's batch.
    pub kind_losses: Vec<(PatternKind, f64)>,
}

/// Encodes a token sequence to its posterior-mean latents (detached).
pub fn encode_latents(vae: &Vae, tokens: &TokenSequence, seq_len: usize) -> Result<Vec<f64>, FlowError> {
    let padded = pad_to(tokens, seq_len);
    Ok(vae.encode(&padded)?.mean_flat())
}

/// Trains the controller against a frozen VAE. Deterministic given the seed;
/// returns the per-step loss history.
pub fn train(
    model: &Controller,
    vae: &Vae,
    data: &[FlowExample],
    cfg: &FlowTrainConfig,
    seed: u64,
) -> Result<Vec<FlowStepRecord>, FlowError> {
    if data.is_empty() {
        return Err(FlowError::Contract("empty training set".into()));
    }
    if cfg.seq_len % vae.cfg.downsample != 0 {
        return Err(FlowError::Contract(format!(
            "seq_len {} is not a multiple of r={}",
            cfg.seq_len, vae.cfg.downsample
        )));
    }
    let rows = cfg.seq_len / vae.cfg.downsample;
    let dim = vae.cfg.latent_dim;
    let params = model.params();
    let mut opt = Adam::with_clip(&params, cfg.lr, 5.0);
    let mut rng = Rng::new(seed);
    let mut history = Vec::with_capacity(cfg.steps);
    // the VAE is frozen, so each example's latents are fixed: memoize them
    let mut z1_cache: Vec<Option<Vec<f64>>> = vec![None; data.len()];
    let mut cond_cache: Vec<Option<Vec<f64>>> = vec![None; data.len()];

    for step in 0..cfg.steps {
        opt.zero_grad(&params);
        let mut batch = FlowBatch {
            z0: Vec::new(),
            z1: Vec::new(),
            t: Vec::new(),
            mask: Vec::new(),
            cond: Vec::new(),
            rows,
            dim,
        };
        let mut kinds = Vec::new();
        for _ in 0..cfg.batch_size {
            let idx = rng.below(data.len());
            let ex = &data[idx];
            if z1_cache[idx].is_none() {
                z1_cache[idx] = Some(encode_latents(vae, &ex.target, cfg.seq_len)?);
            }
            let z1 = z1_cache[idx].clone().unwrap();
            let kind = PatternKind::ALL[rng.below(5)];
            let mask = sample_boundary_pattern(kind, rows, &mut rng);
            let z0 = rng.normal_vec(rows * dim);
            let t = rng.uniform();
            let cond = match &ex.condition {
                Some(c) => {
                    if cond_cache[idx].is_none() {
                        cond_cache[idx] = Some(encode_latents(vae, c, cfg.seq_len)?);
                    }
                    let lat = cond_cache[idx].clone().unwrap();
                    ConditionState::new(Tensor::new(&[rows, dim], lat))
                }
                None => ConditionState::none(),
            };
            let cond = condition_dropout(cond, cfg.cond_dropout, &mut rng);
            batch.z0.push(z0);
            batch.z1.push(z1);
            batch.t.push(t);
            batch.mask.push(mask);
            batch.cond.push(cond);
            kinds.push(kind);
        }
        let (loss, per_example) = cfm_example_losses(model, &batch)?;
        let loss_value = loss.item();
        if !loss_value.is_finite() {
            return Err(FlowError::Diverged {
                step,
                loss: loss_value,
            });
        }
        loss.backward()?;
        opt.step(&params);

        // per-kind means for the loss CSV
        let mut kind_losses = Vec::new();
        for kind in PatternKind::ALL {
            let members: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i] == kind).collect();
            if members.is_empty() {
                continue;
            }
            let acc: f64 = members.iter().map(|&i| per_example[i]).sum();
            kind_losses.push((kind, acc / members.len() as f64));
        }
        history.push(FlowStepRecord {
            step,
            loss: loss_value,
            kind_losses,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests;
