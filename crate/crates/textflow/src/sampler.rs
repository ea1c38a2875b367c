//! Closed-loop generation: ODE integration of the velocity field under
//! boundary-value constraints.
//!
//! Context latent positions are boundary conditions, not state: they are
//! reset to their clean values after every stage evaluation and every step,
//! so the field always sees `z_flow ∪ z_ctx`. Guidance mixes conditional and
//! unconditional field calls at every evaluation, and sequence length is
//! read off the final state by locating the trailing run of positions that
//! decode to padding (the null attractor).

use thiserror::Error;

use crate::controller::{ConditionState, Controller, ControllerError};
use crate::corpus::{constraint_encode_input, pad_to, TokenSequence, PAD};
use crate::mask::BoundaryMask;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};
use crate::vae::{Vae, VaeError};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("integration stalled at t={t}: step size {step} fell below the minimum (stiff field)")]
    Stiffness { t: f64, step: f64 },
    #[error("constrained token at position {position} decoded to {got}, expected {expected}")]
    ConstraintViolation {
        position: usize,
        expected: usize,
        got: usize,
    },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A velocity field over flat state vectors.
pub trait VelocityFn {
    fn eval(&self, z: &[f64], t: f64) -> Vec<f64>;
    /// Underlying field evaluations consumed per call (2 under guidance).
    fn cost_per_eval(&self) -> usize {
        1
    }
}

/// Plain closures are fields.
pub struct FnField<F: Fn(&[f64], f64) -> Vec<f64>>(pub F);

impl<F: Fn(&[f64], f64) -> Vec<f64>> VelocityFn for FnField<F> {
    fn eval(&self, z: &[f64], t: f64) -> Vec<f64> {
        (self.0)(z, t)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SolverMethod {
    Euler {
        steps: usize,
    },
    Heun {
        steps: usize,
    },
    Rk45 {
        rtol: f64,
        atol: f64,
        min_step: f64,
        max_step: f64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub record_trajectory: bool,
}

impl SolverConfig {
    pub fn euler(steps: usize) -> Self {
        assert!(steps >= 1);
        SolverConfig {
            method: SolverMethod::Euler { steps },
            record_trajectory: false,
        }
    }

    pub fn heun(steps: usize) -> Self {
        assert!(steps >= 1);
        SolverConfig {
            method: SolverMethod::Heun { steps },
            record_trajectory: false,
        }
    }

    pub fn rk45(rtol: f64, atol: f64) -> Self {
        assert!(rtol > 0.0 && atol > 0.0);
        SolverConfig {
            method: SolverMethod::Rk45 {
                rtol,
                atol,
                min_step: 1e-10,
                max_step: 1.0,
            },
            record_trajectory: false,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_trajectory = true;
        self
    }
}

/// Time-ordered (t, state, velocity) samples. The velocity stored at a time
/// is the one active at that node; for fixed-step methods the final entry at
/// t = 1 carries the last evaluated stage velocity.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl Trajectory {
    fn push(&mut self, t: f64, state: &[f64], velocity: &[f64]) {
        self.times.push(t);
        self.states.push(state.to_vec());
        self.velocities.push(velocity.to_vec());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveReport {
    pub nfe: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub max_step: f64,
    pub min_step: f64,
}

/// Boundary conditions for the integrator: rows of the state that are
/// pinned to fixed values.
pub struct Pinning<'a> {
    pub mask: &'a BoundaryMask,
    pub dim: usize,
    pub values: &'a [f64],
}

impl Pinning<'_> {
    fn project(&self, z: &mut [f64]) {
        for i in 0..self.mask.len() {
            if self.mask.is_constrained(i) {
                z[i * self.dim..(i + 1) * self.dim]
                    .copy_from_slice(&self.values[i * self.dim..(i + 1) * self.dim]);
            }
        }
    }
}

fn project(pin: Option<&Pinning>, z: &mut [f64]) {
    if let Some(p) = pin {
        p.project(z);
    }
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th order weights equal the last row of A (FSAL); 4th order weights below.
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates dz/dt = v(z, t) from t = 0 to t = 1.
///
/// Pinned rows are restored after every stage evaluation and every step, so
/// they are held exactly at their boundary values throughout. `nfe` counts
/// field evaluations exactly (times the field's per-call cost).
pub fn integrate(
    field: &dyn VelocityFn,
    z_init: &[f64],
    config: &SolverConfig,
    pin: Option<&Pinning>,
) -> Result<(Vec<f64>, Option<Trajectory>, SolveReport), SamplerError> {
    let mut z = z_init.to_vec();
    project(pin, &mut z);
    let mut report = SolveReport {
        min_step: f64::INFINITY,
        ..Default::default()
    };
    let mut traj = config.record_trajectory.then(Trajectory::default);
    let cost = field.cost_per_eval();
    let eval = |z: &[f64], t: f64, report: &mut SolveReport| {
        report.nfe += cost;
        field.eval(z, t)
    };

    match config.method {
        SolverMethod::Euler { steps } => {
            let h = 1.0 / steps as f64;
            let mut v = vec![0.0; z.len()];
            for k in 0..steps {
                let t = k as f64 / steps as f64;
                v = eval(&z, t, &mut report);
                if let Some(tr) = traj.as_mut() {
                    tr.push(t, &z, &v);
                }
                for (zi, vi) in z.iter_mut().zip(&v) {
                    *zi += h * vi;
                }
                project(pin, &mut z);
                report.accepted_steps += 1;
            }
            report.max_step = h;
            report.min_step = h;
            if let Some(tr) = traj.as_mut() {
                tr.push(1.0, &z, &v);
            }
        }
        SolverMethod::Heun { steps } => {
            let h = 1.0 / steps as f64;
            let mut k2 = vec![0.0; z.len()];
            for k in 0..steps {
                let t = k as f64 / steps as f64;
                let k1 = eval(&z, t, &mut report);
                if let Some(tr) = traj.as_mut() {
                    tr.push(t, &z, &k1);
                }
                let mut z_pred: Vec<f64> =
                    z.iter().zip(&k1).map(|(zi, vi)| zi + h * vi).collect();
                project(pin, &mut z_pred);
                k2 = eval(&z_pred, t + h, &mut report);
                for (i, zi) in z.iter_mut().enumerate() {
                    *zi += 0.5 * h * (k1[i] + k2[i]);
                }
                project(pin, &mut z);
                report.accepted_steps += 1;
            }
            report.max_step = h;
            report.min_step = h;
            if let Some(tr) = traj.as_mut() {
                tr.push(1.0, &z, &k2);
            }
        }
        SolverMethod::Rk45 {
            rtol,
            atol,
            min_step,
            max_step,
        } => {
            let n = z.len();
            let mut t = 0.0f64;
            let mut h = max_step.min(0.1);
            let mut err_prev: f64 = 1.0;
            let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
            k[0] = eval(&z, t, &mut report);
            if let Some(tr) = traj.as_mut() {
                tr.push(t, &z, &k[0]);
            }
            while t < 1.0 {
                let h_step = h.min(1.0 - t);
                // stages 2..7
                for stage in 1..7 {
                    let mut zs = z.clone();
                    for (j, kj) in k.iter().enumerate().take(stage) {
                        let a = DP_A[stage][j];
                        if a != 0.0 {
                            for (zi, kv) in zs.iter_mut().zip(kj) {
                                *zi += h_step * a * kv;
                            }
                        }
                    }
                    project(pin, &mut zs);
                    k[stage] = eval(&zs, t + DP_C[stage] * h_step, &mut report);
                }
                // 5th order solution is the stage-7 state; 4th order for error
                let mut y5 = z.clone();
                for (j, kj) in k.iter().enumerate().take(6) {
                    let a = DP_A[6][j];
                    if a != 0.0 {
                        for (yi, kv) in y5.iter_mut().zip(kj) {
                            *yi += h_step * a * kv;
                        }
                    }
                }
                project(pin, &mut y5);
                let mut y4 = z.clone();
                for (j, kj) in k.iter().enumerate() {
                    let b = DP_B4[j];
                    if b != 0.0 {
                        for (yi, kv) in y4.iter_mut().zip(kj) {
                            *yi += h_step * b * kv;
                        }
                    }
                }
                project(pin, &mut y4);
                let mut err_acc = 0.0;
                for i in 0..n {
                    let sc = atol + rtol * z[i].abs().max(y5[i].abs());
                    let e = (y5[i] - y4[i]) / sc;
                    err_acc += e * e;
                }
                let err = (err_acc / n as f64).sqrt().max(1e-16);

                if err <= 1.0 {
                    t += h_step;
                    z = y5;
                    report.accepted_steps += 1;
                    report.max_step = report.max_step.max(h_step);
                    report.min_step = report.min_step.min(h_step);
                    // FSAL: stage 7 velocity is k1 at the new point
                    k[0] = k[6].clone();
                    if let Some(tr) = traj.as_mut() {
                        tr.push(t, &z, &k[0]);
                    }
                    let fac = 0.9 * err.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
                    h = (h_step * fac.clamp(0.2, 10.0)).min(max_step);
                    err_prev = err;
                } else {
                    report.rejected_steps += 1;
                    let fac = 0.9 * err.powf(-1.0 / 5.0);
                    h = h_step * fac.clamp(0.2, 1.0);
                }
                if h < min_step && t < 1.0 {
                    return Err(SamplerError::Stiffness { t, step: h });
                }
            }
        }
    }
    if report.min_step == f64::INFINITY {
        report.min_step = 0.0;
    }
    Ok((z, traj, report))
}

/// Guidance mixing: `v_w = v_uncond + w (v_cond - v_uncond)`, exactly.
pub fn cfg_velocity(v_cond: &[f64], v_uncond: &[f64], w: f64) -> Vec<f64> {
    assert_eq!(v_cond.len(), v_uncond.len(), "shape mismatch");
    v_uncond
        .iter()
        .zip(v_cond)
        .map(|(u, c)| u + w * (c - u))
        .collect()
}

/// The learned controller as an integrable field, with optional guidance.
pub struct ControllerField<'a> {
    pub model: &'a Controller,
    pub mask: &'a BoundaryMask,
    pub cond: ConditionState,
    pub cfg_w: f64,
    pub rows: usize,
    pub dim: usize,
}

impl ControllerField<'_> {
    fn raw(&self, z: &[f64], t: f64, cond: &ConditionState) -> Vec<f64> {
        let zt = Tensor::new(&[self.rows, self.dim], z.to_vec());
        self.model
            .velocity(&zt, t, self.mask, cond)
            .expect("controller forward failed")
            .to_vec()
    }
}

impl VelocityFn for ControllerField<'_> {
    fn eval(&self, z: &[f64], t: f64) -> Vec<f64> {
        let guided = self.cfg_w != 1.0 && !self.cond.null && self.cond.latents.is_some();
        if !guided {
            return self.raw(z, t, &self.cond);
        }
        let v_cond = self.raw(z, t, &self.cond);
        let v_uncond = self.raw(z, t, &ConditionState::none());
        cfg_velocity(&v_cond, &v_uncond, self.cfg_w)
    }

    fn cost_per_eval(&self) -> usize {
        let guided = self.cfg_w != 1.0 && !self.cond.null && self.cond.latents.is_some();
        if guided {
            2
        } else {
            1
        }
    }
}

/// Decodes the final state and scans from the end for the maximal contiguous
/// run of positions whose argmax is PAD (with at least `threshold` softmax
/// probability); returns the sequence length minus that suffix.
pub fn detect_length(z1: &Tensor, vae: &Vae, threshold: f64) -> Result<usize, SamplerError> {
    if threshold <= 0.0 {
        return Err(SamplerError::Contract(
            "pad threshold must be positive".into(),
        ));
    }
    let logits = vae.decode(z1)?;
    let (l, v) = (logits.shape()[0], logits.shape()[1]);
    let data = logits.data();
    let mut len = l;
    for pos in (0..l).rev() {
        let row = &data[pos * v..(pos + 1) * v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let argmax = row
            .iter()
            .position(|&x| x == max)
            .expect("nonempty logits row");
        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let p_pad = (row[PAD] - max).exp() / denom;
        if argmax == PAD && p_pad >= threshold {
            len = pos;
        } else {
            break;
        }
    }
    Ok(len)
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub tokens: TokenSequence,
    pub report: SolveReport,
    pub trajectory: Option<Trajectory>,
    /// Detected content length before PAD truncation.
    pub detected_len: usize,
}

/// Closed-loop generation under token-level constraints.
///
/// `ctx_tokens` must supply ids for every constrained position (free
/// positions may hold anything; PAD is conventional). The constrained
/// positions of the output are exactly the input values; a mismatch in the
/// decoded context region is reported as a constraint violation.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    model: &Controller,
    vae: &Vae,
    token_mask: &BoundaryMask,
    ctx_tokens: &TokenSequence,
    cond: Option<&TokenSequence>,
    solver: &SolverConfig,
    cfg_w: f64,
    seed: u64,
) -> Result<SampleOutput, SamplerError> {
    if token_mask.len() != ctx_tokens.len() {
        return Err(SamplerError::Contract(format!(
            "mask length {} does not match token length {}",
            token_mask.len(),
            ctx_tokens.len()
        )));
    }
    let r = vae.cfg.downsample;
    // free groups are blanked to PAD before encoding: only the constraint
    // pattern is visible to the encoder, never any reference content
    let (blanked, grouped, latent_mask) = constraint_encode_input(ctx_tokens, token_mask, r);
    let rows = latent_mask.len();
    let dim = vae.cfg.latent_dim;
    if rows > model.cfg.max_len {
        return Err(SamplerError::Contract(format!(
            "grouped latent length {rows} exceeds controller max_len {}",
            model.cfg.max_len
        )));
    }
    let ctx_latents = vae.encode(&blanked)?.mean_flat();

    // free latents from the prior
    let mut rng = Rng::new(seed);
    let mut z_init = rng.normal_vec(rows * dim);
    let pin = Pinning {
        mask: &latent_mask,
        dim,
        values: &ctx_latents,
    };
    pin.project(&mut z_init);

    let cond_state = match cond {
        Some(c) => {
            let padded = pad_to(c, grouped.len().max(c.len().div_ceil(r) * r));
            let lat = vae.encode(&padded)?.mean_flat();
            ConditionState::new(Tensor::new(&[padded.len() / r, dim], lat))
        }
        None => ConditionState::none(),
    };
    let field = ControllerField {
        model,
        mask: &latent_mask,
        cond: cond_state,
        cfg_w,
        rows,
        dim,
    };
    let (z_final, trajectory, report) = integrate(&field, &z_init, solver, Some(&pin))?;

    let z_t = Tensor::new(&[rows, dim], z_final);
    let mut decoded = vae.decode_tokens(&z_t)?;

    // constrained tokens must decode back exactly (pinning + reconstruction);
    // the PAD fill inside context groups is alignment, not a constraint
    let mut source = 0usize;
    for (pos, &id) in grouped.ids.iter().enumerate() {
        if id == PAD && (source >= ctx_tokens.len() || ctx_tokens.ids[source] != PAD) {
            continue; // alignment padding inserted by grouping
        }
        let constrained = token_mask.is_constrained(source);
        source += 1;
        if constrained && decoded.ids[pos] != id {
            return Err(SamplerError::ConstraintViolation {
                position: pos,
                expected: id,
                got: decoded.ids[pos],
            });
        }
    }
    // constrained positions are preserved exactly by construction
    for g in 0..rows {
        if latent_mask.is_constrained(g) {
            decoded.ids[g * r..(g + 1) * r].copy_from_slice(&grouped.ids[g * r..(g + 1) * r]);
        }
    }
    let detected_len = detect_length(&z_t, vae, 0.5)?;
    decoded.ids.truncate(detected_len.max(last_constrained_end(&latent_mask, r)));
    Ok(SampleOutput {
        tokens: decoded,
        report,
        trajectory,
        detected_len,
    })
}

/// Truncation floor: never cut away constrained groups.
fn last_constrained_end(latent_mask: &BoundaryMask, r: usize) -> usize {
    (0..latent_mask.len())
        .rev()
        .find(|&g| latent_mask.is_constrained(g))
        .map(|g| (g + 1) * r)
        .unwrap_or(0)
}
