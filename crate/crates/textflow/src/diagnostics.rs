//! Geometric instrumentation: trajectory curvature, vector-field stiffness,
//! kinetic action, and loss-landscape slices.

use thiserror::Error;

use crate::rng::Rng;
use crate::sampler::{Trajectory, VelocityFn};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("{0}")]
    Contract(String),
}

/// Curvature sample; `kappa` is absent where the speed vanishes (a stationary
/// point has no defined turning rate and clipping would fabricate spikes).
#[derive(Debug, Clone, Copy)]
pub struct CurvaturePoint {
    pub t: f64,
    pub kappa: Option<f64>,
}

const SPEED_FLOOR: f64 = 1e-10;

/// Trajectory curvature κ(t) = |z̈| / |ż|² at interior samples, with z̈ from
/// central differences of the recorded velocities.
pub fn curvature(traj: &Trajectory) -> Result<Vec<CurvaturePoint>, DiagnosticsError> {
    let n = traj.len();
    if n < 3 {
        return Err(DiagnosticsError::Contract(format!(
            "curvature needs at least 3 samples, got {n}"
        )));
    }
    if traj.velocities.len() != n || traj.states.len() != n {
        return Err(DiagnosticsError::Contract(
            "trajectory must record velocities at every time".into(),
        ));
    }
    let mut out = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        let dt = traj.times[i + 1] - traj.times[i - 1];
        let accel: Vec<f64> = traj.velocities[i + 1]
            .iter()
            .zip(&traj.velocities[i - 1])
            .map(|(a, b)| (a - b) / dt)
            .collect();
        let speed_sq: f64 = traj.velocities[i].iter().map(|v| v * v).sum();
        let speed = speed_sq.sqrt();
        let kappa = if speed < SPEED_FLOOR {
            None
        } else {
            let accel_norm = accel.iter().map(|a| a * a).sum::<f64>().sqrt();
            Some(accel_norm / speed_sq)
        };
        out.push(CurvaturePoint {
            t: traj.times[i],
            kappa,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub enum StiffnessProbe {
    /// Full Jacobian, column by column, via central differences.
    FiniteDiffFull,
    /// Stochastic Frobenius estimate: ‖J‖_F² = E‖Jε‖² over Rademacher ε.
    HutchinsonFrobenius { probes: usize },
}

/// Dimension cap for the full-Jacobian probe.
pub const FULL_JACOBIAN_DIM_CAP: usize = 512;

/// Local stiffness S(z, t) = ‖∂v/∂z‖_F of the field at a point.
pub fn stiffness(
    field: &dyn VelocityFn,
    z: &[f64],
    t: f64,
    probe: StiffnessProbe,
    h: f64,
    rng: &mut Rng,
) -> Result<f64, DiagnosticsError> {
    if h <= 0.0 {
        return Err(DiagnosticsError::Contract("h must be positive".into()));
    }
    match probe {
        StiffnessProbe::FiniteDiffFull => {
            if z.len() > FULL_JACOBIAN_DIM_CAP {
                return Err(DiagnosticsError::Contract(format!(
                    "full Jacobian over {} dims exceeds the cap of {FULL_JACOBIAN_DIM_CAP}",
                    z.len()
                )));
            }
            let mut acc = 0.0;
            let mut plus = z.to_vec();
            let mut minus = z.to_vec();
            for i in 0..z.len() {
                plus[i] = z[i] + h;
                minus[i] = z[i] - h;
                let vp = field.eval(&plus, t);
                let vm = field.eval(&minus, t);
                for (p, m) in vp.iter().zip(&vm) {
                    let der = (p - m) / (2.0 * h);
                    acc += der * der;
                }
                plus[i] = z[i];
                minus[i] = z[i];
            }
            Ok(acc.sqrt())
        }
        StiffnessProbe::HutchinsonFrobenius { probes } => {
            if probes == 0 {
                return Err(DiagnosticsError::Contract(
                    "probe count must be positive".into(),
                ));
            }
            let mut acc = 0.0;
            for _ in 0..probes {
                let eps: Vec<f64> = (0..z.len()).map(|_| rng.rademacher()).collect();
                let plus: Vec<f64> = z.iter().zip(&eps).map(|(x, e)| x + h * e).collect();
                let minus: Vec<f64> = z.iter().zip(&eps).map(|(x, e)| x - h * e).collect();
                let vp = field.eval(&plus, t);
                let vm = field.eval(&minus, t);
                acc += vp
                    .iter()
                    .zip(&vm)
                    .map(|(p, m)| {
                        let jv = (p - m) / (2.0 * h);
                        jv * jv
                    })
                    .sum::<f64>();
            }
            Ok((acc / probes as f64).sqrt())
        }
    }
}

/// Stiffness along a recorded trajectory at every `stride`-th sample.
pub fn stiffness_series(
    field: &dyn VelocityFn,
    traj: &Trajectory,
    probe: StiffnessProbe,
    stride: usize,
    rng: &mut Rng,
) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    assert!(stride >= 1);
    let mut out = Vec::new();
    for i in (0..traj.len()).step_by(stride) {
        let s = stiffness(field, &traj.states[i], traj.times[i], probe, 1e-4, rng)?;
        out.push((traj.times[i], s));
    }
    Ok(out)
}

/// Kinetic action ½∫‖v‖²dt by trapezoidal quadrature over recorded samples.
pub fn kinetic_action(traj: &Trajectory) -> Result<f64, DiagnosticsError> {
    if traj.len() < 2 || traj.velocities.len() != traj.len() {
        return Err(DiagnosticsError::Contract(
            "kinetic action needs a trajectory with recorded velocities".into(),
        ));
    }
    let energy: Vec<f64> = traj
        .velocities
        .iter()
        .map(|v| 0.5 * v.iter().map(|x| x * x).sum::<f64>())
        .collect();
    let mut action = 0.0;
    for i in 0..traj.len() - 1 {
        let dt = traj.times[i + 1] - traj.times[i];
        action += 0.5 * dt * (energy[i] + energy[i + 1]);
    }
    Ok(action)
}

/// Action of a sequence of impulsive updates, each smeared into a box pulse
/// of width `dt_smear`: Σ ½‖f‖²/dt_smear. Diverges as the smearing width
/// shrinks, which is the point.
pub fn impulsive_action(step_updates: &[Vec<f64>], dt_smear: f64) -> f64 {
    assert!(dt_smear > 0.0, "smear width must be positive");
    step_updates
        .iter()
        .map(|f| 0.5 * f.iter().map(|x| x * x).sum::<f64>() / dt_smear)
        .sum()
}

/// Evaluates a loss on an n×n grid of parameter offsets along two
/// filter-normalized directions (per-block norm matching). Parameters are
/// restored bit-exactly afterwards.
pub fn landscape_slice(
    loss_fn: &mut dyn FnMut() -> f64,
    params: &[Tensor],
    dir1: &[Vec<f64>],
    dir2: &[Vec<f64>],
    n: usize,
    radius: f64,
) -> Result<Vec<Vec<f64>>, DiagnosticsError> {
    if n < 3 {
        return Err(DiagnosticsError::Contract(format!(
            "grid must be at least 3x3, got {n}"
        )));
    }
    if dir1.len() != params.len() || dir2.len() != params.len() {
        return Err(DiagnosticsError::Contract(
            "need one direction block per parameter block".into(),
        ));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let normalize = |dir: &[Vec<f64>]| -> Vec<Vec<f64>> {
        dir.iter()
            .zip(params)
            .map(|(block, p)| {
                let pn = norm(&p.to_vec());
                let dn = norm(block);
                if dn == 0.0 {
                    vec![0.0; block.len()]
                } else {
                    // match the parameter block's norm; unit norm when the
                    // block sits at the origin
                    let scale = if pn == 0.0 { 1.0 / dn } else { pn / dn };
                    block.iter().map(|x| x * scale).collect()
                }
            })
            .collect()
    };
    let d1 = normalize(dir1);
    let d2 = normalize(dir2);
    let center: Vec<Vec<f64>> = params.iter().map(|p| p.to_vec()).collect();
    let mut grid = vec![vec![0.0; n]; n];
    for (row, grid_row) in grid.iter_mut().enumerate() {
        let alpha = -radius + 2.0 * radius * row as f64 / (n - 1) as f64;
        for (col, cell) in grid_row.iter_mut().enumerate() {
            let beta = -radius + 2.0 * radius * col as f64 / (n - 1) as f64;
            for (i, p) in params.iter().enumerate() {
                let moved: Vec<f64> = center[i]
                    .iter()
                    .zip(&d1[i])
                    .zip(&d2[i])
                    .map(|((c, a), b)| c + alpha * a + beta * b)
                    .collect();
                p.set_data(&moved);
            }
            *cell = loss_fn();
        }
    }
    for (i, p) in params.iter().enumerate() {
        p.set_data(&center[i]);
    }
    Ok(grid)
}
