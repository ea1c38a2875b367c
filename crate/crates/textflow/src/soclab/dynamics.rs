//! The four generative dynamics and the perturbation-response experiment.

use super::density::ToyDensity;
use super::{DynamicsKind, DynamicsRun, RunMetrics};
use crate::diagnostics::{impulsive_action, kinetic_action};
use crate::rng::Rng;
use crate::sampler::{integrate, FnField, SolverConfig, Trajectory};

// ── impulsive autoregressive dynamics ────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ArConfig {
    /// 1-D argmax grid resolution.
    pub grid_points: usize,
    /// Search range per coordinate.
    pub range: (f64, f64),
    /// Box width used to smear each impulse when reporting the action.
    pub dt_smear: f64,
}

impl Default for ArConfig {
    fn default() -> Self {
        ArConfig {
            grid_points: 512,
            range: (-6.0, 6.0),
            dt_smear: 0.01,
        }
    }
}

/// Commits coordinates one at a time in the given order, each to the
/// conditional argmax of the marginal density given everything already
/// committed (1-D grid search). Earlier commits are never revisited: the
/// defining open-loop property.
pub fn simulate_ar_impulsive(
    density: &ToyDensity,
    dims_order: &[usize],
    z_init: &[f64],
    cfg: &ArConfig,
    perturb: Option<(f64, &[f64])>,
) -> DynamicsRun {
    let dim = density.dim();
    assert_eq!(z_init.len(), dim);
    {
        let mut sorted = dims_order.to_vec();
        sorted.sort_unstable();
        assert_eq!(
            sorted,
            (0..dim).collect::<Vec<_>>(),
            "dims_order must be a permutation of the coordinates"
        );
    }
    let n = dims_order.len();
    let mut state = z_init.to_vec();
    let mut committed: Vec<usize> = Vec::new();
    let mut impulses = Vec::new();
    let mut traj = Trajectory::default();
    traj.times.push(0.0);
    traj.states.push(state.clone());
    traj.velocities.push(vec![0.0; dim]);
    let mut perturbed = false;

    for (k, &coord) in dims_order.iter().enumerate() {
        let t_k = (k + 1) as f64 / n as f64;
        // an injected disturbance lands on the state mid-run; committed
        // coordinates keep it forever
        if let Some((pt, delta)) = perturb {
            if !perturbed && pt <= t_k {
                for (s, d) in state.iter_mut().zip(delta) {
                    *s += d;
                }
                perturbed = true;
            }
        }
        // grid argmax of the marginal over committed + this coordinate
        let mut coords = committed.clone();
        coords.push(coord);
        let mut best_x = cfg.range.0;
        let mut best_lp = f64::NEG_INFINITY;
        for g in 0..cfg.grid_points {
            let x = cfg.range.0
                + (cfg.range.1 - cfg.range.0) * g as f64 / (cfg.grid_points - 1) as f64;
            let mut values: Vec<f64> = committed.iter().map(|&c| state[c]).collect();
            values.push(x);
            let lp = density.marginal_log_density(&coords, &values);
            if lp > best_lp {
                best_lp = lp;
                best_x = x;
            }
        }
        let mut impulse = vec![0.0; dim];
        impulse[coord] = best_x - state[coord];
        state[coord] = best_x;
        committed.push(coord);
        impulses.push(impulse);
        traj.times.push(t_k);
        traj.states.push(state.clone());
        traj.velocities.push(vec![0.0; dim]);
    }
    // a disturbance after the final commit still lands on the terminal state
    if let Some((pt, delta)) = perturb {
        if !perturbed && pt <= 1.0 {
            for (s, d) in state.iter_mut().zip(delta) {
                *s += d;
            }
            if let Some(last) = traj.states.last_mut() {
                *last = state.clone();
            }
        }
    }
    let metrics = RunMetrics {
        action: impulsive_action(&impulses, cfg.dt_smear),
        terminal_log_density: density.log_density(&state),
        nfe_or_events: n,
    };
    DynamicsRun {
        kind: DynamicsKind::ArImpulsive,
        trajectory: Some(traj),
        events: None,
        impulses: Some(impulses),
        terminal: state,
        metrics,
    }
}

// ── jump process on a lattice ────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LatticeSpec {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub extents: Vec<usize>,
}

impl LatticeSpec {
    pub fn position(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.origin)
            .map(|(&i, o)| o + self.spacing * i as f64)
            .collect()
    }

    pub fn nearest(&self, z: &[f64]) -> Vec<usize> {
        z.iter()
            .zip(&self.origin)
            .zip(&self.extents)
            .map(|((x, o), &e)| {
                let raw = ((x - o) / self.spacing).round();
                raw.clamp(0.0, (e - 1) as f64) as usize
            })
            .collect()
    }

    fn neighbors(&self, idx: &[usize]) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for d in 0..idx.len() {
            if idx[d] > 0 {
                let mut n = idx.to_vec();
                n[d] -= 1;
                out.push(n);
            }
            if idx[d] + 1 < self.extents[d] {
                let mut n = idx.to_vec();
                n[d] += 1;
                out.push(n);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct JumpConfig {
    pub t_end: f64,
    pub max_events: usize,
}

impl Default for JumpConfig {
    fn default() -> Self {
        JumpConfig {
            t_end: 1.0,
            max_events: 1_000_000,
        }
    }
}

/// Metropolis-style nearest-neighbor rates with the given stationary
/// density: λ(z→y) = base_rate · min(1, p(y)/p(z)).
pub fn metropolis_rates<'a>(
    density: &'a ToyDensity,
    lattice: &'a LatticeSpec,
    base_rate: f64,
) -> impl Fn(&[usize], &[usize]) -> f64 + 'a {
    move |from: &[usize], to: &[usize]| {
        let lp_from = density.log_density(&lattice.position(from));
        let lp_to = density.log_density(&lattice.position(to));
        base_rate * (lp_to - lp_from).exp().min(1.0)
    }
}

/// Exact event-driven simulation of a controlled continuous-time Markov
/// chain: exponential waiting times at the total exit rate, jump targets
/// proportional to their rates. A state with zero total rate is absorbing.
pub fn simulate_jump_ctmc(
    lattice: &LatticeSpec,
    rate_fn: &dyn Fn(&[usize], &[usize]) -> f64,
    z_init: &[f64],
    cfg: &JumpConfig,
    seed: u64,
    metric_density: Option<&ToyDensity>,
) -> DynamicsRun {
    let mut rng = Rng::new(seed);
    let mut idx = lattice.nearest(z_init);
    let mut t = 0.0f64;
    let mut events: Vec<(f64, Vec<f64>)> = Vec::new();
    while events.len() < cfg.max_events {
        let neighbors = lattice.neighbors(&idx);
        let rates: Vec<f64> = neighbors.iter().map(|n| rate_fn(&idx, n)).collect();
        debug_assert!(rates.iter().all(|&r| r >= 0.0), "rates must be nonnegative");
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            break; // absorbing state
        }
        let wait = rng.exponential(total);
        if t + wait > cfg.t_end {
            break;
        }
        t += wait;
        let pick = rng.categorical(&rates);
        idx = neighbors[pick].clone();
        events.push((t, lattice.position(&idx)));
    }
    let terminal = lattice.position(&idx);
    let metrics = RunMetrics {
        action: f64::INFINITY, // discrete hops have no finite kinetic action
        terminal_log_density: metric_density
            .map(|d| d.log_density(&terminal))
            .unwrap_or(f64::NAN),
        nfe_or_events: events.len(),
    };
    DynamicsRun {
        kind: DynamicsKind::JumpCtmc,
        trajectory: None,
        events: Some(events),
        impulses: None,
        terminal,
        metrics,
    }
}

// ── reverse-time score dynamics ──────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ScoreSdeConfig {
    pub n_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScoreSdeConfig {
    fn default() -> Self {
        ScoreSdeConfig {
            n_steps: 200,
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

impl ScoreSdeConfig {
    fn beta(&self, s: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * s
    }

    /// Signal coefficient of the variance-preserving forward process.
    fn alpha(&self, s: f64) -> f64 {
        (-0.5 * (self.beta_min * s + 0.5 * (self.beta_max - self.beta_min) * s * s)).exp()
    }
}

/// Euler-Maruyama discretization of the reverse-time dynamics whose drift is
/// the analytic score of the noised target. Generation time runs 0 → 1;
/// the state starts from (approximately) the variance-preserving prior.
pub fn simulate_score_sde(
    density: &ToyDensity,
    z_init: &[f64],
    cfg: &ScoreSdeConfig,
    seed: u64,
    perturb: Option<(f64, &[f64])>,
) -> DynamicsRun {
    let mut rng = Rng::new(seed);
    let n = cfg.n_steps;
    let dt = 1.0 / n as f64;
    let mut z = z_init.to_vec();
    let mut traj = Trajectory::default();
    let mut perturbed = false;
    let mut last_drift = vec![0.0; z.len()];
    for k in 0..n {
        let tau = k as f64 * dt;
        if let Some((pt, delta)) = perturb {
            if !perturbed && pt <= tau {
                for (zi, d) in z.iter_mut().zip(delta) {
                    *zi += d;
                }
                perturbed = true;
            }
        }
        let s = 1.0 - tau;
        let beta = cfg.beta(s);
        let alpha = cfg.alpha(s);
        let sigma2 = 1.0 - alpha * alpha;
        let score = density.convolved(alpha, sigma2.max(1e-12)).score(&z);
        // reverse drift of the VP process
        let drift: Vec<f64> = z
            .iter()
            .zip(&score)
            .map(|(zi, sc)| 0.5 * beta * zi + beta * sc)
            .collect();
        traj.times.push(tau);
        traj.states.push(z.clone());
        traj.velocities.push(drift.clone());
        let noise_scale = (beta * dt).sqrt();
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += drift[i] * dt + noise_scale * rng.normal();
        }
        last_drift = drift;
    }
    traj.times.push(1.0);
    traj.states.push(z.clone());
    traj.velocities.push(last_drift);
    let metrics = RunMetrics {
        action: kinetic_action(&traj).expect("recorded trajectory"),
        terminal_log_density: density.log_density(&z),
        nfe_or_events: n,
    };
    DynamicsRun {
        kind: DynamicsKind::ScoreSde,
        trajectory: Some(traj),
        events: None,
        impulses: None,
        terminal: z,
        metrics,
    }
}

// ── marginal flow dynamics ───────────────────────────────────────────────

/// Integrates the analytic marginal straight-path field of the density with
/// the chosen solver, recording trajectory, action, and evaluation count.
pub fn simulate_flow_ode(
    density: &ToyDensity,
    z_init: &[f64],
    solver: &SolverConfig,
) -> DynamicsRun {
    let d = density.clone();
    let field = FnField(move |z: &[f64], t: f64| d.flow_field(z, t));
    let cfg = SolverConfig {
        record_trajectory: true,
        ..*solver
    };
    let (terminal, traj, report) =
        integrate(&field, z_init, &cfg, None).expect("toy flow integration");
    let traj = traj.expect("trajectory was recorded");
    let metrics = RunMetrics {
        action: kinetic_action(&traj).expect("recorded trajectory"),
        terminal_log_density: density.log_density(&terminal),
        nfe_or_events: report.nfe,
    };
    DynamicsRun {
        kind: DynamicsKind::FlowOde,
        trajectory: Some(traj),
        events: None,
        impulses: None,
        terminal,
        metrics,
    }
}

/// Flow run with a disturbance injected mid-trajectory; both legs use the
/// time-rescaled field so the dynamics are identical to an uninterrupted run.
fn flow_with_perturbation(
    density: &ToyDensity,
    z_init: &[f64],
    solver: &SolverConfig,
    perturb_time: f64,
    delta: &[f64],
) -> Vec<f64> {
    let leg = |z0: &[f64], from: f64, to: f64| -> Vec<f64> {
        let d = density.clone();
        let span = to - from;
        let field =
            FnField(move |z: &[f64], tau: f64| {
                let mut v = d.flow_field(z, from + tau * span);
                for vi in v.iter_mut() {
                    *vi *= span;
                }
                v
            });
        let (z, _, _) = integrate(&field, z0, solver, None).expect("toy flow leg");
        z
    };
    let mut mid = leg(z_init, 0.0, perturb_time);
    for (zi, d) in mid.iter_mut().zip(delta) {
        *zi += d;
    }
    leg(&mid, perturb_time, 1.0)
}

// ── perturbation response ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct PerturbationResponse {
    pub terminal_error_with: f64,
    pub terminal_error_without: f64,
    pub terminal_logp_with: f64,
    pub terminal_logp_without: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Runs a dynamics twice with the same seed, once with `perturb_vector`
/// injected into the state at `perturb_time`, and reports both terminal
/// distances to the analytic target mode. Closed-loop dynamics damp the
/// disturbance; open-loop dynamics carry it to the end.
pub fn perturbation_response(
    kind: DynamicsKind,
    density: &ToyDensity,
    perturb_time: f64,
    perturb_vector: &[f64],
    seed: u64,
) -> PerturbationResponse {
    assert!(
        perturb_time > 0.0 && perturb_time < 1.0,
        "perturbation must land strictly inside the horizon"
    );
    let mode = density.mode();
    let mut rng = Rng::new(seed);
    let z_init = rng.normal_vec(density.dim());
    let (with, without) = match kind {
        DynamicsKind::FlowOde => {
            let solver = SolverConfig::heun(128);
            let without = simulate_flow_ode(density, &z_init, &solver).terminal;
            let with =
                flow_with_perturbation(density, &z_init, &solver, perturb_time, perturb_vector);
            (with, without)
        }
        DynamicsKind::ArImpulsive => {
            let order: Vec<usize> = (0..density.dim()).collect();
            let cfg = ArConfig::default();
            let without = simulate_ar_impulsive(density, &order, &z_init, &cfg, None).terminal;
            let with = simulate_ar_impulsive(
                density,
                &order,
                &z_init,
                &cfg,
                Some((perturb_time, perturb_vector)),
            )
            .terminal;
            (with, without)
        }
        DynamicsKind::ScoreSde => {
            let cfg = ScoreSdeConfig::default();
            let without = simulate_score_sde(density, &z_init, &cfg, seed, None).terminal;
            let with = simulate_score_sde(
                density,
                &z_init,
                &cfg,
                seed,
                Some((perturb_time, perturb_vector)),
            )
            .terminal;
            (with, without)
        }
        DynamicsKind::JumpCtmc => {
            let lattice = LatticeSpec {
                origin: vec![-4.0; density.dim()],
                spacing: 0.25,
                extents: vec![33; density.dim()],
            };
            let rates = metropolis_rates(density, &lattice, 64.0);
            let cfg = JumpConfig::default();
            let without =
                simulate_jump_ctmc(&lattice, &rates, &z_init, &cfg, seed, Some(density)).terminal;
            // restart from the perturbed mid-state with a derived stream
            let mid = simulate_jump_ctmc(
                &lattice,
                &rates,
                &z_init,
                &JumpConfig {
                    t_end: perturb_time,
                    ..cfg
                },
                seed,
                Some(density),
            )
            .terminal;
            let shifted: Vec<f64> = mid.iter().zip(perturb_vector).map(|(m, d)| m + d).collect();
            let with = simulate_jump_ctmc(
                &lattice,
                &rates,
                &shifted,
                &JumpConfig {
                    t_end: 1.0 - perturb_time,
                    ..cfg
                },
                Rng::derive(seed, 1),
                Some(density),
            )
            .terminal;
            (with, without)
        }
    };
    PerturbationResponse {
        terminal_error_with: distance(&with, &mode),
        terminal_error_without: distance(&without, &mode),
        terminal_logp_with: density.log_density(&with),
        terminal_logp_without: density.log_density(&without),
    }
}
