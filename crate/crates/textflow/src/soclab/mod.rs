//! Comparative dynamics laboratory: four generative dynamics on analytic
//! toy densities, with action, terminal-error, and perturbation-response
//! measurements.
//!
//! Everything here is analytic or exactly simulated; no learned components,
//! so comparisons isolate the dynamics themselves.

mod density;
mod dynamics;

pub use density::{DensityKind, GaussianComponent, ToyDensity};
pub use dynamics::{
    metropolis_rates, perturbation_response, simulate_ar_impulsive, simulate_flow_ode,
    simulate_jump_ctmc, simulate_score_sde, ArConfig, JumpConfig, LatticeSpec,
    PerturbationResponse, ScoreSdeConfig,
};

use crate::sampler::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsKind {
    ArImpulsive,
    JumpCtmc,
    ScoreSde,
    FlowOde,
}

impl DynamicsKind {
    pub fn name(&self) -> &'static str {
        match self {
            DynamicsKind::ArImpulsive => "ar_impulsive",
            DynamicsKind::JumpCtmc => "jump_ctmc",
            DynamicsKind::ScoreSde => "score_sde",
            DynamicsKind::FlowOde => "flow_ode",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunMetrics {
    /// Kinetic action for continuous dynamics; smeared impulse action for
    /// the impulsive kind.
    pub action: f64,
    pub terminal_log_density: f64,
    /// Field/score evaluations for continuous kinds, event count for jumps,
    /// commit count for the impulsive kind.
    pub nfe_or_events: usize,
}

/// Output of one simulated run.
pub struct DynamicsRun {
    pub kind: DynamicsKind,
    pub trajectory: Option<Trajectory>,
    /// (time, state after jump) pairs for the jump kind.
    pub events: Option<Vec<(f64, Vec<f64>)>>,
    /// Per-commit state updates for the impulsive kind.
    pub impulses: Option<Vec<Vec<f64>>>,
    pub terminal: Vec<f64>,
    pub metrics: RunMetrics,
}
