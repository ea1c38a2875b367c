//! Geometric instrumentation: curvature and stiffness along flow
//! trajectories, kinetic vs impulsive action, and a filter-normalized loss
//! landscape slice.
//!
//! Run: `cargo run --release --example geometry`

use textflow::diagnostics::{
    curvature, impulsive_action, kinetic_action, landscape_slice, stiffness, StiffnessProbe,
};
use textflow::rng::Rng;
use textflow::sampler::{integrate, FnField, SolverConfig};
use textflow::soclab::{GaussianComponent, ToyDensity};
use textflow::tensor::Tensor;

fn main() {
    let density = ToyDensity::mixture(
        vec![0.5, 0.5],
        vec![
            GaussianComponent {
                mean: vec![-1.5, 1.0],
                var: vec![0.16, 0.16],
            },
            GaussianComponent {
                mean: vec![1.5, -1.0],
                var: vec![0.16, 0.16],
            },
        ],
    );
    let d = density.clone();
    let field = FnField(move |z: &[f64], t: f64| d.flow_field(z, t));

    println!("== along one straight-path trajectory ==");
    let mut rng = Rng::new(3);
    let z0 = rng.normal_vec(2);
    let cfg = SolverConfig::heun(100).recording();
    let (_, traj, report) = integrate(&field, &z0, &cfg, None).unwrap();
    let traj = traj.unwrap();
    println!("  nfe {}", report.nfe);
    println!("  kinetic action {:.4}", kinetic_action(&traj).unwrap());
    let kappas = curvature(&traj).unwrap();
    for idx in [0usize, 24, 49, 74, 96] {
        let p = &kappas[idx];
        match p.kappa {
            Some(k) => println!("  t {:.2}  curvature {k:.4}", p.t),
            None => println!("  t {:.2}  curvature undefined (stationary)", p.t),
        }
    }

    println!("== field stiffness at trajectory points ==");
    for idx in [0usize, 50, 100] {
        let s = stiffness(
            &field,
            &traj.states[idx],
            traj.times[idx],
            StiffnessProbe::FiniteDiffFull,
            1e-4,
            &mut rng,
        )
        .unwrap();
        println!("  t {:.2}  |J|_F = {s:.3}", traj.times[idx]);
    }

    println!("== impulsive action diverges as the smear width shrinks ==");
    let impulses: Vec<Vec<f64>> = (0..4).map(|_| rng.normal_vec(2)).collect();
    for dt in [0.1, 0.01, 0.001] {
        println!("  dt_smear {dt:<6} action {:10.2}", impulsive_action(&impulses, dt));
    }

    println!("== loss landscape around a quadratic minimum ==");
    let theta = Tensor::param(&[6], vec![0.0; 6]);
    let params = [theta.clone()];
    let mut loss = || theta.to_vec().iter().map(|x| x * x).sum::<f64>();
    let d1 = vec![rng.normal_vec(6)];
    let d2 = vec![rng.normal_vec(6)];
    let grid = landscape_slice(&mut loss, &params, &d1, &d2, 7, 1.0).unwrap();
    for row in &grid {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:5.2}")).collect();
        println!("  {}", cells.join(" "));
    }
    println!("(center of the grid is the minimum; the slice is convex)");
}
