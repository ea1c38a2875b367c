//! Convergence orders of the three integrators on dz/dt = -z, whose exact
//! solution at t = 1 is e^{-1}, plus the telemetry an adaptive solver emits.
//!
//! Run: `cargo run --release --example solver_orders`

use textflow::sampler::{integrate, FnField, SolverConfig};

fn main() {
    let field = FnField(|z: &[f64], _t: f64| z.iter().map(|x| -x).collect());
    let exact = (-1.0f64).exp();

    println!("explicit Euler (first order): error should halve as N doubles");
    let mut prev = None;
    for steps in [8usize, 16, 32, 64, 128, 256] {
        let (z, _, _) = integrate(&field, &[1.0], &SolverConfig::euler(steps), None).unwrap();
        let err = (z[0] - exact).abs();
        let ratio = prev.map(|p: f64| p / err);
        match ratio {
            Some(r) => println!("  N = {steps:4}  error {err:.3e}  ratio {r:.2}"),
            None => println!("  N = {steps:4}  error {err:.3e}"),
        }
        prev = Some(err);
    }

    println!("Heun (second order): error should quarter as N doubles");
    let mut prev = None;
    for steps in [8usize, 16, 32, 64, 128] {
        let (z, _, _) = integrate(&field, &[1.0], &SolverConfig::heun(steps), None).unwrap();
        let err = (z[0] - exact).abs();
        match prev.map(|p: f64| p / err) {
            Some(r) => println!("  N = {steps:4}  error {err:.3e}  ratio {r:.2}"),
            None => println!("  N = {steps:4}  error {err:.3e}"),
        }
        prev = Some(err);
    }

    println!("adaptive Dormand-Prince with shrinking tolerances:");
    for tol in [1e-4, 1e-6, 1e-8, 1e-10] {
        let cfg = SolverConfig::rk45(tol, tol);
        let (z, _, report) = integrate(&field, &[1.0], &cfg, None).unwrap();
        println!(
            "  tol {tol:.0e}  error {:.3e}  nfe {:3}  accepted {} rejected {}  h in [{:.2e}, {:.2e}]",
            (z[0] - exact).abs(),
            report.nfe,
            report.accepted_steps,
            report.rejected_steps,
            report.min_step,
            report.max_step
        );
    }

    // a stiffer right-hand side drives the step controller down
    println!("stiff linear field dz/dt = -80 z:");
    let stiff = FnField(|z: &[f64], _t: f64| z.iter().map(|x| -80.0 * x).collect());
    let (z, _, report) = integrate(&stiff, &[1.0], &SolverConfig::rk45(1e-8, 1e-8), None).unwrap();
    println!(
        "  terminal {:.3e} (exact {:.3e})  nfe {}  rejected {}",
        z[0],
        (-80.0f64).exp(),
        report.nfe,
        report.rejected_steps
    );
}
