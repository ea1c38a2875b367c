//! Flow-based density estimation on a one-dimensional toy: train a small
//! velocity field on a two-component mixture, recover its log-density by
//! integrating the divergence backwards along the ODE, and check that the
//! result is a proper (normalized) density.
//!
//! Run: `cargo run --release --example likelihood_toys`

use textflow::likelihood::{divergence, flow_log_density, DivergenceEstimator, FixedStepMethod};
use textflow::mlp::{Mlp, MlpField};
use textflow::rng::Rng;
use textflow::sampler::FnField;

fn main() {
    // target: 0.5 N(-1.5, 0.4^2) + 0.5 N(1.5, 0.4^2)
    let mut rng = Rng::new(41);
    let samples: Vec<Vec<f64>> = (0..4000)
        .map(|_| {
            let x = if rng.bernoulli(0.5) {
                -1.5 + 0.4 * rng.normal()
            } else {
                1.5 + 0.4 * rng.normal()
            };
            vec![x]
        })
        .collect();

    let field = MlpField(Mlp::init(&[2, 32, 32, 1], 43));
    println!("training a 1-d velocity field on mixture samples...");
    let losses = field.train_cfm(&samples, 1500, 32, 3e-3, 45);
    println!(
        "  regression loss {:.4} -> {:.4}",
        losses[..50].iter().sum::<f64>() / 50.0,
        losses[losses.len() - 50..].iter().sum::<f64>() / 50.0
    );

    // the learned density, via instantaneous change of variables
    let logp = |z: f64| {
        flow_log_density(
            &field,
            &[z],
            FixedStepMethod::Euler,
            400,
            DivergenceEstimator::Exact,
            &mut Rng::new(1),
        )
        .unwrap()
    };
    println!("  z      learned log p(z)   true log p(z)");
    let true_logp = |z: f64| {
        let comp = |m: f64| (-((z - m) / 0.4_f64).powi(2) / 2.0).exp() / (0.4 * (2.0 * std::f64::consts::PI).sqrt());
        (0.5 * comp(-1.5) + 0.5 * comp(1.5)).ln()
    };
    for z in [-2.5f64, -1.5, -0.5, 0.0, 0.5, 1.5, 2.5] {
        println!("  {z:5.2}  {:8.3}          {:8.3}", logp(z), true_logp(z));
    }

    // a proper density integrates to one
    let n_grid = 121usize;
    let h = 12.0 / (n_grid - 1) as f64;
    let values: Vec<f64> = (0..n_grid)
        .map(|i| logp(-6.0 + i as f64 * h).exp())
        .collect();
    let integral: f64 = values.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
    println!("trapezoid of exp(log p) over [-6, 6]: {integral:.4}");

    // divergence estimators agree on a linear field
    let a = [[0.8, -0.3], [0.1, 1.4]];
    let linear = FnField(move |z: &[f64], _t: f64| {
        vec![
            a[0][0] * z[0] + a[0][1] * z[1],
            a[1][0] * z[0] + a[1][1] * z[1],
        ]
    });
    let mut rng = Rng::new(5);
    let exact = divergence(&linear, &[0.2, -0.7], 0.5, DivergenceEstimator::Exact, &mut rng).unwrap();
    let hutch = divergence(
        &linear,
        &[0.2, -0.7],
        0.5,
        DivergenceEstimator::Hutchinson { probes: 20_000 },
        &mut rng,
    )
    .unwrap();
    println!("divergence of a linear field: exact {exact:.4}, stochastic {hutch:.4} (trace = 2.2)");
}
