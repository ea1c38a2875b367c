//! The interplay between guidance strength and integration fidelity: strong
//! guidance amplifies the velocity field, stiffening the dynamics, so coarse
//! step counts collapse while fine discretization recovers.
//!
//! Run: `cargo run --release --example cfg_sweep`

use textflow::controller::{Controller, ControllerConfig};
use textflow::corpus::{
    corrupt, generate_corpus, pad_to, Amount, CorruptionKind, CorruptionSpec, Grammar,
};
use textflow::flow::{train as train_flow, FlowExample, FlowTrainConfig};
use textflow::mask::BoundaryMask;
use textflow::rng::Rng;
use textflow::sampler::{sample, SolverConfig};
use textflow::vae::{train as train_vae, Vae, VaeConfig, VaeTrainConfig};

fn main() {
    let seq_len = 24usize;
    let (vocab, seqs) = generate_corpus(Grammar::Arithmetic, 420, 20, 1234).unwrap();
    let (train_set, heldout) = seqs.split_at(380);

    let mut vcfg = VaeConfig::new(vocab.size(), 4);
    vcfg.embed_dim = 24;
    vcfg.channels = 40;
    vcfg.beta_max = 1e-4;
    vcfg.beta_warmup_steps = 300;
    let vae = Vae::init(vcfg, 7);
    println!("training models (a couple of minutes)...");
    train_vae(
        &vae,
        train_set,
        &VaeTrainConfig {
            steps: 1000,
            batch_size: 10,
            lr: 3e-3,
            seq_len,
            mask_augment_p: 0.25,
        },
        42,
    )
    .unwrap();
    let data: Vec<FlowExample> = train_set
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let spec = CorruptionSpec::new(
                CorruptionKind::LexicalSubstitution,
                Amount::Rate(0.15),
                Rng::derive(5, i as u64),
            );
            FlowExample {
                target: s.clone(),
                condition: Some(corrupt(s, &spec, None, &vocab).unwrap()),
            }
        })
        .collect();
    let rows = seq_len / vae.cfg.downsample;
    let controller = Controller::init(
        ControllerConfig {
            latent_dim: vae.cfg.latent_dim,
            width: 64,
            layers: 2,
            heads: 4,
            head_dim: 16,
            max_len: rows,
            time_dim: 32,
        },
        9,
    );
    train_flow(
        &controller,
        &vae,
        &data,
        &FlowTrainConfig {
            steps: 1400,
            batch_size: 16,
            lr: 3e-4,
            seq_len,
            cond_dropout: 0.15,
        },
        43,
    )
    .unwrap();

    // sweep guidance strength against step count on the correction task
    let prompts: Vec<_> = heldout.iter().filter(|s| s.len() >= 8).take(40).collect();
    println!("oracle validity of guided corrections (rows: w, columns: steps)");
    print!("{:>6}", "w");
    let step_grid = [4usize, 8, 16, 32, 64];
    for n in step_grid {
        print!("{n:>8}");
    }
    println!();
    let free = BoundaryMask::free(seq_len);
    for w in [1.0f64, 3.0, 5.0, 7.0] {
        print!("{w:>6.1}");
        for n in step_grid {
            let mut valid = 0usize;
            for (i, seq) in prompts.iter().enumerate() {
                let spec = CorruptionSpec::new(
                    CorruptionKind::LexicalSubstitution,
                    Amount::Rate(0.15),
                    Rng::derive(17, i as u64),
                );
                let corrupted = corrupt(seq, &spec, None, &vocab).unwrap();
                let out = sample(
                    &controller,
                    &vae,
                    &free,
                    &pad_to(&corrupted, seq_len),
                    Some(&corrupted),
                    &SolverConfig::euler(n),
                    w,
                    Rng::derive(29, i as u64),
                )
                .unwrap();
                if Grammar::Arithmetic.is_valid(&vocab.detokenize(&out.tokens)) {
                    valid += 1;
                }
            }
            print!("{:>8.2}", valid as f64 / prompts.len() as f64);
        }
        println!();
    }
    println!("(strong guidance at few steps overshoots; fine steps recover)");
}
