//! Train the velocity-field controller against a frozen autoencoder under
//! the stochastic boundary-pattern curriculum, then draw a few samples.
//!
//! Run: `cargo run --release --example train_flow`

use textflow::controller::{Controller, ControllerConfig};
use textflow::corpus::{generate_corpus, Grammar, TokenSequence, PAD};
use textflow::flow::{train as train_flow, FlowExample, FlowTrainConfig};
use textflow::mask::BoundaryMask;
use textflow::rng::Rng;
use textflow::sampler::{sample, SolverConfig};
use textflow::vae::{train as train_vae, Vae, VaeConfig, VaeTrainConfig};

fn main() {
    let seq_len = 24usize;
    let (vocab, seqs) = generate_corpus(Grammar::Arithmetic, 400, 20, 1234).unwrap();

    // stage 1: the coordinate map into latent space
    let mut vcfg = VaeConfig::new(vocab.size(), 4);
    vcfg.embed_dim = 24;
    vcfg.channels = 40;
    vcfg.beta_max = 1e-4;
    vcfg.beta_warmup_steps = 300;
    let vae = Vae::init(vcfg, 7);
    println!("training the autoencoder...");
    train_vae(
        &vae,
        &seqs,
        &VaeTrainConfig {
            steps: 900,
            batch_size: 10,
            lr: 3e-3,
            seq_len,
            mask_augment_p: 0.25,
        },
        42,
    )
    .unwrap();
    println!(
        "  reconstruction accuracy {:.4}",
        vae.reconstruction_accuracy(&seqs, seq_len).unwrap()
    );

    // stage 2: the controller, regressed onto straight-path velocities
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
    let data: Vec<FlowExample> = seqs
        .iter()
        .map(|s| FlowExample {
            target: s.clone(),
            condition: None,
        })
        .collect();
    println!("training the velocity field (boundary-pattern curriculum)...");
    let history = train_flow(
        &controller,
        &vae,
        &data,
        &FlowTrainConfig {
            steps: 1200,
            batch_size: 16,
            lr: 3e-4,
            seq_len,
            cond_dropout: 0.0,
        },
        43,
    )
    .unwrap();
    for chunk in history.chunks(200) {
        let avg: f64 = chunk.iter().map(|r| r.loss).sum::<f64>() / chunk.len() as f64;
        println!("  step {:4}  velocity regression loss {avg:.4}", chunk[0].step);
    }

    // draw unconditional samples
    println!("samples:");
    let mask = BoundaryMask::free(seq_len);
    let blank = TokenSequence::new(vec![PAD; seq_len]);
    for i in 0..8 {
        let out = sample(
            &controller,
            &vae,
            &mask,
            &blank,
            None,
            &SolverConfig::heun(24),
            1.0,
            Rng::derive(77, i),
        )
        .unwrap();
        let text = vocab.detokenize(&out.tokens);
        let ok = Grammar::Arithmetic.is_valid(&text);
        println!("  {text:24} {}", if ok { "valid" } else { "invalid" });
    }
}
