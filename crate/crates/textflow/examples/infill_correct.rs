//! Boundary-value generation: pin a prefix and suffix and integrate only the
//! free middle, then use the same machinery with a corrupted sequence as
//! soft context to perform closed-loop correction.
//!
//! Run: `cargo run --release --example infill_correct`

use textflow::controller::{Controller, ControllerConfig};
use textflow::corpus::{
    corrupt, generate_corpus, pad_to, Amount, CorruptionKind, CorruptionSpec, Grammar,
};
use textflow::flow::{train as train_flow, FlowExample, FlowTrainConfig};
use textflow::mask::BoundaryMask;
use textflow::rng::Rng;
use textflow::sampler::{sample, SolverConfig};
use textflow::stats::levenshtein;
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
    println!("training autoencoder + conditional controller (a couple of minutes)...");
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

    // conditional pairs: corrupted variant as condition, clean as target
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

    println!("== infilling: first 8 and last 4 content tokens pinned ==");
    for (i, seq) in heldout.iter().filter(|s| s.len() >= 16).take(5).enumerate() {
        let padded = pad_to(seq, seq_len);
        let mut mask = BoundaryMask::free(seq_len);
        for p in 0..8 {
            mask.set(p, true);
        }
        for p in seq.len() - 4..seq_len {
            mask.set(p, true);
        }
        let out = sample(
            &controller,
            &vae,
            &mask,
            &padded,
            None,
            &SolverConfig::heun(32),
            1.0,
            Rng::derive(91, i as u64),
        )
        .unwrap();
        let text = vocab.detokenize(&out.tokens);
        println!(
            "  original {:20} filled {:20} {}",
            vocab.detokenize(seq),
            text,
            if Grammar::Arithmetic.is_valid(&text) { "valid" } else { "invalid" }
        );
    }

    println!("== correction: corrupted sequence as soft context ==");
    let free = BoundaryMask::free(seq_len);
    for (i, seq) in heldout.iter().filter(|s| s.len() >= 8).take(5).enumerate() {
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
            &SolverConfig::heun(48),
            3.0,
            Rng::derive(93, i as u64),
        )
        .unwrap();
        let fixed = out.tokens.strip_pad();
        println!(
            "  corrupted {:20} corrected {:20} {} (edits {})",
            vocab.detokenize(&corrupted),
            vocab.detokenize(&fixed),
            if Grammar::Arithmetic.is_valid(&vocab.detokenize(&fixed)) {
                "valid"
            } else {
                "invalid"
            },
            levenshtein(&fixed.ids, &corrupted.strip_pad().ids)
        );
    }
}
