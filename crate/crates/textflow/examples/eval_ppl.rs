//! ELBO-based perplexity: decoder likelihood + flow-prior density (by
//! change of variables along the learned ODE) + posterior entropy, compared
//! against a unigram baseline.
//!
//! Run: `cargo run --release --example eval_ppl`

use textflow::controller::{Controller, ControllerConfig};
use textflow::corpus::{generate_corpus, Grammar};
use textflow::flow::{train as train_flow, FlowExample, FlowTrainConfig};
use textflow::likelihood::{elbo, unigram_ppl, DivergenceEstimator, FixedStepMethod};
use textflow::rng::Rng;
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
        .map(|s| FlowExample {
            target: s.clone(),
            condition: None,
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
            steps: 1200,
            batch_size: 16,
            lr: 3e-4,
            seq_len,
            cond_dropout: 0.0,
        },
        43,
    )
    .unwrap();

    println!("per-sequence bound on held-out data:");
    println!("{:>22} {:>8} {:>8} {:>8} {:>8} {:>7}", "sequence", "rec", "prior", "entropy", "elbo", "ppl");
    let mut elbo_sum = 0.0;
    let mut tokens = 0usize;
    let eval: Vec<_> = heldout.iter().take(20).collect();
    for (i, seq) in eval.iter().enumerate() {
        let mut rng = Rng::new(Rng::derive(3, i as u64));
        let report = elbo(
            &controller,
            &vae,
            seq,
            seq_len,
            FixedStepMethod::Euler,
            24,
            DivergenceEstimator::Hutchinson { probes: 2 },
            2,
            &mut rng,
        )
        .unwrap();
        if i < 8 {
            println!(
                "{:>22} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>7.3}",
                vocab.detokenize(seq),
                report.rec,
                report.prior,
                report.entropy,
                report.elbo,
                report.ppl
            );
        }
        elbo_sum += report.elbo;
        tokens += report.tokens;
    }
    let model_ppl = (-elbo_sum / tokens as f64).exp();
    let baseline = unigram_ppl(
        train_set,
        &eval.iter().map(|s| (*s).clone()).collect::<Vec<_>>(),
        vocab.size(),
    );
    println!("corpus ELBO perplexity: {model_ppl:.3}");
    println!("unigram baseline:       {baseline:.3}");
}
