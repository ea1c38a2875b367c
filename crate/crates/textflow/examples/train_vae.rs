//! Train the locality-preserving text autoencoder on a synthetic corpus and
//! inspect what the latent control space looks like.
//!
//! Run: `cargo run --release --example train_vae`

use textflow::corpus::{generate_corpus, pad_to, Grammar};
use textflow::vae::{estimate_lipschitz, train, MapKind, Vae, VaeConfig, VaeTrainConfig};

fn main() {
    let (vocab, seqs) = generate_corpus(Grammar::Arithmetic, 400, 24, 1234).unwrap();
    let (train_set, heldout) = seqs.split_at(360);
    println!("corpus: {} train / {} held-out arithmetic expressions", train_set.len(), heldout.len());

    let mut cfg = VaeConfig::new(vocab.size(), 4);
    cfg.embed_dim = 24;
    cfg.channels = 40;
    cfg.beta_max = 1e-4;
    cfg.beta_warmup_steps = 300;
    let model = Vae::init(cfg, 7);

    let tcfg = VaeTrainConfig {
        steps: 900,
        batch_size: 10,
        lr: 3e-3,
        seq_len: 24,
        mask_augment_p: 0.25,
    };
    println!("training {} steps (4x compression, {} latent dims per group)...", tcfg.steps, model.cfg.latent_dim);
    let history = train(&model, train_set, &tcfg, 42).unwrap();
    for chunk in history.chunks(150) {
        let avg: f64 = chunk.iter().map(|r| r.total).sum::<f64>() / chunk.len() as f64;
        println!("  step {:4}  loss {avg:.4}", chunk[0].step);
    }

    let acc = model.reconstruction_accuracy(heldout, tcfg.seq_len).unwrap();
    println!("held-out token reconstruction accuracy: {acc:.4}");

    // a round trip through the latent space
    let sample = &heldout[0];
    let padded = pad_to(sample, tcfg.seq_len);
    let post = model.encode(&padded).unwrap();
    let decoded = model.decode_tokens(&post.mu).unwrap();
    println!("original: {}", vocab.detokenize(sample));
    println!("decoded : {}", vocab.detokenize(&decoded));

    // smoothness probes of both maps
    let probes: Vec<_> = heldout.iter().take(4).map(|s| pad_to(s, tcfg.seq_len)).collect();
    let enc = estimate_lipschitz(&model, MapKind::Encoder, &probes, 0.01, 8, 3).unwrap();
    let dec = estimate_lipschitz(&model, MapKind::Decoder, &probes, 0.01, 8, 3).unwrap();
    println!("estimated Lipschitz: encoder {enc:.2}, decoder {dec:.2}");

    // locality: every latent position depends on a bounded token window
    let n_lat = tcfg.seq_len / model.cfg.downsample;
    for j in [0, n_lat / 2, n_lat - 1] {
        let (lo, hi) = model.encoder_window(j, tcfg.seq_len);
        println!("latent {j} reads tokens [{lo}, {hi}]");
    }
}
