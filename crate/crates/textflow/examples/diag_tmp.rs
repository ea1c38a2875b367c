use textflow::checkpoint::{controller_from_checkpoint, vae_from_checkpoint, Checkpoint};
use textflow::controller::ConditionState;
use textflow::corpus::{corrupt, generate_corpus, pad_to, Amount, CorruptionKind, CorruptionSpec, Grammar};
use textflow::flow::{cfm_loss, FlowBatch};
use textflow::mask::BoundaryMask;
use textflow::rng::Rng;
use textflow::tensor::Tensor;
use std::path::Path;

fn main() {
    let vae = vae_from_checkpoint(&Checkpoint::load(Path::new("/root/cal/vaeA3.ckpt")).unwrap()).unwrap();
    let flow = controller_from_checkpoint(&Checkpoint::load(Path::new("/root/cal/flow/flow.ckpt")).unwrap()).unwrap();
    let (vocab, seqs) = generate_corpus(Grammar::Arithmetic, 4000, 24, 1234).unwrap();
    let heldout = &seqs[3600..];
    let mut rng = Rng::new(3);
    // batches at small t where the condition carries most of the signal
    for t_probe in [0.1f64, 0.5] {
        let mut losses = [0.0f64; 3]; // true cond, null cond, wrong cond
        for (i, seq) in heldout.iter().take(40).enumerate() {
            let spec = CorruptionSpec::new(CorruptionKind::LexicalSubstitution, Amount::Rate(0.15), i as u64);
            let corrupted = corrupt(seq, &spec, None, &vocab).unwrap();
            let z1 = vae.encode(&pad_to(seq, 24)).unwrap().mean_flat();
            let cond_lat = vae.encode(&pad_to(&corrupted, 24)).unwrap().mean_flat();
            let wrong = vae.encode(&pad_to(&heldout[(i + 7) % 40], 24)).unwrap().mean_flat();
            let z0 = rng.normal_vec(6 * 16);
            for (slot, cond) in [
                ConditionState::new(Tensor::new(&[6, 16], cond_lat.clone())),
                ConditionState::none(),
                ConditionState::new(Tensor::new(&[6, 16], wrong.clone())),
            ].into_iter().enumerate() {
                let batch = FlowBatch {
                    z0: vec![z0.clone()], z1: vec![z1.clone()], t: vec![t_probe],
                    mask: vec![BoundaryMask::free(6)], cond: vec![cond], rows: 6, dim: 16,
                };
                losses[slot] += cfm_loss(&flow, &batch).unwrap().item();
            }
        }
        println!("t={t_probe}: loss true-cond {:.3}, null {:.3}, wrong-cond {:.3}",
                 losses[0] / 40.0, losses[1] / 40.0, losses[2] / 40.0);
    }
}
