//! Locality-preserving convolutional text autoencoder.
//!
//! The encoder and decoder are attention-free conv stacks, so every latent
//! position is computed from a bounded token window and vice versa. The
//! window bounds are derivable from the layer list (see
//! [`Vae::encoder_window`] / [`Vae::decoder_window`]) and are verified
//! against perturbation scans in the tests — locality is a contract here,
//! not an accident.
//!
//! The decoder emits continuous embeddings at every position and projects
//! them onto vocabulary logits through the shared token embedding matrix
//! with a learnable scale and bias. Training uses binary cross-entropy
//! against one-hot targets, a KL term toward the standard normal prior on a
//! linear warmup schedule, and a feature-stability penalty on the encoder's
//! residual-block activations.

use thiserror::Error;

use crate::corpus::{constraint_encode_input, pad_to, TokenSequence, PAD};
use crate::mask::BoundaryMask;
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

pub const LOGVAR_MIN: f64 = -12.0;
pub const LOGVAR_MAX: f64 = 6.0;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Contract(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

#[derive(Debug, Clone)]
pub struct VaeConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub channels: usize,
    /// Kernel width of the non-strided convolutions (odd).
    pub kernel: usize,
    /// Token-to-latent compression factor r, a power of two realized by
    /// log2(r) stride-2 stages.
    pub downsample: usize,
    pub beta_max: f64,
    pub beta_warmup_steps: usize,
    pub stab_weight: f64,
}

impl VaeConfig {
    pub fn new(vocab_size: usize, downsample: usize) -> Self {
        assert!(
            downsample.is_power_of_two(),
            "downsample factor must be a power of two"
        );
        VaeConfig {
            vocab_size,
            embed_dim: 32,
            latent_dim: 16,
            channels: 48,
            kernel: 3,
            downsample,
            beta_max: 2e-4,
            beta_warmup_steps: 600,
            stab_weight: 1e-4,
        }
    }

    fn stages(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }
}

/// Gaussian posterior parameters over a latent sequence, `[L/r, d]` each.
pub struct Posterior {
    pub mu: Tensor,
    pub logvar: Tensor,
}

impl Posterior {
    /// Detached posterior mean as a flat row-major buffer.
    pub fn mean_flat(&self) -> Vec<f64> {
        self.mu.to_vec()
    }
}

struct Conv {
    w: Tensor,
    b: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv {
    fn init(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let scale = 1.0 / ((c_in * k) as f64).sqrt();
        let w = Tensor::param(
            &[c_out, c_in, k],
            (0..c_out * c_in * k).map(|_| rng.normal() * scale).collect(),
        );
        let b = Tensor::param(&[c_out], vec![0.0; c_out]);
        Conv {
            w,
            b,
            stride,
            padding,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.conv1d(&self.w, self.stride, self.padding)?
            .add_col_broadcast(&self.b)
    }

    fn geometry(&self) -> (usize, usize, usize) {
        (self.w.shape()[2], self.stride, self.padding)
    }
}

struct ResBlock {
    c1: Conv,
    c2: Conv,
}

impl ResBlock {
    fn init(channels: usize, k: usize, rng: &mut Rng) -> Self {
        let p = (k - 1) / 2;
        ResBlock {
            c1: Conv::init(channels, channels, k, 1, p, rng),
            c2: Conv::init(channels, channels, k, 1, p, rng),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let h = self.c1.forward(x)?.gelu();
        let h = self.c2.forward(&h)?;
        x.add(&h)
    }
}

/// Geometric description of one layer, enough to reason about windows.
#[derive(Debug, Clone, Copy)]
enum LayerGeom {
    Conv { k: usize, s: usize, p: usize },
    Repeat { f: usize },
}

/// Which input interval an output interval depends on, one layer.
fn back_window(layer: LayerGeom, lo: i64, hi: i64) -> (i64, i64) {
    match layer {
        LayerGeom::Conv { k, s, p } => (
            lo * s as i64 - p as i64,
            hi * s as i64 - p as i64 + k as i64 - 1,
        ),
        LayerGeom::Repeat { f } => (lo.div_euclid(f as i64), hi.div_euclid(f as i64)),
    }
}

pub struct Vae {
    pub cfg: VaeConfig,
    /// Token embedding matrix `[V, E]`, shared between the encoder input
    /// and the decoder logit head.
    pub embed: Tensor,
    enc_in: Conv,
    enc_blocks: Vec<ResBlock>,
    enc_downs: Vec<Conv>,
    mu_head: Conv,
    logvar_head: Conv,
    dec_in: Conv,
    dec_blocks: Vec<ResBlock>,
    dec_ups: Vec<Conv>,
    emb_head: Conv,
    pub logit_scale: Tensor,
    pub logit_bias: Tensor,
}

pub struct VaeLoss {
    pub rec: f64,
    pub kl: f64,
    pub stab: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Grouped sequence length every example is padded to (multiple of r).
    pub seq_len: usize,
    /// Fraction of training examples that get a random token-level boundary
    /// pattern applied through `group_and_pad`, so the model also sees the
    /// interior padding produced by constrained sampling.
    pub mask_augment_p: f64,
}

impl Vae {
    pub fn init(cfg: VaeConfig, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let (v, e, c, d, k) = (
            cfg.vocab_size,
            cfg.embed_dim,
            cfg.channels,
            cfg.latent_dim,
            cfg.kernel,
        );
        let stages = cfg.stages();
        let embed = Tensor::param(&[v, e], (0..v * e).map(|_| rng.normal() * 0.5).collect());
        let enc_in = Conv::init(e, c, k, 1, (k - 1) / 2, &mut rng);
        let mut enc_blocks = Vec::new();
        let mut enc_downs = Vec::new();
        for _ in 0..stages {
            enc_blocks.push(ResBlock::init(c, k, &mut rng));
            enc_downs.push(Conv::init(c, c, 2, 2, 0, &mut rng));
        }
        enc_blocks.push(ResBlock::init(c, k, &mut rng));
        let mu_head = Conv::init(c, d, 1, 1, 0, &mut rng);
        let logvar_head = Conv::init(c, d, 1, 1, 0, &mut rng);

        // the decoder stays deliberately narrow: pointwise input and middle
        // stages plus one K=3 conv per upsampling, so each token is decoded
        // from its own group's latent with only a small boundary overlap
        let dec_in = Conv::init(d, c, 1, 1, 0, &mut rng);
        let mut dec_blocks = vec![ResBlock::init(c, 1, &mut rng)];
        let mut dec_ups = Vec::new();
        for _ in 0..stages {
            dec_ups.push(Conv::init(c, c, 3, 1, 1, &mut rng));
        }
        dec_blocks.push(ResBlock::init(c, 1, &mut rng));
        let emb_head = Conv::init(c, e, 1, 1, 0, &mut rng);
        let logit_scale = Tensor::param(&[1], vec![4.0]);
        let logit_bias = Tensor::param(&[1], vec![0.0]);
        Vae {
            cfg,
            embed,
            enc_in,
            enc_blocks,
            enc_downs,
            mu_head,
            logvar_head,
            dec_in,
            dec_blocks,
            dec_ups,
            emb_head,
            logit_scale,
            logit_bias,
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = vec![("embed".into(), self.embed.clone())];
        let conv = |name: String, c: &Conv, out: &mut Vec<(String, Tensor)>| {
            out.push((format!("{name}.w"), c.w.clone()));
            out.push((format!("{name}.b"), c.b.clone()));
        };
        conv("enc.in".into(), &self.enc_in, &mut out);
        for (i, b) in self.enc_blocks.iter().enumerate() {
            conv(format!("enc.block{i}.c1"), &b.c1, &mut out);
            conv(format!("enc.block{i}.c2"), &b.c2, &mut out);
        }
        for (i, d) in self.enc_downs.iter().enumerate() {
            conv(format!("enc.down{i}"), d, &mut out);
        }
        conv("enc.mu".into(), &self.mu_head, &mut out);
        conv("enc.logvar".into(), &self.logvar_head, &mut out);
        conv("dec.in".into(), &self.dec_in, &mut out);
        for (i, b) in self.dec_blocks.iter().enumerate() {
            conv(format!("dec.block{i}.c1"), &b.c1, &mut out);
            conv(format!("dec.block{i}.c2"), &b.c2, &mut out);
        }
        for (i, u) in self.dec_ups.iter().enumerate() {
            conv(format!("dec.up{i}"), u, &mut out);
        }
        conv("dec.emb".into(), &self.emb_head, &mut out);
        out.push(("logit_scale".into(), self.logit_scale.clone()));
        out.push(("logit_bias".into(), self.logit_bias.clone()));
        out
    }

    /// Snapshot of all parameters as plain data.
    pub fn export_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.named_params()
            .into_iter()
            .map(|(name, t)| (name, t.shape().to_vec(), t.to_vec()))
            .collect()
    }

    /// Restores parameters by name from a snapshot.
    pub fn import_tensors(
        &self,
        tensors: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<(), VaeError> {
        import_named(&self.named_params(), tensors).map_err(VaeError::Contract)
    }

    /// Token ids to embedding rows `[L, E]`.
    pub fn embed_tokens(&self, tokens: &TokenSequence) -> Result<Tensor, VaeError> {
        Ok(self.embed.embedding(&tokens.ids)?)
    }

    /// Encoder body from embeddings `[L, E]`; returns the posterior and the
    /// designated stability features.
    fn encode_body(&self, emb: &Tensor) -> Result<(Posterior, Vec<Tensor>), VaeError> {
        let mut h = emb.transpose()?; // [E, L]
        h = self.enc_in.forward(&h)?.gelu();
        let mut features = Vec::new();
        for (i, down) in self.enc_downs.iter().enumerate() {
            h = self.enc_blocks[i].forward(&h)?;
            features.push(h.clone());
            h = down.forward(&h)?.gelu();
        }
        h = self.enc_blocks.last().unwrap().forward(&h)?;
        features.push(h.clone());
        let mu = self.mu_head.forward(&h)?.transpose()?; // [L/r, d]
        let logvar = self
            .logvar_head
            .forward(&h)?
            .transpose()?
            .clamp(LOGVAR_MIN, LOGVAR_MAX);
        Ok((Posterior { mu, logvar }, features))
    }

    /// Posterior over latents for a token sequence whose length must be a
    /// multiple of the compression factor.
    pub fn encode(&self, tokens: &TokenSequence) -> Result<Posterior, VaeError> {
        let r = self.cfg.downsample;
        if tokens.is_empty() || tokens.len() % r != 0 {
            return Err(VaeError::Contract(format!(
                "token length {} is not a positive multiple of r={r} (group_and_pad first)",
                tokens.len()
            )));
        }
        let emb = self.embed_tokens(tokens)?;
        Ok(self.encode_body(&emb)?.0)
    }

    /// Encoder entry point for Lipschitz probing: perturbations act on
    /// embedding vectors, not token ids.
    pub fn encode_from_embeddings(&self, emb: &Tensor) -> Result<Posterior, VaeError> {
        Ok(self.encode_body(emb)?.0)
    }

    /// z = mu + exp(logvar / 2) * noise, differentiable in mu and logvar.
    pub fn reparameterize(p: &Posterior, noise: &Tensor) -> Result<Tensor, TensorError> {
        p.logvar.scale(0.5).exp().mul(noise)?.add(&p.mu)
    }

    /// Decoder body: latents `[N, d]` to output embeddings `[L, E]`.
    pub fn decode_embeddings(&self, z: &Tensor) -> Result<Tensor, VaeError> {
        let mut h = z.transpose()?; // [d, N]
        h = self.dec_in.forward(&h)?.gelu();
        h = self.dec_blocks[0].forward(&h)?;
        for up in &self.dec_ups {
            h = up.forward(&h.repeat_cols(2)?)?.gelu();
        }
        h = self.dec_blocks.last().unwrap().forward(&h)?;
        Ok(self.emb_head.forward(&h)?.transpose()?) // [L, E]
    }

    /// Fully parallel decode to vocabulary logits `[L, V]` through the
    /// shared embedding matrix with learnable scale and bias.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor, VaeError> {
        let emb_out = self.decode_embeddings(z)?;
        let logits = emb_out.matmul(&self.embed.transpose()?)?;
        Ok(logits
            .mul_scalar_t(&self.logit_scale)?
            .add_scalar_t(&self.logit_bias)?)
    }

    /// Greedy per-position decode.
    pub fn decode_tokens(&self, z: &Tensor) -> Result<TokenSequence, VaeError> {
        let logits = self.decode(z)?;
        let (l, v) = (logits.shape()[0], logits.shape()[1]);
        let data = logits.data();
        let ids = (0..l)
            .map(|r| {
                let row = &data[r * v..(r + 1) * v];
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect();
        Ok(TokenSequence::new(ids))
    }

    /// β(step): linear warmup from 0 to β_max.
    pub fn beta(&self, step: usize) -> f64 {
        if self.cfg.beta_warmup_steps == 0 {
            return self.cfg.beta_max;
        }
        self.cfg.beta_max * (step as f64 / self.cfg.beta_warmup_steps as f64).min(1.0)
    }

    /// Loss terms for one sequence. `noise` must match the latent shape.
    pub fn loss(
        &self,
        tokens: &TokenSequence,
        step: usize,
        noise: &Tensor,
    ) -> Result<(VaeLoss, Tensor), VaeError> {
        let emb = self.embed_tokens(tokens)?;
        let (post, features) = self.encode_body(&emb)?;
        let z = Vae::reparameterize(&post, noise)?;
        let logits = self.decode(&z)?;
        let rec = logits.bce_with_logits_mean(&tokens.ids)?;
        let kl = post
            .logvar
            .exp()
            .add(&post.mu.square())?
            .add_scalar(-1.0)
            .sub(&post.logvar)?
            .sum()
            .scale(0.5);
        let mut stab = Tensor::scalar(0.0);
        for f in &features {
            stab = stab.add(&f.square().mean())?;
        }
        let stab = stab.scale(1.0 / features.len() as f64);
        let total = rec
            .add(&kl.scale(self.beta(step)))?
            .add(&stab.scale(self.cfg.stab_weight))?;
        Ok((
            VaeLoss {
                rec: rec.item(),
                kl: kl.item(),
                stab: stab.item(),
                total: total.item(),
            },
            total,
        ))
    }

    // ── locality geometry ────────────────────────────────────────────────

    fn encoder_geometry(&self) -> Vec<LayerGeom> {
        let mut layers = Vec::new();
        let push_conv =
            |c: &Conv, layers: &mut Vec<LayerGeom>| {
                let (k, s, p) = c.geometry();
                layers.push(LayerGeom::Conv { k, s, p });
            };
        push_conv(&self.enc_in, &mut layers);
        for (i, down) in self.enc_downs.iter().enumerate() {
            push_conv(&self.enc_blocks[i].c1, &mut layers);
            push_conv(&self.enc_blocks[i].c2, &mut layers);
            push_conv(down, &mut layers);
        }
        let last = self.enc_blocks.last().unwrap();
        push_conv(&last.c1, &mut layers);
        push_conv(&last.c2, &mut layers);
        push_conv(&self.mu_head, &mut layers);
        layers
    }

    fn decoder_geometry(&self) -> Vec<LayerGeom> {
        let mut layers = Vec::new();
        let push_conv =
            |c: &Conv, layers: &mut Vec<LayerGeom>| {
                let (k, s, p) = c.geometry();
                layers.push(LayerGeom::Conv { k, s, p });
            };
        push_conv(&self.dec_in, &mut layers);
        push_conv(&self.dec_blocks[0].c1, &mut layers);
        push_conv(&self.dec_blocks[0].c2, &mut layers);
        for up in &self.dec_ups {
            layers.push(LayerGeom::Repeat { f: 2 });
            push_conv(up, &mut layers);
        }
        let last = self.dec_blocks.last().unwrap();
        push_conv(&last.c1, &mut layers);
        push_conv(&last.c2, &mut layers);
        push_conv(&self.emb_head, &mut layers);
        layers
    }

    /// Analytic token window `[lo, hi]` that latent position `j` depends on,
    /// for a length-`len` input.
    pub fn encoder_window(&self, j: usize, len: usize) -> (usize, usize) {
        let (mut lo, mut hi) = (j as i64, j as i64);
        for layer in self.encoder_geometry().iter().rev() {
            let (l, h) = back_window(*layer, lo, hi);
            lo = l;
            hi = h;
        }
        (lo.max(0) as usize, hi.min(len as i64 - 1) as usize)
    }

    /// Analytic output-token window `[lo, hi]` that latent position `j`
    /// influences, for a latent sequence of `n` positions.
    pub fn decoder_window(&self, j: usize, n: usize) -> (usize, usize) {
        // forward influence: invert the backward window layer by layer
        let mut lo = j as i64;
        let mut hi = j as i64;
        for layer in self.decoder_geometry() {
            match layer {
                LayerGeom::Conv { k, s, p } => {
                    // outputs o with o*s - p <= hi and o*s - p + k - 1 >= lo
                    let new_lo = (lo - k as i64 + 1 + p as i64).div_euclid(s as i64)
                        + i64::from((lo - k as i64 + 1 + p as i64).rem_euclid(s as i64) != 0);
                    let new_hi = (hi + p as i64).div_euclid(s as i64);
                    lo = new_lo;
                    hi = new_hi;
                }
                LayerGeom::Repeat { f } => {
                    lo *= f as i64;
                    hi = hi * f as i64 + f as i64 - 1;
                }
            }
        }
        let out_len = (n * self.cfg.downsample) as i64;
        (lo.max(0) as usize, hi.min(out_len - 1) as usize)
    }

    // ── evaluation helpers ───────────────────────────────────────────────

    /// Fraction of non-PAD token positions reproduced by argmax decode of
    /// the posterior mean.
    pub fn reconstruction_accuracy(
        &self,
        seqs: &[TokenSequence],
        seq_len: usize,
    ) -> Result<f64, VaeError> {
        let mut hit = 0usize;
        let mut total = 0usize;
        for seq in seqs {
            let padded = pad_to(seq, seq_len);
            let post = self.encode(&padded)?;
            let decoded = self.decode_tokens(&post.mu)?;
            for (i, &id) in padded.ids.iter().enumerate() {
                if id == PAD {
                    continue;
                }
                total += 1;
                if decoded.ids[i] == id {
                    hit += 1;
                }
            }
        }
        Ok(if total == 0 {
            1.0
        } else {
            hit as f64 / total as f64
        })
    }
}

/// Copies snapshot data into live parameters, matching by name.
pub(crate) fn import_named(
    params: &[(String, Tensor)],
    tensors: &[(String, Vec<usize>, Vec<f64>)],
) -> Result<(), String> {
    for (name, tensor) in params {
        let found = tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| format!("snapshot is missing tensor {name:?}"))?;
        if found.1 != tensor.shape() {
            return Err(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                found.1,
                tensor.shape()
            ));
        }
        tensor.set_data(&found.2);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Encoder,
    Decoder,
}

/// Empirical Lipschitz ratio of an arbitrary map under Gaussian input
/// perturbations: max over trials of ‖f(x+δ) − f(x)‖ / ‖δ‖ with δ ~ N(0, σ²I).
pub fn lipschitz_ratio(
    f: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    base: &[f64],
    sigma: f64,
    trials: usize,
    rng: &mut Rng,
) -> Result<f64, VaeError> {
    if trials == 0 {
        return Err(VaeError::Contract("trials must be positive".into()));
    }
    assert!(sigma > 0.0, "sigma must be positive");
    let f0 = f(base);
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let delta: Vec<f64> = (0..base.len()).map(|_| rng.normal() * sigma).collect();
        let perturbed: Vec<f64> = base.iter().zip(&delta).map(|(x, d)| x + d).collect();
        let f1 = f(&perturbed);
        let dn = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let fn_ = f0
            .iter()
            .zip(&f1)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        best = best.max(fn_ / dn);
    }
    Ok(best)
}

/// Lipschitz estimate of the encoder (over embeddings) or decoder (over
/// latents, measuring output embeddings) at the given inputs.
pub fn estimate_lipschitz(
    model: &Vae,
    map: MapKind,
    inputs: &[TokenSequence],
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<f64, VaeError> {
    if trials == 0 {
        return Err(VaeError::Contract("trials must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    let mut best: f64 = 0.0;
    for seq in inputs {
        match map {
            MapKind::Encoder => {
                let emb = model.embed_tokens(seq)?;
                let shape = emb.shape().to_vec();
                let base = emb.to_vec();
                let mut f = |x: &[f64]| {
                    let t = Tensor::new(&shape, x.to_vec());
                    model
                        .encode_from_embeddings(&t)
                        .expect("encoder forward")
                        .mu
                        .to_vec()
                };
                best = best.max(lipschitz_ratio(&mut f, &base, sigma, trials, &mut rng)?);
            }
            MapKind::Decoder => {
                let post = model.encode(seq)?;
                let shape = post.mu.shape().to_vec();
                let base = post.mu.to_vec();
                let mut f = |x: &[f64]| {
                    let t = Tensor::new(&shape, x.to_vec());
                    model.decode_embeddings(&t).expect("decoder forward").to_vec()
                };
                best = best.max(lipschitz_ratio(&mut f, &base, sigma, trials, &mut rng)?);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy)]
pub struct VaeStepRecord {
    pub step: usize,
    pub rec: f64,
    pub kl: f64,
    pub stab: f64,
    pub total: f64,
}

/// Trains in place; deterministic given the seed. Returns per-step losses.
pub fn train(
    model: &Vae,
    data: &[TokenSequence],
    cfg: &VaeTrainConfig,
    seed: u64,
) -> Result<Vec<VaeStepRecord>, VaeError> {
    if data.is_empty() {
        return Err(VaeError::Contract("empty training set".into()));
    }
    assert_eq!(cfg.seq_len % model.cfg.downsample, 0);
    let params = model.params();
    let mut opt = Adam::with_clip(&params, cfg.lr, 5.0);
    let mut rng = Rng::new(seed);
    let mut history = Vec::with_capacity(cfg.steps);
    let n_lat = cfg.seq_len / model.cfg.downsample;
    let d = model.cfg.latent_dim;
    for step in 0..cfg.steps {
        opt.zero_grad(&params);
        let mut total = Tensor::scalar(0.0);
        let mut acc = VaeStepRecord {
            step,
            rec: 0.0,
            kl: 0.0,
            stab: 0.0,
            total: 0.0,
        };
        for _ in 0..cfg.batch_size {
            let seq = &data[rng.below(data.len())];
            // some examples see exactly the constraint-pattern inputs that
            // constrained sampling encodes (free runs blanked to PAD)
            let padded = if rng.bernoulli(cfg.mask_augment_p) {
                let padded = pad_to(seq, cfg.seq_len);
                let keep = rng.uniform_in(0.2, 0.8);
                let mask = BoundaryMask::new(
                    (0..padded.len()).map(|_| rng.bernoulli(keep)).collect(),
                );
                let (blanked, _, _) =
                    constraint_encode_input(&padded, &mask, model.cfg.downsample);
                if blanked.len() <= cfg.seq_len {
                    pad_to(&blanked, cfg.seq_len)
                } else {
                    padded
                }
            } else {
                pad_to(seq, cfg.seq_len)
            };
            let noise = Tensor::new(&[n_lat, d], rng.normal_vec(n_lat * d));
            let (terms, loss) = model.loss(&padded, step, &noise)?;
            total = total.add(&loss)?;
            acc.rec += terms.rec;
            acc.kl += terms.kl;
            acc.stab += terms.stab;
            acc.total += terms.total;
        }
        let batch_loss = total.scale(1.0 / cfg.batch_size as f64);
        let loss_value = batch_loss.item();
        if !loss_value.is_finite() {
            return Err(VaeError::Diverged {
                step,
                loss: loss_value,
            });
        }
        batch_loss.backward()?;
        opt.step(&params);
        let b = cfg.batch_size as f64;
        acc.rec /= b;
        acc.kl /= b;
        acc.stab /= b;
        acc.total /= b;
        history.push(acc);
    }
    Ok(history)
}
