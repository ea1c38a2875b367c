//! Learned velocity field v(z, t, mask, condition).
//!
//! A bidirectional transformer: every latent position attends to every other
//! through softmax kernels, the structural opposite of the VAE's bounded
//! windows. Context/free status enters additively through two learned type
//! embeddings, time through a projected sinusoidal feature added to every
//! position, and condition latents are prepended as attended-to positions
//! and stripped from the output.

use thiserror::Error;

use crate::mask::BoundaryMask;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Contract(String),
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    /// Dimension of each latent position (input and output).
    pub latent_dim: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub max_len: usize,
    pub time_dim: usize,
}

impl ControllerConfig {
    pub fn new(latent_dim: usize, max_len: usize) -> Self {
        ControllerConfig {
            latent_dim,
            width: 128,
            layers: 4,
            heads: 4,
            head_dim: 32,
            max_len,
            time_dim: 32,
        }
    }

    fn validate(&self) {
        assert_eq!(
            self.width,
            self.heads * self.head_dim,
            "width must equal heads * head_dim"
        );
        assert!(self.time_dim >= 2 && self.time_dim % 2 == 0);
    }
}

/// Condition input for conditional tasks. When `null` is set (or no latents
/// are supplied) the condition is replaced by a learned null embedding, which
/// is what classifier-free guidance contrasts against.
#[derive(Debug, Clone)]
pub struct ConditionState {
    pub latents: Option<Tensor>,
    pub null: bool,
}

impl ConditionState {
    pub fn none() -> Self {
        ConditionState {
            latents: None,
            null: true,
        }
    }

    pub fn new(latents: Tensor) -> Self {
        ConditionState {
            latents: Some(latents),
            null: false,
        }
    }

    pub fn with_null(mut self, null: bool) -> Self {
        self.null = null;
        self
    }
}

/// Sinusoidal time features at geometrically spaced frequencies, injective
/// on [0, 1] at the configured resolution.
pub fn time_embed(t: f64, dim: usize) -> Result<Vec<f64>, ControllerError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(ControllerError::Contract(format!(
            "time {t} outside [0, 1]"
        )));
    }
    assert!(dim >= 2 && dim % 2 == 0);
    let n = dim / 2;
    let (f_min, f_max) = (1.0f64, 1000.0f64);
    let mut out = Vec::with_capacity(dim);
    for i in 0..n {
        let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let freq = f_min * (f_max / f_min).powf(frac);
        out.push((freq * t).sin());
        out.push((freq * t).cos());
    }
    Ok(out)
}

struct Attention {
    wq: Vec<Tensor>, // per head [W, hd]
    wk: Vec<Tensor>,
    wv: Vec<Tensor>,
    wo: Vec<Tensor>, // per head [hd, W]
    head_dim: usize,
}

impl Attention {
    fn init(width: usize, heads: usize, head_dim: usize, rng: &mut Rng) -> Self {
        let mk = |rows: usize, cols: usize, rng: &mut Rng| {
            let scale = 1.0 / (rows as f64).sqrt();
            Tensor::param(
                &[rows, cols],
                (0..rows * cols).map(|_| rng.normal() * scale).collect(),
            )
        };
        Attention {
            wq: (0..heads).map(|_| mk(width, head_dim, rng)).collect(),
            wk: (0..heads).map(|_| mk(width, head_dim, rng)).collect(),
            wv: (0..heads).map(|_| mk(width, head_dim, rng)).collect(),
            wo: (0..heads).map(|_| mk(head_dim, width, rng)).collect(),
            head_dim,
        }
    }

    /// Softmax kernel of one head: `K[i][j] = softmax_j(<q_i, k_j> / sqrt(hd))`.
    fn kernel(&self, x: &Tensor, head: usize) -> Result<Tensor, TensorError> {
        let q = x.matmul(&self.wq[head])?;
        let k = x.matmul(&self.wk[head])?;
        let scores = q
            .matmul(&k.transpose()?)?
            .scale(1.0 / (self.head_dim as f64).sqrt());
        scores.softmax(1)
    }

    /// Bidirectional multi-head attention, bias-free projections.
    fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let n = x.shape()[0];
        let width = self.wo[0].shape()[1];
        let mut out = Tensor::zeros(&[n, width]);
        for h in 0..self.wq.len() {
            let kernel = self.kernel(x, h)?;
            let v = x.matmul(&self.wv[h])?;
            let head = kernel.matmul(&v)?;
            out = out.add(&head.matmul(&self.wo[h])?)?;
        }
        Ok(out)
    }
}

struct Block {
    ln1_g: Tensor,
    ln1_b: Tensor,
    attn: Attention,
    ln2_g: Tensor,
    ln2_b: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl Block {
    fn init(cfg: &ControllerConfig, rng: &mut Rng) -> Self {
        let w = cfg.width;
        let hidden = 4 * w;
        let mk = |rows: usize, cols: usize, rng: &mut Rng| {
            let scale = 1.0 / (rows as f64).sqrt();
            Tensor::param(
                &[rows, cols],
                (0..rows * cols).map(|_| rng.normal() * scale).collect(),
            )
        };
        Block {
            ln1_g: Tensor::param(&[w], vec![1.0; w]),
            ln1_b: Tensor::param(&[w], vec![0.0; w]),
            attn: Attention::init(w, cfg.heads, cfg.head_dim, rng),
            ln2_g: Tensor::param(&[w], vec![1.0; w]),
            ln2_b: Tensor::param(&[w], vec![0.0; w]),
            w1: mk(w, hidden, rng),
            b1: Tensor::param(&[hidden], vec![0.0; hidden]),
            w2: mk(hidden, w, rng),
            b2: Tensor::param(&[w], vec![0.0; w]),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let h = x.layernorm(&self.ln1_g, &self.ln1_b, 1e-6)?;
        let x = x.add(&self.attn.forward(&h)?)?;
        let h = x.layernorm(&self.ln2_g, &self.ln2_b, 1e-6)?;
        let h = h
            .matmul(&self.w1)?
            .add_row_broadcast(&self.b1)?
            .gelu()
            .matmul(&self.w2)?
            .add_row_broadcast(&self.b2)?;
        x.add(&h)
    }
}

pub struct Controller {
    pub cfg: ControllerConfig,
    in_proj: Tensor,
    in_bias: Tensor,
    pos_emb: Tensor,
    type_ctx: Tensor,
    type_free: Tensor,
    type_cond: Tensor,
    null_emb: Tensor,
    time_proj: Tensor,
    time_bias: Tensor,
    blocks: Vec<Block>,
    final_g: Tensor,
    final_b: Tensor,
    out_proj: Tensor,
    out_bias: Tensor,
}

impl Controller {
    pub fn init(cfg: ControllerConfig, seed: u64) -> Self {
        cfg.validate();
        let mut rng = Rng::new(seed);
        let (d, w) = (cfg.latent_dim, cfg.width);
        let mk = |rows: usize, cols: usize, scale: f64, rng: &mut Rng| {
            Tensor::param(
                &[rows, cols],
                (0..rows * cols).map(|_| rng.normal() * scale).collect(),
            )
        };
        let blocks = (0..cfg.layers).map(|_| Block::init(&cfg, &mut rng)).collect();
        let type_vec = |rng: &mut Rng| {
            Tensor::param(&[w], rng.normal_vec(w).iter().map(|v| v * 0.1).collect())
        };
        Controller {
            cfg: cfg.clone(),
            in_proj: mk(d, w, 1.0 / (d as f64).sqrt(), &mut rng),
            in_bias: Tensor::param(&[w], vec![0.0; w]),
            pos_emb: mk(cfg.max_len, w, 0.1, &mut rng),
            type_ctx: type_vec(&mut rng),
            type_free: type_vec(&mut rng),
            type_cond: type_vec(&mut rng),
            null_emb: mk(1, d, 0.1, &mut rng),
            time_proj: mk(cfg.time_dim, w, 1.0 / (cfg.time_dim as f64).sqrt(), &mut rng),
            time_bias: Tensor::param(&[w], vec![0.0; w]),
            blocks,
            final_g: Tensor::param(&[w], vec![1.0; w]),
            final_b: Tensor::param(&[w], vec![0.0; w]),
            out_proj: mk(w, d, 0.02, &mut rng),
            out_bias: Tensor::param(&[d], vec![0.0; d]),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = vec![
            ("in_proj".into(), self.in_proj.clone()),
            ("in_bias".into(), self.in_bias.clone()),
            ("pos_emb".into(), self.pos_emb.clone()),
            ("type_ctx".into(), self.type_ctx.clone()),
            ("type_free".into(), self.type_free.clone()),
            ("type_cond".into(), self.type_cond.clone()),
            ("null_emb".into(), self.null_emb.clone()),
            ("time_proj".into(), self.time_proj.clone()),
            ("time_bias".into(), self.time_bias.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.ln1.g"), b.ln1_g.clone()));
            out.push((format!("block{i}.ln1.b"), b.ln1_b.clone()));
            for h in 0..b.attn.wq.len() {
                out.push((format!("block{i}.attn.q{h}"), b.attn.wq[h].clone()));
                out.push((format!("block{i}.attn.k{h}"), b.attn.wk[h].clone()));
                out.push((format!("block{i}.attn.v{h}"), b.attn.wv[h].clone()));
                out.push((format!("block{i}.attn.o{h}"), b.attn.wo[h].clone()));
            }
            out.push((format!("block{i}.ln2.g"), b.ln2_g.clone()));
            out.push((format!("block{i}.ln2.b"), b.ln2_b.clone()));
            out.push((format!("block{i}.mlp.w1"), b.w1.clone()));
            out.push((format!("block{i}.mlp.b1"), b.b1.clone()));
            out.push((format!("block{i}.mlp.w2"), b.w2.clone()));
            out.push((format!("block{i}.mlp.b2"), b.b2.clone()));
        }
        out.push(("final.g".into(), self.final_g.clone()));
        out.push(("final.b".into(), self.final_b.clone()));
        out.push(("out_proj".into(), self.out_proj.clone()));
        out.push(("out_bias".into(), self.out_bias.clone()));
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
    ) -> Result<(), ControllerError> {
        crate::vae::import_named(&self.named_params(), tensors).map_err(ControllerError::Contract)
    }

    /// One full attention layer on raw features, exposed for kernel tests.
    pub fn attention(&self, x: &Tensor, layer: usize) -> Result<Tensor, ControllerError> {
        Ok(self.blocks[layer].attn.forward(x)?)
    }

    /// Per-head softmax kernels at a layer.
    pub fn attention_kernel(
        &self,
        x: &Tensor,
        layer: usize,
        head: usize,
    ) -> Result<Tensor, ControllerError> {
        Ok(self.blocks[layer].attn.kernel(x, head)?)
    }

    fn type_vector(&self, constrained: bool) -> &Tensor {
        if constrained {
            &self.type_ctx
        } else {
            &self.type_free
        }
    }

    /// The velocity field. `z` is `[N, d]`, `mask` marks context positions,
    /// `cond` optionally prepends condition latents.
    pub fn velocity(
        &self,
        z: &Tensor,
        t: f64,
        mask: &BoundaryMask,
        cond: &ConditionState,
    ) -> Result<Tensor, ControllerError> {
        let n = z.shape()[0];
        if z.shape().len() != 2 || z.shape()[1] != self.cfg.latent_dim {
            return Err(ControllerError::Contract(format!(
                "state shape {:?} does not match latent dim {}",
                z.shape(),
                self.cfg.latent_dim
            )));
        }
        if mask.len() != n {
            return Err(ControllerError::Contract(format!(
                "mask length {} does not match state length {n}",
                mask.len()
            )));
        }
        let cond_latents = if cond.null || cond.latents.is_none() {
            self.null_emb.clone()
        } else {
            cond.latents.clone().unwrap()
        };
        let m = cond_latents.shape()[0];
        if n > self.cfg.max_len || m > self.cfg.max_len {
            return Err(ControllerError::Contract(format!(
                "sequence length {} exceeds max_len {}",
                n.max(m),
                self.cfg.max_len
            )));
        }

        // embed both segments into model width
        let mut xc = cond_latents
            .matmul(&self.in_proj)?
            .add_row_broadcast(&self.in_bias)?
            .add_row_broadcast(&self.type_cond)?;
        xc = xc.add(&self.pos_emb.slice_rows(0, m)?)?;
        let mut xm = z
            .matmul(&self.in_proj)?
            .add_row_broadcast(&self.in_bias)?;
        xm = xm.add(&self.pos_emb.slice_rows(0, n)?)?;
        // additive type embedding per position
        let mut type_rows = Vec::with_capacity(n);
        for i in 0..n {
            type_rows.push(self.type_vector(mask.is_constrained(i)).reshape(&[1, self.cfg.width])?);
        }
        xm = xm.add(&Tensor::concat_rows(&type_rows)?)?;

        let mut x = Tensor::concat_rows(&[xc, xm])?;
        let te = time_embed(t, self.cfg.time_dim)?;
        let te = Tensor::new(&[1, self.cfg.time_dim], te)
            .matmul(&self.time_proj)?
            .add_row_broadcast(&self.time_bias)?
            .reshape(&[self.cfg.width])?;
        x = x.add_row_broadcast(&te)?;

        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        let x = x.layernorm(&self.final_g, &self.final_b, 1e-6)?;
        let out = x
            .matmul(&self.out_proj)?
            .add_row_broadcast(&self.out_bias)?;
        // strip the condition segment
        Ok(out.slice_rows(m, m + n)?)
    }
}
