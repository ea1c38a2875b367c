//! Forward operations and their gradient rules.
//!
//! Backward closures capture copies of whatever forward values they need;
//! they never capture the output node itself, so the tape stays acyclic.

use super::{numel, Tensor, TensorError};

// ── raw kernels ───────────────────────────────────────────────────────────

/// C[m,n] += A[m,k] · B[k,n]
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// C[m,k] += A[m,n] · B[k,n]ᵀ
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut out[i * k..(i + 1) * k];
        for (p, c) in crow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *c += acc;
        }
    }
}

/// C[k,n] += A[m,k]ᵀ · B[m,n]
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut out[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn gelu_forward(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn unary(&self, f: impl Fn(f64) -> f64, dfdx: impl Fn(f64) -> f64 + 'static) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let parent = self.clone();
        let saved: Vec<f64> = self.to_vec();
        Tensor::derived(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |grad| {
                let contrib: Vec<f64> = grad
                    .iter()
                    .zip(&saved)
                    .map(|(&g, &x)| g * dfdx(x))
                    .collect();
                parent.accumulate_grad(&contrib);
            }),
        )
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        dfda: impl Fn(f64, f64) -> f64 + 'static,
        dfdb: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor, TensorError> {
        same_shape(op, self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        let (sa, sb) = (self.to_vec(), other.to_vec());
        Ok(Tensor::derived(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |grad| {
                if pa.requires_grad() {
                    let ga: Vec<f64> = grad
                        .iter()
                        .zip(sa.iter().zip(&sb))
                        .map(|(&g, (&a, &b))| g * dfda(a, b))
                        .collect();
                    pa.accumulate_grad(&ga);
                }
                if pb.requires_grad() {
                    let gb: Vec<f64> = grad
                        .iter()
                        .zip(sa.iter().zip(&sb))
                        .map(|(&g, (&a, &b))| g * dfdb(a, b))
                        .collect();
                    pb.accumulate_grad(&gb);
                }
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "sub", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_| -1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(|x| x.exp(), |x| x.exp())
    }

    pub fn sigmoid_t(&self) -> Tensor {
        self.unary(sigmoid, |x| {
            let s = sigmoid(x);
            s * (1.0 - s)
        })
    }

    pub fn tanh_t(&self) -> Tensor {
        self.unary(|x| x.tanh(), |x| {
            let t = x.tanh();
            1.0 - t * t
        })
    }

    /// Gaussian error linear unit (tanh approximation).
    pub fn gelu(&self) -> Tensor {
        self.unary(gelu_forward, gelu_derivative)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(move |x| c * x, move |_| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_| 1.0)
    }

    /// Clamp with zero gradient outside the open interval (lo, hi).
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x| 2.0 * x)
    }

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let parent = self.clone();
        let n = self.numel();
        Tensor::derived(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |grad| {
                parent.accumulate_grad(&vec![grad[0]; n]);
            }),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Standard matrix product; gradient w.r.t. `a` is `g·bᵀ`, w.r.t. `b` is `aᵀ·g`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (ashape, bshape) = (self.shape().to_vec(), other.shape().to_vec());
        if ashape.len() != 2 || bshape.len() != 2 || ashape[1] != bshape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ashape,
                rhs: bshape,
            });
        }
        let (m, k, n) = (ashape[0], ashape[1], bshape[1]);
        let mut data = vec![0.0; m * n];
        mm_nn(&self.data(), &other.data(), m, k, n, &mut data);
        let (pa, pb) = (self.clone(), other.clone());
        let (sa, sb) = (self.to_vec(), other.to_vec());
        Ok(Tensor::derived(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |grad| {
                if pa.requires_grad() {
                    let mut ga = vec![0.0; m * k];
                    mm_nt(grad, &sb, m, n, k, &mut ga);
                    pa.accumulate_grad(&ga);
                }
                if pb.requires_grad() {
                    let mut gb = vec![0.0; k * n];
                    mm_tn(&sa, grad, m, k, n, &mut gb);
                    pb.accumulate_grad(&gb);
                }
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 {
            return Err(TensorError::Dimension {
                op: "transpose",
                detail: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        drop(src);
        let parent = self.clone();
        Ok(Tensor::derived(
            vec![n, m],
            data,
            vec![self.clone()],
            Box::new(move |grad| {
                let mut g = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        g[i * n + j] = grad[j * m + i];
                    }
                }
                parent.accumulate_grad(&g);
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        if numel(shape) != self.numel() {
            return Err(TensorError::Dimension {
                op: "reshape",
                detail: format!("{:?} -> {:?} changes element count", self.shape(), shape),
            });
        }
        let parent = self.clone();
        Ok(Tensor::derived(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |grad| {
                parent.accumulate_grad(grad);
            }),
        ))
    }

    /// Cross-correlation over the length axis.
    ///
    /// `self` is `[C_in, L]`, `kernel` is `[C_out, C_in, K]`; output position
    /// `j` reads input positions `[j*stride - padding, j*stride - padding + K)`.
    pub fn conv1d(
        &self,
        kernel: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 || kernel.shape().len() != 3 {
            return Err(TensorError::Dimension {
                op: "conv1d",
                detail: format!(
                    "expected input [C_in, L] and kernel [C_out, C_in, K], got {:?} and {:?}",
                    self.shape(),
                    kernel.shape()
                ),
            });
        }
        let (c_in, len) = (self.shape()[0], self.shape()[1]);
        let (c_out, kc_in, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
        if kc_in != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if k > len + 2 * padding {
            return Err(TensorError::Dimension {
                op: "conv1d",
                detail: format!("kernel {k} longer than padded input {}", len + 2 * padding),
            });
        }
        assert!(stride >= 1, "conv1d stride must be positive");
        let l_out = (len + 2 * padding - k) / stride + 1;
        // valid kernel range for output j: base + kk - padding must land in
        // [0, len) with base = j * stride
        let k_range = |j: usize| -> (usize, usize) {
            let base = j * stride;
            let lo = padding.saturating_sub(base);
            let hi = k.min((len + padding).saturating_sub(base));
            (lo, hi.max(lo))
        };
        let x = self.data();
        let w = kernel.data();
        let mut out = vec![0.0; c_out * l_out];
        for co in 0..c_out {
            for ci in 0..c_in {
                let xrow = &x[ci * len..(ci + 1) * len];
                let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                let orow = &mut out[co * l_out..(co + 1) * l_out];
                for (j, o) in orow.iter_mut().enumerate() {
                    let (lo, hi) = k_range(j);
                    let xoff = j * stride + lo - padding;
                    let mut acc = 0.0;
                    for (kk, &wv) in wrow[lo..hi].iter().enumerate() {
                        acc += xrow[xoff + kk] * wv;
                    }
                    *o += acc;
                }
            }
        }
        drop(x);
        drop(w);
        let (px, pw) = (self.clone(), kernel.clone());
        let (sx, sw) = (self.to_vec(), kernel.to_vec());
        Ok(Tensor::derived(
            vec![c_out, l_out],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |grad| {
                let k_range = |j: usize| -> (usize, usize) {
                    let base = j * stride;
                    let lo = padding.saturating_sub(base);
                    let hi = k.min((len + padding).saturating_sub(base));
                    (lo, hi.max(lo))
                };
                if px.requires_grad() {
                    let mut gx = vec![0.0; c_in * len];
                    for co in 0..c_out {
                        let grow = &grad[co * l_out..(co + 1) * l_out];
                        for ci in 0..c_in {
                            let wrow = &sw[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                            let gxrow = &mut gx[ci * len..(ci + 1) * len];
                            for (j, &g) in grow.iter().enumerate() {
                                let (lo, hi) = k_range(j);
                                let xoff = j * stride + lo - padding;
                                for (kk, &wv) in wrow[lo..hi].iter().enumerate() {
                                    gxrow[xoff + kk] += g * wv;
                                }
                            }
                        }
                    }
                    px.accumulate_grad(&gx);
                }
                if pw.requires_grad() {
                    let mut gw = vec![0.0; c_out * c_in * k];
                    for co in 0..c_out {
                        let grow = &grad[co * l_out..(co + 1) * l_out];
                        for ci in 0..c_in {
                            let xrow = &sx[ci * len..(ci + 1) * len];
                            let gwrow = &mut gw[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                            for (j, &g) in grow.iter().enumerate() {
                                let (lo, hi) = k_range(j);
                                let xoff = j * stride + lo - padding;
                                for (kk, gwv) in gwrow[lo..hi].iter_mut().enumerate() {
                                    *gwv += g * xrow[xoff + kk];
                                }
                            }
                        }
                    }
                    pw.accumulate_grad(&gw);
                }
            }),
        ))
    }

    /// Nearest-neighbor upsampling along the length axis of `[C, L]`.
    pub fn repeat_cols(&self, factor: usize) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 {
            return Err(TensorError::Dimension {
                op: "repeat_cols",
                detail: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        assert!(factor >= 1);
        let (c, len) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let l_out = len * factor;
        let mut out = vec![0.0; c * l_out];
        for ci in 0..c {
            for j in 0..l_out {
                out[ci * l_out + j] = src[ci * len + j / factor];
            }
        }
        drop(src);
        let parent = self.clone();
        Ok(Tensor::derived(
            vec![c, l_out],
            out,
            vec![self.clone()],
            Box::new(move |grad| {
                let mut g = vec![0.0; c * len];
                for ci in 0..c {
                    for j in 0..l_out {
                        g[ci * len + j / factor] += grad[ci * l_out + j];
                    }
                }
                parent.accumulate_grad(&g);
            }),
        ))
    }

    /// Numerically stable softmax along `axis` of a rank-1 or rank-2 tensor.
    pub fn softmax(&self, axis: usize) -> Result<Tensor, TensorError> {
        let rank = self.shape().len();
        if axis >= rank || rank > 2 {
            return Err(TensorError::Dimension {
                op: "softmax",
                detail: format!("axis {axis} invalid for shape {:?}", self.shape()),
            });
        }
        if rank == 1 {
            return self.reshape(&[1, self.numel()])?.softmax(1)?.reshape(self.shape());
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut out = vec![0.0; m * n];
        let (rows, cols) = if axis == 1 { (m, n) } else { (n, m) };
        let idx = move |r: usize, c: usize| if axis == 1 { r * n + c } else { c * n + r };
        for r in 0..rows {
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                max = max.max(src[idx(r, c)]);
            }
            let mut denom = 0.0;
            for c in 0..cols {
                let e = (src[idx(r, c)] - max).exp();
                out[idx(r, c)] = e;
                denom += e;
            }
            for c in 0..cols {
                out[idx(r, c)] /= denom;
            }
        }
        drop(src);
        let parent = self.clone();
        let saved = out.clone();
        Ok(Tensor::derived(
            vec![m, n],
            out,
            vec![self.clone()],
            Box::new(move |grad| {
                let mut g = vec![0.0; m * n];
                for r in 0..rows {
                    let mut dot = 0.0;
                    for c in 0..cols {
                        dot += grad[idx(r, c)] * saved[idx(r, c)];
                    }
                    for c in 0..cols {
                        let s = saved[idx(r, c)];
                        g[idx(r, c)] = s * (grad[idx(r, c)] - dot);
                    }
                }
                parent.accumulate_grad(&g);
            }),
        ))
    }

    /// Row-wise layer normalization of `[N, D]` with per-feature gain/bias.
    pub fn layernorm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor, TensorError> {
        assert!(eps > 0.0, "layernorm eps must be positive");
        if self.shape().len() != 2 {
            return Err(TensorError::Dimension {
                op: "layernorm",
                detail: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        let (n, d) = (self.shape()[0], self.shape()[1]);
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layernorm",
                lhs: self.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let src = self.data();
        let gv = gain.data();
        let bv = bias.data();
        let mut out = vec![0.0; n * d];
        let mut normed = vec![0.0; n * d];
        let mut inv_sigma = vec![0.0; n];
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_sigma[r] = is;
            for c in 0..d {
                let y = (row[c] - mu) * is;
                normed[r * d + c] = y;
                out[r * d + c] = y * gv[c] + bv[c];
            }
        }
        drop(src);
        drop(gv);
        drop(bv);
        let (px, pg, pb) = (self.clone(), gain.clone(), bias.clone());
        let sg = gain.to_vec();
        Ok(Tensor::derived(
            vec![n, d],
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |grad| {
                if pg.requires_grad() {
                    let mut ggain = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            ggain[c] += grad[r * d + c] * normed[r * d + c];
                        }
                    }
                    pg.accumulate_grad(&ggain);
                }
                if pb.requires_grad() {
                    let mut gbias = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            gbias[c] += grad[r * d + c];
                        }
                    }
                    pb.accumulate_grad(&gbias);
                }
                if px.requires_grad() {
                    let mut gx = vec![0.0; n * d];
                    for r in 0..n {
                        let mut mean_dy = 0.0;
                        let mut mean_dyy = 0.0;
                        for c in 0..d {
                            let dy = grad[r * d + c] * sg[c];
                            mean_dy += dy;
                            mean_dyy += dy * normed[r * d + c];
                        }
                        mean_dy /= d as f64;
                        mean_dyy /= d as f64;
                        for c in 0..d {
                            let dy = grad[r * d + c] * sg[c];
                            gx[r * d + c] =
                                inv_sigma[r] * (dy - mean_dy - normed[r * d + c] * mean_dyy);
                        }
                    }
                    px.accumulate_grad(&gx);
                }
            }),
        ))
    }

    /// Gathers rows of an embedding table `[V, E]` by id; gradient scatter-adds.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 {
            return Err(TensorError::Dimension {
                op: "embedding",
                detail: format!("expected table [V, E], got {:?}", self.shape()),
            });
        }
        let (v, e) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::Dimension {
                op: "embedding",
                detail: format!("id {bad} out of range for vocabulary of {v}"),
            });
        }
        let table = self.data();
        let mut out = vec![0.0; ids.len() * e];
        for (l, &id) in ids.iter().enumerate() {
            out[l * e..(l + 1) * e].copy_from_slice(&table[id * e..(id + 1) * e]);
        }
        drop(table);
        let parent = self.clone();
        let ids: Vec<usize> = ids.to_vec();
        let rows = ids.len();
        Ok(Tensor::derived(
            vec![rows, e],
            out,
            vec![self.clone()],
            Box::new(move |grad| {
                let mut g = vec![0.0; v * e];
                for (l, &id) in ids.iter().enumerate() {
                    for c in 0..e {
                        g[id * e + c] += grad[l * e + c];
                    }
                }
                parent.accumulate_grad(&g);
            }),
        ))
    }

    /// Adds a length-D vector to every row of `[N, D]`.
    pub fn add_row_broadcast(&self, v: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 || v.shape() != [self.shape()[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let (n, d) = (self.shape()[0], self.shape()[1]);
        let mut out = self.to_vec();
        let vv = v.data();
        for r in 0..n {
            for c in 0..d {
                out[r * d + c] += vv[c];
            }
        }
        drop(vv);
        let (px, pv) = (self.clone(), v.clone());
        Ok(Tensor::derived(
            vec![n, d],
            out,
            vec![self.clone(), v.clone()],
            Box::new(move |grad| {
                if px.requires_grad() {
                    px.accumulate_grad(grad);
                }
                if pv.requires_grad() {
                    let mut g = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            g[c] += grad[r * d + c];
                        }
                    }
                    pv.accumulate_grad(&g);
                }
            }),
        ))
    }

    /// Adds a length-N vector down every column of `[N, D]` (per-row offset).
    pub fn add_col_broadcast(&self, v: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 || v.shape() != [self.shape()[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_col_broadcast",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let (n, d) = (self.shape()[0], self.shape()[1]);
        let mut out = self.to_vec();
        let vv = v.data();
        for r in 0..n {
            for c in 0..d {
                out[r * d + c] += vv[r];
            }
        }
        drop(vv);
        let (px, pv) = (self.clone(), v.clone());
        Ok(Tensor::derived(
            vec![n, d],
            out,
            vec![self.clone(), v.clone()],
            Box::new(move |grad| {
                if px.requires_grad() {
                    px.accumulate_grad(grad);
                }
                if pv.requires_grad() {
                    let mut g = vec![0.0; n];
                    for r in 0..n {
                        for c in 0..d {
                            g[r] += grad[r * d + c];
                        }
                    }
                    pv.accumulate_grad(&g);
                }
            }),
        ))
    }

    /// Vertical concatenation of `[N_i, D]` blocks.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor, TensorError> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let d = parts[0].shape().last().copied().unwrap_or(0);
        let mut rows = 0;
        for p in parts {
            if p.shape().len() != 2 || p.shape()[1] != d {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += p.shape()[0];
        }
        let mut data = Vec::with_capacity(rows * d);
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        let owned: Vec<Tensor> = parts.to_vec();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[0] * d).collect();
        let owned_bw = owned.clone();
        Ok(Tensor::derived(
            vec![rows, d],
            data,
            owned,
            Box::new(move |grad| {
                let mut offset = 0;
                for (p, &sz) in owned_bw.iter().zip(&sizes) {
                    if p.requires_grad() {
                        p.accumulate_grad(&grad[offset..offset + sz]);
                    }
                    offset += sz;
                }
            }),
        ))
    }

    /// Copies rows `lo..hi` of `[N, D]`.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 || hi > self.shape()[0] || lo > hi {
            return Err(TensorError::Dimension {
                op: "slice_rows",
                detail: format!("rows {lo}..{hi} out of range for {:?}", self.shape()),
            });
        }
        let (n, d) = (self.shape()[0], self.shape()[1]);
        let data = self.data()[lo * d..hi * d].to_vec();
        let parent = self.clone();
        Ok(Tensor::derived(
            vec![hi - lo, d],
            data,
            vec![self.clone()],
            Box::new(move |grad| {
                let mut g = vec![0.0; n * d];
                g[lo * d..hi * d].copy_from_slice(grad);
                parent.accumulate_grad(&g);
            }),
        ))
    }

    /// Multiplies by a learnable scalar (shape `[1]`) tensor.
    pub fn mul_scalar_t(&self, s: &Tensor) -> Result<Tensor, TensorError> {
        if s.shape() != [1] {
            return Err(TensorError::ShapeMismatch {
                op: "mul_scalar_t",
                lhs: self.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let sv = s.item();
        let data: Vec<f64> = self.data().iter().map(|&x| x * sv).collect();
        let (px, ps) = (self.clone(), s.clone());
        let saved = self.to_vec();
        Ok(Tensor::derived(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            Box::new(move |grad| {
                if px.requires_grad() {
                    let g: Vec<f64> = grad.iter().map(|&g| g * sv).collect();
                    px.accumulate_grad(&g);
                }
                if ps.requires_grad() {
                    let g: f64 = grad.iter().zip(&saved).map(|(&g, &x)| g * x).sum();
                    ps.accumulate_grad(&[g]);
                }
            }),
        ))
    }

    /// Adds a learnable scalar (shape `[1]`) tensor to every entry.
    pub fn add_scalar_t(&self, s: &Tensor) -> Result<Tensor, TensorError> {
        if s.shape() != [1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_scalar_t",
                lhs: self.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let sv = s.item();
        let data: Vec<f64> = self.data().iter().map(|&x| x + sv).collect();
        let (px, ps) = (self.clone(), s.clone());
        Ok(Tensor::derived(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            Box::new(move |grad| {
                if px.requires_grad() {
                    px.accumulate_grad(grad);
                }
                if ps.requires_grad() {
                    ps.accumulate_grad(&[grad.iter().sum()]);
                }
            }),
        ))
    }

    /// Mean over rows of the per-row binary cross-entropy between
    /// `sigmoid(logits)` and one-hot targets, computed in the stable
    /// `softplus(l) - l*y` form.
    pub fn bce_with_logits_mean(&self, targets: &[usize]) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 || self.shape()[0] != targets.len() {
            return Err(TensorError::Dimension {
                op: "bce_with_logits_mean",
                detail: format!(
                    "logits {:?} incompatible with {} targets",
                    self.shape(),
                    targets.len()
                ),
            });
        }
        let (n, v) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(TensorError::Dimension {
                op: "bce_with_logits_mean",
                detail: format!("target {bad} out of range for {v} classes"),
            });
        }
        let logits = self.data();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            for c in 0..v {
                let l = logits[r * v + c];
                let y = if c == t { 1.0 } else { 0.0 };
                // softplus(l) - l*y, stable for both signs of l
                total += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
            }
        }
        total /= n as f64;
        drop(logits);
        let parent = self.clone();
        let saved = self.to_vec();
        let targets: Vec<usize> = targets.to_vec();
        Ok(Tensor::derived(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |grad| {
                let scale = grad[0] / n as f64;
                let mut g = vec![0.0; n * v];
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..v {
                        let y = if c == t { 1.0 } else { 0.0 };
                        g[r * v + c] = scale * (sigmoid(saved[r * v + c]) - y);
                    }
                }
                parent.accumulate_grad(&g);
            }),
        ))
    }
}
