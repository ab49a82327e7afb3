//! Multi-head self-attention, feed-forward block, and the pre-norm
//! transformer block combining them with residual connections.

use crate::linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::rng::SeedRng;

use super::{dgelu, gelu, softmax_in_place, LayerNorm, LayerNormCache, Linear, Param};

/// Copy head `h`'s columns of a `(t, dim)` matrix into a `(t, head_dim)` one.
fn gather_head(src: &[f64], t: usize, dim: usize, head_dim: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; t * head_dim];
    for r in 0..t {
        let base = r * dim + h * head_dim;
        out[r * head_dim..(r + 1) * head_dim].copy_from_slice(&src[base..base + head_dim]);
    }
    out
}

fn scatter_head_acc(dst: &mut [f64], src: &[f64], t: usize, dim: usize, head_dim: usize, h: usize) {
    for r in 0..t {
        let base = r * dim + h * head_dim;
        for i in 0..head_dim {
            dst[base + i] += src[r * head_dim + i];
        }
    }
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Post-softmax attention weights, `(heads, t, t)`.
    attn: Vec<f64>,
    /// Concatenated head outputs, the input to the output projection.
    ctx: Vec<f64>,
}

/// Multi-head scaled dot-product self-attention. With `causal` set, position
/// `i` attends only to positions `j <= i`.
#[derive(Debug, Clone)]
pub struct Mha {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
    pub causal: bool,
}

impl Mha {
    pub fn new(dim: usize, heads: usize, causal: bool, rng: &mut SeedRng) -> Self {
        assert!(dim % heads == 0, "width {dim} not divisible by {heads} heads");
        Self {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            heads,
            dim,
            causal,
        }
    }

    pub fn forward(&self, x: &[f64], t: usize) -> (Vec<f64>, MhaCache) {
        let d = self.dim;
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let q = self.wq.forward(x, t);
        let k = self.wk.forward(x, t);
        let v = self.wv.forward(x, t);
        let mut attn = vec![0.0; self.heads * t * t];
        let mut ctx = vec![0.0; t * d];
        for h in 0..self.heads {
            let qh = gather_head(&q, t, d, hd, h);
            let kh = gather_head(&k, t, d, hd, h);
            let vh = gather_head(&v, t, d, hd, h);
            let mut scores = vec![0.0; t * t];
            matmul_nt_acc(&mut scores, &qh, &kh, t, hd, t);
            for s in scores.iter_mut() {
                *s *= scale;
            }
            if self.causal {
                for i in 0..t {
                    for j in i + 1..t {
                        scores[i * t + j] = f64::NEG_INFINITY;
                    }
                }
            }
            for i in 0..t {
                softmax_in_place(&mut scores[i * t..(i + 1) * t]);
            }
            let mut ch = vec![0.0; t * hd];
            matmul_acc(&mut ch, &scores, &vh, t, t, hd);
            scatter_head_acc(&mut ctx, &ch, t, d, hd, h);
            attn[h * t * t..(h + 1) * t * t].copy_from_slice(&scores);
        }
        let y = self.wo.forward(&ctx, t);
        (y, MhaCache { q, k, v, attn, ctx })
    }

    pub fn backward(&mut self, x: &[f64], cache: &MhaCache, dy: &[f64], t: usize) -> Vec<f64> {
        let d = self.dim;
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let dctx = self.wo.backward(&cache.ctx, dy, t);
        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        for h in 0..self.heads {
            let qh = gather_head(&cache.q, t, d, hd, h);
            let kh = gather_head(&cache.k, t, d, hd, h);
            let vh = gather_head(&cache.v, t, d, hd, h);
            let dch = gather_head(&dctx, t, d, hd, h);
            let attn = &cache.attn[h * t * t..(h + 1) * t * t];
            // d(attention weights) = dctx·vᵀ, then back through the softmax:
            // ds_ij = a_ij (dp_ij − Σ_j' dp_ij' a_ij'). Masked cells have
            // a_ij = 0 and so stay zero.
            let mut dp = vec![0.0; t * t];
            matmul_nt_acc(&mut dp, &dch, &vh, t, hd, t);
            let mut ds = vec![0.0; t * t];
            for i in 0..t {
                let row = &attn[i * t..(i + 1) * t];
                let dprow = &dp[i * t..(i + 1) * t];
                let inner: f64 = row.iter().zip(dprow).map(|(a, b)| a * b).sum();
                for j in 0..t {
                    ds[i * t + j] = row[j] * (dprow[j] - inner) * scale;
                }
            }
            let mut dqh = vec![0.0; t * hd];
            matmul_acc(&mut dqh, &ds, &kh, t, t, hd);
            let mut dkh = vec![0.0; t * hd];
            matmul_tn_acc(&mut dkh, &ds, &qh, t, t, hd);
            let mut dvh = vec![0.0; t * hd];
            matmul_tn_acc(&mut dvh, attn, &dch, t, t, hd);
            scatter_head_acc(&mut dq, &dqh, t, d, hd, h);
            scatter_head_acc(&mut dk, &dkh, t, d, hd, h);
            scatter_head_acc(&mut dv, &dvh, t, d, hd, h);
        }
        let mut dx = self.wq.backward(x, &dq, t);
        for (a, b) in dx.iter_mut().zip(self.wk.backward(x, &dk, t)) {
            *a += b;
        }
        for (a, b) in dx.iter_mut().zip(self.wv.backward(x, &dv, t)) {
            *a += b;
        }
        dx
    }

    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        let mut out = self.wq.collect_params();
        out.extend(self.wk.collect_params());
        out.extend(self.wv.collect_params());
        out.extend(self.wo.collect_params());
        out
    }

    #[cfg(test)]
    pub(crate) fn attn_weights<'a>(&self, cache: &'a MhaCache) -> &'a [f64] {
        &cache.attn
    }
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Pre-activation hidden values.
    h: Vec<f64>,
    /// Post-GELU hidden values (input to the second projection).
    a: Vec<f64>,
}

/// Two-layer feed-forward with GELU, hidden width `4 * dim`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(dim: usize, rng: &mut SeedRng) -> Self {
        Self {
            fc1: Linear::new(dim, 4 * dim, rng),
            fc2: Linear::new(4 * dim, dim, rng),
        }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, MlpCache) {
        let h = self.fc1.forward(x, rows);
        let a: Vec<f64> = h.iter().map(|&v| gelu(v)).collect();
        let y = self.fc2.forward(&a, rows);
        (y, MlpCache { h, a })
    }

    pub fn backward(&mut self, x: &[f64], cache: &MlpCache, dy: &[f64], rows: usize) -> Vec<f64> {
        let da = self.fc2.backward(&cache.a, dy, rows);
        let dh: Vec<f64> = da
            .iter()
            .zip(&cache.h)
            .map(|(d, &hv)| d * dgelu(hv))
            .collect();
        self.fc1.backward(x, &dh, rows)
    }

    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        let mut out = self.fc1.collect_params();
        out.extend(self.fc2.collect_params());
        out
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    /// Output of the first norm (attention input).
    a_in: Vec<f64>,
    attn: MhaCache,
    ln2: LayerNormCache,
    /// Output of the second norm (feed-forward input).
    m_in: Vec<f64>,
    mlp: MlpCache,
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `+ mlp(ln(·))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Mha,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new(dim: usize, heads: usize, causal: bool, rng: &mut SeedRng) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            attn: Mha::new(dim, heads, causal, rng),
            ln2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, rng),
        }
    }

    pub fn forward(&self, x: &[f64], t: usize) -> (Vec<f64>, BlockCache) {
        let (a_in, ln1) = self.ln1.forward(x, t);
        let (a_out, attn) = self.attn.forward(&a_in, t);
        let r1: Vec<f64> = x.iter().zip(&a_out).map(|(a, b)| a + b).collect();
        let (m_in, ln2) = self.ln2.forward(&r1, t);
        let (m_out, mlp) = self.mlp.forward(&m_in, t);
        let y: Vec<f64> = r1.iter().zip(&m_out).map(|(a, b)| a + b).collect();
        (
            y,
            BlockCache {
                ln1,
                a_in,
                attn,
                ln2,
                m_in,
                mlp,
            },
        )
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &[f64], t: usize) -> Vec<f64> {
        let dm_in = self.mlp.backward(&cache.m_in, &cache.mlp, dy, t);
        let mut dr1 = self.ln2.backward(&cache.ln2, &dm_in, t);
        for (a, b) in dr1.iter_mut().zip(dy) {
            *a += b;
        }
        let da_in = self.attn.backward(&cache.a_in, &cache.attn, &dr1, t);
        let mut dx = self.ln1.backward(&cache.ln1, &da_in, t);
        for (a, b) in dx.iter_mut().zip(&dr1) {
            *a += b;
        }
        dx
    }

    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        let mut out = self.ln1.collect_params();
        out.extend(self.attn.collect_params());
        out.extend(self.ln2.collect_params());
        out.extend(self.mlp.collect_params());
        out
    }
}
