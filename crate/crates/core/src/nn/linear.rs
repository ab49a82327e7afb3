//! Dense layer, layer normalization, and token embedding.

use crate::linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::rng::SeedRng;

use super::Param;

pub const INIT_STD: f64 = 0.02;

/// Fully connected layer, `y = x·Wᵀ + b`, weight stored `(out, in)` row-major.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut SeedRng) -> Self {
        Self {
            w: Param::gaussian(out_dim * in_dim, INIT_STD, true, rng),
            b: Param::zeros(out_dim, false),
            in_dim,
            out_dim,
        }
    }

    /// `x` is `(rows, in_dim)` row-major; returns `(rows, out_dim)`.
    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = vec![0.0; rows * self.out_dim];
        matmul_nt_acc(&mut y, x, &self.w.w, rows, self.in_dim, self.out_dim);
        for r in 0..rows {
            for o in 0..self.out_dim {
                y[r * self.out_dim + o] += self.b.w[o];
            }
        }
        y
    }

    /// Accumulates `dW`, `db`; returns `dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(dy.len(), rows * self.out_dim);
        // dW += dyᵀ·x, shape (out, in).
        matmul_tn_acc(&mut self.w.g, dy, x, self.out_dim, rows, self.in_dim);
        for r in 0..rows {
            for o in 0..self.out_dim {
                self.b.g[o] += dy[r * self.out_dim + o];
            }
        }
        let mut dx = vec![0.0; rows * self.in_dim];
        matmul_acc(&mut dx, dy, &self.w.w, rows, self.out_dim, self.in_dim);
        dx
    }

    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Normalized activations, pre-affine: `(rows, dim)`.
    xhat: Vec<f64>,
    /// Per-row `1/sqrt(var + eps)`.
    inv_std: Vec<f64>,
}

/// Layer normalization over the last dimension with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Param::new(vec![1.0; dim], false),
            bias: Param::zeros(dim, false),
            dim,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, LayerNormCache) {
        let d = self.dim;
        debug_assert_eq!(x.len(), rows * d);
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let h = (row[i] - mean) * is;
                xhat[r * d + i] = h;
                y[r * d + i] = self.gain.w[i] * h + self.bias.w[i];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &[f64], rows: usize) -> Vec<f64> {
        let d = self.dim;
        let mut dx = vec![0.0; dy.len()];
        for r in 0..rows {
            let xhat = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let mut sum_dh = 0.0;
            let mut sum_dh_xhat = 0.0;
            for i in 0..d {
                self.gain.g[i] += dyr[i] * xhat[i];
                self.bias.g[i] += dyr[i];
                let dh = dyr[i] * self.gain.w[i];
                sum_dh += dh;
                sum_dh_xhat += dh * xhat[i];
            }
            let n = d as f64;
            for i in 0..d {
                let dh = dyr[i] * self.gain.w[i];
                dx[r * d + i] =
                    cache.inv_std[r] * (dh - sum_dh / n - xhat[i] * sum_dh_xhat / n);
            }
        }
        dx
    }

    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gain, &mut self.bias]
    }
}

/// Lookup table of row vectors; gradients scatter-add by id.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub w: Param,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut SeedRng) -> Self {
        Self {
            w: Param::gaussian(vocab * dim, INIT_STD, false, rng),
            vocab,
            dim,
        }
    }

    pub fn forward(&self, ids: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; ids.len() * self.dim];
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < self.vocab, "embedding id {id} out of range {}", self.vocab);
            out[r * self.dim..(r + 1) * self.dim].copy_from_slice(self.row(id));
        }
        out
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.w.w[id * self.dim..(id + 1) * self.dim]
    }

    pub fn backward(&mut self, ids: &[usize], dy: &[f64]) {
        for (r, &id) in ids.iter().enumerate() {
            for i in 0..self.dim {
                self.w.g[id * self.dim + i] += dy[r * self.dim + i];
            }
        }
    }

    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w]
    }
}
