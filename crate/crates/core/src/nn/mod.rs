//! Hand-rolled neural-network building blocks on flat `f64` slices.
//!
//! Every layer exposes `forward` plus an explicit `backward` that accumulates
//! parameter gradients; there is no autodiff. Layers hand out their parameters
//! through `collect_params`, in a fixed declaration order, which is what the
//! optimizer and the finite-difference checks walk.

mod attention;
mod conv;
mod linear;

pub use attention::{Block, BlockCache, Mha, MhaCache, Mlp, MlpCache};
pub use conv::{conv_out_width, Conv1d, ConvTranspose1d};
pub use linear::{Embedding, LayerNorm, LayerNormCache, Linear, INIT_STD};

use rand_distr::{Distribution, Normal};

use crate::rng::SeedRng;

/// One parameter tensor with its gradient accumulator. `decay` marks whether
/// AdamW applies weight decay (true for weight matrices, false for biases,
/// norm gains, and embeddings).
#[derive(Debug, Clone)]
pub struct Param {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub decay: bool,
}

impl Param {
    pub fn new(w: Vec<f64>, decay: bool) -> Self {
        let g = vec![0.0; w.len()];
        Self { w, g, decay }
    }

    pub fn zeros(len: usize, decay: bool) -> Self {
        Self::new(vec![0.0; len], decay)
    }

    pub fn gaussian(len: usize, std: f64, decay: bool, rng: &mut SeedRng) -> Self {
        let dist = Normal::new(0.0, std).expect("std must be finite");
        Self::new((0..len).map(|_| dist.sample(rng)).collect(), decay)
    }

    pub fn zero_grad(&mut self) {
        self.g.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Scale accumulated gradients in place (e.g. divide by batch size).
pub fn scale_grads(params: &mut [&mut Param], factor: f64) {
    for p in params {
        p.g.iter_mut().for_each(|g| *g *= factor);
    }
}

pub fn zero_grads(params: &mut [&mut Param]) {
    for p in params {
        p.zero_grad();
    }
}

pub fn param_count(params: &[&mut Param]) -> usize {
    params.iter().map(|p| p.w.len()).sum()
}

/// Global gradient L2 norm over all tensors.
pub fn grad_norm(params: &[&mut Param]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Clip gradients to a maximum global norm; returns the pre-clip norm.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            p.g.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// AdamW with decoupled weight decay. Moment buffers are keyed by the position
/// of each tensor in the `params` slice, so callers must pass the same
/// parameter collection (same order, same shapes) to every `step`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.w.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter set changed size");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            assert_eq!(self.m[i].len(), p.w.len(), "parameter {i} changed shape");
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            for j in 0..p.w.len() {
                let g = p.g[j];
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i][j] / bc1;
                let v_hat = self.v[i][j] / bc2;
                p.w[j] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * p.w[j]);
            }
        }
    }
}

/// Tanh-approximation GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
pub fn dgelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Numerically stable in-place softmax over one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log(sum(exp(row)))` with max-subtraction for stability.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Parameter-free sinusoidal embedding of a scalar (used for the diffusion
/// timestep). Frequencies follow the usual geometric ladder over `dim`.
pub fn sinusoidal_embedding(value: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let half = dim / 2;
    for i in 0..half {
        let freq = (10000f64).powf(-(i as f64) / half.max(1) as f64);
        let angle = 1000.0 * value * freq;
        out[i] = angle.sin();
        out[half + i] = angle.cos();
    }
    out
}

#[cfg(test)]
pub(crate) mod fd {
    //! Shared finite-difference gradient-check harness for unit tests.

    use std::cell::RefCell;

    use super::Param;

    /// Check `d loss / d params` via central differences.
    ///
    /// `collect` must hand out the model's parameter tensors in a fixed order;
    /// `analytic` holds gradients snapshotted from a backward pass at the
    /// unperturbed point, in that same order. `loss` recomputes the scalar
    /// loss from scratch at the current parameter values.
    pub fn check_param_grads<M>(
        model: &RefCell<M>,
        collect: for<'a> fn(&'a mut M) -> Vec<&'a mut Param>,
        mut loss: impl FnMut(&M) -> f64,
        analytic: &[Vec<f64>],
        h: f64,
        tol: f64,
    ) {
        let tensor_count = collect(&mut model.borrow_mut()).len();
        assert_eq!(tensor_count, analytic.len(), "analytic grads out of sync");
        let mut failures = Vec::new();
        for i in 0..tensor_count {
            let elems = collect(&mut model.borrow_mut())[i].w.len();
            assert_eq!(elems, analytic[i].len(), "tensor {i} shape mismatch");
            for j in 0..elems {
                let nudge = |delta: f64| {
                    collect(&mut model.borrow_mut())[i].w[j] += delta;
                };
                nudge(h);
                let up = loss(&model.borrow());
                nudge(-2.0 * h);
                let down = loss(&model.borrow());
                nudge(h);
                let numeric = (up - down) / (2.0 * h);
                let got = analytic[i][j];
                let scale = numeric.abs().max(got.abs()).max(1.0);
                if (numeric - got).abs() / scale > tol {
                    failures.push((i, j, numeric, got));
                }
            }
        }
        assert!(
            failures.is_empty(),
            "gradient mismatches (tensor, elem, numeric, analytic): {failures:?}"
        );
    }

    /// Snapshot the gradient buffers in collection order.
    pub fn snapshot_grads<M>(
        model: &RefCell<M>,
        collect: for<'a> fn(&'a mut M) -> Vec<&'a mut Param>,
    ) -> Vec<Vec<f64>> {
        collect(&mut model.borrow_mut())
            .iter()
            .map(|p| p.g.clone())
            .collect()
    }

    /// Finite-difference check of an input gradient.
    pub fn check_input_grad(
        x: &mut [f64],
        mut loss: impl FnMut(&[f64]) -> f64,
        analytic: &[f64],
        h: f64,
        tol: f64,
    ) {
        for j in 0..x.len() {
            let orig = x[j];
            x[j] = orig + h;
            let up = loss(x);
            x[j] = orig - h;
            let down = loss(x);
            x[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let got = analytic[j];
            let scale = numeric.abs().max(got.abs()).max(1.0);
            assert!(
                (numeric - got).abs() / scale <= tol,
                "input grad mismatch at {j}: numeric {numeric} vs analytic {got}"
            );
        }
    }
}
