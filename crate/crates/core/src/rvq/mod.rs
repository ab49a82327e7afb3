//! Residual vector quantization over encoded signal latents.
//!
//! A convolutional encoder maps a `(channels·bands) × W` recording to a
//! `T′ × D` latent sequence; `M` codebooks then quantize each position
//! greedily, each stage picking the nearest code to the residual the previous
//! stages left behind. The reconstruction `z_q` is the exact sum of the
//! selected code vectors, and a mirrored transposed-convolution decoder maps
//! it back to the input shape. Training ties the pieces together with the
//! usual VQ-VAE objective (reconstruction + codebook + commitment terms).

mod model;
mod train;

pub use model::{rec_to_matrix, ConvSpec, EncoderConfig, Tokenizer};
pub use train::{
    accumulate_sample_grads, train_tokenizer, tokenize_dataset, utilization, validation_mse,
    EpochLog, RvqTrainConfig, TokenDataset, TokenDatasetHeader, TokenizedPair, UtilizationReport,
    TOKEN_DATASET_VERSION,
};

use crate::linalg::{dist2, mse};
use crate::nn::Param;

#[derive(Debug, thiserror::Error)]
pub enum RvqError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("input width {width} shorter than downsample factor {downsample}")]
    InputTooShort { width: usize, downsample: usize },
    #[error("recording frame width {got} does not match encoder input width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("latent dimension {got} does not match stack dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("token {index} out of range for stage {stage} (codebook size {size})")]
    TokenOutOfRange { stage: usize, index: usize, size: usize },
    #[error("stage count {got} does not match stack ({expected})")]
    StageMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Io(#[from] crate::io::ContainerError),
}

/// One codebook: `k` vectors of dimension `dim`, stored flat `(k, dim)`
/// row-major inside a trainable parameter, plus per-epoch usage counters.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub vectors: Param,
    pub k: usize,
    pub dim: usize,
    pub usage_counts: Vec<u64>,
}

impl Codebook {
    pub fn zeros(k: usize, dim: usize) -> Self {
        assert!(k >= 2, "codebook needs at least 2 codes");
        Self {
            // Embedding-like: exempt from weight decay.
            vectors: Param::zeros(k * dim, false),
            k,
            dim,
            usage_counts: vec![0; k],
        }
    }

    pub fn code(&self, idx: usize) -> &[f64] {
        &self.vectors.w[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Nearest code to `v` by squared Euclidean distance; ties resolve to the
    /// lowest index (strict `<` while scanning upward).
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_d = dist2(v, self.code(0));
        for idx in 1..self.k {
            let d = dist2(v, self.code(idx));
            if d < best_d {
                best_d = d;
                best = idx;
            }
        }
        best
    }

    pub fn reset_usage(&mut self) {
        self.usage_counts.iter_mut().for_each(|c| *c = 0);
    }
}

/// A stack of residual codebooks sharing one latent dimension.
#[derive(Debug, Clone)]
pub struct RvqStack {
    pub codebooks: Vec<Codebook>,
    pub beta: f64,
}

impl RvqStack {
    pub fn zeros(stages: usize, sizes: &[usize], dim: usize, beta: f64) -> Self {
        assert!(stages >= 1 && sizes.len() == stages);
        assert!(beta > 0.0, "beta must be positive");
        Self {
            codebooks: sizes.iter().map(|&k| Codebook::zeros(k, dim)).collect(),
            beta,
        }
    }

    pub fn stages(&self) -> usize {
        self.codebooks.len()
    }

    pub fn dim(&self) -> usize {
        self.codebooks[0].dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.codebooks.iter().map(|c| c.k).collect()
    }
}

/// `t_len × dim` real latents, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub values: Vec<f64>,
    pub t_len: usize,
    pub dim: usize,
}

impl LatentSequence {
    pub fn new(values: Vec<f64>, t_len: usize, dim: usize) -> Self {
        assert_eq!(values.len(), t_len * dim);
        Self { values, t_len, dim }
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

/// Per-position stage indices, `t_len × stages` row-major.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EegTokenSequence {
    pub indices: Vec<usize>,
    pub t_len: usize,
    pub stages: usize,
    pub codebook_sizes: Vec<usize>,
}

impl EegTokenSequence {
    pub fn at(&self, t: usize, m: usize) -> usize {
        self.indices[t * self.stages + m]
    }
}

/// Greedy residual quantization (stage `m` quantizes what stages `< m` left).
pub fn quantize(
    z_e: &LatentSequence,
    stack: &RvqStack,
) -> Result<(LatentSequence, EegTokenSequence), RvqError> {
    if z_e.dim != stack.dim() {
        return Err(RvqError::DimMismatch {
            expected: stack.dim(),
            got: z_e.dim,
        });
    }
    let m = stack.stages();
    let d = z_e.dim;
    let mut indices = Vec::with_capacity(z_e.t_len * m);
    let mut values = vec![0.0; z_e.t_len * d];
    let mut residual = vec![0.0; d];
    for t in 0..z_e.t_len {
        residual.copy_from_slice(z_e.at(t));
        let out = &mut values[t * d..(t + 1) * d];
        for cb in &stack.codebooks {
            let q = cb.nearest(&residual);
            indices.push(q);
            let code = cb.code(q);
            for i in 0..d {
                residual[i] -= code[i];
                // Identical accumulation order to `dequantize`, so the two
                // agree bit-for-bit.
                out[i] += code[i];
            }
        }
    }
    Ok((
        LatentSequence::new(values, z_e.t_len, d),
        EegTokenSequence {
            indices,
            t_len: z_e.t_len,
            stages: m,
            codebook_sizes: stack.sizes(),
        },
    ))
}

/// Sum the selected code vectors per position.
pub fn dequantize(
    tokens: &EegTokenSequence,
    stack: &RvqStack,
) -> Result<LatentSequence, RvqError> {
    if tokens.stages != stack.stages() {
        return Err(RvqError::StageMismatch {
            expected: stack.stages(),
            got: tokens.stages,
        });
    }
    let d = stack.dim();
    let mut values = vec![0.0; tokens.t_len * d];
    for t in 0..tokens.t_len {
        let out = &mut values[t * d..(t + 1) * d];
        for (m, cb) in stack.codebooks.iter().enumerate() {
            let idx = tokens.at(t, m);
            if idx >= cb.k {
                return Err(RvqError::TokenOutOfRange {
                    stage: m,
                    index: idx,
                    size: cb.k,
                });
            }
            let code = cb.code(idx);
            for i in 0..d {
                out[i] += code[i];
            }
        }
    }
    Ok(LatentSequence::new(values, tokens.t_len, d))
}

/// The three VQ-VAE loss components. `commit` is stored with `beta` already
/// applied, so `total = recon + codebook + commit` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLoss {
    pub total: f64,
    pub recon: f64,
    pub codebook: f64,
    pub commit: f64,
}

/// `MSE(x, x̂) + MSE(sg(z_e), z_q) + beta · MSE(z_e, sg(z_q))`.
///
/// The stop-gradients only matter for differentiation; the value is plain
/// arithmetic here. Component meanings: `recon` trains encoder+decoder (with
/// the straight-through estimator bridging the quantizer), `codebook` trains
/// the code vectors toward the encoder outputs, `commit` pulls the encoder
/// toward its assigned codes.
pub fn vqvae_loss(x: &[f64], x_hat: &[f64], z_e: &[f64], z_q: &[f64], beta: f64) -> VqLoss {
    let recon = mse(x, x_hat);
    let codebook = mse(z_e, z_q);
    let commit = beta * mse(z_e, z_q);
    VqLoss {
        total: recon + codebook + commit,
        recon,
        codebook,
        commit,
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::rng::rng_from_seed;

    fn stack_from(vecs: &[&[&[f64]]], beta: f64) -> RvqStack {
        let dim = vecs[0][0].len();
        let codebooks = vecs
            .iter()
            .map(|cb| {
                let mut flat = Vec::new();
                for code in cb.iter() {
                    assert_eq!(code.len(), dim);
                    flat.extend_from_slice(code);
                }
                Codebook {
                    vectors: Param::new(flat, false),
                    k: cb.len(),
                    dim,
                    usage_counts: vec![0; cb.len()],
                }
            })
            .collect();
        RvqStack { codebooks, beta }
    }

    #[test]
    fn worked_two_stage_example() {
        // Stage 1 codes {[0,0],[1,0]}, stage 2 codes {[0,0],[0,0.5]}.
        let stack = stack_from(&[&[&[0.0, 0.0], &[1.0, 0.0]], &[&[0.0, 0.0], &[0.0, 0.5]]], 0.25);
        let z_e = LatentSequence::new(vec![1.0, 0.4], 1, 2);
        let (z_q, tokens) = quantize(&z_e, &stack).unwrap();
        assert_eq!(tokens.indices, vec![1, 1]);
        assert_eq!(z_q.values, vec![1.0, 0.5]);
        // Dequantize reproduces the same reconstruction bit-for-bit.
        let again = dequantize(&tokens, &stack).unwrap();
        assert_eq!(again.values, z_q.values);
    }

    #[test]
    fn exact_match_single_stage() {
        let stack = stack_from(&[&[&[0.25, -0.5], &[2.0, 1.0]]], 0.25);
        let z_e = LatentSequence::new(vec![2.0, 1.0], 1, 2);
        let (z_q, tokens) = quantize(&z_e, &stack).unwrap();
        assert_eq!(tokens.indices, vec![1]);
        assert_eq!(z_q.values, vec![2.0, 1.0]);
        let residual: f64 = z_e
            .values
            .iter()
            .zip(&z_q.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert_eq!(residual, 0.0);
    }

    #[test]
    fn ties_break_to_the_lowest_index() {
        // Codes at ±1, query at 0: equidistant, must pick index 0.
        let stack = stack_from(&[&[&[1.0], &[-1.0]]], 0.25);
        let z_e = LatentSequence::new(vec![0.0], 1, 1);
        let (_, tokens) = quantize(&z_e, &stack).unwrap();
        assert_eq!(tokens.indices, vec![0]);
        // Duplicate codes likewise.
        let stack = stack_from(&[&[&[0.7], &[0.7], &[0.7]]], 0.25);
        let z_e = LatentSequence::new(vec![0.7], 1, 1);
        let (_, tokens) = quantize(&z_e, &stack).unwrap();
        assert_eq!(tokens.indices, vec![0]);
    }

    #[test]
    fn greedy_matches_brute_force_oracle() {
        // Independent re-derivation: per stage, scan every code with a plain
        // loop over squared distances, then subtract.
        let mut rng = rng_from_seed(77);
        for trial in 0..200 {
            let d = 3;
            let stack = RvqStack {
                codebooks: (0..2)
                    .map(|_| {
                        let k = 4;
                        Codebook {
                            vectors: Param::new(
                                (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                                false,
                            ),
                            k,
                            dim: d,
                            usage_counts: vec![0; k],
                        }
                    })
                    .collect(),
                beta: 0.25,
            };
            let t_len = 4;
            let z_e = LatentSequence::new(
                (0..t_len * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                t_len,
                d,
            );
            let (z_q, tokens) = quantize(&z_e, &stack).unwrap();

            for t in 0..t_len {
                let mut r: Vec<f64> = z_e.at(t).to_vec();
                let mut sum = vec![0.0; d];
                for (m, cb) in stack.codebooks.iter().enumerate() {
                    let mut best = usize::MAX;
                    let mut best_d = f64::INFINITY;
                    for k in 0..cb.k {
                        let mut dd = 0.0;
                        for i in 0..d {
                            let diff = r[i] - cb.code(k)[i];
                            dd += diff * diff;
                        }
                        if dd < best_d {
                            best_d = dd;
                            best = k;
                        }
                    }
                    assert_eq!(tokens.at(t, m), best, "trial {trial}, t {t}, stage {m}");
                    for i in 0..d {
                        r[i] -= cb.code(best)[i];
                        sum[i] += cb.code(best)[i];
                    }
                }
                // Eq-style exactness: z_q is the sum of selected codes, to the
                // last bit.
                assert_eq!(z_q.at(t), &sum[..]);
            }
        }
    }

    #[test]
    fn dequantize_range_checks_and_zero_codebooks() {
        let stack = RvqStack::zeros(2, &[4, 4], 3, 0.25);
        let tokens = EegTokenSequence {
            indices: vec![0, 3, 1, 2],
            t_len: 2,
            stages: 2,
            codebook_sizes: vec![4, 4],
        };
        let z = dequantize(&tokens, &stack).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));

        let bad = EegTokenSequence {
            indices: vec![0, 4],
            t_len: 1,
            stages: 2,
            codebook_sizes: vec![4, 4],
        };
        assert!(matches!(
            dequantize(&bad, &stack),
            Err(RvqError::TokenOutOfRange { stage: 1, index: 4, size: 4 })
        ));
    }

    #[test]
    fn loss_hand_example() {
        // Scalars x=1, x̂=0.5, z_e=0.2, z_q=0.4, beta=0.25.
        let l = vqvae_loss(&[1.0], &[0.5], &[0.2], &[0.4], 0.25);
        assert!((l.recon - 0.25).abs() < 1e-15);
        assert!((l.codebook - 0.04).abs() < 1e-15);
        assert!((l.commit - 0.01).abs() < 1e-15);
        assert!((l.total - 0.30).abs() < 1e-15);
    }

    #[test]
    fn loss_decomposes_and_vanishes_when_everything_matches() {
        let l = vqvae_loss(&[1.0, 2.0], &[1.0, 2.0], &[0.5, 0.5], &[0.5, 0.5], 0.25);
        assert_eq!(l.total, 0.0);

        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let v = |n: usize, rng: &mut crate::rng::SeedRng| -> Vec<f64> {
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let (x, xh) = (v(6, &mut rng), v(6, &mut rng));
            let (ze, zq) = (v(4, &mut rng), v(4, &mut rng));
            let l = vqvae_loss(&x, &xh, &ze, &zq, 0.25);
            assert!((l.total - (l.recon + l.codebook + l.commit)).abs() < 1e-12);
            // Doubling beta doubles only the commitment component.
            let l2 = vqvae_loss(&x, &xh, &ze, &zq, 0.5);
            assert_eq!(l2.recon, l.recon);
            assert_eq!(l2.codebook, l.codebook);
            assert!((l2.commit - 2.0 * l.commit).abs() < 1e-12);
        }
    }

    #[test]
    fn quantize_dequantize_round_trip_on_random_inputs() {
        let mut rng = rng_from_seed(9);
        for _ in 0..100 {
            let d = 2 + rng.gen_range(0..3);
            let stages = 1 + rng.gen_range(0..3);
            let sizes: Vec<usize> = (0..stages).map(|_| 2 + rng.gen_range(0..6)).collect();
            let mut stack = RvqStack::zeros(stages, &sizes, d, 0.25);
            for cb in &mut stack.codebooks {
                for v in cb.vectors.w.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let t_len = 1 + rng.gen_range(0..4);
            let z_e = LatentSequence::new(
                (0..t_len * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                t_len,
                d,
            );
            let (z_q, tokens) = quantize(&z_e, &stack).unwrap();
            for (t, chunk) in tokens.indices.chunks(stages).enumerate() {
                for (m, &idx) in chunk.iter().enumerate() {
                    assert!(idx < sizes[m], "t={t} stage={m}");
                }
            }
            assert_eq!(dequantize(&tokens, &stack).unwrap().values, z_q.values);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let stack = RvqStack::zeros(1, &[4], 3, 0.25);
        let z_e = LatentSequence::new(vec![0.0; 4], 2, 2);
        assert!(matches!(
            quantize(&z_e, &stack),
            Err(RvqError::DimMismatch { expected: 3, got: 2 })
        ));
    }
}
