//! VQ-VAE training loop with straight-through gradients, plus dataset
//! tokenization and codebook-usage diagnostics.

use std::io::{BufRead, BufWriter, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PairedDataset, Split, TextSample};
use crate::nn::{scale_grads, zero_grads, AdamW};
use crate::rng::{rng_from_seed, subseed};

use super::model::{rec_to_matrix, EncoderConfig, Tokenizer};
use super::{quantize, vqvae_loss, EegTokenSequence, RvqError};

/// Everything `train_tokenizer` needs besides the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RvqTrainConfig {
    pub encoder: EncoderConfig,
    /// Number of residual stages M.
    pub stages: usize,
    /// Codes per stage K.
    pub codebook_size: usize,
    pub beta: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RvqTrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::desk_default(128),
            stages: 2,
            codebook_size: 64,
            beta: 0.25,
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 10,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss over batches, in batch order.
    pub train_loss: f64,
    /// Mean reconstruction component over batches.
    pub train_recon: f64,
    /// Mean reconstruction MSE over the validation split, if one was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_mse: Option<f64>,
    /// Codes reassigned by the dead-code reset after this epoch.
    pub codes_reset: usize,
}

/// Greedy residual for one latent row under the first `upto` stages.
fn residual_after(tok: &Tokenizer, row: &[f64], upto: usize) -> Vec<f64> {
    let mut r = row.to_vec();
    for m in 0..upto {
        let idx = tok.stack.codebooks[m].nearest(&r);
        let code = tok.stack.codebooks[m].code(idx);
        for (ri, ci) in r.iter_mut().zip(code) {
            *ri -= *ci;
        }
    }
    r
}

/// Latent rows of the first `batch_size` recordings, pooled.
fn latent_pool(tok: &Tokenizer, data: &PairedDataset, batch_size: usize) -> Vec<Vec<f64>> {
    let dim = tok.config.latent_dim;
    let mut rows = Vec::new();
    for (rec, _) in data.pairs.iter().take(batch_size.max(1)) {
        if let Ok(z) = tok.encode(rec) {
            for t in 0..z.t_len {
                rows.push(z.values[t * dim..(t + 1) * dim].to_vec());
            }
        }
    }
    rows
}

/// Seed each stage's codebook from encoder-output residuals so no code starts
/// far from the data.
fn init_codebooks(tok: &mut Tokenizer, data: &PairedDataset, cfg: &RvqTrainConfig) {
    let mut rng = rng_from_seed(subseed(cfg.seed, "codebook-init"));
    let pool = latent_pool(tok, data, cfg.batch_size);
    if pool.is_empty() {
        return;
    }
    let dim = tok.config.latent_dim;
    let mut residuals = pool;
    for m in 0..tok.stack.stages() {
        let k = tok.stack.codebooks[m].k;
        for code in 0..k {
            let pick = rng.gen_range(0..residuals.len());
            for d in 0..dim {
                let jitter = rng.gen_range(-1e-4..1e-4);
                tok.stack.codebooks[m].vectors.w[code * dim + d] = residuals[pick][d] + jitter;
            }
        }
        for r in residuals.iter_mut() {
            let idx = tok.stack.codebooks[m].nearest(r);
            let code: Vec<f64> = tok.stack.codebooks[m].code(idx).to_vec();
            for (ri, ci) in r.iter_mut().zip(&code) {
                *ri -= *ci;
            }
        }
    }
}

/// Reassign every code unused this epoch to a current residual from the first
/// batch. Returns how many codes moved.
fn reset_dead_codes(
    tok: &mut Tokenizer,
    data: &PairedDataset,
    cfg: &RvqTrainConfig,
    epoch: usize,
) -> usize {
    let dead_total: usize = tok
        .stack
        .codebooks
        .iter()
        .map(|cb| cb.usage_counts.iter().filter(|&&c| c == 0).count())
        .sum();
    if dead_total == 0 {
        return 0;
    }
    let mut rng = rng_from_seed(subseed(cfg.seed, &format!("reset/{epoch}")));
    let pool = latent_pool(tok, data, cfg.batch_size);
    if pool.is_empty() {
        return 0;
    }
    let dim = tok.config.latent_dim;
    let mut moved = 0;
    for m in 0..tok.stack.stages() {
        let dead: Vec<usize> = tok.stack.codebooks[m]
            .usage_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| i)
            .collect();
        if dead.is_empty() {
            continue;
        }
        let residuals: Vec<Vec<f64>> = pool
            .iter()
            .map(|row| residual_after(tok, row, m))
            .collect();
        for code in dead {
            let pick = rng.gen_range(0..residuals.len());
            for d in 0..dim {
                let jitter = rng.gen_range(-1e-4..1e-4);
                tok.stack.codebooks[m].vectors.w[code * dim + d] = residuals[pick][d] + jitter;
            }
            moved += 1;
        }
    }
    moved
}

/// One sample's contribution: forward, loss, and gradient accumulation with
/// straight-through reconstruction gradients. Codebooks receive only the
/// codebook-term gradient.
///
/// Callers batching several samples should zero gradients first and rescale
/// afterwards; [`train_tokenizer`] is the loop that does so.
pub fn accumulate_sample_grads(
    tok: &mut Tokenizer,
    x: &[f64],
    w: usize,
) -> Result<super::VqLoss, RvqError> {
    let (z_e, enc_cache) = tok.encode_matrix(x, w);
    let (z_q, tokens) = quantize(&z_e, &tok.stack)?;
    for t in 0..tokens.t_len {
        for m in 0..tokens.stages {
            tok.stack.codebooks[m].usage_counts[tokens.at(t, m)] += 1;
        }
    }
    let (x_hat, dec_cache) = tok.decode_matrix(&z_q, w)?;
    let loss = vqvae_loss(x, &x_hat, &z_e.values, &z_q.values, tok.stack.beta);

    let n_x = x.len() as f64;
    let dx_hat: Vec<f64> = x_hat.iter().zip(x).map(|(&h, &v)| 2.0 * (h - v) / n_x).collect();
    // Straight-through: the latent gradient from the decoder is treated as
    // the gradient with respect to z_e.
    let g_q = tok.decoder_backward(&dec_cache, &dx_hat);

    let n_z = z_e.values.len() as f64;
    let dim = z_e.dim;
    for t in 0..tokens.t_len {
        for m in 0..tokens.stages {
            let q = tokens.at(t, m);
            for d in 0..dim {
                let diff = z_q.values[t * dim + d] - z_e.values[t * dim + d];
                tok.stack.codebooks[m].vectors.g[q * dim + d] += 2.0 * diff / n_z;
            }
        }
    }

    let beta = tok.stack.beta;
    let d_ze: Vec<f64> = g_q
        .iter()
        .zip(z_e.values.iter().zip(&z_q.values))
        .map(|(&g, (&e, &q))| g + beta * 2.0 * (e - q) / n_z)
        .collect();
    tok.encoder_backward(&enc_cache, &d_ze);
    Ok(loss)
}

/// Train a tokenizer on the train split, logging validation MSE per epoch.
///
/// `epochs = 0` performs codebook initialization only, which makes the
/// zero-learning-rate behaviour directly testable: one epoch at `lr = 0`
/// leaves every parameter bitwise identical to the initialized state.
pub fn train_tokenizer(
    train: &PairedDataset,
    val: Option<&PairedDataset>,
    cfg: &RvqTrainConfig,
) -> Result<(Tokenizer, Vec<EpochLog>), RvqError> {
    if train.is_empty() {
        return Err(RvqError::EmptyTrainSet);
    }
    if cfg.batch_size == 0 {
        return Err(RvqError::BadConfig("batch_size must be positive".into()));
    }
    let mut tok = Tokenizer::new(
        cfg.encoder.clone(),
        cfg.stages,
        cfg.codebook_size,
        cfg.beta,
        cfg.seed,
    )?;
    init_codebooks(&mut tok, train, cfg);

    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut logs = Vec::new();
    for epoch in 0..cfg.epochs {
        for cb in &mut tok.stack.codebooks {
            cb.reset_usage();
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = rng_from_seed(subseed(cfg.seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut shuffle_rng);

        let mut batch_totals = Vec::new();
        let mut batch_recons = Vec::new();
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            zero_grads(&mut tok.collect_params());
            let mut total = 0.0;
            let mut recon = 0.0;
            for &i in batch {
                let (x, w) = rec_to_matrix(&train.pairs[i].0);
                let loss = accumulate_sample_grads(&mut tok, &x, w)?;
                total += loss.total;
                recon += loss.recon;
            }
            let inv = 1.0 / batch.len() as f64;
            total *= inv;
            recon *= inv;
            if !total.is_finite() {
                return Err(RvqError::Diverged { epoch, batch: batch_idx });
            }
            scale_grads(&mut tok.collect_params(), inv);
            opt.step(&mut tok.collect_params());
            batch_totals.push(total);
            batch_recons.push(recon);
        }

        let codes_reset = reset_dead_codes(&mut tok, train, cfg, epoch);
        let val_mse = match val {
            Some(v) if !v.is_empty() => Some(validation_mse(&tok, v)?),
            _ => None,
        };
        let nb = batch_totals.len() as f64;
        logs.push(EpochLog {
            epoch,
            train_loss: batch_totals.iter().sum::<f64>() / nb,
            train_recon: batch_recons.iter().sum::<f64>() / nb,
            val_mse,
            codes_reset,
        });
    }
    Ok((tok, logs))
}

/// Mean reconstruction MSE over a split, in dataset order.
pub fn validation_mse(tok: &Tokenizer, data: &PairedDataset) -> Result<f64, RvqError> {
    if data.is_empty() {
        return Err(RvqError::EmptyTrainSet);
    }
    let mut acc = 0.0;
    for (rec, _) in &data.pairs {
        let (_, err) = tok.reconstruct(rec)?;
        acc += err;
    }
    Ok(acc / data.len() as f64)
}

/// One recording's tokens paired with its sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedPair {
    pub tokens: EegTokenSequence,
    pub text: TextSample,
}

/// A dataset after tokenization: discrete stage indices instead of features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDataset {
    pub pairs: Vec<TokenizedPair>,
    pub split: Split,
    pub codebook_sizes: Vec<usize>,
    pub vocab: Vec<String>,
}

/// Provenance line written at the top of a token dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenDatasetHeader {
    pub kind: String,
    pub format_version: u8,
    pub seed: u64,
    pub config_hash: String,
    pub split: Split,
    pub codebook_sizes: Vec<usize>,
    pub vocab: Vec<String>,
}

pub const TOKEN_DATASET_VERSION: u8 = 1;

impl TokenDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// One JSON object per line: a provenance header, then one line per pair.
    pub fn save(&self, path: &Path, config_hash: &str, seed: u64) -> Result<(), RvqError> {
        let file = std::fs::File::create(path).map_err(crate::io::ContainerError::Io)?;
        let mut w = BufWriter::new(file);
        let header = TokenDatasetHeader {
            kind: "token-dataset".into(),
            format_version: TOKEN_DATASET_VERSION,
            seed,
            config_hash: config_hash.into(),
            split: self.split,
            codebook_sizes: self.codebook_sizes.clone(),
            vocab: self.vocab.clone(),
        };
        let io_err = |e: std::io::Error| RvqError::Io(crate::io::ContainerError::Io(e));
        let line = serde_json::to_string(&header)
            .map_err(|e| RvqError::BadConfig(format!("serialize header: {e}")))?;
        writeln!(w, "{line}").map_err(io_err)?;
        for pair in &self.pairs {
            let line = serde_json::to_string(pair)
                .map_err(|e| RvqError::BadConfig(format!("serialize pair: {e}")))?;
            writeln!(w, "{line}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, TokenDatasetHeader), RvqError> {
        let file = std::fs::File::open(path).map_err(crate::io::ContainerError::Io)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let bad = |msg: String| RvqError::BadConfig(msg);
        let first = lines
            .next()
            .ok_or_else(|| bad("token dataset file is empty".into()))?
            .map_err(crate::io::ContainerError::Io)?;
        let header: TokenDatasetHeader = serde_json::from_str(&first)
            .map_err(|e| bad(format!("token dataset header: {e}")))?;
        if header.kind != "token-dataset" {
            return Err(bad(format!("not a token dataset file (kind {:?})", header.kind)));
        }
        if header.format_version != TOKEN_DATASET_VERSION {
            return Err(bad(format!(
                "unsupported token dataset format version {} (this build reads {})",
                header.format_version, TOKEN_DATASET_VERSION
            )));
        }
        let mut pairs = Vec::new();
        for line in lines {
            let line = line.map_err(crate::io::ContainerError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let pair: TokenizedPair =
                serde_json::from_str(&line).map_err(|e| bad(format!("token dataset pair: {e}")))?;
            if pair.tokens.codebook_sizes != header.codebook_sizes {
                return Err(bad("pair codebook sizes disagree with header".into()));
            }
            pairs.push(pair);
        }
        Ok((
            Self {
                pairs,
                split: header.split,
                codebook_sizes: header.codebook_sizes.clone(),
                vocab: header.vocab.clone(),
            },
            header,
        ))
    }
}

/// Replace every recording with its token sequence; pairing preserved.
pub fn tokenize_dataset(
    tok: &Tokenizer,
    data: &PairedDataset,
) -> Result<TokenDataset, RvqError> {
    let mut pairs = Vec::with_capacity(data.len());
    for (rec, text) in &data.pairs {
        pairs.push(TokenizedPair {
            tokens: tok.tokenize(rec)?,
            text: text.clone(),
        });
    }
    Ok(TokenDataset {
        pairs,
        split: data.split,
        codebook_sizes: tok.stack.sizes(),
        vocab: data.vocab.clone(),
    })
}

/// Codebook usage over a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtilizationReport {
    /// Fraction of codes selected at least once, per stage.
    pub per_stage: Vec<f64>,
    /// Selection counts per code, per stage.
    pub histograms: Vec<Vec<u64>>,
}

/// Fraction of each stage's codes selected at least once over the dataset,
/// plus the full per-code histograms.
pub fn utilization(tok: &Tokenizer, data: &PairedDataset) -> Result<UtilizationReport, RvqError> {
    let mut histograms: Vec<Vec<u64>> = tok
        .stack
        .codebooks
        .iter()
        .map(|cb| vec![0u64; cb.k])
        .collect();
    for (rec, _) in &data.pairs {
        let tokens = tok.tokenize(rec)?;
        for t in 0..tokens.t_len {
            for m in 0..tokens.stages {
                histograms[m][tokens.at(t, m)] += 1;
            }
        }
    }
    let per_stage = histograms
        .iter()
        .map(|h| h.iter().filter(|&&c| c > 0).count() as f64 / h.len() as f64)
        .collect();
    Ok(UtilizationReport { per_stage, histograms })
}
