//! Optimization loops for the three phases: signal-token restoration,
//! conditioned text restoration, and the next-token baseline.

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;

use crate::nn::{clip_grad_norm, scale_grads, zero_grads, AdamW};
use crate::rng::{rng_from_seed, subseed, SeedRng};
use crate::rvq::TokenDataset;

use super::{sample_corruption, MdlmError, TransformerLm, Vocabulary};

/// Optimizer and schedule settings shared by all three phases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many consecutive epochs without a validation
    /// improvement, restoring the best parameters seen. `None` trains for the
    /// full epoch budget and keeps the final parameters.
    pub patience: Option<usize>,
    /// Clip the global gradient norm before each step when set.
    pub grad_clip: Option<f64>,
    /// Warm-restart period: every `cycle` epochs the optimizer moments are
    /// re-initialized and the shuffle and masking streams repeat from the
    /// cycle start, so each cycle revisits the same corrupted views with
    /// fresh optimizer state. `None` trains one continuous stream.
    pub cycle: Option<usize>,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 0.01,
            epochs: 20,
            batch_size: 16,
            patience: Some(5),
            grad_clip: Some(1.0),
            cycle: None,
            seed: 0,
        }
    }
}

/// Per-epoch record: mean batch training loss and the validation loss under
/// a fixed per-phase evaluation stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

fn check_model_matches_data(model: &TransformerLm, data: &TokenDataset) -> Result<(), MdlmError> {
    if model.vocab.words != data.vocab || model.vocab.codebook_sizes != data.codebook_sizes {
        return Err(MdlmError::BadConfig(
            "model vocabulary does not match the token dataset".into(),
        ));
    }
    Ok(())
}

fn snapshot(model: &mut TransformerLm) -> Vec<Vec<f64>> {
    model.collect_params().iter().map(|p| p.w.clone()).collect()
}

fn restore(model: &mut TransformerLm, snap: &[Vec<f64>]) {
    for (p, s) in model.collect_params().iter_mut().zip(snap) {
        p.w.copy_from_slice(s);
    }
}

/// The epoch/batch/early-stopping scaffold shared by the three phases.
/// `step` accumulates one sample's gradients and returns its loss; `val`
/// scores the model on the validation split.
fn train_loop(
    model: &mut TransformerLm,
    n: usize,
    cfg: &LmTrainConfig,
    tag: &str,
    step: &mut dyn FnMut(&mut TransformerLm, usize, &mut SeedRng) -> Result<f64, MdlmError>,
    val: &mut dyn FnMut(&TransformerLm) -> Result<f64, MdlmError>,
) -> Result<Vec<LmEpochLog>, MdlmError> {
    if n == 0 {
        return Err(MdlmError::EmptyCorpus);
    }
    if cfg.batch_size == 0 {
        return Err(MdlmError::BadConfig("batch_size must be positive".into()));
    }
    if cfg.cycle == Some(0) {
        return Err(MdlmError::BadConfig("cycle must be positive when set".into()));
    }
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut logs = Vec::new();
    let mut best: Option<(f64, usize, Vec<Vec<f64>>)> = None;
    for epoch in 0..cfg.epochs {
        // Warm restarts: within a cycle the stream key runs 0..cycle, so every
        // cycle draws the same shuffle orders and corruption masks, and the
        // optimizer moments start fresh at each boundary.
        let key = match cfg.cycle {
            Some(c) => {
                if epoch > 0 && epoch % c == 0 {
                    opt = AdamW::new(cfg.lr, cfg.weight_decay);
                }
                epoch % c
            }
            None => epoch,
        };
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng_from_seed(subseed(cfg.seed, &format!("{tag}/epoch/{key}/shuffle")));
        order.shuffle(&mut shuffle_rng);
        let mut noise = rng_from_seed(subseed(cfg.seed, &format!("{tag}/epoch/{key}/noise")));

        let mut batch_losses = Vec::new();
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            zero_grads(&mut model.collect_params());
            let mut acc = 0.0;
            for &i in batch {
                acc += step(model, i, &mut noise)?;
            }
            let mean = acc / batch.len() as f64;
            if !mean.is_finite() {
                return Err(MdlmError::Diverged { epoch, batch: batch_idx });
            }
            scale_grads(&mut model.collect_params(), 1.0 / batch.len() as f64);
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut model.collect_params(), c);
            }
            opt.step(&mut model.collect_params());
            batch_losses.push(mean);
        }

        let val_loss = val(model)?;
        logs.push(LmEpochLog {
            epoch,
            train_loss: batch_losses.iter().sum::<f64>() / batch_losses.len() as f64,
            val_loss,
        });
        if let Some(patience) = cfg.patience {
            let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
            if improved {
                best = Some((val_loss, epoch, snapshot(model)));
            } else if epoch - best.as_ref().expect("non-improvement implies a best").1 >= patience
            {
                break;
            }
        }
    }
    if let Some((_, _, snap)) = &best {
        restore(model, snap);
    }
    Ok(logs)
}

fn flat_sequences(
    vocab: &Vocabulary,
    data: &TokenDataset,
    context: usize,
) -> Result<Vec<Vec<usize>>, MdlmError> {
    let seqs: Result<Vec<_>, _> = data
        .pairs
        .iter()
        .map(|p| vocab.flatten_codes(&p.tokens))
        .collect();
    let seqs = seqs?;
    if let Some(longest) = seqs.iter().map(Vec::len).max() {
        if longest > context {
            return Err(MdlmError::ContextOverflow { needed: longest, context });
        }
    }
    Ok(seqs)
}

struct SftSample {
    prompt: Vec<Vec<usize>>,
    text: Vec<usize>,
}

/// Build (prompt, text) pairs for conditioned training.
///
/// With `canvas = Some(c)` every text sequence is extended to exactly `c`
/// ids by repeating EOS, matching the fixed-length region that iterative
/// denoising later fills — the model learns to flood the space after a
/// sentence with EOS instead of facing positions it never trained on. The
/// causal baseline passes `None`: greedy decoding stops at the first EOS,
/// so training past it would only dilute the loss.
fn sft_samples(
    vocab: &Vocabulary,
    data: &TokenDataset,
    context: usize,
    canvas: Option<usize>,
) -> Result<Vec<SftSample>, MdlmError> {
    let mut out = Vec::with_capacity(data.pairs.len());
    for pair in &data.pairs {
        let prompt = vocab.prompt_rows(&pair.tokens)?;
        let mut text = vocab.text_ids(&pair.text)?;
        if let Some(c) = canvas {
            if text.len() > c {
                return Err(MdlmError::BadConfig(format!(
                    "sentence needs {} ids but the canvas holds {c}",
                    text.len()
                )));
            }
            text.resize(c, vocab.eos_id());
        }
        let needed = prompt.len() + text.len();
        if needed > context {
            return Err(MdlmError::ContextOverflow { needed, context });
        }
        out.push(SftSample { prompt, text });
    }
    Ok(out)
}

/// Mean restoration loss over a split under a fixed evaluation stream, so
/// epochs are compared on identical corruption draws.
pub fn pretrain_val_loss(
    model: &TransformerLm,
    seqs: &[Vec<usize>],
    seed: u64,
) -> Result<f64, MdlmError> {
    if seqs.is_empty() {
        return Err(MdlmError::EmptyCorpus);
    }
    let mut rng = rng_from_seed(subseed(seed, "pretrain/val"));
    let mut acc = 0.0;
    for e0 in seqs {
        acc += model.pretrain_loss(e0, &mut rng)?;
    }
    Ok(acc / seqs.len() as f64)
}

fn sft_val_loss(
    model: &TransformerLm,
    samples: &[SftSample],
    seed: u64,
) -> Result<f64, MdlmError> {
    if samples.is_empty() {
        return Err(MdlmError::EmptyCorpus);
    }
    let mut rng = rng_from_seed(subseed(seed, "sft/val"));
    let mut acc = 0.0;
    for s in samples {
        acc += model.sft_loss(&s.prompt, &s.text, &mut rng)?;
    }
    Ok(acc / samples.len() as f64)
}

fn ar_val_loss(model: &TransformerLm, samples: &[SftSample]) -> Result<f64, MdlmError> {
    if samples.is_empty() {
        return Err(MdlmError::EmptyCorpus);
    }
    let mut acc = 0.0;
    for s in samples {
        acc += model.ar_loss(&s.prompt, &s.text)?;
    }
    Ok(acc / samples.len() as f64)
}

/// Train the restoration head on flattened signal-token sequences.
pub fn train_pretrain(
    model: &mut TransformerLm,
    train: &TokenDataset,
    val: &TokenDataset,
    cfg: &LmTrainConfig,
) -> Result<Vec<LmEpochLog>, MdlmError> {
    check_model_matches_data(model, train)?;
    check_model_matches_data(model, val)?;
    let context = model.config.context;
    let train_seqs = flat_sequences(&model.vocab, train, context)?;
    let val_seqs = flat_sequences(&model.vocab, val, context)?;
    if val_seqs.is_empty() {
        return Err(MdlmError::EmptyCorpus);
    }
    let seed = cfg.seed;
    train_loop(
        model,
        train_seqs.len(),
        cfg,
        "pretrain",
        &mut |m, i, noise| {
            let ms = sample_corruption(&train_seqs[i], m.vocab.code_mask_id(), noise)?;
            m.pretrain_step_masked(&train_seqs[i], &ms)
        },
        &mut |m| pretrain_val_loss(m, &val_seqs, seed),
    )
}

/// Fine-tune text restoration conditioned on signal-token prompts.
///
/// `canvas` is the fixed text-region length that generation will later fill;
/// every training sentence is EOS-extended to it (see [`sft_samples`]).
pub fn train_sft(
    model: &mut TransformerLm,
    train: &TokenDataset,
    val: &TokenDataset,
    canvas: usize,
    cfg: &LmTrainConfig,
) -> Result<Vec<LmEpochLog>, MdlmError> {
    check_model_matches_data(model, train)?;
    check_model_matches_data(model, val)?;
    let context = model.config.context;
    let train_samples = sft_samples(&model.vocab, train, context, Some(canvas))?;
    let val_samples = sft_samples(&model.vocab, val, context, Some(canvas))?;
    if val_samples.is_empty() {
        return Err(MdlmError::EmptyCorpus);
    }
    let seed = cfg.seed;
    train_loop(
        model,
        train_samples.len(),
        cfg,
        "sft",
        &mut |m, i, noise| {
            let s = &train_samples[i];
            let ms = sample_corruption(&s.text, m.vocab.mask_id(), noise)?;
            m.sft_step_masked(&s.prompt, &s.text, &ms)
        },
        &mut |m| sft_val_loss(m, &val_samples, seed),
    )
}

/// Train the causal baseline with next-token loss on the same layout.
pub fn train_ar(
    model: &mut TransformerLm,
    train: &TokenDataset,
    val: &TokenDataset,
    cfg: &LmTrainConfig,
) -> Result<Vec<LmEpochLog>, MdlmError> {
    check_model_matches_data(model, train)?;
    check_model_matches_data(model, val)?;
    let context = model.config.context;
    let train_samples = sft_samples(&model.vocab, train, context, None)?;
    let val_samples = sft_samples(&model.vocab, val, context, None)?;
    if val_samples.is_empty() {
        return Err(MdlmError::EmptyCorpus);
    }
    train_loop(
        model,
        train_samples.len(),
        cfg,
        "ar",
        &mut |m, i, _| {
            let s = &train_samples[i];
            m.ar_step(&s.prompt, &s.text)
        },
        &mut |m| ar_val_loss(m, &val_samples),
    )
}
