//! Iterative denoising decoder and the greedy autoregressive decoder.

use serde::{Deserialize, Serialize};

use crate::nn::log_sum_exp;

use super::model::JointInput;
use super::{MdlmError, TransformerLm};

/// Reverse-process settings. Decoding is deterministic — predictions are
/// committed at temperature zero — so `seed` only disambiguates future
/// sampling strategies and is recorded in artifacts for reproducibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Denoising steps S; each step must unmask at least one position, so
    /// S must not exceed the output length.
    pub steps: usize,
    /// Response length L.
    pub length: usize,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), MdlmError> {
        if self.steps < 1 {
            return Err(MdlmError::BadConfig("need at least one denoising step".into()));
        }
        if self.length < 1 {
            return Err(MdlmError::BadConfig("output length must be positive".into()));
        }
        if self.steps > self.length {
            return Err(MdlmError::BadConfig(format!(
                "{} steps over {} positions would leave steps with nothing to commit",
                self.steps, self.length
            )));
        }
        Ok(())
    }
}

/// Masked positions that must remain after step `step` of `steps` finishes:
/// `round(length · (step − 1) / steps)`, ties rounding away from zero. The
/// count reaches zero exactly at the final step (`step = 1`).
pub fn remaining_after(length: usize, step: usize, steps: usize) -> usize {
    (length as f64 * (step - 1) as f64 / steps as f64).round() as usize
}

/// What one denoising step did: its countdown index, the corruption level the
/// model was conditioned on, and which positions are still masked afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub t: f64,
    pub masked_after: Vec<bool>,
}

/// Run the unmasking schedule over an arbitrary predictor.
///
/// `predict` sees the committed-so-far state (`None` = masked) and the
/// conditioning level, and returns `(confidence, token)` for every response
/// position. Each step keeps the most confident predictions — ties broken
/// toward the lowest position — so that exactly [`remaining_after`] positions
/// stay masked; everything else is re-masked, which is what lets a token
/// committed in one step be overturned in a later one.
fn denoise<P>(
    length: usize,
    steps: usize,
    mut predict: P,
) -> Result<(Vec<usize>, Vec<StepTrace>), MdlmError>
where
    P: FnMut(&[Option<usize>], f64) -> Result<Vec<(f64, usize)>, MdlmError>,
{
    let mut committed: Vec<Option<usize>> = vec![None; length];
    let mut trace = Vec::with_capacity(steps);
    for step in (1..=steps).rev() {
        let t = step as f64 / steps as f64;
        let preds = predict(&committed, t)?;
        debug_assert_eq!(preds.len(), length);
        let keep = length - remaining_after(length, step, steps);
        let mut order: Vec<usize> = (0..length).collect();
        order.sort_by(|&a, &b| preds[b].0.total_cmp(&preds[a].0));
        let mut next: Vec<Option<usize>> = vec![None; length];
        for &pos in order.iter().take(keep) {
            next[pos] = Some(preds[pos].1);
        }
        committed = next;
        trace.push(StepTrace {
            step,
            t,
            masked_after: committed.iter().map(|c| c.is_none()).collect(),
        });
    }
    let out = committed
        .into_iter()
        .map(|c| c.expect("final step leaves zero masks"))
        .collect();
    Ok((out, trace))
}

fn model_predictor<'a>(
    model: &'a TransformerLm,
    prompt: &'a [Vec<usize>],
) -> impl FnMut(&[Option<usize>], f64) -> Result<Vec<(f64, usize)>, MdlmError> + 'a {
    let mask_id = model.vocab.mask_id();
    let width = model.vocab.text_head_size();
    let t_p = prompt.len();
    move |committed: &[Option<usize>], t: f64| {
        let text: Vec<usize> = committed.iter().map(|c| c.unwrap_or(mask_id)).collect();
        let input = JointInput { prompt: prompt.to_vec(), text };
        let cache = model.joint_trunk(&input, Some(t))?;
        let logits = model.text_logits(&cache);
        let mut preds = Vec::with_capacity(committed.len());
        for p in 0..committed.len() {
            let row = &logits[(t_p + p) * width..(t_p + p + 1) * width];
            let mut arg = 0;
            for k in 1..width {
                if row[k] > row[arg] {
                    arg = k;
                }
            }
            let conf = (row[arg] - log_sum_exp(row)).exp();
            preds.push((conf, model.vocab.token_for_head_index(arg)));
        }
        Ok(preds)
    }
}

/// Decode a response from an all-masked start by iterative denoising,
/// returning the text ids plus the per-step mask trace.
pub fn generate_with_trace(
    model: &TransformerLm,
    prompt: &[Vec<usize>],
    cfg: &GenerationConfig,
) -> Result<(Vec<usize>, Vec<StepTrace>), MdlmError> {
    cfg.validate()?;
    if model.causal {
        return Err(MdlmError::BadConfig(
            "iterative denoising needs non-causal attention".into(),
        ));
    }
    let rows = prompt.len() + cfg.length;
    if rows > model.config.context {
        return Err(MdlmError::ContextOverflow { needed: rows, context: model.config.context });
    }
    denoise(cfg.length, cfg.steps, model_predictor(model, prompt))
}

/// Decode a response by iterative denoising; exactly `cfg.length` text ids,
/// never MASK, prompt untouched.
pub fn generate(
    model: &TransformerLm,
    prompt: &[Vec<usize>],
    cfg: &GenerationConfig,
) -> Result<Vec<usize>, MdlmError> {
    Ok(generate_with_trace(model, prompt, cfg)?.0)
}

/// Greedy left-to-right decoding for the baseline: the last prompt position
/// predicts the first token; stops at EOS, `max_len` tokens, or the edge of
/// the context window. Returns word ids only (EOS is consumed, MASK cannot
/// be produced).
pub fn ar_generate(
    model: &TransformerLm,
    prompt: &[Vec<usize>],
    max_len: usize,
) -> Result<Vec<usize>, MdlmError> {
    if !model.causal {
        return Err(MdlmError::BadConfig("greedy decoding needs causal attention".into()));
    }
    if prompt.is_empty() {
        return Err(MdlmError::BadConfig(
            "greedy decoding needs at least one prompt position".into(),
        ));
    }
    let width = model.vocab.text_head_size();
    let eos = model.vocab.eos_id();
    let mut out: Vec<usize> = Vec::new();
    while out.len() < max_len {
        let rows = prompt.len() + out.len();
        if rows + 1 > model.config.context {
            break;
        }
        let input = JointInput { prompt: prompt.to_vec(), text: out.clone() };
        let cache = model.joint_trunk(&input, None)?;
        let logits = model.text_logits(&cache);
        let row = &logits[(rows - 1) * width..rows * width];
        let mut arg = 0;
        for k in 1..width {
            if row[k] > row[arg] {
                arg = k;
            }
        }
        let token = model.vocab.token_for_head_index(arg);
        if token == eos {
            break;
        }
        out.push(token);
    }
    Ok(out)
}

/// Ids before the first EOS.
pub fn strip_after_eos(ids: &[usize], eos: usize) -> Vec<usize> {
    ids.iter().copied().take_while(|&id| id != eos).collect()
}
