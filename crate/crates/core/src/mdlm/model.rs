//! The shared transformer trunk with its two output heads, the three loss
//! paths (signal restoration, conditioned text restoration, next-token), and
//! checkpoint serialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{read_container, write_container, ArrayReader, ArrayWriter, ContainerHeader};
use crate::nn::{
    log_sum_exp, sinusoidal_embedding, Block, Embedding, LayerNorm, Linear, Param, INIT_STD,
};
use crate::rng::{rng_from_seed, subseed};

use super::{MaskedSequence, MdlmError, Vocabulary};

pub const MODEL_KIND: &[u8; 4] = b"MDLM";

/// Amplitude of the parameter-free position and corruption-level sinusoids
/// added to every embedded row.
///
/// Chosen relative to [`INIT_STD`]: a few times the embedding-init scale so
/// that position-to-position attention logits are large enough for the
/// prompt/text alignment pattern to form within a desk-scale step budget,
/// while token identity still contributes a visible fraction of each row.
pub const ENCODING_SCALE: f64 = 5.0 * INIT_STD;

/// Trunk shape. The same config serves the diffusion model and the
/// autoregressive baseline, so their parameter counts match exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub context: usize,
}

impl TransformerConfig {
    pub fn desk_default() -> Self {
        Self { layers: 4, dim: 128, heads: 4, context: 128 }
    }

    pub fn validate(&self) -> Result<(), MdlmError> {
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.context == 0 {
            return Err(MdlmError::BadConfig(
                "layers, dim, heads, context must all be positive".into(),
            ));
        }
        if self.dim % self.heads != 0 {
            return Err(MdlmError::BadConfig(format!(
                "width {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Transformer language model over the two token domains.
///
/// Non-causal attention plus a corruption-level embedding give the diffusion
/// model; the same structure with causal attention and no corruption input is
/// the autoregressive baseline. Prompt positions embed as the sum of their
/// per-stage code embeddings.
#[derive(Debug, Clone)]
pub struct TransformerLm {
    pub config: TransformerConfig,
    pub vocab: Vocabulary,
    pub causal: bool,
    pub seed: u64,
    text_embed: Embedding,
    code_embed: Embedding,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    text_head: Linear,
    code_head: Linear,
}

pub(crate) struct TrunkCache {
    block_caches: Vec<crate::nn::BlockCache>,
    ln_cache: crate::nn::LayerNormCache,
    pub h: Vec<f64>,
    rows: usize,
}

/// Layout of one joint input: how many leading positions belong to the
/// prompt, and the ids needed to scatter embedding gradients back.
pub(crate) struct JointInput {
    pub prompt: Vec<Vec<usize>>,
    pub text: Vec<usize>,
}

impl TransformerLm {
    pub fn new(
        config: TransformerConfig,
        vocab: Vocabulary,
        causal: bool,
        seed: u64,
    ) -> Result<Self, MdlmError> {
        config.validate()?;
        let mut rng = rng_from_seed(subseed(seed, "model-init"));
        let text_embed = Embedding::new(vocab.text_table_size(), config.dim, &mut rng);
        let code_embed = Embedding::new(vocab.code_table_size(), config.dim, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| Block::new(config.dim, config.heads, causal, &mut rng))
            .collect();
        let final_ln = LayerNorm::new(config.dim);
        let text_head = Linear::new(config.dim, vocab.text_head_size(), &mut rng);
        let code_head = Linear::new(config.dim, vocab.code_count(), &mut rng);
        Ok(Self {
            config,
            vocab,
            causal,
            seed,
            text_embed,
            code_embed,
            blocks,
            final_ln,
            text_head,
            code_head,
        })
    }

    /// Fixed tensor order shared by the optimizer and the checkpoint format:
    /// text table, code table, blocks, final norm, text head, code head.
    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        out.extend(self.text_embed.collect_params());
        out.extend(self.code_embed.collect_params());
        for b in &mut self.blocks {
            out.extend(b.collect_params());
        }
        out.extend(self.final_ln.collect_params());
        out.extend(self.text_head.collect_params());
        out.extend(self.code_head.collect_params());
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.collect_params().iter().map(|p| p.w.len()).sum()
    }

    pub fn text_head_mut(&mut self) -> &mut Linear {
        &mut self.text_head
    }

    pub fn code_head_mut(&mut self) -> &mut Linear {
        &mut self.code_head
    }

    fn check_context(&self, rows: usize) -> Result<(), MdlmError> {
        if rows > self.config.context {
            return Err(MdlmError::ContextOverflow {
                needed: rows,
                context: self.config.context,
            });
        }
        Ok(())
    }

    /// Add parameter-free position and corruption-level sinusoids.
    ///
    /// Positions are segment-relative: rows before `text_start` (the prompt)
    /// count from 0, and rows from `text_start` on also count from 0. Both
    /// segments share one positional origin, so "text position i ↔ prompt
    /// position i" is an *identical* positional code in every sentence
    /// regardless of its prompt length; aligning a response token with its
    /// conditioning row is then a position-match the attention maps can
    /// express directly. `None` means a single unsegmented sequence counting
    /// from 0.
    ///
    /// Sinusoids are injected at [`ENCODING_SCALE`]: raw unit-amplitude waves
    /// would be ~50× larger than a freshly initialized embedding row and the
    /// token identity would vanish after the first pre-block norm, while
    /// waves at exactly `INIT_STD` leave position-to-position attention
    /// logits so small that the alignment pattern takes impractically long to
    /// emerge. A handful of `INIT_STD` keeps both signals legible.
    fn add_position_and_level(
        &self,
        x: &mut [f64],
        rows: usize,
        t: Option<f64>,
        text_start: Option<usize>,
    ) {
        let d = self.config.dim;
        let base = 0;
        let level = t.map(|t| sinusoidal_embedding(t, d));
        for r in 0..rows {
            let logical = match text_start {
                Some(start) if r >= start => base + (r - start),
                _ => r,
            };
            let pos = sinusoidal_embedding(logical as f64 / 1000.0, d);
            for i in 0..d {
                x[r * d + i] += ENCODING_SCALE * pos[i];
                if let Some(le) = &level {
                    x[r * d + i] += ENCODING_SCALE * le[i];
                }
            }
        }
    }

    fn trunk_forward(&self, x: Vec<f64>, rows: usize) -> TrunkCache {
        let mut cur = x;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&cur, rows);
            block_caches.push(c);
            cur = y;
        }
        let (h, ln_cache) = self.final_ln.forward(&cur, rows);
        TrunkCache { block_caches, ln_cache, h, rows }
    }

    /// Backpropagate through norm and blocks; returns the gradient at the
    /// embedding sum.
    fn trunk_backward(&mut self, cache: &TrunkCache, dh: &[f64]) -> Vec<f64> {
        let rows = cache.rows;
        let mut dy = self.final_ln.backward(&cache.ln_cache, dh, rows);
        for (b, c) in self.blocks.iter_mut().zip(&cache.block_caches).rev() {
            dy = b.backward(c, &dy, rows);
        }
        dy
    }

    /// Embed a pure signal-code sequence (restoration phase).
    fn embed_codes(&self, ids: &[usize], t: f64) -> Result<Vec<f64>, MdlmError> {
        let size = self.vocab.code_table_size();
        for &id in ids {
            if id >= size {
                return Err(MdlmError::BadToken { domain: "signal code", id, size });
            }
        }
        let mut x = self.code_embed.forward(ids);
        self.add_position_and_level(&mut x, ids.len(), Some(t), None);
        Ok(x)
    }

    /// Embed `[prompt | text]`, prompt positions as per-stage sums.
    ///
    /// The prompt must fit in the first half of the context window, because
    /// the text segment's positions start at `context / 2` (see
    /// [`add_position_and_level`](Self::add_position_and_level)).
    fn embed_joint(&self, input: &JointInput, t: Option<f64>) -> Result<Vec<f64>, MdlmError> {
        let d = self.config.dim;
        let t_p = input.prompt.len();
        if t_p > self.config.context / 2 {
            return Err(MdlmError::ContextOverflow {
                needed: 2 * t_p,
                context: self.config.context,
            });
        }
        let rows = t_p + input.text.len();
        let code_size = self.vocab.code_count();
        let text_size = self.vocab.text_table_size();
        let mut x = vec![0.0; rows * d];
        for (p, codes) in input.prompt.iter().enumerate() {
            for &c in codes {
                if c >= code_size {
                    return Err(MdlmError::BadToken {
                        domain: "signal code",
                        id: c,
                        size: code_size,
                    });
                }
                let row = self.code_embed.row(c);
                for i in 0..d {
                    x[p * d + i] += row[i];
                }
            }
        }
        for (j, &id) in input.text.iter().enumerate() {
            if id >= text_size {
                return Err(MdlmError::BadToken { domain: "text", id, size: text_size });
            }
            let row = self.text_embed.row(id);
            x[(t_p + j) * d..(t_p + j + 1) * d].copy_from_slice(row);
        }
        self.add_position_and_level(&mut x, rows, t, Some(t_p));
        Ok(x)
    }

    /// Scatter an embedding-sum gradient back into both tables.
    fn embed_joint_backward(&mut self, input: &JointInput, dx: &[f64]) {
        let d = self.config.dim;
        let t_p = input.prompt.len();
        for (p, codes) in input.prompt.iter().enumerate() {
            for &c in codes {
                for i in 0..d {
                    self.code_embed.w.g[c * d + i] += dx[p * d + i];
                }
            }
        }
        self.text_embed.backward(&input.text, &dx[t_p * d..]);
    }

    /// Hidden states for a joint `[prompt | text]` input. `t` must be given
    /// for the diffusion model (non-causal) and absent for the baseline.
    pub(crate) fn joint_trunk(
        &self,
        input: &JointInput,
        t: Option<f64>,
    ) -> Result<TrunkCache, MdlmError> {
        let rows = input.prompt.len() + input.text.len();
        if rows == 0 {
            return Err(MdlmError::EmptySequence);
        }
        self.check_context(rows)?;
        let x = self.embed_joint(input, t)?;
        Ok(self.trunk_forward(x, rows))
    }

    /// Text-head logits for every row of a trunk output.
    pub(crate) fn text_logits(&self, cache: &TrunkCache) -> Vec<f64> {
        self.text_head.forward(&cache.h, cache.rows)
    }

    // ------------------------------------------------------------------
    // Signal-restoration loss (pre-training)
    // ------------------------------------------------------------------

    fn restoration_ce(
        &self,
        e0: &[usize],
        ms: &MaskedSequence,
    ) -> Result<(f64, Vec<f64>, TrunkCache), MdlmError> {
        if self.causal {
            return Err(MdlmError::BadConfig(
                "restoration losses need non-causal attention".into(),
            ));
        }
        if e0.is_empty() {
            return Err(MdlmError::EmptySequence);
        }
        if ms.tokens.len() != e0.len() || ms.mask_flags.len() != e0.len() {
            return Err(MdlmError::BadConfig(
                "corrupted sequence length does not match the original".into(),
            ));
        }
        if !(ms.t > 0.0 && ms.t <= 1.0) {
            return Err(MdlmError::BadTimestep(ms.t));
        }
        let n_codes = self.vocab.code_count();
        for &id in e0 {
            if id >= n_codes {
                return Err(MdlmError::BadToken { domain: "signal code", id, size: n_codes });
            }
        }
        self.check_context(e0.len())?;
        let masked: Vec<usize> = (0..e0.len()).filter(|&i| ms.mask_flags[i]).collect();
        if masked.is_empty() {
            return Err(MdlmError::BadConfig(
                "no masked positions: resample the corruption".into(),
            ));
        }
        let x = self.embed_codes(&ms.tokens, ms.t)?;
        let cache = self.trunk_forward(x, e0.len());
        let logits = self.code_head.forward(&cache.h, cache.rows);

        let width = n_codes;
        // Masked-restoration weighting: sum of masked-position CE scaled by
        // 1/(t * L). Per-token weight is then uniform in expectation across
        // corruption levels (E[masked] = t*L cancels the 1/t), which is the
        // discrete-diffusion bound this model trains against. Normalizing by
        // the *masked count* instead would hand the near-clean draws (one or
        // two masked tokens, weight 1/t) most of the gradient mass.
        let inv = 1.0 / (ms.t * e0.len() as f64);
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; logits.len()];
        for &i in &masked {
            let row = &logits[i * width..(i + 1) * width];
            let lse = log_sum_exp(row);
            loss += (lse - row[e0[i]]) * inv;
            for k in 0..width {
                dlogits[i * width + k] = ((row[k] - lse).exp()
                    - if k == e0[i] { 1.0 } else { 0.0 })
                    * inv;
            }
        }
        Ok((loss, dlogits, cache))
    }

    /// Restoration loss at a fixed corruption; no gradients.
    ///
    /// `(1/t) ·` mean cross-entropy over masked positions against `e0`.
    pub fn pretrain_loss_masked(
        &self,
        e0: &[usize],
        ms: &MaskedSequence,
    ) -> Result<f64, MdlmError> {
        Ok(self.restoration_ce(e0, ms)?.0)
    }

    /// As [`pretrain_loss_masked`](Self::pretrain_loss_masked), accumulating
    /// parameter gradients.
    pub fn pretrain_step_masked(
        &mut self,
        e0: &[usize],
        ms: &MaskedSequence,
    ) -> Result<f64, MdlmError> {
        let (loss, dlogits, cache) = self.restoration_ce(e0, ms)?;
        let dh = self.code_head.backward(&cache.h, &dlogits, cache.rows);
        let dx = self.trunk_backward(&cache, &dh);
        self.code_embed.backward(&ms.tokens, &dx);
        Ok(loss)
    }

    /// Restoration loss at a freshly sampled corruption level.
    pub fn pretrain_loss(
        &self,
        e0: &[usize],
        rng: &mut crate::rng::SeedRng,
    ) -> Result<f64, MdlmError> {
        let ms = super::sample_corruption(e0, self.vocab.code_mask_id(), rng)?;
        self.pretrain_loss_masked(e0, &ms)
    }

    // ------------------------------------------------------------------
    // Conditioned text loss (fine-tuning)
    // ------------------------------------------------------------------

    fn sft_ce(
        &self,
        prompt: &[Vec<usize>],
        x0: &[usize],
        ms: &MaskedSequence,
    ) -> Result<(f64, Vec<f64>, TrunkCache, JointInput), MdlmError> {
        if self.causal {
            return Err(MdlmError::BadConfig(
                "restoration losses need non-causal attention".into(),
            ));
        }
        if x0.is_empty() {
            return Err(MdlmError::EmptySequence);
        }
        if ms.tokens.len() != x0.len() || ms.mask_flags.len() != x0.len() {
            return Err(MdlmError::BadConfig(
                "corrupted sequence length does not match the original".into(),
            ));
        }
        if !(ms.t > 0.0 && ms.t <= 1.0) {
            return Err(MdlmError::BadTimestep(ms.t));
        }
        let mut targets = Vec::with_capacity(x0.len());
        for &id in x0 {
            match self.vocab.head_index(id) {
                Some(c) => targets.push(c),
                None => {
                    return Err(MdlmError::BadToken {
                        domain: "text",
                        id,
                        size: self.vocab.text_head_size(),
                    })
                }
            }
        }
        let masked: Vec<usize> = (0..x0.len()).filter(|&i| ms.mask_flags[i]).collect();
        if masked.is_empty() {
            return Err(MdlmError::BadConfig(
                "no masked positions: resample the corruption".into(),
            ));
        }
        let input = JointInput { prompt: prompt.to_vec(), text: ms.tokens.clone() };
        let cache = self.joint_trunk(&input, Some(ms.t))?;
        let logits = self.text_logits(&cache);

        let width = self.vocab.text_head_size();
        let t_p = prompt.len();
        // Same 1/(t * L) weighting as the signal-restoration loss; L is the
        // text canvas length, prompt rows carry no loss.
        let inv = 1.0 / (ms.t * x0.len() as f64);
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; logits.len()];
        for &i in &masked {
            let r = t_p + i;
            let row = &logits[r * width..(r + 1) * width];
            let lse = log_sum_exp(row);
            loss += (lse - row[targets[i]]) * inv;
            for k in 0..width {
                dlogits[r * width + k] = ((row[k] - lse).exp()
                    - if k == targets[i] { 1.0 } else { 0.0 })
                    * inv;
            }
        }
        Ok((loss, dlogits, cache, input))
    }

    /// Conditioned text loss at a fixed corruption; only text positions carry
    /// loss, the prompt is never corrupted.
    pub fn sft_loss_masked(
        &self,
        prompt: &[Vec<usize>],
        x0: &[usize],
        ms: &MaskedSequence,
    ) -> Result<f64, MdlmError> {
        Ok(self.sft_ce(prompt, x0, ms)?.0)
    }

    /// As [`sft_loss_masked`](Self::sft_loss_masked), accumulating parameter
    /// gradients.
    pub fn sft_step_masked(
        &mut self,
        prompt: &[Vec<usize>],
        x0: &[usize],
        ms: &MaskedSequence,
    ) -> Result<f64, MdlmError> {
        let (loss, dlogits, cache, input) = self.sft_ce(prompt, x0, ms)?;
        let dh = self.text_head.backward(&cache.h, &dlogits, cache.rows);
        let dx = self.trunk_backward(&cache, &dh);
        self.embed_joint_backward(&input, &dx);
        Ok(loss)
    }

    /// Conditioned text loss at a freshly sampled corruption level.
    pub fn sft_loss(
        &self,
        prompt: &[Vec<usize>],
        x0: &[usize],
        rng: &mut crate::rng::SeedRng,
    ) -> Result<f64, MdlmError> {
        let ms = super::sample_corruption(x0, self.vocab.mask_id(), rng)?;
        self.sft_loss_masked(prompt, x0, &ms)
    }

    // ------------------------------------------------------------------
    // Next-token loss (autoregressive baseline)
    // ------------------------------------------------------------------

    fn ar_ce(
        &self,
        prompt: &[Vec<usize>],
        x0: &[usize],
    ) -> Result<(f64, Vec<f64>, TrunkCache, JointInput), MdlmError> {
        if !self.causal {
            return Err(MdlmError::BadConfig(
                "next-token loss needs causal attention".into(),
            ));
        }
        if prompt.is_empty() {
            return Err(MdlmError::BadConfig(
                "next-token training needs at least one prompt position".into(),
            ));
        }
        if x0.is_empty() {
            return Err(MdlmError::EmptySequence);
        }
        let mut targets = Vec::with_capacity(x0.len());
        for &id in x0 {
            match self.vocab.head_index(id) {
                Some(c) => targets.push(c),
                None => {
                    return Err(MdlmError::BadToken {
                        domain: "text",
                        id,
                        size: self.vocab.text_head_size(),
                    })
                }
            }
        }
        let input = JointInput { prompt: prompt.to_vec(), text: x0.to_vec() };
        let cache = self.joint_trunk(&input, None)?;
        let logits = self.text_logits(&cache);

        // Position t_p - 1 + i predicts text token i; there is no
        // begin-of-sequence token, the last prompt position starts the chain.
        let width = self.vocab.text_head_size();
        let t_p = prompt.len();
        let inv = 1.0 / x0.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; logits.len()];
        for (i, &target) in targets.iter().enumerate() {
            let r = t_p - 1 + i;
            let row = &logits[r * width..(r + 1) * width];
            let lse = log_sum_exp(row);
            loss += (lse - row[target]) * inv;
            for k in 0..width {
                dlogits[r * width + k] =
                    ((row[k] - lse).exp() - if k == target { 1.0 } else { 0.0 }) * inv;
            }
        }
        Ok((loss, dlogits, cache, input))
    }

    /// Mean next-token cross-entropy of the text region given the prompt.
    pub fn ar_loss(&self, prompt: &[Vec<usize>], x0: &[usize]) -> Result<f64, MdlmError> {
        Ok(self.ar_ce(prompt, x0)?.0)
    }

    /// As [`ar_loss`](Self::ar_loss), accumulating parameter gradients.
    pub fn ar_step(&mut self, prompt: &[Vec<usize>], x0: &[usize]) -> Result<f64, MdlmError> {
        let (loss, dlogits, cache, input) = self.ar_ce(prompt, x0)?;
        let dh = self.text_head.backward(&cache.h, &dlogits, cache.rows);
        let dx = self.trunk_backward(&cache, &dh);
        self.embed_joint_backward(&input, &dx);
        Ok(loss)
    }

    // ------------------------------------------------------------------
    // Checkpointing
    // ------------------------------------------------------------------

    pub fn save(&self, path: &Path, config_hash: &str, phase: &str) -> Result<(), MdlmError> {
        let header = ContainerHeader {
            config_hash: config_hash.to_string(),
            seed: self.seed,
            body: LmHeader {
                config: self.config.clone(),
                vocab: self.vocab.clone(),
                causal: self.causal,
                phase: phase.to_string(),
            },
        };
        let mut w = ArrayWriter::new();
        let mut me = self.clone();
        for p in me.collect_params() {
            w.push(&p.w);
        }
        write_container(path, MODEL_KIND, &header, &w.finish())?;
        Ok(())
    }

    /// Load a checkpoint; when `expected_phase` is given, a checkpoint from a
    /// different phase is rejected. Returns the model, its config hash, and
    /// the stored phase.
    pub fn load(
        path: &Path,
        expected_phase: Option<&str>,
    ) -> Result<(Self, String, String), MdlmError> {
        let (header, payload): (ContainerHeader<LmHeader>, _) =
            read_container(path, MODEL_KIND)?;
        if let Some(expected) = expected_phase {
            if header.body.phase != expected {
                return Err(MdlmError::PhaseMismatch {
                    expected: expected.to_string(),
                    found: header.body.phase,
                });
            }
        }
        let mut model = TransformerLm::new(
            header.body.config,
            header.body.vocab,
            header.body.causal,
            header.seed,
        )?;
        let mut r = ArrayReader::new(&payload);
        for p in model.collect_params() {
            let arr = r.next()?;
            if arr.len() != p.w.len() {
                return Err(MdlmError::BadConfig(format!(
                    "checkpoint tensor length {} does not match model ({})",
                    arr.len(),
                    p.w.len()
                )));
            }
            p.w.copy_from_slice(&arr);
        }
        if r.remaining() != 0 {
            return Err(MdlmError::BadConfig(
                "checkpoint holds extra unread tensors".into(),
            ));
        }
        Ok((model, header.config_hash, header.body.phase))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LmHeader {
    config: TransformerConfig,
    vocab: Vocabulary,
    causal: bool,
    phase: String,
}
