//! Masked diffusion language modeling over text tokens, conditioned on
//! discrete signal tokens.
//!
//! The same bidirectional transformer trunk serves three phases through two
//! output heads: restoring masked signal tokens (pre-training), restoring
//! masked text given a signal-token prompt (fine-tuning), and — with causal
//! attention — a matched-parameter autoregressive baseline. Decoding runs the
//! reverse process: start from an all-masked response, predict every masked
//! position in parallel, keep the most confident predictions on a fixed
//! unmasking schedule, and repeat.

mod generate;
mod model;
mod train;

pub use generate::{
    ar_generate, generate, generate_with_trace, remaining_after, strip_after_eos,
    GenerationConfig, StepTrace,
};
pub use model::{TransformerConfig, TransformerLm, MODEL_KIND};
pub use train::{
    train_ar, train_pretrain, train_sft, LmEpochLog, LmTrainConfig,
};

use serde::{Deserialize, Serialize};

use crate::corpus::TextSample;
use crate::rng::SeedRng;
use crate::rvq::EegTokenSequence;

#[derive(Debug, thiserror::Error)]
pub enum MdlmError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("corruption level {0} outside (0, 1]")]
    BadTimestep(f64),
    #[error("input already contains the MASK id at position {position}")]
    MaskedInput { position: usize },
    #[error("sequence is empty")]
    EmptySequence,
    #[error("sequence needs {needed} positions but the context window holds {context}")]
    ContextOverflow { needed: usize, context: usize },
    #[error("{domain} id {id} out of range (size {size})")]
    BadToken {
        domain: &'static str,
        id: usize,
        size: usize,
    },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("checkpoint phase is {found:?} but {expected:?} is required here")]
    PhaseMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] crate::io::ContainerError),
}

/// Token id spaces shared by every model phase.
///
/// Text ids: word `w` ↦ `w`, then MASK, PAD, EOS. Signal codes live in their
/// own flattened space — stage `m`, code `q` ↦ `offset_m + q` — with a
/// separate mask id one past the last code, so the two domains never collide.
/// The signal tables feed embeddings and the restoration head only; text
/// output logits never range over them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub codebook_sizes: Vec<usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>, codebook_sizes: Vec<usize>) -> Result<Self, MdlmError> {
        if words.is_empty() {
            return Err(MdlmError::BadConfig("vocabulary has no words".into()));
        }
        if codebook_sizes.iter().any(|&k| k == 0) {
            return Err(MdlmError::BadConfig("zero-size codebook table".into()));
        }
        Ok(Self { words, codebook_sizes })
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn mask_id(&self) -> usize {
        self.words.len()
    }

    pub fn pad_id(&self) -> usize {
        self.words.len() + 1
    }

    pub fn eos_id(&self) -> usize {
        self.words.len() + 2
    }

    /// Rows in the text embedding table: words + MASK + PAD + EOS.
    pub fn text_table_size(&self) -> usize {
        self.words.len() + 3
    }

    /// Text output classes: words + EOS. MASK and PAD are never emitted.
    pub fn text_head_size(&self) -> usize {
        self.words.len() + 1
    }

    /// Total signal codes across stages.
    pub fn code_count(&self) -> usize {
        self.codebook_sizes.iter().sum()
    }

    /// Mask id in the flattened signal-code space.
    pub fn code_mask_id(&self) -> usize {
        self.code_count()
    }

    /// Rows in the signal embedding table: all codes + the signal MASK.
    pub fn code_table_size(&self) -> usize {
        self.code_count() + 1
    }

    /// Start of stage `m` in the flattened code space.
    pub fn stage_offset(&self, m: usize) -> usize {
        self.codebook_sizes[..m].iter().sum()
    }

    /// Text-head class index for a text id: words map to themselves, EOS to
    /// the final class. MASK and PAD have no class.
    pub fn head_index(&self, text_id: usize) -> Option<usize> {
        let n = self.words.len();
        if text_id < n {
            Some(text_id)
        } else if text_id == self.eos_id() {
            Some(n)
        } else {
            None
        }
    }

    /// Inverse of [`head_index`](Self::head_index).
    pub fn token_for_head_index(&self, class: usize) -> usize {
        let n = self.words.len();
        if class < n {
            class
        } else {
            self.eos_id()
        }
    }

    /// A sentence as text ids with the EOS terminator appended.
    pub fn text_ids(&self, sample: &TextSample) -> Result<Vec<usize>, MdlmError> {
        let n = self.words.len();
        let mut out = Vec::with_capacity(sample.words.len() + 1);
        for &w in &sample.words {
            if w >= n {
                return Err(MdlmError::BadToken { domain: "word", id: w, size: n });
            }
            out.push(w);
        }
        out.push(self.eos_id());
        Ok(out)
    }

    /// Words before the first EOS, joined by spaces.
    pub fn render(&self, ids: &[usize]) -> String {
        let eos = self.eos_id();
        ids.iter()
            .take_while(|&&id| id != eos)
            .filter_map(|&id| self.words.get(id).map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// A token sequence flattened to `T′·M` ids in stage-major-within-position
    /// order: position 0's stages first, then position 1's, …
    pub fn flatten_codes(&self, seq: &EegTokenSequence) -> Result<Vec<usize>, MdlmError> {
        self.check_stages(seq)?;
        let mut out = Vec::with_capacity(seq.t_len * seq.stages);
        for t in 0..seq.t_len {
            for m in 0..seq.stages {
                out.push(self.flat_code(seq, t, m)?);
            }
        }
        Ok(out)
    }

    /// Per prompt position, the M flattened code ids whose embeddings are
    /// summed.
    pub fn prompt_rows(&self, seq: &EegTokenSequence) -> Result<Vec<Vec<usize>>, MdlmError> {
        self.check_stages(seq)?;
        let mut rows = Vec::with_capacity(seq.t_len);
        for t in 0..seq.t_len {
            let mut row = Vec::with_capacity(seq.stages);
            for m in 0..seq.stages {
                row.push(self.flat_code(seq, t, m)?);
            }
            rows.push(row);
        }
        Ok(rows)
    }

    fn check_stages(&self, seq: &EegTokenSequence) -> Result<(), MdlmError> {
        if seq.codebook_sizes != self.codebook_sizes {
            return Err(MdlmError::BadConfig(format!(
                "token sequence codebook sizes {:?} do not match vocabulary {:?}",
                seq.codebook_sizes, self.codebook_sizes
            )));
        }
        Ok(())
    }

    fn flat_code(&self, seq: &EegTokenSequence, t: usize, m: usize) -> Result<usize, MdlmError> {
        let q = seq.at(t, m);
        let k = self.codebook_sizes[m];
        if q >= k {
            return Err(MdlmError::BadToken { domain: "signal code", id: q, size: k });
        }
        Ok(self.stage_offset(m) + q)
    }
}

/// A sequence after forward corruption: tokens with some positions replaced
/// by the mask id, the flags saying which, and the corruption level.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub tokens: Vec<usize>,
    pub mask_flags: Vec<bool>,
    pub t: f64,
}

impl MaskedSequence {
    pub fn masked_count(&self) -> usize {
        self.mask_flags.iter().filter(|&&f| f).count()
    }
}

/// Independently replace each position by `mask_id` with probability `t`.
///
/// The input must not already contain `mask_id`; `t` must lie in (0, 1].
pub fn forward_mask(
    x0: &[usize],
    t: f64,
    mask_id: usize,
    rng: &mut SeedRng,
) -> Result<MaskedSequence, MdlmError> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(MdlmError::BadTimestep(t));
    }
    if let Some(position) = x0.iter().position(|&id| id == mask_id) {
        return Err(MdlmError::MaskedInput { position });
    }
    use rand::Rng;
    let mut tokens = Vec::with_capacity(x0.len());
    let mut mask_flags = Vec::with_capacity(x0.len());
    for &id in x0 {
        let masked = rng.gen::<f64>() < t;
        tokens.push(if masked { mask_id } else { id });
        mask_flags.push(masked);
    }
    Ok(MaskedSequence { tokens, mask_flags, t })
}

/// Draw `t ~ Uniform(0, 1]`, corrupt, and redraw until at least one position
/// is masked (a zero-mask draw carries no training signal).
pub fn sample_corruption(
    x0: &[usize],
    mask_id: usize,
    rng: &mut SeedRng,
) -> Result<MaskedSequence, MdlmError> {
    if x0.is_empty() {
        return Err(MdlmError::EmptySequence);
    }
    use rand::Rng;
    loop {
        let t = 1.0 - rng.gen::<f64>();
        let ms = forward_mask(x0, t, mask_id, rng)?;
        if ms.masked_count() > 0 {
            return Ok(ms);
        }
    }
}
