//! End-to-end signal-to-text pipeline at desk scale.
//!
//! The crate covers four stages and the glue between them:
//!
//! * [`corpus`] — synthetic paired (signal, text) data: generation, cleaning,
//!   normalization, unique-sentence splitting, and a binary dataset format.
//! * [`rvq`] — a convolutional encoder/decoder with multi-stage residual
//!   vector quantization, trained as a VQ-VAE.
//! * [`mdlm`] — a masked diffusion language model over text tokens,
//!   pre-trained on signal tokens and fine-tuned to generate text conditioned
//!   on them, plus a matched-size autoregressive baseline.
//! * [`metrics`] — corpus-level BLEU-N, ROUGE-1 and WER.
//!
//! [`pipeline`] wires the stages together behind declarative configs and is
//! what the `neurotext` binary drives.

pub mod corpus;
pub mod io;
pub mod linalg;
pub mod mdlm;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod rvq;

pub use corpus::{
    EegRecording, FeatureMode, PairedDataset, Split, SubjectProfile, SynthesisConfig, TextSample,
};
pub use mdlm::{GenerationConfig, MaskedSequence, TransformerConfig, TransformerLm, Vocabulary};
pub use metrics::EvalReport;
pub use rvq::{Codebook, EegTokenSequence, EncoderConfig, LatentSequence, RvqStack, Tokenizer};
