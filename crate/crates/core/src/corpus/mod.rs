//! Synthetic paired (signal, text) corpus: generation, cleaning, splitting,
//! aggregation, and persistence.
//!
//! The generator stands in for a reading-task recording campaign: each
//! sentence is a sequence of vocabulary words, and each word is rendered into
//! a per-word feature vector of shape `(channels × bands)` through a
//! subject-specific linear map followed by a sigmoid, so every value lands in
//! `[0, 1]` by construction. Word-level recordings keep one feature frame per
//! word; sentence-level recordings aggregate the frames into a single mean
//! frame, which destroys word-order information.

mod ops;
mod storage;
mod synth;

pub use ops::{aggregate_dataset, aggregate_sentence_level, clean, split_unique, CleanReport};
pub use storage::{load_dataset, save_dataset, DatasetHeader, DatasetIoError, DATASET_FORMAT_VERSION};
pub use synth::{build_corpus, synth_pair, WordLatents};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("sentence has no words")]
    EmptySentence,
    #[error("word id {id} out of range for vocabulary of {vocab} words")]
    WordOutOfRange { id: usize, vocab: usize },
    #[error("could not sample {wanted} unique sentences within the retry budget (found {found})")]
    UniqueSentenceBudget { wanted: usize, found: usize },
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("split ratios {0:?} do not sum to 1")]
    BadRatios([f64; 3]),
    #[error("need at least 3 pairs to split, got {0}")]
    TooFewPairs(usize),
    #[error("expected a word-level recording, got sentence-level")]
    NotWordLevel,
}

/// Whether features are kept per word or aggregated per sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    #[serde(alias = "word")]
    WordLevel,
    #[serde(alias = "sentence")]
    SentenceLevel,
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureMode::WordLevel => write!(f, "word"),
            FeatureMode::SentenceLevel => write!(f, "sentence"),
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" | "word-level" => Ok(FeatureMode::WordLevel),
            "sentence" | "sentence-level" => Ok(FeatureMode::SentenceLevel),
            other => Err(format!("unknown feature mode {other:?} (expected word or sentence)")),
        }
    }
}

/// One sentence of text, as word ids into the corpus vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSample {
    pub sentence_id: u64,
    pub words: Vec<usize>,
    pub raw_text: String,
}

/// A word-aligned feature array of shape `(words × channels × bands)`,
/// stored row-major. Values live in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub sentence_id: u64,
    pub subject_id: u32,
    pub mode: FeatureMode,
    pub words: usize,
    pub channels: usize,
    pub bands: usize,
    pub features: Vec<f32>,
}

impl EegRecording {
    pub fn value(&self, word: usize, channel: usize, band: usize) -> f32 {
        self.features[(word * self.channels + channel) * self.bands + band]
    }

    /// One `(channels × bands)` frame, flattened.
    pub fn frame(&self, word: usize) -> &[f32] {
        let fw = self.channels * self.bands;
        &self.features[word * fw..(word + 1) * fw]
    }

    pub fn frame_width(&self) -> usize {
        self.channels * self.bands
    }

    /// True when every value is finite and inside `[0, 1]` up to `tol`.
    pub fn is_clean(&self, tol: f32) -> bool {
        self.features
            .iter()
            .all(|&v| v.is_finite() && v >= -tol && v <= 1.0 + tol)
    }
}

/// Per-subject rendering parameters: a full-column-rank mixing matrix of shape
/// `(channels·bands) × latent_width` plus a bias vector.
#[derive(Debug, Clone)]
pub struct SubjectProfile {
    pub subject_id: u32,
    pub mixing: Vec<f64>,
    pub bias: Vec<f64>,
    pub latent_width: usize,
}

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unsplit,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
            Split::Unsplit => write!(f, "unsplit"),
        }
    }
}

/// A list of paired recordings and sentences, plus the vocabulary that the
/// word ids index into. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub pairs: Vec<(EegRecording, TextSample)>,
    pub split: Split,
    pub synthesis_seed: u64,
    pub vocab: Vec<String>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Everything the generator needs to build a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub vocab_size: usize,
    pub sentence_count: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub subject_count: usize,
    pub noise_sigma: f64,
    pub channels: usize,
    pub bands: usize,
    /// Width of the frozen per-word latent embeddings.
    pub latent_width: usize,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            vocab_size: 40,
            sentence_count: 200,
            len_min: 4,
            len_max: 9,
            subject_count: 3,
            noise_sigma: 0.1,
            channels: 16,
            bands: 8,
            latent_width: 16,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn frame_width(&self) -> usize {
        self.channels * self.bands
    }
}
