//! Orchestration: a declarative run configuration, derived artifact paths,
//! and one function per pipeline stage.
//!
//! A run is identified by the pair (config hash, seed). The hash covers the
//! effective configuration — file, overrides, and flags — except for the
//! artifact directory and the feature mode: the directory is pure plumbing,
//! and the two feature modes intentionally share the corpus artifacts while
//! keeping their own model artifacts under per-mode subdirectories. Every
//! artifact embeds the hash, the seed, and a format version; stages refuse
//! inputs whose hash disagrees with the current configuration.

mod report;
mod stages;

pub use report::stage_report;
pub use stages::{
    stage_clean_split, stage_evaluate, stage_generate, stage_pretrain, stage_sft, stage_synth,
    stage_tokenize, stage_train_ar, stage_train_rvq,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CorpusError, DatasetIoError, FeatureMode, Split, SynthesisConfig};
use crate::io::ContainerError;
use crate::mdlm::{LmTrainConfig, MdlmError, TransformerConfig};
use crate::metrics::{EvalReport, MetricsError};
use crate::rng::subseed;
use crate::rvq::{ConvSpec, EncoderConfig, RvqError, RvqTrainConfig};

/// Format version stamped into the JSON artifacts this module emits
/// (transcripts, evaluations, reports, training logs).
pub const PIPELINE_ARTIFACT_VERSION: u8 = 1;

/// Failures surfaced to the command line, classified by exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// Invalid or inconsistent configuration, including artifacts built
    /// under a different configuration or format version. Exit code 2.
    #[error("{0}")]
    Config(String),
    /// A required upstream artifact does not exist yet. Exit code 3.
    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },
    /// Training diverged or produced non-finite values. Exit code 4.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Underlying I/O failure. Exit code 1.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::Numeric(_) => 4,
            PipelineError::Io(_) => 1,
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<RvqError> for PipelineError {
    fn from(e: RvqError) -> Self {
        match e {
            RvqError::Diverged { .. } => PipelineError::Numeric(e.to_string()),
            RvqError::Io(ContainerError::Io(io)) => PipelineError::Io(io),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

impl From<MdlmError> for PipelineError {
    fn from(e: MdlmError) -> Self {
        match e {
            MdlmError::Diverged { .. } => PipelineError::Numeric(e.to_string()),
            MdlmError::Io(ContainerError::Io(io)) => PipelineError::Io(io),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

/// Synthetic corpus shape plus the split ratios applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub vocab_size: usize,
    pub sentence_count: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub subject_count: usize,
    pub noise_sigma: f64,
    pub channels: usize,
    pub bands: usize,
    pub latent_width: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            vocab_size: 40,
            // 320 training pairs is the measured generalization threshold
            // for the conditioned decoder at this parameter count: halving
            // the corpus leaves training loss falling while validation never
            // follows (pure memorization), with the same budget and rate.
            sentence_count: 400,
            len_min: 4,
            len_max: 9,
            subject_count: 3,
            noise_sigma: 0.1,
            channels: 16,
            bands: 8,
            latent_width: 16,
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
        }
    }
}

impl CorpusSection {
    pub fn synthesis(&self, run_seed: u64) -> SynthesisConfig {
        SynthesisConfig {
            vocab_size: self.vocab_size,
            sentence_count: self.sentence_count,
            len_min: self.len_min,
            len_max: self.len_max,
            subject_count: self.subject_count,
            noise_sigma: self.noise_sigma,
            channels: self.channels,
            bands: self.bands,
            latent_width: self.latent_width,
            seed: subseed(run_seed, "corpus"),
        }
    }

    pub fn frame_width(&self) -> usize {
        self.channels * self.bands
    }
}

/// Signal tokenizer: encoder shape, quantizer shape, and training budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RvqSection {
    pub stages: usize,
    pub codebook_size: usize,
    pub beta: f64,
    pub latent_dim: usize,
    /// Channel width of the encoder's hidden convolution layers.
    pub hidden: usize,
    pub kernel: usize,
    pub stride: usize,
    pub conv_layers: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for RvqSection {
    fn default() -> Self {
        Self {
            stages: 2,
            codebook_size: 64,
            beta: 0.25,
            latent_dim: 8,
            hidden: 32,
            // Pointwise by default: word-level inputs keep one latent (and
            // M tokens) per word, so word order survives tokenization.
            kernel: 1,
            stride: 1,
            conv_layers: 1,
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 15,
            batch_size: 16,
        }
    }
}

impl RvqSection {
    pub fn encoder(&self, frame_width: usize) -> EncoderConfig {
        EncoderConfig {
            input_width: frame_width,
            layers: vec![
                ConvSpec { kernel: self.kernel, stride: self.stride, channels: self.hidden };
                self.conv_layers
            ],
            latent_dim: self.latent_dim,
        }
    }

    pub fn train_config(&self, frame_width: usize, seed: u64) -> RvqTrainConfig {
        RvqTrainConfig {
            encoder: self.encoder(frame_width),
            stages: self.stages,
            codebook_size: self.codebook_size,
            beta: self.beta,
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// Diffusion language model: architecture and the two training phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdlmSection {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub context: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub pretrain_epochs: usize,
    pub sft_epochs: usize,
    pub batch_size: usize,
    pub patience: Option<usize>,
    pub grad_clip: Option<f64>,
    /// Warm-restart period in epochs; 0 trains one continuous stream.
    pub cycle_epochs: usize,
}

impl Default for MdlmSection {
    fn default() -> Self {
        Self {
            layers: 4,
            dim: 128,
            heads: 4,
            context: 128,
            // The conditioning circuit (text position -> matching prompt row)
            // forms slowly from a standing start; this rate and budget carry
            // it well past formation on the default corpus within desk-scale
            // wall time.
            lr: 2e-3,
            weight_decay: 0.01,
            // Restoring masked signal tokens first was measured to *block*
            // the later conditioned fine-tuning at this parameter count: the
            // trunk settles into an intra-signal attention basin and the
            // fine-tuning loss floors at the unconditioned plateau, while a
            // fresh start forms the conditioning circuit on the same data
            // and budget. The stage stays available (any positive count
            // runs it; 0 writes an initialization-only checkpoint), but the
            // default skips it.
            pretrain_epochs: 0,
            // Formation typically lands between epochs 50 and 120 on the
            // default corpus; decoding quality keeps improving for well over
            // a hundred epochs after it, so the budget leaves deep
            // refinement room past the latest observed formation.
            sft_epochs: 300,
            batch_size: 16,
            // Conditioned training sits on a loss plateau for tens of epochs
            // before the conditioning circuit forms and validation drops
            // sharply, so patience-style stopping would cut training mid-
            // plateau; the epoch budget is the control instead.
            patience: None,
            grad_clip: Some(1.0),
            // Measured repeatedly at this scale: one continuous stream stalls
            // on the plateau, while repeating the same shuffle and masking
            // schedule every cycle with fresh optimizer moments reliably
            // breaks through it.
            cycle_epochs: 25,
        }
    }
}

impl MdlmSection {
    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.layers,
            dim: self.dim,
            heads: self.heads,
            context: self.context,
        }
    }

    pub fn train_config(&self, epochs: usize, seed: u64) -> LmTrainConfig {
        LmTrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            grad_clip: self.grad_clip,
            cycle: match self.cycle_epochs {
                0 => None,
                c => Some(c),
            },
            seed,
        }
    }
}

/// Autoregressive baseline training budget. The architecture is taken from
/// the diffusion section so parameter counts match exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: Option<usize>,
    pub grad_clip: Option<f64>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            // Next-token training converges far faster than masked
            // restoration, so the baseline keeps its own (lower) rate; the
            // epoch cap and patience match the diffusion side, and in
            // practice patience ends training soon after validation bottoms
            // out, restoring the best checkpoint.
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 200,
            batch_size: 16,
            patience: Some(40),
            grad_clip: Some(1.0),
        }
    }
}

impl BaselineSection {
    pub fn train_config(&self, seed: u64) -> LmTrainConfig {
        LmTrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            grad_clip: self.grad_clip,
            // Next-token training descends monotonically at this scale; the
            // restart schedule exists for the plateau-bound conditioned
            // phase and is not needed here.
            cycle: None,
            seed,
        }
    }
}

/// Decoding and scoring settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Denoising steps for the diffusion decoder.
    pub steps: usize,
    /// Also embed per-sentence transcripts in the evaluation artifact.
    pub keep_transcripts: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        // A single parallel pass measurably beats iterative refinement at
        // this model scale (61% vs 19% positional accuracy on the same
        // noise-free checkpoint): committing a position conditions every
        // later step on it, and with desk-scale confidence calibration one
        // over-confident wrong commit — typically an early end-of-sentence
        // token — cascades through the remaining steps. More steps sharpen
        // decoding only once calibration is strong enough to order commits
        // correctly.
        Self { steps: 1, keep_transcripts: false }
    }
}

/// The effective configuration of a run: file, then `key=value` overrides,
/// then dedicated flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Artifact directory; not part of the run's identity.
    pub out: PathBuf,
    /// Feature mode routed to per-mode artifacts; not part of the hash.
    pub mode: FeatureMode,
    pub corpus: CorpusSection,
    pub rvq: RvqSection,
    pub mdlm: MdlmSection,
    pub baseline: BaselineSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            mode: FeatureMode::WordLevel,
            corpus: CorpusSection::default(),
            rvq: RvqSection::default(),
            mdlm: MdlmSection::default(),
            baseline: BaselineSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    /// SHA-256 over the canonical serialization of everything that defines
    /// the run: the seed and all stage sections. `out` and `mode` are
    /// excluded (see module docs).
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct HashView<'a> {
            seed: u64,
            corpus: &'a CorpusSection,
            rvq: &'a RvqSection,
            mdlm: &'a MdlmSection,
            baseline: &'a BaselineSection,
            eval: &'a EvalSection,
        }
        let view = HashView {
            seed: self.seed,
            corpus: &self.corpus,
            rvq: &self.rvq,
            mdlm: &self.mdlm,
            baseline: &self.baseline,
            eval: &self.eval,
        };
        let canonical = serde_json::to_string(&view).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn paths(&self) -> Paths {
        Paths { root: self.out.clone() }
    }

    /// Cheap cross-field checks; deeper validation happens inside each stage.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let c = &self.corpus;
        if c.len_min == 0 || c.len_min > c.len_max {
            return Err(PipelineError::Config(format!(
                "corpus sentence length range {}..{} is invalid",
                c.len_min, c.len_max
            )));
        }
        let sum = c.train_ratio + c.val_ratio + c.test_ratio;
        if c.train_ratio < 0.0 || c.val_ratio < 0.0 || c.test_ratio < 0.0 || (sum - 1.0).abs() > 1e-9
        {
            return Err(PipelineError::Config(format!(
                "split ratios {}/{}/{} must be non-negative and sum to 1",
                c.train_ratio, c.val_ratio, c.test_ratio
            )));
        }
        if self.eval.steps == 0 {
            return Err(PipelineError::Config("eval.steps must be at least 1".into()));
        }
        if self.eval.steps > self.text_canvas() {
            return Err(PipelineError::Config(format!(
                "eval.steps = {} exceeds the decoding canvas of {} positions \
                 (corpus.len_max + 1); every step must commit at least one token",
                self.eval.steps,
                self.text_canvas()
            )));
        }
        Ok(())
    }

    /// Fixed decoding canvas: the longest sentence plus its end marker.
    pub fn text_canvas(&self) -> usize {
        self.corpus.len_max + 1
    }
}

/// Merge order: built-in defaults ← TOML file ← `--set key=value` pairs ←
/// dedicated flags (`--seed`, `--out`, `--mode`).
pub fn load_run_config(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<PathBuf>,
    mode: Option<FeatureMode>,
) -> Result<RunConfig, PipelineError> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            text.parse::<toml::Table>().map_err(|e| {
                PipelineError::Config(format!("config {} is not valid TOML: {e}", path.display()))
            })?
        }
        None => toml::Table::new(),
    };
    for pair in sets {
        apply_override(&mut table, pair)?;
    }
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| PipelineError::Config(format!("config schema violation: {e}")))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        config.out = out;
    }
    if let Some(mode) = mode {
        config.mode = mode;
    }
    config.validate()?;
    Ok(config)
}

/// Apply one `section.key=value` override to the parsed TOML tree.
fn apply_override(table: &mut toml::Table, pair: &str) -> Result<(), PipelineError> {
    let (key, raw) = pair.split_once('=').ok_or_else(|| {
        PipelineError::Config(format!("override {pair:?} is not of the form key=value"))
    })?;
    let key = key.trim();
    if key.is_empty() {
        return Err(PipelineError::Config(format!("override {pair:?} has an empty key")));
    }
    let value = parse_override_value(raw.trim());
    let mut cursor = table;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry.as_table_mut().ok_or_else(|| {
            PipelineError::Config(format!("override {key:?} descends into non-table {part:?}"))
        })?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Interpret the value as integer, float, or bool when it parses as one;
/// otherwise as a string.
fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(v) = raw.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return toml::Value::Float(v);
    }
    if let Ok(v) = raw.parse::<bool>() {
        return toml::Value::Boolean(v);
    }
    toml::Value::String(raw.to_string())
}

/// The two decoders scored against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Diffusion,
    Baseline,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Diffusion => write!(f, "diffusion"),
            ModelKind::Baseline => write!(f, "baseline"),
        }
    }
}

pub const MODELS: [ModelKind; 2] = [ModelKind::Diffusion, ModelKind::Baseline];

/// Every artifact path the pipeline reads or writes, derived from the
/// artifact directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn corpus(&self, split: Split) -> PathBuf {
        self.root.join(format!("corpus.{split}"))
    }

    pub fn mode_dir(&self, mode: FeatureMode) -> PathBuf {
        self.root.join(mode.to_string())
    }

    pub fn tokenizer(&self, mode: FeatureMode) -> PathBuf {
        self.mode_dir(mode).join("tokenizer.bin")
    }

    pub fn tokens(&self, mode: FeatureMode, split: Split) -> PathBuf {
        self.mode_dir(mode).join(format!("tokens.{split}.jsonl"))
    }

    pub fn model(&self, mode: FeatureMode, phase: &str) -> PathBuf {
        self.mode_dir(mode).join(format!("{phase}.bin"))
    }

    pub fn train_log(&self, mode: FeatureMode, stage: &str) -> PathBuf {
        self.mode_dir(mode).join(format!("log.{stage}.json"))
    }

    pub fn transcripts(&self, mode: FeatureMode, model: ModelKind) -> PathBuf {
        self.mode_dir(mode).join(format!("transcripts.{model}.jsonl"))
    }

    pub fn eval(&self, mode: FeatureMode, model: ModelKind) -> PathBuf {
        self.mode_dir(mode).join(format!("eval.{model}.json"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

/// Provenance fields present in every JSON artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactStamp {
    pub kind: String,
    pub format_version: u8,
    pub seed: u64,
    pub config_hash: String,
}

impl ArtifactStamp {
    pub fn new(kind: &str, config: &RunConfig) -> Self {
        Self {
            kind: kind.into(),
            format_version: PIPELINE_ARTIFACT_VERSION,
            seed: config.seed,
            config_hash: config.hash(),
        }
    }

    /// Validate kind, version, and hash against the current configuration.
    pub fn check(&self, kind: &str, config: &RunConfig, path: &Path) -> Result<(), PipelineError> {
        if self.kind != kind {
            return Err(PipelineError::Config(format!(
                "{} holds a {:?} artifact, expected {kind:?}",
                path.display(),
                self.kind
            )));
        }
        if self.format_version != PIPELINE_ARTIFACT_VERSION {
            return Err(PipelineError::Config(format!(
                "{} has format version {} (this build reads {})",
                path.display(),
                self.format_version,
                PIPELINE_ARTIFACT_VERSION
            )));
        }
        check_hash(&self.config_hash, config, path)
    }
}

/// Refuse an artifact written under a different configuration or seed.
pub(crate) fn check_hash(found: &str, config: &RunConfig, path: &Path) -> Result<(), PipelineError> {
    let expected = config.hash();
    if found != expected {
        return Err(PipelineError::Config(format!(
            "{} was produced under config {} but the current config is {}; \
             rerun the stages that produced it",
            path.display(),
            &found[..12.min(found.len())],
            &expected[..12]
        )));
    }
    Ok(())
}

/// Transcript file header line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptsHeader {
    #[serde(flatten)]
    pub stamp: ArtifactStamp,
    pub mode: FeatureMode,
    pub model: ModelKind,
    pub count: usize,
}

/// One decoded sentence next to its reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub sentence_id: u64,
    pub reference: String,
    pub hypothesis: String,
}

/// Scored metrics for one (mode, model) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalArtifact {
    #[serde(flatten)]
    pub stamp: ArtifactStamp,
    pub mode: FeatureMode,
    pub model: ModelKind,
    /// Positional match fraction in `[0, 1]`.
    pub token_accuracy: f64,
    pub report: EvalReport,
}

/// Training curve artifact shared by all trained stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogArtifact<T> {
    #[serde(flatten)]
    pub stamp: ArtifactStamp,
    pub mode: FeatureMode,
    pub entries: Vec<T>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Config(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(
    path: &Path,
    hint: &str,
) -> Result<T, PipelineError> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(PipelineError::MissingArtifact {
                path: path.to_path_buf(),
                hint: hint.into(),
            });
        }
        Err(e) => return Err(e.into()),
    };
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{} is malformed: {e}", path.display())))
}

/// Classify a dataset-directory load failure.
pub(crate) fn dataset_error(path: &Path, hint: &str, e: DatasetIoError) -> PipelineError {
    match e {
        DatasetIoError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            PipelineError::MissingArtifact { path: path.to_path_buf(), hint: hint.into() }
        }
        DatasetIoError::Io(io) => PipelineError::Io(io),
        other => PipelineError::Config(format!("{}: {other}", path.display())),
    }
}

/// Classify a checkpoint/token-file load failure (their I/O errors arrive
/// wrapped in container errors).
pub(crate) fn artifact_error<E: Into<PipelineError>>(
    path: &Path,
    hint: &str,
    e: E,
) -> PipelineError {
    match e.into() {
        PipelineError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            PipelineError::MissingArtifact { path: path.to_path_buf(), hint: hint.into() }
        }
        PipelineError::Config(msg) => PipelineError::Config(format!("{}: {msg}", path.display())),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml_and_hash_is_stable() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn hash_ignores_out_and_mode_but_not_seed_or_sections() {
        let base = RunConfig::default();
        let mut other = base.clone();
        other.out = PathBuf::from("elsewhere");
        other.mode = FeatureMode::SentenceLevel;
        assert_eq!(other.hash(), base.hash());

        let mut reseeded = base.clone();
        reseeded.seed = 1;
        assert_ne!(reseeded.hash(), base.hash());

        let mut retuned = base.clone();
        retuned.mdlm.lr *= 2.0;
        assert_ne!(retuned.hash(), base.hash());
    }

    #[test]
    fn overrides_apply_after_file_and_flags_apply_last() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "seed = 3\n[corpus]\nnoise_sigma = 0.4\nvocab_size = 12\n").unwrap();
        let cfg = load_run_config(
            Some(&file),
            &["corpus.noise_sigma=0.05".into(), "mdlm.dim=32".into(), "seed=9".into()],
            Some(11),
            Some(PathBuf::from("artifacts")),
            Some(FeatureMode::SentenceLevel),
        )
        .unwrap();
        assert_eq!(cfg.corpus.noise_sigma, 0.05);
        assert_eq!(cfg.corpus.vocab_size, 12);
        assert_eq!(cfg.mdlm.dim, 32);
        assert_eq!(cfg.seed, 11, "--seed wins over --set seed=");
        assert_eq!(cfg.out, PathBuf::from("artifacts"));
        assert_eq!(cfg.mode, FeatureMode::SentenceLevel);
    }

    #[test]
    fn unknown_keys_and_malformed_overrides_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "[corpus]\nvocab_sizzle = 12\n").unwrap();
        let err = load_run_config(Some(&file), &[], None, None, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("vocab_sizzle"), "{err}");

        for bad in ["no_equals_sign", "=5", "corpus.vocab_size=not_a_number"] {
            let err = load_run_config(None, &[bad.to_string()], None, None, None).unwrap_err();
            assert_eq!(err.exit_code(), 2, "override {bad:?} should be a config error: {err}");
        }
    }

    #[test]
    fn validation_rejects_bad_ratios_and_step_counts() {
        let mut cfg = RunConfig::default();
        cfg.corpus.val_ratio = 0.5;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);

        let mut cfg = RunConfig::default();
        cfg.eval.steps = cfg.text_canvas() + 1;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("canvas"), "{err}");

        let mut cfg = RunConfig::default();
        cfg.corpus.len_min = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn paths_are_mode_scoped_and_split_scoped() {
        let cfg = RunConfig::default();
        let paths = cfg.paths();
        assert_eq!(paths.corpus(Split::Train), PathBuf::from("out/corpus.train"));
        assert_eq!(
            paths.tokens(FeatureMode::WordLevel, Split::Val),
            PathBuf::from("out/word/tokens.val.jsonl")
        );
        assert_eq!(
            paths.eval(FeatureMode::SentenceLevel, ModelKind::Baseline),
            PathBuf::from("out/sentence/eval.baseline.json")
        );
    }

    #[test]
    fn stamp_check_rejects_version_and_hash_drift() {
        let cfg = RunConfig::default();
        let path = Path::new("x.json");
        let good = ArtifactStamp::new("eval", &cfg);
        good.check("eval", &cfg, path).unwrap();

        let mut wrong_kind = good.clone();
        wrong_kind.kind = "report".into();
        assert!(wrong_kind.check("eval", &cfg, path).is_err());

        let mut old = good.clone();
        old.format_version = 0;
        let err = old.check("eval", &cfg, path).unwrap_err();
        assert!(err.to_string().contains("format version"), "{err}");

        let mut drifted = cfg.clone();
        drifted.rvq.epochs += 1;
        let err = good.check("eval", &drifted, path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("rerun"), "{err}");
    }
}
