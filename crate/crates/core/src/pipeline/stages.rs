//! One function per pipeline stage, from corpus synthesis to scoring.
//! Each stage loads what the previous stages declared, verifies provenance,
//! and writes its artifacts; all return human-readable summary lines.

use std::io::BufRead;
use std::path::Path;

use crate::corpus::{
    aggregate_dataset, build_corpus, clean, load_dataset, save_dataset, split_unique, FeatureMode,
    PairedDataset, Split,
};
use crate::mdlm::{
    ar_generate, generate, train_ar, train_pretrain, train_sft, GenerationConfig, TransformerLm,
    Vocabulary,
};
use crate::metrics::{evaluate, token_accuracy, tokenize};
use crate::rng::subseed;
use crate::rvq::{tokenize_dataset, train_tokenizer, utilization, TokenDataset, Tokenizer};

use super::{
    artifact_error, check_hash, dataset_error, read_json, write_json, ArtifactStamp, EvalArtifact,
    ModelKind, PipelineError, RunConfig, TrainLogArtifact, TranscriptLine, TranscriptsHeader,
    MODELS,
};

/// Synthesize the paired corpus and write it unsplit.
pub fn stage_synth(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let dataset = build_corpus(&config.corpus.synthesis(config.seed))?;
    let path = config.paths().corpus(Split::Unsplit);
    std::fs::create_dir_all(&path)?;
    save_dataset(&dataset, &path, &config.hash())
        .map_err(|e| dataset_error(&path, "could not write the corpus", e))?;
    Ok(vec![format!(
        "synthesized {} paired recordings ({} words of vocabulary) -> {}",
        dataset.len(),
        dataset.vocab.len(),
        path.display()
    )])
}

fn load_corpus_checked(
    config: &RunConfig,
    split: Split,
    hint: &str,
) -> Result<PairedDataset, PipelineError> {
    let path = config.paths().corpus(split);
    let (dataset, header) =
        load_dataset(&path).map_err(|e| dataset_error(&path, hint, e))?;
    check_hash(&header.config_hash, config, &path)?;
    Ok(dataset)
}

/// Drop out-of-range recordings, then split with no sentence overlap.
pub fn stage_clean_split(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let dataset = load_corpus_checked(config, Split::Unsplit, "run the synth stage first")?;
    let (cleaned, report) = clean(&dataset);
    let ratios = (
        config.corpus.train_ratio,
        config.corpus.val_ratio,
        config.corpus.test_ratio,
    );
    let (train, val, test) = split_unique(&cleaned, ratios, subseed(config.seed, "split"))?;
    let hash = config.hash();
    let mut lines = vec![format!(
        "cleaning kept {} of {} pairs ({} dropped)",
        report.kept,
        report.kept + report.dropped,
        report.dropped
    )];
    for part in [&train, &val, &test] {
        let path = config.paths().corpus(part.split);
        save_dataset(part, &path, &hash)
            .map_err(|e| dataset_error(&path, "could not write the split", e))?;
        lines.push(format!("{}: {} pairs -> {}", part.split, part.len(), path.display()));
    }
    Ok(lines)
}

/// The corpus as the current feature mode sees it: word-level recordings
/// pass through; sentence mode aggregates each recording to one frame.
fn mode_view(
    dataset: &PairedDataset,
    mode: FeatureMode,
) -> Result<PairedDataset, PipelineError> {
    match mode {
        FeatureMode::WordLevel => Ok(dataset.clone()),
        FeatureMode::SentenceLevel => Ok(aggregate_dataset(dataset)?),
    }
}

/// Train the residual-quantizing autoencoder on the training split.
pub fn stage_train_rvq(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let mode = config.mode;
    let train = mode_view(
        &load_corpus_checked(config, Split::Train, "run the clean-split stage first")?,
        mode,
    )?;
    let val = mode_view(
        &load_corpus_checked(config, Split::Val, "run the clean-split stage first")?,
        mode,
    )?;
    let rvq_cfg = config.rvq.train_config(
        config.corpus.frame_width(),
        subseed(config.seed, &format!("rvq/{mode}")),
    );
    let (tokenizer, logs) = train_tokenizer(&train, Some(&val), &rvq_cfg)?;

    let path = config.paths().tokenizer(mode);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    tokenizer.save(&path, &config.hash())?;
    write_json(
        &config.paths().train_log(mode, "rvq"),
        &TrainLogArtifact {
            stamp: ArtifactStamp::new("train-log", config),
            mode,
            entries: logs.clone(),
        },
    )?;

    let usage = utilization(&tokenizer, &train)?;
    let final_val = logs.last().and_then(|l| l.val_mse);
    let mut lines = vec![format!(
        "trained {}-stage tokenizer for {mode} mode over {} epochs -> {}",
        config.rvq.stages,
        logs.len(),
        path.display()
    )];
    if let Some(mse) = final_val {
        lines.push(format!("final validation reconstruction MSE {mse:.6}"));
    }
    lines.push(format!(
        "codebook utilization per stage: {}",
        usage
            .per_stage
            .iter()
            .map(|u| format!("{:.0}%", 100.0 * u))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    Ok(lines)
}

fn load_tokenizer_checked(config: &RunConfig) -> Result<Tokenizer, PipelineError> {
    let path = config.paths().tokenizer(config.mode);
    let (tokenizer, hash) = Tokenizer::load(&path)
        .map_err(|e| artifact_error(&path, "run the train-rvq stage first", e))?;
    check_hash(&hash, config, &path)?;
    Ok(tokenizer)
}

/// Tokenize all three splits with the trained tokenizer.
pub fn stage_tokenize(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let mode = config.mode;
    let tokenizer = load_tokenizer_checked(config)?;
    let hash = config.hash();
    let mut lines = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let data = mode_view(
            &load_corpus_checked(config, split, "run the clean-split stage first")?,
            mode,
        )?;
        let tokens = tokenize_dataset(&tokenizer, &data)?;
        let path = config.paths().tokens(mode, split);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        tokens.save(&path, &hash, config.seed)?;
        let positions: usize = tokens.pairs.iter().map(|p| p.tokens.t_len).sum();
        lines.push(format!(
            "{split}: {} sequences, {positions} token positions x {} stages -> {}",
            tokens.len(),
            tokens.codebook_sizes.len(),
            path.display()
        ));
    }
    Ok(lines)
}

fn load_tokens_checked(
    config: &RunConfig,
    split: Split,
) -> Result<TokenDataset, PipelineError> {
    let path = config.paths().tokens(config.mode, split);
    let (tokens, header) = TokenDataset::load(&path)
        .map_err(|e| artifact_error(&path, "run the tokenize stage first", e))?;
    check_hash(&header.config_hash, config, &path)?;
    Ok(tokens)
}

fn vocabulary_for(tokens: &TokenDataset) -> Result<Vocabulary, PipelineError> {
    Ok(Vocabulary::new(tokens.vocab.clone(), tokens.codebook_sizes.clone())?)
}

fn write_lm_log(
    config: &RunConfig,
    stage: &str,
    entries: &[crate::mdlm::LmEpochLog],
) -> Result<(), PipelineError> {
    write_json(
        &config.paths().train_log(config.mode, stage),
        &TrainLogArtifact {
            stamp: ArtifactStamp::new("train-log", config),
            mode: config.mode,
            entries: entries.to_vec(),
        },
    )
}

fn summarize_lm(
    stage: &str,
    entries: &[crate::mdlm::LmEpochLog],
    path: &Path,
) -> Vec<String> {
    let mut lines = vec![format!("{stage}: {} epochs -> {}", entries.len(), path.display())];
    if let Some(last) = entries.last() {
        lines.push(format!(
            "final train loss {:.4}, validation loss {:.4}",
            last.train_loss, last.val_loss
        ));
    }
    lines
}

/// Pre-train the diffusion model to restore masked signal tokens.
pub fn stage_pretrain(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let mode = config.mode;
    let train = load_tokens_checked(config, Split::Train)?;
    let val = load_tokens_checked(config, Split::Val)?;
    let vocab = vocabulary_for(&train)?;
    let mut model = TransformerLm::new(
        config.mdlm.transformer(),
        vocab,
        false,
        subseed(config.seed, &format!("model/{mode}")),
    )?;
    let lm_cfg = config.mdlm.train_config(
        config.mdlm.pretrain_epochs,
        subseed(config.seed, &format!("pretrain/{mode}")),
    );
    let logs = train_pretrain(&mut model, &train, &val, &lm_cfg)?;
    let path = config.paths().model(mode, "pretrain");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    model.save(&path, &config.hash(), "pretrain")?;
    write_lm_log(config, "pretrain", &logs)?;
    Ok(summarize_lm("pretrain", &logs, &path))
}

fn load_lm_checked(
    config: &RunConfig,
    phase: &str,
    hint: &str,
) -> Result<TransformerLm, PipelineError> {
    let path = config.paths().model(config.mode, phase);
    let (model, hash, _) =
        TransformerLm::load(&path, Some(phase)).map_err(|e| artifact_error(&path, hint, e))?;
    check_hash(&hash, config, &path)?;
    Ok(model)
}

/// Fine-tune the pre-trained model to restore text conditioned on signal
/// tokens.
pub fn stage_sft(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let mode = config.mode;
    let train = load_tokens_checked(config, Split::Train)?;
    let val = load_tokens_checked(config, Split::Val)?;
    let mut model = load_lm_checked(config, "pretrain", "run the pretrain stage first")?;
    let lm_cfg = config.mdlm.train_config(
        config.mdlm.sft_epochs,
        subseed(config.seed, &format!("sft/{mode}")),
    );
    let logs = train_sft(&mut model, &train, &val, config.text_canvas(), &lm_cfg)?;
    let path = config.paths().model(mode, "sft");
    model.save(&path, &config.hash(), "sft")?;
    write_lm_log(config, "sft", &logs)?;
    Ok(summarize_lm("sft", &logs, &path))
}

/// Train the matched-parameter autoregressive baseline from scratch.
pub fn stage_train_ar(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let mode = config.mode;
    let train = load_tokens_checked(config, Split::Train)?;
    let val = load_tokens_checked(config, Split::Val)?;
    let vocab = vocabulary_for(&train)?;
    let mut model = TransformerLm::new(
        config.mdlm.transformer(),
        vocab,
        true,
        subseed(config.seed, &format!("model-ar/{mode}")),
    )?;
    let lm_cfg = config
        .baseline
        .train_config(subseed(config.seed, &format!("ar/{mode}")));
    let logs = train_ar(&mut model, &train, &val, &lm_cfg)?;
    let path = config.paths().model(mode, "ar");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    model.save(&path, &config.hash(), "ar")?;
    write_lm_log(config, "ar", &logs)?;
    Ok(summarize_lm("ar", &logs, &path))
}

fn write_transcripts(
    config: &RunConfig,
    model: ModelKind,
    rows: &[TranscriptLine],
) -> Result<(), PipelineError> {
    let path = config.paths().transcripts(config.mode, model);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let header = TranscriptsHeader {
        stamp: ArtifactStamp::new("transcripts", config),
        mode: config.mode,
        model,
        count: rows.len(),
    };
    let mut text = serde_json::to_string(&header)
        .map_err(|e| PipelineError::Config(format!("serialize transcripts header: {e}")))?;
    text.push('\n');
    for row in rows {
        text.push_str(
            &serde_json::to_string(row)
                .map_err(|e| PipelineError::Config(format!("serialize transcript: {e}")))?,
        );
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Decode every held-out recording with both models.
pub fn stage_generate(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let mode = config.mode;
    let sft_model = load_lm_checked(config, "sft", "run the sft stage first")?;
    let ar_model = load_lm_checked(config, "ar", "run the train-ar stage first")?;
    let test = load_tokens_checked(config, Split::Test)?;
    let canvas = config.text_canvas();
    let gen_cfg = GenerationConfig {
        steps: config.eval.steps,
        length: canvas,
        seed: subseed(config.seed, &format!("generate/{mode}")),
    };

    let mut diffusion_rows = Vec::with_capacity(test.len());
    let mut baseline_rows = Vec::with_capacity(test.len());
    for pair in &test.pairs {
        let prompt = sft_model.vocab.prompt_rows(&pair.tokens)?;
        let ids = generate(&sft_model, &prompt, &gen_cfg)?;
        diffusion_rows.push(TranscriptLine {
            sentence_id: pair.text.sentence_id,
            reference: pair.text.raw_text.clone(),
            hypothesis: sft_model.vocab.render(&ids),
        });
        let ar_ids = ar_generate(&ar_model, &prompt, canvas)?;
        baseline_rows.push(TranscriptLine {
            sentence_id: pair.text.sentence_id,
            reference: pair.text.raw_text.clone(),
            hypothesis: ar_model.vocab.render(&ar_ids),
        });
    }
    write_transcripts(config, ModelKind::Diffusion, &diffusion_rows)?;
    write_transcripts(config, ModelKind::Baseline, &baseline_rows)?;
    Ok(vec![format!(
        "decoded {} held-out recordings with both models ({} denoising steps, canvas {canvas})",
        test.len(),
        config.eval.steps
    )])
}

fn read_transcripts(
    config: &RunConfig,
    model: ModelKind,
) -> Result<(TranscriptsHeader, Vec<TranscriptLine>), PipelineError> {
    let path = config.paths().transcripts(config.mode, model);
    let file = match std::fs::File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(PipelineError::MissingArtifact {
                path,
                hint: "run the generate stage first".into(),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let mut lines = std::io::BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| PipelineError::Config(format!("{} is empty", path.display())))??;
    let header: TranscriptsHeader = serde_json::from_str(&first)
        .map_err(|e| PipelineError::Config(format!("{} header: {e}", path.display())))?;
    header.stamp.check("transcripts", config, &path)?;
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| {
            PipelineError::Config(format!("{} transcript line: {e}", path.display()))
        })?);
    }
    if rows.len() != header.count {
        return Err(PipelineError::Config(format!(
            "{} holds {} transcripts but its header declares {}",
            path.display(),
            rows.len(),
            header.count
        )));
    }
    Ok((header, rows))
}

/// Score both models' transcripts for the current feature mode.
pub fn stage_evaluate(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let mut lines = Vec::new();
    for model in MODELS {
        let (_, rows) = read_transcripts(config, model)?;
        let pairs: Vec<(String, String)> = rows
            .iter()
            .map(|r| (r.reference.clone(), r.hypothesis.clone()))
            .collect();
        let report = evaluate(&pairs, config.eval.keep_transcripts)?;
        let refs: Vec<Vec<String>> = pairs.iter().map(|(r, _)| tokenize(r)).collect();
        let hyps: Vec<Vec<String>> = pairs.iter().map(|(_, h)| tokenize(h)).collect();
        let accuracy = token_accuracy(&refs, &hyps);
        let artifact = EvalArtifact {
            stamp: ArtifactStamp::new("eval", config),
            mode: config.mode,
            model,
            token_accuracy: accuracy,
            report,
        };
        let path = config.paths().eval(config.mode, model);
        write_json(&path, &artifact)?;
        lines.push(format!(
            "{model}: BLEU-1 {:.2}, ROUGE-1 F {:.2}, WER {:.2}, token accuracy {:.1}% -> {}",
            artifact.report.bleu1,
            artifact.report.rouge1_f,
            artifact.report.wer,
            100.0 * accuracy,
            path.display()
        ));
    }
    Ok(lines)
}

/// Load one evaluation artifact if it exists; `None` when missing.
pub(crate) fn try_read_eval(
    config: &RunConfig,
    mode: FeatureMode,
    model: ModelKind,
) -> Result<Option<EvalArtifact>, PipelineError> {
    let path = config.paths().eval(mode, model);
    if !path.exists() {
        return Ok(None);
    }
    let artifact: EvalArtifact = read_json(&path, "run the evaluate stage first")?;
    artifact.stamp.check("eval", config, &path)?;
    if artifact.mode != mode || artifact.model != model {
        return Err(PipelineError::Config(format!(
            "{} is labeled {}/{} but sits in the {}/{} slot",
            path.display(),
            artifact.mode,
            artifact.model,
            mode,
            model
        )));
    }
    Ok(Some(artifact))
}
