//! Command-line driver for the signal-to-text pipeline.
//!
//! One binary, one subcommand per stage. The effective configuration is
//! defaults ← `--config` file ← `--set key=value` overrides ← dedicated
//! flags; every stage validates upstream artifacts against it. Exit codes:
//! 0 success, 2 configuration error, 3 missing artifact, 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use neurotext_core::corpus::FeatureMode;
use neurotext_core::pipeline::{
    load_run_config, stage_clean_split, stage_evaluate, stage_generate, stage_pretrain,
    stage_report, stage_sft, stage_synth, stage_tokenize, stage_train_ar, stage_train_rvq,
    PipelineError, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "neurotext",
    version,
    about = "Desk-scale signal-to-text pipeline: synthesize a paired corpus, tokenize \
             recordings with a residual-quantizing autoencoder, train diffusion and \
             autoregressive decoders, and score them side by side"
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory (default: out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override one config key, e.g. --set corpus.noise_sigma=0.05.
    /// Repeatable; applied after the file, before the dedicated flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Feature mode: word | sentence.
    #[arg(long, global = true, value_name = "MODE")]
    mode: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the paired (signal, text) corpus.
    Synth,
    /// Drop out-of-range recordings and split train/val/test with no
    /// sentence shared across splits.
    CleanSplit,
    /// Train the residual-quantizing signal tokenizer.
    TrainRvq,
    /// Tokenize all three splits with the trained tokenizer.
    Tokenize,
    /// Pre-train the diffusion model to restore masked signal tokens.
    Pretrain,
    /// Fine-tune text restoration conditioned on signal tokens.
    Sft,
    /// Train the matched-parameter autoregressive baseline.
    TrainAr,
    /// Decode every held-out recording with both models.
    Generate,
    /// Score transcripts: BLEU-1..4, ROUGE-1, WER, token accuracy.
    Evaluate,
    /// Render every evaluation side by side (both feature modes).
    Report,
    /// Run all stages in order; both feature modes unless --mode is given.
    Run,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn emit(tag: &str, lines: &[String]) {
    for line in lines {
        println!("[{tag}] {line}");
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mode = cli
        .mode
        .as_deref()
        .map(|m| m.parse::<FeatureMode>().map_err(PipelineError::Config))
        .transpose()?;
    let config = load_run_config(cli.config.as_deref(), &cli.set, cli.seed, cli.out, mode)?;
    match cli.command {
        Command::Synth => emit("synth", &stage_synth(&config)?),
        Command::CleanSplit => emit("clean-split", &stage_clean_split(&config)?),
        Command::TrainRvq => emit("train-rvq", &stage_train_rvq(&config)?),
        Command::Tokenize => emit("tokenize", &stage_tokenize(&config)?),
        Command::Pretrain => emit("pretrain", &stage_pretrain(&config)?),
        Command::Sft => emit("sft", &stage_sft(&config)?),
        Command::TrainAr => emit("train-ar", &stage_train_ar(&config)?),
        Command::Generate => emit("generate", &stage_generate(&config)?),
        Command::Evaluate => emit("evaluate", &stage_evaluate(&config)?),
        Command::Report => emit("report", &stage_report(&config)?),
        Command::Run => run_all(&config, mode.is_some())?,
    }
    Ok(())
}

/// Every stage in dependency order. With `--mode` the per-mode stages run
/// for that mode only; otherwise both modes run so the report has every
/// column.
fn run_all(config: &RunConfig, single_mode: bool) -> Result<(), PipelineError> {
    emit("synth", &stage_synth(config)?);
    emit("clean-split", &stage_clean_split(config)?);
    let modes: &[FeatureMode] = if single_mode {
        &[config.mode]
    } else {
        &[FeatureMode::WordLevel, FeatureMode::SentenceLevel]
    };
    for &mode in modes {
        let mut per_mode = config.clone();
        per_mode.mode = mode;
        emit(&format!("{mode}/train-rvq"), &stage_train_rvq(&per_mode)?);
        emit(&format!("{mode}/tokenize"), &stage_tokenize(&per_mode)?);
        emit(&format!("{mode}/pretrain"), &stage_pretrain(&per_mode)?);
        emit(&format!("{mode}/sft"), &stage_sft(&per_mode)?);
        emit(&format!("{mode}/train-ar"), &stage_train_ar(&per_mode)?);
        emit(&format!("{mode}/generate"), &stage_generate(&per_mode)?);
        emit(&format!("{mode}/evaluate"), &stage_evaluate(&per_mode)?);
    }
    emit("report", &stage_report(config)?);
    Ok(())
}
