//! Final report: every scored (mode, model) cell side by side, as JSON with
//! a stable schema and as an aligned text table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::FeatureMode;
use crate::metrics::EvalReport;

use super::{
    write_json, ArtifactStamp, EvalArtifact, ModelKind, PipelineError, RunConfig, MODELS,
};

use super::stages::try_read_eval;

/// One (mode, model) cell of the final report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportCell {
    pub token_accuracy: f64,
    pub metrics: EvalReport,
}

/// The machine-readable final report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportArtifact {
    #[serde(flatten)]
    pub stamp: ArtifactStamp,
    /// `modes["word"]["diffusion"]` and friends; absent cells were not
    /// evaluated.
    pub modes: BTreeMap<String, BTreeMap<String, ReportCell>>,
}

const MODES: [FeatureMode; 2] = [FeatureMode::WordLevel, FeatureMode::SentenceLevel];

/// Assemble `report.json` and `report.txt` from every evaluation artifact
/// present. At least one is required; each is verified against the current
/// configuration, so cells from different configs or seeds can never mix.
pub fn stage_report(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let mut cells: Vec<(FeatureMode, ModelKind, Option<EvalArtifact>)> = Vec::new();
    for mode in MODES {
        for model in MODELS {
            cells.push((mode, model, try_read_eval(config, mode, model)?));
        }
    }
    if cells.iter().all(|(_, _, c)| c.is_none()) {
        return Err(PipelineError::MissingArtifact {
            path: config.paths().eval(config.mode, ModelKind::Diffusion),
            hint: "run the evaluate stage first".into(),
        });
    }

    let mut modes: BTreeMap<String, BTreeMap<String, ReportCell>> = BTreeMap::new();
    for (mode, model, artifact) in &cells {
        if let Some(artifact) = artifact {
            let mut metrics = artifact.report.clone();
            metrics.transcripts = None;
            modes.entry(mode.to_string()).or_default().insert(
                model.to_string(),
                ReportCell { token_accuracy: artifact.token_accuracy, metrics },
            );
        }
    }
    let artifact = ReportArtifact { stamp: ArtifactStamp::new("report", config), modes };
    let json_path = config.paths().report_json();
    write_json(&json_path, &artifact)?;

    let text = render_table(config, &cells);
    let txt_path = config.paths().report_txt();
    std::fs::write(&txt_path, &text)?;

    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines.push(format!("wrote {} and {}", json_path.display(), txt_path.display()));
    Ok(lines)
}

fn render_table(
    config: &RunConfig,
    cells: &[(FeatureMode, ModelKind, Option<EvalArtifact>)],
) -> String {
    let hash = config.hash();
    let mut out = String::new();
    out.push_str(&format!(
        "signal-to-text results (config {}, seed {})\n\n",
        &hash[..12],
        config.seed
    ));

    let headers: Vec<String> = cells
        .iter()
        .map(|(mode, model, _)| format!("{mode}/{model}"))
        .collect();
    let widths: Vec<usize> = headers.iter().map(|h| h.len().max(9)).collect();

    const LABEL_WIDTH: usize = 18;
    out.push_str(&format!("{:<LABEL_WIDTH$}", "metric"));
    for (header, width) in headers.iter().zip(&widths) {
        out.push_str(&format!("  {header:>width$}"));
    }
    out.push('\n');

    type Extract = fn(&EvalArtifact) -> String;
    let rows: &[(&str, Extract)] = &[
        ("BLEU-1", |a| format!("{:.2}", a.report.bleu1)),
        ("BLEU-2", |a| format!("{:.2}", a.report.bleu2)),
        ("BLEU-3", |a| format!("{:.2}", a.report.bleu3)),
        ("BLEU-4", |a| format!("{:.2}", a.report.bleu4)),
        ("ROUGE-1 P", |a| format!("{:.2}", a.report.rouge1_p)),
        ("ROUGE-1 R", |a| format!("{:.2}", a.report.rouge1_r)),
        ("ROUGE-1 F", |a| format!("{:.2}", a.report.rouge1_f)),
        ("WER", |a| format!("{:.2}", a.report.wer)),
        ("token accuracy %", |a| format!("{:.1}", 100.0 * a.token_accuracy)),
        ("samples", |a| format!("{}", a.report.sample_count)),
    ];
    for (label, extract) in rows {
        out.push_str(&format!("{label:<LABEL_WIDTH$}"));
        for ((_, _, artifact), width) in cells.iter().zip(&widths) {
            let value = artifact.as_ref().map_or_else(|| "-".to_string(), extract);
            out.push_str(&format!("  {value:>width$}"));
        }
        out.push('\n');
    }
    out
}
