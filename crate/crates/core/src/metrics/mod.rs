//! Corpus-level text generation metrics: per-order BLEU with brevity penalty,
//! ROUGE-1 precision/recall/F, and word error rate.
//!
//! All operations take pre-tokenized token lists; [`tokenize`] is the one
//! canonical tokenizer and must be applied identically to references and
//! hypotheses, because its choices materially shift scores.

mod bleu;
mod rouge;
mod wer;

pub use bleu::bleu_n;
pub use rouge::rouge1;
pub use wer::{edit_distance, wer};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("got {refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("n-gram order {0} outside 1..=4")]
    BadOrder(usize),
    #[error("reference {index} is empty")]
    EmptyReference { index: usize },
}

/// Lowercase and split on whitespace, with punctuation separated into
/// tokens of its own (`"Dogs, run!"` → `["dogs", ",", "run", "!"]`).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Positional token accuracy: matched positions over total reference tokens.
pub fn token_accuracy(references: &[Vec<String>], hypotheses: &[Vec<String>]) -> f64 {
    let mut matched = 0usize;
    let mut total = 0usize;
    for (r, h) in references.iter().zip(hypotheses) {
        total += r.len();
        matched += r.iter().zip(h).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

/// Corpus-level evaluation results. All BLEU/ROUGE values are percentages in
/// `[0, 100]`; WER is a percentage that may exceed 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge1_p: f64,
    pub rouge1_r: f64,
    pub rouge1_f: f64,
    pub wer: f64,
    pub sample_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcripts: Option<Vec<(String, String)>>,
}

impl EvalReport {
    pub fn bleu(&self, n: usize) -> f64 {
        [self.bleu1, self.bleu2, self.bleu3, self.bleu4][n - 1]
    }
}

/// Assemble every metric over `(reference, hypothesis)` string pairs.
pub fn evaluate(
    pairs: &[(String, String)],
    keep_transcripts: bool,
) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let refs: Vec<Vec<String>> = pairs.iter().map(|(r, _)| tokenize(r)).collect();
    let hyps: Vec<Vec<String>> = pairs.iter().map(|(_, h)| tokenize(h)).collect();

    let mut bleu = [0.0; 4];
    for (i, b) in bleu.iter_mut().enumerate() {
        *b = bleu_n(&refs, &hyps, i + 1)?;
    }

    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for (r, h) in refs.iter().zip(&hyps) {
        let (p, r1, _f) = rouge1(r, h);
        p_sum += p;
        r_sum += r1;
    }
    let n = pairs.len() as f64;
    let (rouge_p, rouge_r) = (p_sum / n, r_sum / n);
    let rouge_f = if rouge_p + rouge_r > 0.0 {
        2.0 * rouge_p * rouge_r / (rouge_p + rouge_r)
    } else {
        0.0
    };

    let mut distance = 0usize;
    let mut ref_len = 0usize;
    for (i, (r, h)) in refs.iter().zip(&hyps).enumerate() {
        if r.is_empty() {
            return Err(MetricsError::EmptyReference { index: i });
        }
        distance += edit_distance(r, h);
        ref_len += r.len();
    }

    Ok(EvalReport {
        bleu1: bleu[0],
        bleu2: bleu[1],
        bleu3: bleu[2],
        bleu4: bleu[3],
        rouge1_p: rouge_p,
        rouge1_r: rouge_r,
        rouge1_f: rouge_f,
        wer: 100.0 * distance as f64 / ref_len as f64,
        sample_count: pairs.len(),
        transcripts: keep_transcripts.then(|| pairs.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("The cat, sat."),
            vec!["the", "cat", ",", "sat", "."]
        );
        assert_eq!(tokenize("  spaced   out  "), vec!["spaced", "out"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn identical_corpus_is_perfect() {
        let pairs: Vec<(String, String)> = vec![
            ("the cat sat".into(), "the cat sat".into()),
            ("a b c d".into(), "a b c d".into()),
        ];
        let report = evaluate(&pairs, false).unwrap();
        for n in 1..=4 {
            assert!((report.bleu(n) - 100.0).abs() < 1e-9);
        }
        assert!((report.rouge1_p - 100.0).abs() < 1e-9);
        assert!((report.rouge1_r - 100.0).abs() < 1e-9);
        assert!((report.rouge1_f - 100.0).abs() < 1e-9);
        assert_eq!(report.wer, 0.0);
        assert_eq!(report.sample_count, 2);
    }

    #[test]
    fn report_f_is_harmonic_mean_of_reported_p_and_r() {
        let pairs: Vec<(String, String)> = vec![
            ("the cat sat".into(), "the cat".into()),
            ("a b".into(), "a b c d".into()),
            ("x y z".into(), "q r".into()),
        ];
        let report = evaluate(&pairs, false).unwrap();
        let expect = 2.0 * report.rouge1_p * report.rouge1_r / (report.rouge1_p + report.rouge1_r);
        assert!((report.rouge1_f - expect).abs() < 1e-9);
    }

    #[test]
    fn evaluate_matches_standalone_metric_calls() {
        let mut rng: u64 = 12345;
        let mut next = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 33) as usize
        };
        let vocab = ["a", "b", "c", "d", "e", "f", "g", "h"];
        let mut pairs = Vec::new();
        for _ in 0..50 {
            let mk = |next: &mut dyn FnMut() -> usize| {
                let len = 1 + next() % 8;
                (0..len).map(|_| vocab[next() % vocab.len()]).collect::<Vec<_>>().join(" ")
            };
            pairs.push((mk(&mut next), mk(&mut next)));
        }
        let report = evaluate(&pairs, false).unwrap();
        let refs: Vec<Vec<String>> = pairs.iter().map(|(r, _)| tokenize(r)).collect();
        let hyps: Vec<Vec<String>> = pairs.iter().map(|(_, h)| tokenize(h)).collect();
        for n in 1..=4 {
            assert_eq!(report.bleu(n), bleu_n(&refs, &hyps, n).unwrap());
        }
        let mut dist = 0;
        let mut total = 0;
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        for (r, h) in refs.iter().zip(&hyps) {
            dist += edit_distance(r, h);
            total += r.len();
            let (p, r1, _) = rouge1(r, h);
            p_sum += p;
            r_sum += r1;
        }
        assert_eq!(report.wer, 100.0 * dist as f64 / total as f64);
        assert!((report.rouge1_p - p_sum / 50.0).abs() < 1e-12);
        assert!((report.rouge1_r - r_sum / 50.0).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_and_empty_reference_are_errors() {
        assert_eq!(evaluate(&[], false), Err(MetricsError::EmptyCorpus));
        let pairs = vec![("".to_string(), "a".to_string())];
        assert_eq!(
            evaluate(&pairs, false),
            Err(MetricsError::EmptyReference { index: 0 })
        );
    }

    #[test]
    fn transcripts_are_embedded_on_request() {
        let pairs = vec![("a b".to_string(), "a".to_string())];
        let with = evaluate(&pairs, true).unwrap();
        assert_eq!(with.transcripts.as_deref(), Some(&pairs[..]));
        let without = evaluate(&pairs, false).unwrap();
        assert!(without.transcripts.is_none());
    }

    #[test]
    fn token_accuracy_counts_positions() {
        let refs = vec![vec!["a".to_string(), "b".into(), "c".into()]];
        let hyps = vec![vec!["a".to_string(), "x".into(), "c".into(), "d".into()]];
        assert!((token_accuracy(&refs, &hyps) - 2.0 / 3.0).abs() < 1e-12);
    }
}
