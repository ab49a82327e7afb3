//! Corpus synthesis: frozen word latents, subject profiles, and rendering of
//! sentences into `[0, 1]`-normalized feature arrays.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashSet;

use crate::rng::{rng_from_seed, subseed, SeedRng};

use super::{
    CorpusError, EegRecording, FeatureMode, PairedDataset, Split, SubjectProfile, SynthesisConfig,
    TextSample,
};

/// Gain applied to the orthonormal mixing columns so the sigmoid inputs spread
/// over roughly `[-3, 3]` and the features use the full `[0, 1]` range.
const MIXING_GAIN: f64 = 3.0;
const BIAS_STD: f64 = 0.3;

/// The frozen per-word latent embeddings, drawn once per corpus seed from a
/// unit Gaussian. Distinct words get distinct latents almost surely, which is
/// what makes the text-to-signal map injective in expectation.
#[derive(Debug, Clone)]
pub struct WordLatents {
    pub width: usize,
    values: Vec<f64>, // vocab_size × width
}

impl WordLatents {
    pub fn generate(seed: u64, vocab_size: usize, width: usize) -> Self {
        let mut rng = rng_from_seed(subseed(seed, "word-latents"));
        let values = (0..vocab_size * width)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { width, values }
    }

    pub fn vocab_size(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn embed(&self, word: usize) -> &[f64] {
        &self.values[word * self.width..(word + 1) * self.width]
    }
}

impl SubjectProfile {
    /// Draw a profile whose mixing matrix has orthonormal (then gain-scaled)
    /// columns, so full column rank holds by construction.
    pub fn generate(subject_id: u32, seed: u64, frame_width: usize, latent_width: usize) -> Self {
        assert!(
            latent_width <= frame_width,
            "latent width must not exceed channels*bands"
        );
        let mut rng = rng_from_seed(subseed(seed, &format!("subject/{subject_id}")));
        // Gaussian matrix, columns orthonormalized by modified Gram-Schmidt.
        let mut cols: Vec<Vec<f64>> = (0..latent_width)
            .map(|_| {
                (0..frame_width)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        for j in 0..latent_width {
            for i in 0..j {
                let proj = crate::linalg::dot(&cols[j], &cols[i]);
                let prev = cols[i].clone();
                crate::linalg::axpy(&mut cols[j], -proj, &prev);
            }
            let norm = crate::linalg::norm2(&cols[j]);
            for v in cols[j].iter_mut() {
                *v /= norm;
            }
        }
        let mut mixing = vec![0.0; frame_width * latent_width];
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                mixing[i * latent_width + j] = MIXING_GAIN * v;
            }
        }
        let bias = (0..frame_width)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                BIAS_STD * z
            })
            .collect();
        Self {
            subject_id,
            mixing,
            bias,
            latent_width,
        }
    }

    pub fn frame_width(&self) -> usize {
        self.bias.len()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Render one sentence into a word-level recording.
///
/// Per word `w` the feature frame is
/// `clamp01(sigmoid(mixing · embed(w) + bias + ε))` with `ε ~ N(0, σ²)` iid,
/// reshaped to `(channels × bands)`. Deterministic given the rng seed; with
/// `noise_sigma = 0` it is a pure function of `(text, subject)`.
pub fn synth_pair(
    text: &TextSample,
    subject: &SubjectProfile,
    latents: &WordLatents,
    channels: usize,
    bands: usize,
    noise_sigma: f64,
    rng: &mut SeedRng,
) -> Result<EegRecording, CorpusError> {
    if text.words.is_empty() {
        return Err(CorpusError::EmptySentence);
    }
    let fw = channels * bands;
    assert_eq!(subject.frame_width(), fw, "subject/frame width mismatch");
    let mut features = Vec::with_capacity(text.words.len() * fw);
    for &word in &text.words {
        if word >= latents.vocab_size() {
            return Err(CorpusError::WordOutOfRange {
                id: word,
                vocab: latents.vocab_size(),
            });
        }
        let embed = latents.embed(word);
        for i in 0..fw {
            let row = &subject.mixing[i * subject.latent_width..(i + 1) * subject.latent_width];
            let mut u = crate::linalg::dot(row, embed) + subject.bias[i];
            if noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                u += noise_sigma * z;
            }
            let v = sigmoid(u).clamp(0.0, 1.0);
            features.push(v as f32);
        }
    }
    Ok(EegRecording {
        sentence_id: text.sentence_id,
        subject_id: subject.subject_id,
        mode: FeatureMode::WordLevel,
        words: text.words.len(),
        channels,
        bands,
        features,
    })
}

const CONSONANTS: &[u8] = b"bdfghjklmnprstvwz";
const VOWELS: &[u8] = b"aeiou";

/// Deterministic pronounceable vocabulary: two-syllable words drawn without
/// repetition from a seeded shuffle of the full syllable grid.
pub(crate) fn generate_vocab(seed: u64, vocab_size: usize) -> Result<Vec<String>, CorpusError> {
    let syllables: Vec<String> = CONSONANTS
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{}{}", c as char, v as char)))
        .collect();
    let two = syllables.len() * syllables.len();
    if vocab_size > two {
        return Err(CorpusError::InvalidConfig(format!(
            "vocab_size {vocab_size} exceeds the {two} distinct generated words"
        )));
    }
    let mut order: Vec<usize> = (0..two).collect();
    let mut rng = rng_from_seed(subseed(seed, "vocab"));
    order.shuffle(&mut rng);
    Ok(order[..vocab_size]
        .iter()
        .map(|&i| format!("{}{}", syllables[i / syllables.len()], syllables[i % syllables.len()]))
        .collect())
}

/// Build a full unsplit corpus: unique sentences, each rendered through a
/// uniformly chosen subject.
pub fn build_corpus(config: &SynthesisConfig) -> Result<PairedDataset, CorpusError> {
    validate(config)?;
    let vocab = generate_vocab(config.seed, config.vocab_size)?;
    let latents = WordLatents::generate(config.seed, config.vocab_size, config.latent_width);
    let subjects: Vec<SubjectProfile> = (0..config.subject_count)
        .map(|s| {
            SubjectProfile::generate(s as u32, config.seed, config.frame_width(), config.latent_width)
        })
        .collect();

    // Unique-sentence sampling with a bounded retry budget; collisions on the
    // rendered text are resampled.
    let mut sentence_rng = rng_from_seed(subseed(config.seed, "sentences"));
    let mut seen: HashSet<String> = HashSet::new();
    let mut texts: Vec<TextSample> = Vec::with_capacity(config.sentence_count);
    let budget = 100 + 60 * config.sentence_count;
    let mut attempts = 0;
    while texts.len() < config.sentence_count {
        if attempts >= budget {
            return Err(CorpusError::UniqueSentenceBudget {
                wanted: config.sentence_count,
                found: texts.len(),
            });
        }
        attempts += 1;
        let len = sentence_rng.gen_range(config.len_min..=config.len_max);
        let words: Vec<usize> = (0..len)
            .map(|_| sentence_rng.gen_range(0..config.vocab_size))
            .collect();
        let raw_text = words
            .iter()
            .map(|&w| vocab[w].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if !seen.insert(raw_text.clone()) {
            continue;
        }
        texts.push(TextSample {
            sentence_id: texts.len() as u64,
            words,
            raw_text,
        });
    }

    let mut assign_rng = rng_from_seed(subseed(config.seed, "assign"));
    let mut noise_rng = rng_from_seed(subseed(config.seed, "noise"));
    let mut pairs = Vec::with_capacity(texts.len());
    for text in texts {
        let subject = &subjects[assign_rng.gen_range(0..subjects.len())];
        let rec = synth_pair(
            &text,
            subject,
            &latents,
            config.channels,
            config.bands,
            config.noise_sigma,
            &mut noise_rng,
        )?;
        pairs.push((rec, text));
    }
    Ok(PairedDataset {
        pairs,
        split: Split::Unsplit,
        synthesis_seed: config.seed,
        vocab,
    })
}

fn validate(config: &SynthesisConfig) -> Result<(), CorpusError> {
    if config.vocab_size < 2 {
        return Err(CorpusError::InvalidConfig("vocab_size must be >= 2".into()));
    }
    if config.sentence_count == 0 {
        return Err(CorpusError::InvalidConfig("sentence_count must be > 0".into()));
    }
    if config.len_min == 0 || config.len_min > config.len_max {
        return Err(CorpusError::InvalidConfig(format!(
            "bad sentence length range {}..={}",
            config.len_min, config.len_max
        )));
    }
    if config.subject_count == 0 {
        return Err(CorpusError::InvalidConfig("subject_count must be > 0".into()));
    }
    if config.channels == 0 || config.bands == 0 {
        return Err(CorpusError::InvalidConfig("channels and bands must be > 0".into()));
    }
    if config.latent_width == 0 || config.latent_width > config.frame_width() {
        return Err(CorpusError::InvalidConfig(
            "latent_width must be in 1..=channels*bands".into(),
        ));
    }
    if config.noise_sigma < 0.0 || !config.noise_sigma.is_finite() {
        return Err(CorpusError::InvalidConfig("noise_sigma must be finite and >= 0".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_text() -> TextSample {
        TextSample {
            sentence_id: 0,
            words: vec![0, 1, 2],
            raw_text: "a b c".into(),
        }
    }

    #[test]
    fn zero_noise_is_bit_deterministic() {
        let latents = WordLatents::generate(9, 5, 4);
        let subject = SubjectProfile::generate(0, 9, 8, 4);
        let text = tiny_text();
        let mut r1 = rng_from_seed(1);
        let mut r2 = rng_from_seed(1);
        let a = synth_pair(&text, &subject, &latents, 4, 2, 0.0, &mut r1).unwrap();
        let b = synth_pair(&text, &subject, &latents, 4, 2, 0.0, &mut r2).unwrap();
        assert_eq!(a, b);
        // also a pure function of (text, subject): rng state does not matter
        let mut r3 = rng_from_seed(777);
        let c = synth_pair(&text, &subject, &latents, 4, 2, 0.0, &mut r3).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let latents = WordLatents::generate(3, 6, 4);
        let subject = SubjectProfile::generate(1, 3, 12, 4);
        let text = TextSample {
            sentence_id: 1,
            words: vec![5, 0, 3, 3, 1],
            raw_text: "x".into(),
        };
        let mut rng = rng_from_seed(2);
        let rec = synth_pair(&text, &subject, &latents, 4, 3, 2.0, &mut rng).unwrap();
        assert!(rec.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn different_subjects_give_different_recordings() {
        let latents = WordLatents::generate(11, 5, 4);
        let s0 = SubjectProfile::generate(0, 11, 8, 4);
        let s1 = SubjectProfile::generate(1, 11, 8, 4);
        let text = tiny_text();
        let mut rng = rng_from_seed(0);
        let a = synth_pair(&text, &s0, &latents, 4, 2, 0.0, &mut rng).unwrap();
        let b = synth_pair(&text, &s1, &latents, 4, 2, 0.0, &mut rng).unwrap();
        let max_diff = a
            .features
            .iter()
            .zip(&b.features)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff > 1e-6, "subjects should imprint on the signal");
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let latents = WordLatents::generate(0, 2, 2);
        let subject = SubjectProfile::generate(0, 0, 4, 2);
        let text = TextSample {
            sentence_id: 0,
            words: vec![],
            raw_text: String::new(),
        };
        let mut rng = rng_from_seed(0);
        assert!(matches!(
            synth_pair(&text, &subject, &latents, 2, 2, 0.0, &mut rng),
            Err(CorpusError::EmptySentence)
        ));
    }

    #[test]
    fn mixing_has_orthogonal_columns() {
        let s = SubjectProfile::generate(0, 5, 10, 4);
        // columns j1 != j2 orthogonal; each column norm = gain
        for j1 in 0..4 {
            for j2 in 0..4 {
                let mut acc = 0.0;
                for i in 0..10 {
                    acc += s.mixing[i * 4 + j1] * s.mixing[i * 4 + j2];
                }
                let expect = if j1 == j2 { MIXING_GAIN * MIXING_GAIN } else { 0.0 };
                assert!((acc - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn build_corpus_counts_and_determinism() {
        let config = SynthesisConfig {
            vocab_size: 12,
            sentence_count: 100,
            len_min: 3,
            len_max: 6,
            subject_count: 2,
            noise_sigma: 0.05,
            channels: 4,
            bands: 2,
            latent_width: 4,
            seed: 42,
        };
        let a = build_corpus(&config).unwrap();
        assert_eq!(a.len(), 100);
        let texts: HashSet<&str> = a.pairs.iter().map(|(_, t)| t.raw_text.as_str()).collect();
        assert_eq!(texts.len(), 100, "raw texts must be distinct");
        let b = build_corpus(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn build_fails_when_unique_sentences_run_out() {
        // 2^3 = 8 possible sentences; asking for 9 must exhaust the budget.
        let config = SynthesisConfig {
            vocab_size: 2,
            sentence_count: 9,
            len_min: 3,
            len_max: 3,
            subject_count: 1,
            noise_sigma: 0.0,
            channels: 2,
            bands: 2,
            latent_width: 2,
            seed: 1,
        };
        match build_corpus(&config) {
            Err(CorpusError::UniqueSentenceBudget { wanted: 9, found }) => {
                assert_eq!(found, 8, "all 8 distinct sentences should be found first")
            }
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
        // ... while all 8 are reachable.
        let ok = build_corpus(&SynthesisConfig {
            sentence_count: 8,
            ..config
        })
        .unwrap();
        assert_eq!(ok.len(), 8);
    }

    #[test]
    fn vocab_is_distinct_and_stable() {
        let v1 = generate_vocab(3, 50).unwrap();
        let v2 = generate_vocab(3, 50).unwrap();
        assert_eq!(v1, v2);
        let set: HashSet<&String> = v1.iter().collect();
        assert_eq!(set.len(), 50);
    }
}
