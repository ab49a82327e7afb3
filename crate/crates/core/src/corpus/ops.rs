//! Dataset-level operations: cleaning, unique-sentence splitting, and
//! sentence-level aggregation.

use rand::seq::SliceRandom;

use crate::rng::rng_from_seed;

use super::{CorpusError, EegRecording, FeatureMode, PairedDataset, Split};

/// Tolerance on the `[0, 1]` range check; values further outside are dropped.
pub const RANGE_TOL: f32 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CleanReport {
    pub dropped: usize,
    pub kept: usize,
    /// Set when cleaning removed everything.
    pub empty: bool,
}

/// Drop pairs whose recording contains any non-finite value or any value
/// outside `[0, 1]` by more than [`RANGE_TOL`].
pub fn clean(dataset: &PairedDataset) -> (PairedDataset, CleanReport) {
    let mut pairs = Vec::with_capacity(dataset.pairs.len());
    let mut dropped = 0;
    for (rec, text) in &dataset.pairs {
        if rec.is_clean(RANGE_TOL) {
            pairs.push((rec.clone(), text.clone()));
        } else {
            dropped += 1;
        }
    }
    let report = CleanReport {
        dropped,
        kept: pairs.len(),
        empty: pairs.is_empty(),
    };
    (
        PairedDataset {
            pairs,
            split: dataset.split,
            synthesis_seed: dataset.synthesis_seed,
            vocab: dataset.vocab.clone(),
        },
        report,
    )
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Split into train/val/test with sentence-text-disjoint membership.
///
/// Pairs are grouped by raw text (so a duplicated sentence can never straddle
/// a split boundary), the groups are shuffled by `seed`, and the boundaries
/// are chosen so each split size is within one sample of `n·ratio`.
pub fn split_unique(
    dataset: &PairedDataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(PairedDataset, PairedDataset, PairedDataset), CorpusError> {
    let (r_train, r_val, r_test) = ratios;
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 || r_train < 0.0 || r_val < 0.0 || r_test < 0.0
    {
        return Err(CorpusError::BadRatios([r_train, r_val, r_test]));
    }
    let n = dataset.pairs.len();
    if n < 3 {
        return Err(CorpusError::TooFewPairs(n));
    }

    // Group indices by raw text, keeping first-occurrence order.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_text: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (i, (_, text)) in dataset.pairs.iter().enumerate() {
        match by_text.get(text.raw_text.as_str()) {
            Some(&g) => groups[g].push(i),
            None => {
                by_text.insert(text.raw_text.as_str(), groups.len());
                groups.push(vec![i]);
            }
        }
    }
    let mut rng = rng_from_seed(seed);
    groups.shuffle(&mut rng);

    // Val and test get their rounded share; train absorbs the remainder.
    let val_n = round_half_up(n as f64 * r_val);
    let test_n = round_half_up(n as f64 * r_test);
    let train_n = n - val_n - test_n;

    let mut buckets = [Vec::new(), Vec::new(), Vec::new()];
    let mut filled = 0usize;
    for group in groups {
        let bucket = if filled < train_n {
            0
        } else if filled < train_n + val_n {
            1
        } else {
            2
        };
        filled += group.len();
        buckets[bucket].extend(group);
    }

    let make = |indices: &Vec<usize>, split: Split| PairedDataset {
        pairs: indices.iter().map(|&i| dataset.pairs[i].clone()).collect(),
        split,
        synthesis_seed: dataset.synthesis_seed,
        vocab: dataset.vocab.clone(),
    };
    Ok((
        make(&buckets[0], Split::Train),
        make(&buckets[1], Split::Val),
        make(&buckets[2], Split::Test),
    ))
}

/// Collapse a word-level recording to a single mean frame per (channel, band).
///
/// The per-entry sums are exact: `f32` values convert to `f64` without error
/// and fewer than 2^29 of them fit in the 53-bit significand, so the mean is
/// bitwise invariant under any permutation of the words.
pub fn aggregate_sentence_level(rec: &EegRecording) -> Result<EegRecording, CorpusError> {
    if rec.mode != FeatureMode::WordLevel {
        return Err(CorpusError::NotWordLevel);
    }
    let fw = rec.frame_width();
    let mut sums = vec![0.0f64; fw];
    for w in 0..rec.words {
        for (s, &v) in sums.iter_mut().zip(rec.frame(w)) {
            *s += v as f64;
        }
    }
    let features: Vec<f32> = sums
        .iter()
        .map(|&s| (s / rec.words as f64) as f32)
        .collect();
    Ok(EegRecording {
        sentence_id: rec.sentence_id,
        subject_id: rec.subject_id,
        mode: FeatureMode::SentenceLevel,
        words: 1,
        channels: rec.channels,
        bands: rec.bands,
        features,
    })
}

/// Aggregate every recording of a dataset to sentence level.
pub fn aggregate_dataset(dataset: &PairedDataset) -> Result<PairedDataset, CorpusError> {
    let pairs = dataset
        .pairs
        .iter()
        .map(|(rec, text)| Ok((aggregate_sentence_level(rec)?, text.clone())))
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok(PairedDataset {
        pairs,
        split: dataset.split,
        synthesis_seed: dataset.synthesis_seed,
        vocab: dataset.vocab.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, SynthesisConfig, TextSample};
    use std::collections::HashSet;

    fn small_corpus(n: usize, seed: u64) -> PairedDataset {
        build_corpus(&SynthesisConfig {
            vocab_size: 15,
            sentence_count: n,
            len_min: 3,
            len_max: 6,
            subject_count: 2,
            noise_sigma: 0.05,
            channels: 4,
            bands: 2,
            latent_width: 4,
            seed,
        })
        .unwrap()
    }

    fn word_rec(frames: &[&[f32]], channels: usize, bands: usize) -> EegRecording {
        EegRecording {
            sentence_id: 0,
            subject_id: 0,
            mode: FeatureMode::WordLevel,
            words: frames.len(),
            channels,
            bands,
            features: frames.concat(),
        }
    }

    #[test]
    fn clean_drops_nan_and_out_of_range() {
        let mut ds = small_corpus(10, 3);
        ds.pairs[2].0.features[0] = f32::NAN;
        let (cleaned, report) = clean(&ds);
        assert_eq!(cleaned.len(), 9);
        assert_eq!(report, CleanReport { dropped: 1, kept: 9, empty: false });

        let mut ds2 = small_corpus(10, 4);
        ds2.pairs[5].0.features[3] = 1.5;
        let (cleaned2, report2) = clean(&ds2);
        assert_eq!(cleaned2.len(), 9);
        assert_eq!(report2.dropped, 1);
    }

    #[test]
    fn clean_is_identity_on_clean_data() {
        let ds = small_corpus(12, 5);
        let (cleaned, report) = clean(&ds);
        assert_eq!(cleaned, ds);
        assert_eq!(report.dropped, 0);
    }

    #[test]
    fn clean_can_empty_a_dataset() {
        let mut ds = small_corpus(10, 6);
        for (rec, _) in ds.pairs.iter_mut() {
            rec.features[0] = f32::INFINITY;
        }
        let (cleaned, report) = clean(&ds);
        assert!(cleaned.is_empty());
        assert!(report.empty);
    }

    #[test]
    fn split_sizes_match_the_reference_partition() {
        // The reference corpus partition: 25,616 -> 20,492 / 2,562 / 2,562.
        let n = 25_616;
        let val = round_half_up(n as f64 * 0.1);
        let test = round_half_up(n as f64 * 0.1);
        assert_eq!((n - val - test, val, test), (20_492, 2_562, 2_562));
    }

    #[test]
    fn split_ten_pairs_is_8_1_1() {
        let ds = small_corpus(10, 7);
        let (train, val, test) = split_unique(&ds, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (8, 1, 1));
        assert_eq!(train.split, Split::Train);
        assert_eq!(val.split, Split::Val);
        assert_eq!(test.split, Split::Test);
    }

    #[test]
    fn splits_are_text_disjoint_and_a_partition() {
        let ds = small_corpus(50, 8);
        let (train, val, test) = split_unique(&ds, (0.8, 0.1, 0.1), 9).unwrap();
        let texts = |d: &PairedDataset| -> HashSet<String> {
            d.pairs.iter().map(|(_, t)| t.raw_text.clone()).collect()
        };
        let (a, b, c) = (texts(&train), texts(&val), texts(&test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        // partition: every pair lands in exactly one split
        assert_eq!(train.len() + val.len() + test.len(), ds.len());
        let mut all: Vec<u64> = train
            .pairs
            .iter()
            .chain(&val.pairs)
            .chain(&test.pairs)
            .map(|(_, t)| t.sentence_id)
            .collect();
        all.sort_unstable();
        let mut expect: Vec<u64> = ds.pairs.iter().map(|(_, t)| t.sentence_id).collect();
        expect.sort_unstable();
        assert_eq!(all, expect);
    }

    #[test]
    fn split_proportions_stay_within_one_sample() {
        for n in [3usize, 10, 37, 100, 1001] {
            let ds = small_corpus(n.max(10), 10 + n as u64);
            let ds = PairedDataset {
                pairs: ds.pairs.into_iter().take(n).collect(),
                ..ds
            };
            let (train, val, test) = split_unique(&ds, (0.8, 0.1, 0.1), 0).unwrap();
            for (len, r) in [(train.len(), 0.8), (val.len(), 0.1), (test.len(), 0.1)] {
                assert!(
                    (len as f64 - n as f64 * r).abs() < 1.0 + 1e-12,
                    "n={n} len={len} ratio={r}"
                );
            }
        }
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let ds = small_corpus(10, 11);
        assert!(matches!(
            split_unique(&ds, (0.7, 0.1, 0.1), 0),
            Err(CorpusError::BadRatios(_))
        ));
        let tiny = PairedDataset {
            pairs: ds.pairs.iter().take(2).cloned().collect(),
            ..ds
        };
        assert!(matches!(
            split_unique(&tiny, (0.8, 0.1, 0.1), 0),
            Err(CorpusError::TooFewPairs(2))
        ));
    }

    #[test]
    fn duplicate_texts_never_straddle_splits() {
        let mut ds = small_corpus(20, 12);
        // duplicate one sentence's text under fresh ids
        let (rec, text) = ds.pairs[0].clone();
        for k in 1..=3 {
            let mut t = text.clone();
            t.sentence_id = 1000 + k;
            ds.pairs.push((rec.clone(), t));
        }
        let (train, val, test) = split_unique(&ds, (0.8, 0.1, 0.1), 3).unwrap();
        let contains = |d: &PairedDataset| d.pairs.iter().any(|(_, t)| t.raw_text == text.raw_text);
        let hits = [contains(&train), contains(&val), contains(&test)]
            .iter()
            .filter(|&&x| x)
            .count();
        assert_eq!(hits, 1, "a duplicated text must land in exactly one split");
    }

    #[test]
    fn aggregate_of_single_word_is_identity() {
        let rec = word_rec(&[&[0.1, 0.9, 0.3, 0.7]], 2, 2);
        let agg = aggregate_sentence_level(&rec).unwrap();
        assert_eq!(agg.features, rec.features);
        assert_eq!(agg.words, 1);
        assert_eq!(agg.mode, FeatureMode::SentenceLevel);
    }

    #[test]
    fn aggregate_two_constant_words() {
        let rec = word_rec(&[&[0.2; 4], &[0.6; 4]], 2, 2);
        let agg = aggregate_sentence_level(&rec).unwrap();
        assert!(agg.features.iter().all(|&v| v == 0.4));
    }

    #[test]
    fn aggregate_matches_independent_mean_oracle() {
        let ds = small_corpus(10, 13);
        let rec = &ds.pairs[0].0;
        let agg = aggregate_sentence_level(rec).unwrap();
        let fw = rec.frame_width();
        for i in 0..fw {
            // oracle: sum words in reverse order, in f64
            let mut acc = 0.0f64;
            for w in (0..rec.words).rev() {
                acc += rec.frame(w)[i] as f64;
            }
            let expect = (acc / rec.words as f64) as f32;
            // The f64 sum of f32 values is exact, so even a reverse-order
            // oracle lands on the identical f32 after the final rounding.
            assert_eq!(agg.features[i], expect);
        }
    }

    #[test]
    fn aggregate_commutes_with_word_permutation() {
        let ds = small_corpus(10, 14);
        let rec = &ds.pairs[1].0;
        let fw = rec.frame_width();
        let mut frames: Vec<&[f32]> = (0..rec.words).map(|w| rec.frame(w)).collect();
        frames.reverse();
        let mid = frames.len() / 2;
        frames.swap(0, mid);
        let permuted = EegRecording {
            features: frames.concat(),
            ..rec.clone()
        };
        let a = aggregate_sentence_level(rec).unwrap();
        let b = aggregate_sentence_level(&permuted).unwrap();
        // bitwise equality: word order cannot leak through the mean
        assert_eq!(a.features, b.features);
        assert_eq!(fw, a.features.len());
    }

    #[test]
    fn aggregate_rejects_sentence_level_input() {
        let rec = word_rec(&[&[0.5; 4]], 2, 2);
        let agg = aggregate_sentence_level(&rec).unwrap();
        assert!(matches!(
            aggregate_sentence_level(&agg),
            Err(CorpusError::NotWordLevel)
        ));
    }

    #[test]
    fn word_level_recordings_align_with_text() {
        let ds = small_corpus(10, 15);
        for (rec, text) in &ds.pairs {
            assert_eq!(rec.words, text.words.len());
            let _ = TextSample {
                sentence_id: text.sentence_id,
                words: text.words.clone(),
                raw_text: text.raw_text.clone(),
            };
        }
    }
}
