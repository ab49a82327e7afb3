//! Corpus-level BLEU, reported per n-gram order (no geometric mean across
//! orders, no smoothing): modified n-gram precision pooled over the corpus,
//! times a corpus-level brevity penalty.

use std::collections::HashMap;

use super::MetricsError;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-n over a whole corpus, in percent.
///
/// Clipped n-gram matches and candidate n-gram totals are each summed over
/// all pairs before dividing; the brevity penalty is
/// `exp(min(0, 1 - r/c))` with `r`/`c` the total reference/hypothesis token
/// counts. A corpus with no candidate n-grams of this order scores 0.
pub fn bleu_n(
    references: &[Vec<String>],
    hypotheses: &[Vec<String>],
    n: usize,
) -> Result<f64, MetricsError> {
    if !(1..=4).contains(&n) {
        return Err(MetricsError::BadOrder(n));
    }
    if references.len() != hypotheses.len() {
        return Err(MetricsError::LengthMismatch {
            refs: references.len(),
            hyps: hypotheses.len(),
        });
    }
    if references.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }

    let mut clipped = 0usize;
    let mut total = 0usize;
    let mut ref_len = 0usize;
    let mut hyp_len = 0usize;
    for (reference, hypothesis) in references.iter().zip(hypotheses) {
        ref_len += reference.len();
        hyp_len += hypothesis.len();
        let ref_counts = ngram_counts(reference, n);
        for (gram, count) in ngram_counts(hypothesis, n) {
            clipped += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            total += count;
        }
    }

    if total == 0 || hyp_len == 0 {
        return Ok(0.0);
    }
    let precision = clipped as f64 / total as f64;
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp();
    Ok(100.0 * precision * bp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    /// Naive re-derivation used as the oracle: count n-grams by linear scans
    /// over joined strings, no hash maps.
    fn oracle_bleu(refs: &[Vec<String>], hyps: &[Vec<String>], n: usize) -> f64 {
        let grams = |t: &[String]| -> Vec<String> {
            if t.len() < n {
                return Vec::new();
            }
            (0..=t.len() - n).map(|i| t[i..i + n].join("\u{1f}")).collect()
        };
        let mut clipped = 0usize;
        let mut total = 0usize;
        let mut r_len = 0usize;
        let mut c_len = 0usize;
        for (r, h) in refs.iter().zip(hyps) {
            r_len += r.len();
            c_len += h.len();
            let rg = grams(r);
            let hg = grams(h);
            total += hg.len();
            let mut uniq = hg.clone();
            uniq.sort();
            uniq.dedup();
            for g in uniq {
                let in_h = hg.iter().filter(|x| **x == g).count();
                let in_r = rg.iter().filter(|x| **x == g).count();
                clipped += in_h.min(in_r);
            }
        }
        if total == 0 || c_len == 0 {
            return 0.0;
        }
        let bp = (1.0 - r_len as f64 / c_len as f64).min(0.0).exp();
        100.0 * (clipped as f64 / total as f64) * bp
    }

    #[test]
    fn short_hypothesis_pays_brevity_penalty() {
        // 2/2 unigrams match but c=2 < r=3, so BLEU-1 = 100·e^(1-3/2) ≈ 60.653.
        let refs = vec![toks("the cat sat")];
        let hyps = vec![toks("the cat")];
        let got = bleu_n(&refs, &hyps, 1).unwrap();
        assert!((got - 100.0 * (-0.5f64).exp()).abs() < 1e-9);
        assert!((got - 60.6530659712633).abs() < 1e-9);
    }

    #[test]
    fn repeated_words_are_clipped() {
        // "the" appears once in the reference, so only 1 of 3 candidate
        // unigrams counts; lengths are equal so no penalty.
        let refs = vec![toks("the cat sat")];
        let hyps = vec![toks("the the the")];
        let got = bleu_n(&refs, &hyps, 1).unwrap();
        assert!((got - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn bigram_worked_example() {
        // Candidate bigrams: [the cat, cat the, the cat] → clipped match 1
        // ("the cat" appears once in the reference). Precision 1/3; c=4, r=4.
        let refs = vec![toks("the cat sat down")];
        let hyps = vec![toks("the cat the cat")];
        let got = bleu_n(&refs, &hyps, 2).unwrap();
        assert!((got - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn pooling_differs_from_per_sentence_averaging() {
        // Pair 1: 1/1 matches; pair 2: 0/3. Pooled: 1/4 with equal lengths.
        // A per-sentence mean would give (100 + 0)/2 = 50 instead.
        let refs = vec![toks("a"), toks("b c d")];
        let hyps = vec![toks("a"), toks("x y z")];
        let got = bleu_n(&refs, &hyps, 1).unwrap();
        assert!((got - 25.0).abs() < 1e-9);
    }

    #[test]
    fn long_hypothesis_is_not_penalized_by_bp() {
        let refs = vec![toks("a b")];
        let hyps = vec![toks("a b c d")];
        // 2/4 unigrams, BP = 1 since c > r.
        let got = bleu_n(&refs, &hyps, 1).unwrap();
        assert!((got - 50.0).abs() < 1e-9);
    }

    #[test]
    fn too_short_for_order_scores_zero() {
        let refs = vec![toks("a b c d e")];
        let hyps = vec![toks("a")];
        assert_eq!(bleu_n(&refs, &hyps, 2).unwrap(), 0.0);
        let empty_hyp = vec![Vec::<String>::new()];
        assert_eq!(bleu_n(&refs, &empty_hyp, 1).unwrap(), 0.0);
    }

    #[test]
    fn matches_naive_oracle_on_random_corpora() {
        let mut state: u64 = 99;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as usize
        };
        let vocab = ["a", "b", "c", "d", "e"];
        for _ in 0..30 {
            let mut refs = Vec::new();
            let mut hyps = Vec::new();
            let pairs = 1 + next() % 6;
            for _ in 0..pairs {
                let mk = |next: &mut dyn FnMut() -> usize| {
                    let len = next() % 10;
                    (0..len)
                        .map(|_| vocab[next() % vocab.len()].to_string())
                        .collect::<Vec<_>>()
                };
                refs.push(mk(&mut next));
                hyps.push(mk(&mut next));
            }
            for n in 1..=4 {
                let got = bleu_n(&refs, &hyps, n).unwrap();
                let want = oracle_bleu(&refs, &hyps, n);
                assert!(
                    (got - want).abs() < 1e-9,
                    "n={n} got={got} want={want} refs={refs:?} hyps={hyps:?}"
                );
            }
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let one = vec![toks("a")];
        assert_eq!(bleu_n(&one, &one, 0), Err(MetricsError::BadOrder(0)));
        assert_eq!(bleu_n(&one, &one, 5), Err(MetricsError::BadOrder(5)));
        assert_eq!(bleu_n(&[], &[], 1), Err(MetricsError::EmptyCorpus));
        assert_eq!(
            bleu_n(&one, &[], 1),
            Err(MetricsError::LengthMismatch { refs: 1, hyps: 0 })
        );
    }
}
