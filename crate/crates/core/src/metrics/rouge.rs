//! ROUGE-1: unigram overlap precision/recall/F over a single pair.
//! Corpus aggregation (mean P, mean R, F of the means) lives in `evaluate`.

use std::collections::HashMap;

/// Returns `(precision, recall, f1)` in percent for one pair. Overlap counts
/// each token type `min(count_ref, count_hyp)` times. An empty hypothesis has
/// precision 0 (not NaN); an empty reference likewise has recall 0.
pub fn rouge1(reference: &[String], hypothesis: &[String]) -> (f64, f64, f64) {
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *ref_counts.entry(t).or_insert(0) += 1;
    }
    let mut hyp_counts: HashMap<&str, usize> = HashMap::new();
    for t in hypothesis {
        *hyp_counts.entry(t).or_insert(0) += 1;
    }
    let overlap: usize = hyp_counts
        .iter()
        .map(|(t, c)| (*c).min(ref_counts.get(t).copied().unwrap_or(0)))
        .sum();
    let precision = if hypothesis.is_empty() {
        0.0
    } else {
        100.0 * overlap as f64 / hypothesis.len() as f64
    };
    let recall = if reference.is_empty() {
        0.0
    } else {
        100.0 * overlap as f64 / reference.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    /// Multiset intersection by sorting both sides and walking two cursors.
    fn oracle_overlap(a: &[String], b: &[String]) -> usize {
        let mut a: Vec<_> = a.to_vec();
        let mut b: Vec<_> = b.to_vec();
        a.sort();
        b.sort();
        let (mut i, mut j, mut hits) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    hits += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        hits
    }

    #[test]
    fn worked_example() {
        // Overlap 2; P = 2/2 = 100, R = 2/3 ≈ 66.67, F = 80.
        let (p, r, f) = rouge1(&toks("the cat sat"), &toks("the cat"));
        assert!((p - 100.0).abs() < 1e-9);
        assert!((r - 200.0 / 3.0).abs() < 1e-9);
        assert!((f - 80.0).abs() < 1e-9);
    }

    #[test]
    fn duplicates_count_up_to_reference_multiplicity() {
        // "the" once in ref, three times in hyp → overlap 1.
        let (p, r, _) = rouge1(&toks("the cat"), &toks("the the the"));
        assert!((p - 100.0 / 3.0).abs() < 1e-9);
        assert!((r - 50.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_and_empty_inputs() {
        assert_eq!(rouge1(&toks("a b"), &toks("c d")), (0.0, 0.0, 0.0));
        assert_eq!(rouge1(&toks("a b"), &[]), (0.0, 0.0, 0.0));
        assert_eq!(rouge1(&[], &toks("a b")), (0.0, 0.0, 0.0));
    }

    #[test]
    fn order_does_not_matter() {
        let a = rouge1(&toks("a b c"), &toks("c a b"));
        let b = rouge1(&toks("c b a"), &toks("a b c"));
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn matches_multiset_oracle_on_random_pairs() {
        let mut state: u64 = 7;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as usize
        };
        let vocab = ["a", "b", "c"];
        for _ in 0..200 {
            let mk = |next: &mut dyn FnMut() -> usize| {
                let len = next() % 8;
                (0..len)
                    .map(|_| vocab[next() % vocab.len()].to_string())
                    .collect::<Vec<_>>()
            };
            let r = mk(&mut next);
            let h = mk(&mut next);
            let (p, rec, _) = rouge1(&r, &h);
            let overlap = oracle_overlap(&r, &h);
            if !h.is_empty() {
                assert!((p - 100.0 * overlap as f64 / h.len() as f64).abs() < 1e-9);
            }
            if !r.is_empty() {
                assert!((rec - 100.0 * overlap as f64 / r.len() as f64).abs() < 1e-9);
            }
        }
    }
}
