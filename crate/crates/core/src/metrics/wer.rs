//! Word error rate via token-level Levenshtein distance (unit costs for
//! substitution, insertion, deletion).

/// Minimum number of single-token edits turning `reference` into `hypothesis`.
/// Two-row dynamic program, O(|r|·|h|) time, O(|h|) space.
pub fn edit_distance(reference: &[String], hypothesis: &[String]) -> usize {
    let cols = hypothesis.len() + 1;
    let mut prev: Vec<usize> = (0..cols).collect();
    let mut curr = vec![0usize; cols];
    for (i, r) in reference.iter().enumerate() {
        curr[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[cols - 1]
}

/// Single-pair WER in percent: `100 · distance / |reference|`. May exceed 100
/// when the hypothesis carries more errors than the reference has tokens.
/// The reference must be non-empty.
pub fn wer(reference: &[String], hypothesis: &[String]) -> f64 {
    assert!(!reference.is_empty(), "WER needs a non-empty reference");
    100.0 * edit_distance(reference, hypothesis) as f64 / reference.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    /// Full-table Levenshtein, the textbook formulation, as the oracle.
    fn oracle_distance(a: &[String], b: &[String]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn single_substitution() {
        assert_eq!(edit_distance(&toks("a b c"), &toks("a x c")), 1);
        assert!((wer(&toks("a b c"), &toks("a x c")) - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn insertions_and_deletions() {
        assert_eq!(edit_distance(&toks("a b"), &toks("a x b y")), 2);
        assert_eq!(edit_distance(&toks("a b c d"), &toks("b d")), 2);
        assert_eq!(edit_distance(&toks("a b"), &[]), 2);
    }

    #[test]
    fn wer_can_exceed_one_hundred() {
        // One match impossible: 1-token reference vs 3 disjoint tokens needs
        // 1 substitution + 2 insertions = 3 edits → 300%.
        assert!((wer(&toks("a"), &toks("b c d")) - 300.0).abs() < 1e-9);
    }

    #[test]
    fn identical_sequences_cost_nothing() {
        assert_eq!(edit_distance(&toks("x y z"), &toks("x y z")), 0);
        assert_eq!(wer(&toks("x y z"), &toks("x y z")), 0.0);
    }

    #[test]
    fn matches_full_table_oracle_on_random_pairs() {
        let mut state: u64 = 4242;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as usize
        };
        let vocab = ["a", "b", "c", "d"];
        for _ in 0..300 {
            let mk = |next: &mut dyn FnMut() -> usize| {
                let len = next() % 9;
                (0..len)
                    .map(|_| vocab[next() % vocab.len()].to_string())
                    .collect::<Vec<_>>()
            };
            let a = mk(&mut next);
            let b = mk(&mut next);
            assert_eq!(edit_distance(&a, &b), oracle_distance(&a, &b), "a={a:?} b={b:?}");
        }
    }

    #[test]
    #[should_panic(expected = "non-empty reference")]
    fn empty_reference_panics() {
        wer(&[], &toks("a"));
    }
}
