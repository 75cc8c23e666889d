//! Edit-distance metrics: WER over words, PER over phoneme symbols.

/// Unit-cost Levenshtein distance between two token sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let cost = usize::from(x != y);
            curr[j + 1] = (prev[j + 1] + 1).min(curr[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Word error rate for a single pair. An empty reference scores 0 against an
/// empty hypothesis and 1 per inserted word otherwise.
pub fn wer(hypothesis: &[String], reference: &[String]) -> f64 {
    let d = levenshtein(hypothesis, reference);
    if reference.is_empty() {
        return if hypothesis.is_empty() { 0.0 } else { 1.0 };
    }
    d as f64 / reference.len() as f64
}

/// Running totals for micro-averaged (corpus-level) error rates.
#[derive(Debug, Clone, Copy, Default)]
pub struct ErrorRateAccum {
    pub edits: usize,
    pub ref_len: usize,
}

impl ErrorRateAccum {
    pub fn observe<T: PartialEq>(&mut self, hypothesis: &[T], reference: &[T]) {
        self.edits += levenshtein(hypothesis, reference);
        self.ref_len += reference.len();
    }

    pub fn rate(&self) -> f64 {
        if self.ref_len == 0 {
            return if self.edits == 0 { 0.0 } else { 1.0 };
        }
        self.edits as f64 / self.ref_len as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_sequences_score_zero() {
        assert_eq!(wer(&words("a b c"), &words("a b c")), 0.0);
    }

    #[test]
    fn one_substitution_of_two() {
        assert_eq!(wer(&words("a b"), &words("a c")), 0.5);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        assert_eq!(wer(&[], &words("a b")), 1.0);
    }

    #[test]
    fn distance_is_symmetric_rate_is_not() {
        let a = words("x y z");
        let b = words("x z");
        assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        assert!((wer(&a, &b) - 1.0 / 2.0).abs() < 1e-12);
        assert!((wer(&b, &a) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_accumulator_micro_averages() {
        let mut acc = ErrorRateAccum::default();
        acc.observe(&words("a"), &words("a b"));
        acc.observe(&words("c"), &words("c"));
        assert_eq!(acc.edits, 1);
        assert_eq!(acc.ref_len, 3);
        assert!((acc.rate() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn per_deletion_example() {
        // ref [k,a,t] vs hyp [k,t] is one deletion.
        let r = ["k", "a", "t"];
        let h = ["k", "t"];
        assert_eq!(levenshtein(&h, &r), 1);
    }
}
