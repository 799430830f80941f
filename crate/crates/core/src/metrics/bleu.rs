use super::{ngrams, Token};

/// Clipped matches and candidate n-gram total for one order.
pub fn clipped_precision(candidate: &[Token], references: &[Vec<Token>], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let refs: Vec<_> = references.iter().map(|r| ngrams(r, n)).collect();
    let mut matched = 0;
    for (g, &c) in &cand {
        let max_ref = refs.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
        matched += c.min(max_ref);
    }
    (matched, cand.values().sum())
}

/// Reference length closest to `c`; ties go to the shorter reference.
fn closest_ref_len(c: usize, references: &[Vec<Token>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Sufficient statistics for corpus-level BLEU.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matched: Vec<usize>,
    pub total: Vec<usize>,
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new(n_max: usize) -> Self {
        Self {
            matched: vec![0; n_max],
            total: vec![0; n_max],
            cand_len: 0,
            ref_len: 0,
        }
    }

    pub fn add(&mut self, candidate: &[Token], references: &[Vec<Token>]) {
        for n in 1..=self.matched.len() {
            let (m, t) = clipped_precision(candidate, references, n);
            self.matched[n - 1] += m;
            self.total[n - 1] += t;
        }
        self.cand_len += candidate.len();
        self.ref_len += closest_ref_len(candidate.len(), references);
    }

    /// Geometric mean of the clipped precisions times the brevity penalty.
    pub fn score(&self) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (&m, &t) in self.matched.iter().zip(&self.total) {
            if m == 0 || t == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        let bp = if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        bp * (log_sum / self.matched.len() as f64).exp()
    }
}

/// Sentence-level BLEU without smoothing.
pub fn bleu_n(candidate: &[Token], references: &[Vec<Token>], n_max: usize) -> f64 {
    if candidate.is_empty() {
        log::warn!("BLEU of an empty candidate is 0");
        return 0.0;
    }
    let mut s = BleuStats::new(n_max);
    s.add(candidate, references);
    s.score()
}

pub fn corpus_bleu(candidates: &[Vec<Token>], references: &[Vec<Vec<Token>>], n_max: usize) -> f64 {
    let mut s = BleuStats::new(n_max);
    for (c, r) in candidates.iter().zip(references) {
        s.add(c, r);
    }
    s.score()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_match_is_one() {
        let s = vec![5, 6, 7, 8, 9];
        assert_eq!(bleu_n(&s, std::slice::from_ref(&s), 4), 1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(bleu_n(&[1, 2, 3, 4], &[vec![5, 6, 7, 8]], 4), 0.0);
        assert_eq!(bleu_n(&[], &[vec![5]], 4), 0.0);
    }

    #[test]
    fn repeated_word_is_clipped() {
        // "the the the" against "the cat"
        assert_eq!(clipped_precision(&[1, 1, 1], &[vec![1, 2]], 1), (1, 3));
    }

    #[test]
    fn brevity_penalty_uses_closest_reference() {
        let cand = vec![1, 2];
        let refs = vec![vec![1, 2, 3, 4], vec![1, 2, 3, 4, 5, 6, 7, 8]];
        let expected = (1.0f64 - 4.0 / 2.0).exp();
        assert!((bleu_n(&cand, &refs, 1) - expected).abs() < 1e-12);
    }
}
