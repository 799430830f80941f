//! Caption metrics over token-id sequences.
//!
//! All counting uses ordered maps so that floating-point sums are taken in
//! the same order on every run.

mod bleu;
mod cider;
mod recall;

pub use bleu::{bleu_n, clipped_precision, corpus_bleu, BleuStats};
pub use cider::{cider_d, cider_d_profile, corpus_cider_d, CiderParams, IdfTable};
pub use recall::{pos_recall, pos_recall_all, TaggedCaption};

use std::collections::BTreeMap;

pub type Token = usize;

/// Multiset of n-grams of one order.
pub type NGramCounts = BTreeMap<Vec<Token>, usize>;

pub fn ngrams(tokens: &[Token], n: usize) -> NGramCounts {
    let mut out = NGramCounts::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.to_vec()).or_insert(0) += 1;
    }
    out
}

/// Counts for every order `1..=n_max`; index 0 holds unigrams.
pub fn ngram_profile(tokens: &[Token], n_max: usize) -> Vec<NGramCounts> {
    (1..=n_max).map(|n| ngrams(tokens, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ngram_totals() {
        let s = [1, 2, 1, 2, 3];
        for n in 1..=6 {
            let total: usize = ngrams(&s, n).values().sum();
            assert_eq!(total, s.len().saturating_sub(n - 1).min(s.len()));
        }
        assert_eq!(ngrams(&s, 2)[&vec![1, 2]], 2);
    }
}
