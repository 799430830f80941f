use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ngram_profile, NGramCounts, Token};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiderParams {
    pub sigma: f64,
    pub n_max: usize,
    pub scale: f64,
}

impl Default for CiderParams {
    fn default() -> Self {
        Self {
            sigma: 6.0,
            n_max: 4,
            scale: 10.0,
        }
    }
}

/// Document frequencies over a reference corpus, one document per image.
#[derive(Clone, Debug, PartialEq)]
pub struct IdfTable {
    df: BTreeMap<Vec<Token>, usize>,
    n_docs: usize,
}

impl IdfTable {
    /// `refs[i]` holds the reference captions of image `i`.
    pub fn build(refs: &[Vec<Vec<Token>>], n_max: usize) -> Self {
        let mut df = BTreeMap::new();
        for image in refs {
            let mut seen = BTreeSet::new();
            for r in image {
                for counts in ngram_profile(r, n_max) {
                    seen.extend(counts.into_keys());
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Self { df, n_docs: refs.len() }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn df(&self, g: &[Token]) -> usize {
        self.df.get(g).copied().unwrap_or(0)
    }

    /// `ln N − ln max(1, df)`.
    pub fn idf(&self, g: &[Token]) -> f64 {
        let n = (self.n_docs.max(1) as f64).ln();
        n - (self.df(g).max(1) as f64).ln()
    }

    /// SHA-256 over the sorted table, for reproducible reports.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_docs as u64).to_le_bytes());
        for (g, &d) in &self.df {
            h.update((g.len() as u64).to_le_bytes());
            for &t in g {
                h.update((t as u64).to_le_bytes());
            }
            h.update((d as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// tf-idf vector of one order and its Euclidean norm.
fn tfidf<'a>(counts: &'a NGramCounts, idf: &IdfTable) -> (BTreeMap<&'a [Token], f64>, f64) {
    let mut vec = BTreeMap::new();
    let mut norm = 0.0;
    for (g, &c) in counts {
        let v = c as f64 * idf.idf(g);
        norm += v * v;
        vec.insert(g.as_slice(), v);
    }
    (vec, norm.sqrt())
}

/// CIDEr-D from precomputed n-gram profiles and token lengths.
pub fn cider_d_profile(
    cand: &[NGramCounts],
    cand_len: usize,
    refs: &[(Vec<NGramCounts>, usize)],
    idf: &IdfTable,
    p: CiderParams,
) -> f64 {
    if refs.is_empty() {
        return 0.0;
    }
    let cand_vecs: Vec<_> = cand.iter().map(|c| tfidf(c, idf)).collect();
    let mut total = 0.0;
    for (ref_profile, ref_len) in refs {
        let delta = cand_len as f64 - *ref_len as f64;
        let penalty = (-(delta * delta) / (2.0 * p.sigma * p.sigma)).exp();
        let mut per_n = 0.0;
        for (n, (vh, nh)) in cand_vecs.iter().enumerate().take(p.n_max) {
            let (vr, nr) = tfidf(&ref_profile[n], idf);
            let mut dot = 0.0;
            for (g, &h) in vh {
                if let Some(&r) = vr.get(g) {
                    dot += h.min(r) * r;
                }
            }
            if *nh != 0.0 && nr != 0.0 {
                dot /= nh * nr;
            }
            per_n += dot * penalty;
        }
        total += per_n / p.n_max as f64;
    }
    p.scale * total / refs.len() as f64
}

pub fn cider_d(candidate: &[Token], references: &[Vec<Token>], idf: &IdfTable, p: CiderParams) -> f64 {
    let refs: Vec<_> = references
        .iter()
        .map(|r| (ngram_profile(r, p.n_max), r.len()))
        .collect();
    cider_d_profile(&ngram_profile(candidate, p.n_max), candidate.len(), &refs, idf, p)
}

/// Mean CIDEr-D over images together with the per-image scores.
pub fn corpus_cider_d(
    candidates: &[Vec<Token>],
    references: &[Vec<Vec<Token>>],
    idf: &IdfTable,
    p: CiderParams,
) -> (f64, Vec<f64>) {
    let scores: Vec<f64> = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| cider_d(c, r, idf, p))
        .collect();
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    (mean, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<Vec<Vec<Token>>> {
        vec![
            vec![vec![1, 2, 3, 4, 5]],
            vec![vec![6, 7, 8, 9]],
            vec![vec![1, 7, 9, 10, 11]],
        ]
    }

    #[test]
    fn self_match_is_ten() {
        let refs = corpus();
        let idf = IdfTable::build(&refs, 4);
        let s = cider_d(&refs[0][0], &refs[0], &idf, CiderParams::default());
        assert!((s - 10.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_is_zero() {
        let refs = corpus();
        let idf = IdfTable::build(&refs, 4);
        assert_eq!(cider_d(&[20, 21, 22], &refs[0], &idf, CiderParams::default()), 0.0);
    }

    #[test]
    fn six_extra_tokens_cost_exp_half() {
        let refs = corpus();
        let idf = IdfTable::build(&refs, 4);
        let profile = ngram_profile(&refs[0][0], 4);
        let p = CiderParams::default();
        let same = cider_d_profile(&profile, 5, &[(profile.clone(), 5)], &idf, p);
        let longer = cider_d_profile(&profile, 11, &[(profile.clone(), 5)], &idf, p);
        assert!((longer / same - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn df_counts_images_not_captions() {
        let refs = vec![vec![vec![1, 2], vec![1, 3]], vec![vec![4]]];
        let idf = IdfTable::build(&refs, 2);
        assert_eq!(idf.df(&[1]), 1);
        assert!((idf.idf(&[1]) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(idf.idf(&[99]), 2f64.ln());
        assert_eq!(idf.checksum(), IdfTable::build(&refs, 2).checksum());
        assert_ne!(idf.checksum(), IdfTable::build(&refs[..1], 2).checksum());
    }
}
