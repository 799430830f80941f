//! BLEU and CIDEr-D against a direct string-keyed reimplementation that
//! shares no code with the library.

mod common;

use cnm_core::metrics::{
    bleu_n, cider_d, cider_d_profile, clipped_precision, corpus_bleu, ngram_profile, CiderParams, IdfTable,
};
use cnm_core::tensor::rng::Rng;
use common::{ids, oracle_bleu, oracle_cider, twenty_pairs, WORDS};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn seeded(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed_0003),
        failure_persistence: None,
        ..Config::default()
    }
}

#[test]
fn bleu_matches_oracle_on_twenty_pairs() {
    for seed in [1, 2, 3] {
        let pairs = twenty_pairs(seed);
        let mut nonzero = 0;
        for (c, r) in &pairs {
            let refs: Vec<Vec<usize>> = r.iter().map(|x| ids(x)).collect();
            let ours = bleu_n(&ids(c), &refs, 4);
            let want = oracle_bleu(c, r);
            assert!((ours - want).abs() < 1e-9, "{c:?} {r:?}: {ours} vs {want}");
            nonzero += usize::from(want > 0.0);
        }
        assert!(nonzero >= 5, "oracle comparison is vacuous");
    }
}

#[test]
fn cider_matches_oracle_on_twenty_pairs() {
    for seed in [1, 2, 3] {
        let pairs = twenty_pairs(seed);
        let corpus: Vec<Vec<Vec<&str>>> = pairs.iter().map(|(_, r)| r.clone()).collect();
        let refs_ids: Vec<Vec<Vec<usize>>> = corpus.iter().map(|img| img.iter().map(|s| ids(s)).collect()).collect();
        let idf = IdfTable::build(&refs_ids, 4);
        for ((c, r), rid) in pairs.iter().zip(&refs_ids) {
            let ours = cider_d(&ids(c), rid, &idf, CiderParams::default());
            let want = oracle_cider(c, r, &corpus, 10.0);
            assert!((ours - want).abs() < 1e-9, "{ours} vs {want}");
        }
    }
}

#[test]
fn hand_counted_examples() {
    let refs = vec![ids(&["cat", "mat"])];
    assert_eq!(clipped_precision(&ids(&["cat", "cat", "cat"]), &refs, 1), (1, 3));
    let s = ids(&["red", "cat", "on", "mat"]);
    assert_eq!(bleu_n(&s, std::slice::from_ref(&s), 4), 1.0);
    assert_eq!(bleu_n(&ids(&["red", "red"]), &[ids(&["cat", "mat"])], 4), 0.0);
}

#[test]
fn cider_self_match_and_length_penalty() {
    // A reference shared by no other image has idf ln 3 on every n-gram.
    let a = vec![1, 2, 3, 4, 5];
    let corpus = vec![vec![a.clone()], vec![vec![6, 7, 8]], vec![vec![9, 10, 11, 12]]];
    let idf = IdfTable::build(&corpus, 4);
    assert!((cider_d(&a, &corpus[0], &idf, CiderParams::default()) - 10.0).abs() < 1e-9);
    // Six extra tokens outside the idf universe leave the clipped dot
    // unchanged but add norm, so compare against the penalty-free score.
    let p = CiderParams::default();
    let long: Vec<usize> = a.iter().copied().chain(100..106).collect();
    let with = cider_d(&long, &corpus[0], &idf, p);
    let without = cider_d(&long, &corpus[0], &idf, CiderParams { sigma: 1e12, ..p });
    assert!((with / without - (-0.5f64).exp()).abs() < 1e-6);
    // Identical profile, length six tokens longer.
    let prof = ngram_profile(&a, 4);
    let refs = [(prof.clone(), a.len())];
    let shifted = cider_d_profile(&prof, a.len() + 6, &refs, &idf, p);
    assert!((shifted - 10.0 * (-0.5f64).exp()).abs() < 1e-6);
}

proptest! {
    #![proptest_config(seeded(64))]

    #[test]
    fn metrics_ignore_reference_order(seed in any::<u64>()) {
        let pairs = twenty_pairs(seed);
        let refs_ids: Vec<Vec<Vec<usize>>> = pairs.iter().map(|(_, r)| r.iter().map(|s| ids(s)).collect()).collect();
        let idf = IdfTable::build(&refs_ids, 4);
        let mut rng = Rng::derive(seed, 1);
        for ((c, _), r) in pairs.iter().zip(&refs_ids) {
            let mut shuffled = r.clone();
            rng.shuffle(&mut shuffled);
            let c = ids(c);
            prop_assert!((bleu_n(&c, r, 4) - bleu_n(&c, &shuffled, 4)).abs() < 1e-12);
            let p = CiderParams::default();
            prop_assert!((cider_d(&c, r, &idf, p) - cider_d(&c, &shuffled, &idf, p)).abs() < 1e-12);
        }
    }

    #[test]
    fn cider_ignores_vocabulary_renaming(seed in any::<u64>(), offset in 1usize..1000) {
        let pairs = twenty_pairs(seed);
        let mut perm: Vec<usize> = (0..WORDS.len()).collect();
        Rng::derive(seed, 2).shuffle(&mut perm);
        let rename = |s: &[usize]| s.iter().map(|&t| offset + perm[t - 10] * 7).collect::<Vec<_>>();
        let refs: Vec<Vec<Vec<usize>>> = pairs.iter().map(|(_, r)| r.iter().map(|s| ids(s)).collect()).collect();
        let renamed: Vec<Vec<Vec<usize>>> = refs.iter().map(|img| img.iter().map(|s| rename(s)).collect()).collect();
        let (idf, idf2) = (IdfTable::build(&refs, 4), IdfTable::build(&renamed, 4));
        let p = CiderParams::default();
        for (((c, _), r), r2) in pairs.iter().zip(&refs).zip(&renamed) {
            let c = ids(c);
            prop_assert!((cider_d(&c, r, &idf, p) - cider_d(&rename(&c), r2, &idf2, p)).abs() < 1e-9);
        }
    }

    #[test]
    fn doubling_scale_doubles_cider(seed in any::<u64>()) {
        let pairs = twenty_pairs(seed);
        let refs: Vec<Vec<Vec<usize>>> = pairs.iter().map(|(_, r)| r.iter().map(|s| ids(s)).collect()).collect();
        let idf = IdfTable::build(&refs, 4);
        let p = CiderParams::default();
        let p2 = CiderParams { scale: 2.0 * p.scale, ..p };
        for ((c, _), r) in pairs.iter().zip(&refs) {
            let c = ids(c);
            prop_assert_eq!(cider_d(&c, r, &idf, p2), 2.0 * cider_d(&c, r, &idf, p));
        }
        let cands: Vec<Vec<usize>> = pairs.iter().map(|(c, _)| ids(c)).collect();
        let b = corpus_bleu(&cands, &refs, 4);
        prop_assert!((0.0..=1.0).contains(&b));
    }
}
