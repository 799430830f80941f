//! Oracles shared by the integration tests and the acceptance suite. They
//! share no code with the library beyond its public types.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use cnm_core::decode::StepModel;
use cnm_core::tensor::rng::Rng;
use cnm_core::Result;

pub const WORDS: [&str; 4] = ["red", "cat", "on", "mat"];

pub fn grams(s: &[&str], n: usize) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w.join(" ")).or_insert(0) += 1;
        }
    }
    m
}

pub fn oracle_bleu(cand: &[&str], refs: &[Vec<&str>]) -> f64 {
    let mut logp = 0.0;
    for n in 1..=4 {
        let c = grams(cand, n);
        let total: usize = c.values().sum();
        let mut hit = 0;
        for (g, k) in &c {
            let best = refs.iter().map(|r| *grams(r, n).get(g).unwrap_or(&0)).max().unwrap();
            hit += (*k).min(best);
        }
        if hit == 0 {
            return 0.0;
        }
        logp += (hit as f64 / total as f64).ln() / 4.0;
    }
    let c = cand.len() as i64;
    let mut r = refs[0].len() as i64;
    for x in refs {
        let l = x.len() as i64;
        if (l - c).abs() < (r - c).abs() || ((l - c).abs() == (r - c).abs() && l < r) {
            r = l;
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * logp.exp()
}

/// Standard CIDEr-D: per-image document frequencies, raw-count tf, clipped
/// dot product, Gaussian penalty on the token-length difference.
pub fn oracle_cider(cand: &[&str], refs: &[Vec<&str>], corpus: &[Vec<Vec<&str>>], scale: f64) -> f64 {
    let mut df: HashMap<String, f64> = HashMap::new();
    for image in corpus {
        let mut seen = HashSet::new();
        for r in image {
            for n in 1..=4 {
                seen.extend(grams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (corpus.len() as f64).ln();
    let vec = |s: &[&str], n: usize| -> HashMap<String, f64> {
        grams(s, n)
            .into_iter()
            .map(|(g, k)| {
                let d = df.get(&g).copied().unwrap_or(0.0).max(1.0);
                (g, k as f64 * (log_n - d.ln()))
            })
            .collect()
    };
    let norm = |v: &HashMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let mut score = 0.0;
    for r in refs {
        let delta = cand.len() as f64 - r.len() as f64;
        let pen = (-delta * delta / 72.0).exp();
        for n in 1..=4 {
            let (vh, vr) = (vec(cand, n), vec(r, n));
            let mut dot = 0.0;
            for (g, h) in &vh {
                if let Some(x) = vr.get(g) {
                    dot += h.min(*x) * x;
                }
            }
            let (a, b) = (norm(&vh), norm(&vr));
            if a > 0.0 && b > 0.0 {
                score += pen * dot / (a * b) / 4.0;
            }
        }
    }
    scale * score / refs.len() as f64
}

pub fn ids(s: &[&str]) -> Vec<usize> {
    s.iter().map(|w| 10 + WORDS.iter().position(|x| x == w).unwrap()).collect()
}

pub fn random_sentence(rng: &mut Rng) -> Vec<&'static str> {
    let len = 4 + rng.below(8);
    (0..len).map(|_| WORDS[rng.below(WORDS.len())]).collect()
}

pub type Pair = (Vec<&'static str>, Vec<Vec<&'static str>>);

pub fn twenty_pairs(seed: u64) -> Vec<Pair> {
    let mut rng = Rng::new(seed);
    (0..20)
        .map(|_| {
            let cand = random_sentence(&mut rng);
            // Mutated copies of the candidate, so that higher-order matches
            // actually occur, plus the odd unrelated sentence.
            let refs = (0..1 + rng.below(4))
                .map(|_| {
                    if rng.bernoulli(0.2) {
                        return random_sentence(&mut rng);
                    }
                    let mut r: Vec<&str> = cand
                        .iter()
                        .map(|&w| if rng.bernoulli(0.25) { WORDS[rng.below(WORDS.len())] } else { w })
                        .collect();
                    match rng.below(3) {
                        0 => r.push(WORDS[rng.below(WORDS.len())]),
                        1 if r.len() > 1 => {
                            r.pop();
                        }
                        _ => {}
                    }
                    r
                })
                .collect();
            (cand, refs)
        })
        .collect()
}

/// Table-driven decoder stub: the next-token distribution depends on the
/// tokens emitted so far. Token 0 is the begin token and 1 the end token.
pub struct Stub {
    pub table: fn(&[usize]) -> Vec<f64>,
}

impl StepModel for Stub {
    type State = Vec<usize>;
    fn start(&self) -> Vec<usize> {
        Vec::new()
    }
    fn step(&self, s: &Vec<usize>, prev: usize) -> Result<(Vec<f64>, Vec<usize>)> {
        let mut hist = s.clone();
        if prev != 0 {
            hist.push(prev);
        }
        Ok(((self.table)(&hist).iter().map(|x| x.ln()).collect(), hist))
    }
    fn bos(&self) -> usize {
        0
    }
    fn eos(&self) -> usize {
        1
    }
}

/// Greedy picks token 2 first, but token 3 leads to a near-certain ending.
pub fn trap(hist: &[usize]) -> Vec<f64> {
    match hist {
        [] => vec![0.0, 0.1, 0.5, 0.4],
        [2] => vec![0.0, 0.34, 0.33, 0.33],
        [3] => vec![0.0, 0.95, 0.03, 0.02],
        [2, ..] => vec![0.0, 0.4, 0.3, 0.3],
        _ => vec![0.0, 0.9, 0.05, 0.05],
    }
}

/// Best sequence of at most `max_len` tokens by enumeration.
pub fn exhaustive_best(table: fn(&[usize]) -> Vec<f64>, max_len: usize) -> (Vec<usize>, f64) {
    fn go(table: fn(&[usize]) -> Vec<f64>, hist: &mut Vec<usize>, lp: f64, max_len: usize, best: &mut (Vec<usize>, f64)) {
        if hist.last() == Some(&1) || hist.len() == max_len {
            if lp > best.1 {
                *best = (hist.clone(), lp);
            }
            return;
        }
        for (tok, &p) in table(hist).iter().enumerate() {
            if p > 0.0 {
                hist.push(tok);
                go(table, hist, lp + p.ln(), max_len, best);
                hist.pop();
            }
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    go(table, &mut Vec::new(), 0.0, max_len, &mut best);
    best
}
