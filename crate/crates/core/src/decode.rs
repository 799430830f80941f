//! Greedy, beam and sampling decoders over any step-wise language model.

use crate::controller::GumbelNoise;
use crate::error::Result;
use crate::model::{CnmModel, EncodedValues, StateValues, StepTrace};
use crate::tensor::rng::Rng;
use crate::tensor::{argmax, Real};

/// Anything that turns a state and a previous token into log-probabilities.
pub trait StepModel {
    type State: Clone;

    fn start(&self) -> Self::State;
    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
    fn bos(&self) -> usize;
    fn eos(&self) -> usize;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis<S> {
    /// Emitted tokens, excluding the begin token.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: S,
    pub finished: bool,
}

impl<S> BeamHypothesis<S> {
    fn score(&self, normalize: bool) -> f64 {
        if normalize && !self.tokens.is_empty() {
            self.log_prob / self.tokens.len() as f64
        } else {
            self.log_prob
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
    /// Rank by mean per-token log-probability instead of the raw sum.
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            width: 5,
            max_len: 16,
            length_normalize: false,
        }
    }
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Vec<usize>> {
    let mut state = model.start();
    let mut prev = model.bos();
    let mut out = Vec::new();
    while out.len() < max_len {
        let (lp, next) = model.step(&state, prev)?;
        let tok = argmax(&lp);
        out.push(tok);
        if tok == model.eos() {
            break;
        }
        state = next;
        prev = tok;
    }
    Ok(out)
}

/// Length-capped beam search. Finished hypotheses stay in the pool and
/// compete with live ones on score. Equal scores rank the lexicographically
/// smaller token sequence first.
pub fn beam_search<M: StepModel>(model: &M, cfg: BeamConfig) -> Result<Vec<BeamHypothesis<M::State>>> {
    let width = cfg.width.max(1);
    let mut beam = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.start(),
        finished: false,
    }];
    let rank = |a: &BeamHypothesis<M::State>, b: &BeamHypothesis<M::State>| {
        b.score(cfg.length_normalize)
            .total_cmp(&a.score(cfg.length_normalize))
            .then_with(|| a.tokens.cmp(&b.tokens))
    };
    for _ in 0..cfg.max_len {
        if beam.iter().all(|h| h.finished) {
            break;
        }
        let mut pool = Vec::new();
        for h in &beam {
            if h.finished {
                pool.push(h.clone());
                continue;
            }
            let prev = h.tokens.last().copied().unwrap_or_else(|| model.bos());
            let (lp, next) = model.step(&h.state, prev)?;
            // only the top `width` extensions of a hypothesis can survive
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(width) {
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                pool.push(BeamHypothesis {
                    tokens,
                    log_prob: h.log_prob + lp[tok],
                    state: next.clone(),
                    finished: tok == model.eos(),
                });
            }
        }
        pool.sort_by(rank);
        pool.truncate(width);
        beam = pool;
    }
    beam.sort_by(rank);
    Ok(beam)
}

/// Draw one token per step from the model distribution. Returns the tokens
/// and the log-probability of each draw.
pub fn sample_decode<M: StepModel>(model: &M, rng: &mut Rng, max_len: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut state = model.start();
    let mut prev = model.bos();
    let (mut toks, mut lps) = (Vec::new(), Vec::new());
    while toks.len() < max_len {
        let (lp, next) = model.step(&state, prev)?;
        let probs: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
        let tok = rng.categorical(&probs);
        toks.push(tok);
        lps.push(lp[tok]);
        if tok == model.eos() {
            break;
        }
        state = next;
        prev = tok;
    }
    Ok((toks, lps))
}

/// A trained model bound to one encoded image.
pub struct ImageDecoder<'m, F: Real = f32> {
    pub model: &'m CnmModel<F>,
    pub encoded: EncodedValues<F>,
    pub bos: usize,
    pub eos: usize,
}

impl<'m, F: Real> ImageDecoder<'m, F> {
    pub fn new(model: &'m CnmModel<F>, encoded: EncodedValues<F>, bos: usize, eos: usize) -> Self {
        Self {
            model,
            encoded,
            bos,
            eos,
        }
    }

    /// Re-run a token sequence, collecting per-step traces.
    pub fn trace(&self, tokens: &[usize]) -> Result<Vec<StepTrace>> {
        let mut state = self.model.initial_state_values();
        let mut prev = self.bos;
        let mut out = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let (_, next, tr) = self
                .model
                .step_values(&self.encoded, &state, prev, &mut GumbelNoise::Pinned)?;
            out.push(tr);
            state = next;
            prev = tok;
        }
        Ok(out)
    }
}

impl<F: Real> StepModel for ImageDecoder<'_, F> {
    type State = StateValues<F>;

    fn start(&self) -> Self::State {
        self.model.initial_state_values()
    }

    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)> {
        let (lp, next, _) = self
            .model
            .step_values(&self.encoded, state, prev, &mut GumbelNoise::Pinned)?;
        Ok((lp.iter().map(|x| x.as_f64()).collect(), next))
    }

    fn bos(&self) -> usize {
        self.bos
    }

    fn eos(&self) -> usize {
        self.eos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Table-driven stub: the distribution depends on the tokens emitted so far.
    struct Stub {
        table: fn(&[usize]) -> Vec<f64>,
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
            let p = (self.table)(&hist);
            Ok((p.iter().map(|x| x.ln()).collect(), hist))
        }
        fn bos(&self) -> usize {
            0
        }
        fn eos(&self) -> usize {
            1
        }
    }

    fn trap(hist: &[usize]) -> Vec<f64> {
        // greedy takes 2 first, but 3 leads to a near-certain ending
        match hist {
            [] => vec![0.0, 0.1, 0.5, 0.4],
            [2] => vec![0.0, 0.34, 0.33, 0.33],
            [3] => vec![0.0, 0.95, 0.03, 0.02],
            [2, ..] => vec![0.0, 0.4, 0.3, 0.3],
            _ => vec![0.0, 0.9, 0.05, 0.05],
        }
    }

    fn exhaustive_best(table: fn(&[usize]) -> Vec<f64>, max_len: usize) -> (Vec<usize>, f64) {
        fn go(table: fn(&[usize]) -> Vec<f64>, hist: &mut Vec<usize>, lp: f64, max_len: usize, best: &mut (Vec<usize>, f64)) {
            if hist.last() == Some(&1) || hist.len() == max_len {
                if lp > best.1 {
                    *best = (hist.clone(), lp);
                }
                return;
            }
            let p = table(&hist.iter().copied().filter(|&t| t != 1).collect::<Vec<_>>());
            for (tok, &pt) in p.iter().enumerate() {
                if pt > 0.0 {
                    hist.push(tok);
                    go(table, hist, lp + pt.ln(), max_len, best);
                    hist.pop();
                }
            }
        }
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        go(table, &mut Vec::new(), 0.0, max_len, &mut best);
        best
    }

    #[test]
    fn end_first_gives_single_token() {
        let m = Stub {
            table: |_| vec![0.0, 1.0, 0.0, 0.0],
        };
        assert_eq!(greedy_decode(&m, 5).unwrap(), vec![1]);
    }

    #[test]
    fn beam_two_finds_global_optimum() {
        let m = Stub { table: trap };
        let greedy = greedy_decode(&m, 3).unwrap();
        assert_eq!(greedy[0], 2);
        let (best, best_lp) = exhaustive_best(trap, 3);
        let beam = beam_search(
            &m,
            BeamConfig {
                width: 2,
                max_len: 3,
                length_normalize: false,
            },
        )
        .unwrap();
        assert_eq!(beam[0].tokens, best);
        assert!((beam[0].log_prob - best_lp).abs() < 1e-12);
        assert!(beam.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
    }

    #[test]
    fn beam_one_matches_greedy() {
        let m = Stub { table: trap };
        let beam = beam_search(
            &m,
            BeamConfig {
                width: 1,
                max_len: 3,
                length_normalize: false,
            },
        )
        .unwrap();
        assert_eq!(beam[0].tokens, greedy_decode(&m, 3).unwrap());
    }

    #[test]
    fn one_hot_sampling_equals_greedy() {
        let m = Stub {
            table: |h| match h.len() {
                0 => vec![0.0, 0.0, 1.0, 0.0],
                1 => vec![0.0, 0.0, 0.0, 1.0],
                _ => vec![0.0, 1.0, 0.0, 0.0],
            },
        };
        let (s, lp) = sample_decode(&m, &mut Rng::new(9), 10).unwrap();
        assert_eq!(s, greedy_decode(&m, 10).unwrap());
        assert!(lp.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn first_token_frequencies_match() {
        let m = Stub {
            table: |_| vec![0.0, 0.2, 0.5, 0.3],
        };
        let mut rng = Rng::new(42);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[sample_decode(&m, &mut rng, 1).unwrap().0[0]] += 1;
        }
        for (c, p) in counts.iter().zip([0.0, 0.2, 0.5, 0.3]) {
            assert!((*c as f64 / 10_000.0 - p).abs() < 0.02);
        }
        let a = sample_decode(&m, &mut Rng::new(1), 8).unwrap();
        let b = sample_decode(&m, &mut Rng::new(1), 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn greedy_respects_max_len() {
        let m = Stub {
            table: |_| vec![0.0, 0.1, 0.9, 0.0],
        };
        for n in 1..6 {
            assert_eq!(greedy_decode(&m, n).unwrap().len(), n);
        }
    }
}
