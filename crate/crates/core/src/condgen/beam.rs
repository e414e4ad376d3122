use std::cmp::Ordering;

use crate::autodiff::{AutodiffError, Tensor};
use crate::seqnets::{DecoderState, NetworkBundle};

/// An autoregressive next-token model that advances a batch of hypotheses at once.
pub trait StepDecoder {
    type State;

    fn vocab_size(&self) -> usize;
    fn terminal(&self) -> usize;
    /// State of a single empty hypothesis.
    fn start(&self) -> Self::State;
    /// Feeds each row its previous token (`None` at the first step) and
    /// returns the new state with row-major next-token log-probabilities.
    fn advance(&self, state: &Self::State, prev: Option<&[usize]>) -> Result<(Self::State, Vec<f64>), AutodiffError>;
    /// The given rows of `state`, in order; rows may repeat.
    fn select(&self, state: &Self::State, rows: &[usize]) -> Self::State;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// Emitted tokens, terminal included when finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    fn terminal_position(&self) -> usize {
        if self.finished {
            self.tokens.len()
        } else {
            usize::MAX
        }
    }
}

/// Higher log-probability first, then earlier terminal, then lexicographic tokens.
pub fn rank(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then(a.terminal_position().cmp(&b.terminal_position()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Picks the finished hypothesis when exactly one of the two is finished.
fn prefer(a: BeamHypothesis, b: BeamHypothesis) -> BeamHypothesis {
    match (a.finished, b.finished) {
        (true, false) => a,
        (false, true) => b,
        _ if rank(&b, &a) == Ordering::Less => b,
        _ => a,
    }
}

/// Follows the most probable token at every step, resolving ties as [`rank`] does.
pub fn greedy_decode<D: StepDecoder>(dec: &D, max_len: usize) -> Result<BeamHypothesis, AutodiffError> {
    let (v, term) = (dec.vocab_size(), dec.terminal());
    let mut hyp = BeamHypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false };
    let mut state = dec.start();
    while hyp.tokens.len() < max_len {
        let prev = hyp.tokens.last().map(|&t| [t]);
        let (next, lp) = dec.advance(&state, prev.as_ref().map(|p| &p[..]))?;
        // Starting from the terminal makes it win ties; otherwise the smallest index wins.
        let mut best = term;
        for tok in 0..v {
            if lp[tok] > lp[best] {
                best = tok;
            }
        }
        hyp.log_prob += lp[best];
        hyp.tokens.push(best);
        if best == term {
            hyp.finished = true;
            break;
        }
        state = next;
    }
    Ok(hyp)
}

/// Beam search of width `k` over sequences of at most `max_len` tokens.
///
/// Finished hypotheses compete for the `k` slots with open ones. The result is
/// the best finished hypothesis that ever held a slot, or else the best open
/// one at `max_len`; the greedy path is also considered so the result never
/// scores below greedy decoding.
pub fn beam_search<D: StepDecoder>(dec: &D, k: usize, max_len: usize) -> Result<BeamHypothesis, AutodiffError> {
    assert!(k >= 1, "beam width must be positive");
    let (v, term) = (dec.vocab_size(), dec.terminal());
    let mut state = dec.start();
    let mut open = vec![BeamHypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }];
    let mut closed: Vec<BeamHypothesis> = Vec::new();
    let mut best_closed: Option<BeamHypothesis> = None;
    for _ in 0..max_len {
        let prev: Vec<usize> = open.iter().filter_map(|h| h.tokens.last().copied()).collect();
        let (next, lp) = dec.advance(&state, if prev.is_empty() { None } else { Some(&prev) })?;
        let mut pool: Vec<(BeamHypothesis, usize)> = closed.drain(..).map(|h| (h, usize::MAX)).collect();
        for (row, h) in open.iter().enumerate() {
            for tok in 0..v {
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                let hyp = BeamHypothesis { tokens, log_prob: h.log_prob + lp[row * v + tok], finished: tok == term };
                pool.push((hyp, row));
            }
        }
        pool.sort_by(|a, b| rank(&a.0, &b.0));
        pool.truncate(k);
        let mut rows = Vec::new();
        open.clear();
        for (h, row) in pool {
            if h.finished {
                closed.push(h);
            } else {
                rows.push(row);
                open.push(h);
            }
        }
        if let Some(first) = closed.first() {
            if best_closed.as_ref().is_none_or(|b| rank(first, b) == Ordering::Less) {
                best_closed = Some(first.clone());
            }
        }
        if open.is_empty() {
            break;
        }
        state = dec.select(&next, &rows);
    }
    let beam = best_closed.or_else(|| open.into_iter().next()).expect("beam holds at least one hypothesis");
    Ok(prefer(beam, greedy_decode(dec, max_len)?))
}

/// Decoding from a trained network for one fixed `y ⊕ z`.
pub struct BundleDecoder<'a> {
    bundle: &'a NetworkBundle,
    features: Vec<f64>,
}

impl<'a> BundleDecoder<'a> {
    pub fn new(bundle: &'a NetworkBundle, y: &[f64], z: &[f64]) -> Self {
        assert_eq!(y.len(), bundle.config.props, "property dimension");
        assert_eq!(z.len(), bundle.config.latent, "latent dimension");
        BundleDecoder { bundle, features: [y, z].concat() }
    }
}

impl StepDecoder for BundleDecoder<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.bundle.config.vocab
    }

    fn terminal(&self) -> usize {
        self.bundle.config.vocab - 1
    }

    fn start(&self) -> DecoderState {
        self.bundle.decoder_start(1)
    }

    fn advance(&self, state: &DecoderState, prev: Option<&[usize]>) -> Result<(DecoderState, Vec<f64>), AutodiffError> {
        let rows = state.rows();
        let f = Tensor::new(vec![rows, self.features.len()], self.features.repeat(rows))?;
        let (s, lp) = self.bundle.decoder_next(&f, state, prev)?;
        Ok((s, lp.into_data()))
    }

    fn select(&self, state: &DecoderState, rows: &[usize]) -> DecoderState {
        state.select(rows)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng;
    use crate::seqnets::NetConfig;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::Rng;

    /// Next-token distributions drawn from a seeded hash of the whole prefix.
    pub(crate) struct TableDecoder {
        pub vocab: usize,
        pub seed: u64,
        /// Scale of the random logits; large values make the model peaked.
        pub sharpness: f64,
    }

    impl TableDecoder {
        pub(crate) fn distribution(&self, prefix: &[usize]) -> Vec<f64> {
            let key = prefix.iter().fold(self.seed, |h, &t| rng::derive(h, &t.to_string()));
            let mut r = rng::stream(key, prefix.len() as u64);
            let logits: Vec<f64> = (0..self.vocab).map(|_| self.sharpness * r.random_range(-1.0..1.0)).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            logits.iter().map(|l| l - lse).collect()
        }
    }

    impl StepDecoder for TableDecoder {
        type State = Vec<Vec<usize>>;

        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn terminal(&self) -> usize {
            self.vocab - 1
        }

        fn start(&self) -> Self::State {
            vec![Vec::new()]
        }

        fn advance(&self, state: &Self::State, prev: Option<&[usize]>) -> Result<(Self::State, Vec<f64>), AutodiffError> {
            let next: Vec<Vec<usize>> = match prev {
                None => state.clone(),
                Some(p) => state.iter().zip(p).map(|(s, &t)| [&s[..], &[t]].concat()).collect(),
            };
            let lp = next.iter().flat_map(|s| self.distribution(s)).collect();
            Ok((next, lp))
        }

        fn select(&self, state: &Self::State, rows: &[usize]) -> Self::State {
            rows.iter().map(|&r| state[r].clone()).collect()
        }
    }

    /// Every finished sequence of at most `max_len` tokens, scored left to right.
    pub(crate) fn exhaustive(dec: &TableDecoder, max_len: usize) -> BeamHypothesis {
        let term = dec.vocab - 1;
        let mut best: Option<BeamHypothesis> = None;
        let mut stack = vec![(Vec::new(), 0.0)];
        while let Some((prefix, lp)) = stack.pop() {
            let dist = dec.distribution(&prefix);
            for (tok, &l) in dist.iter().enumerate() {
                let mut tokens = prefix.clone();
                tokens.push(tok);
                let score = lp + l;
                if tok == term {
                    let h = BeamHypothesis { tokens, log_prob: score, finished: true };
                    if best.as_ref().is_none_or(|b| rank(&h, b) == Ordering::Less) {
                        best = Some(h);
                    }
                } else if tokens.len() < max_len {
                    stack.push((tokens, score));
                }
            }
        }
        best.expect("terminal always has positive probability")
    }

    #[test]
    fn full_width_beam_is_exhaustive() {
        for seed in 0..50 {
            let dec = TableDecoder { vocab: 4, seed, sharpness: 2.0 };
            assert_eq!(beam_search(&dec, 1024, 5).unwrap(), exhaustive(&dec, 5), "seed {seed}");
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..50 {
            let dec = TableDecoder { vocab: 5, seed, sharpness: 1.5 };
            assert_eq!(beam_search(&dec, 1, 8).unwrap(), greedy_decode(&dec, 8).unwrap());
        }
    }

    /// Puts all mass on `path` and then the terminal.
    struct Deterministic {
        path: Vec<usize>,
    }

    impl StepDecoder for Deterministic {
        type State = Vec<usize>;
        fn vocab_size(&self) -> usize {
            4
        }
        fn terminal(&self) -> usize {
            3
        }
        fn start(&self) -> Vec<usize> {
            vec![0]
        }
        fn advance(&self, state: &Vec<usize>, prev: Option<&[usize]>) -> Result<(Vec<usize>, Vec<f64>), AutodiffError> {
            let next: Vec<usize> = state.iter().map(|&n| n + usize::from(prev.is_some())).collect();
            let lp = next
                .iter()
                .flat_map(|&n| {
                    let want = self.path.get(n).copied().unwrap_or(3);
                    (0..4).map(move |t| if t == want { 0.0 } else { -1e9 })
                })
                .collect();
            Ok((next, lp))
        }
        fn select(&self, state: &Vec<usize>, rows: &[usize]) -> Vec<usize> {
            rows.iter().map(|&r| state[r]).collect()
        }
    }

    #[test]
    fn deterministic_model_yields_its_sequence_for_any_width() {
        let dec = Deterministic { path: vec![2, 0, 1, 1] };
        for k in [1, 2, 5, 64] {
            let h = beam_search(&dec, k, 10).unwrap();
            assert_eq!(h.tokens, [2, 0, 1, 1, 3]);
            assert!(h.finished);
        }
    }

    #[test]
    fn unfinished_result_at_the_length_cap() {
        let dec = Deterministic { path: vec![0; 20] };
        let h = beam_search(&dec, 1, 6).unwrap();
        assert_eq!(h.tokens, [0; 6]);
        assert!(!h.finished);
        // A wider beam keeps an improbable finished hypothesis, which outranks open ones.
        let h = beam_search(&dec, 3, 6).unwrap();
        assert_eq!(h.tokens, [3]);
        assert!(h.finished);
    }

    #[test]
    fn ties_prefer_earlier_terminal_then_smaller_tokens() {
        let a = BeamHypothesis { tokens: vec![1, 3], log_prob: -1.0, finished: true };
        let b = BeamHypothesis { tokens: vec![0, 1, 3], log_prob: -1.0, finished: true };
        let c = BeamHypothesis { tokens: vec![0, 2, 3], log_prob: -1.0, finished: true };
        let d = BeamHypothesis { tokens: vec![0, 0], log_prob: -1.0, finished: false };
        let mut v = vec![d.clone(), c.clone(), b.clone(), a.clone()];
        v.sort_by(rank);
        assert_eq!(v, [a, b, c, d]);
    }

    #[test]
    fn bundle_decoder_matches_single_step_distributions() {
        let bundle = NetworkBundle::new(NetConfig { vocab: 6, props: 2, latent: 3, hidden: 7, layers: 2 }, 8);
        let (y, z) = ([0.3, -0.4], [1.0, 0.0, -0.5]);
        let dec = BundleDecoder::new(&bundle, &y, &z);
        let h = beam_search(&dec, 3, 12).unwrap();
        let mut lp = 0.0;
        for i in 0..h.tokens.len() {
            lp += bundle.decoder_step_distribution(&y, &z, &h.tokens[..i]).unwrap()[h.tokens[i]];
        }
        assert!((lp - h.log_prob).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn beam_never_scores_below_greedy(seed in 0u64..10_000, k in 1usize..6, sharp in 0.5f64..4.0) {
            let dec = TableDecoder { vocab: 5, seed, sharpness: sharp };
            let b = beam_search(&dec, k, 7).unwrap();
            let g = greedy_decode(&dec, 7).unwrap();
            if g.finished {
                prop_assert!(b.finished);
            }
            if b.finished == g.finished {
                prop_assert!(b.log_prob >= g.log_prob);
            }
            prop_assert_eq!(b.finished, b.tokens.last() == Some(&4));
            prop_assert!(b.log_prob <= 0.0);
        }
    }
}
