use crate::autodiff::{AutodiffError, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::TokenSequence;
use crate::rng;

use super::gru::{GruLayer, StepInput};
use super::heads::{Gaussian, GaussianHead};
use super::{NetConfig, SeqBatch};

/// Rows per tape when running inference over many sequences.
const INFERENCE_CHUNK: usize = 64;

/// Stacked bidirectional GRU summarizing a sequence as the concatenation of
/// the top layer's final forward and final backward states.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub hidden: usize,
    fwd: Vec<GruLayer>,
    bwd: Vec<GruLayer>,
}

impl BiGru {
    fn new<R: rand::Rng>(
        store: &mut ParamStore,
        prefix: &str,
        vocab: usize,
        features: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let mut fwd = Vec::with_capacity(layers);
        let mut bwd = Vec::with_capacity(layers);
        for l in 0..layers {
            let (input, feats) = if l == 0 { (vocab, features) } else { (2 * hidden, 0) };
            fwd.push(GruLayer::new(store, &format!("{prefix}.fwd.{l}"), input, feats, hidden, rng));
            bwd.push(GruLayer::new(store, &format!("{prefix}.bwd.{l}"), input, feats, hidden, rng));
        }
        BiGru { hidden, fwd, bwd }
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.fwd.iter().chain(&self.bwd).flat_map(GruLayer::param_ids).collect()
    }

    /// Forward layers paired with backward layers, for weight-tying experiments.
    pub fn layers(&self) -> impl Iterator<Item = (&GruLayer, &GruLayer)> {
        self.fwd.iter().zip(&self.bwd)
    }

    /// `[batch x 2h]` summary; `features` (`[batch x f]`) joins every step of the first layer.
    pub fn summary(
        &self,
        tape: &Tape<'_>,
        p: &Bound,
        batch: &SeqBatch,
        features: Option<Var>,
    ) -> Result<Var, AutodiffError> {
        let (steps, rows, h) = (batch.steps(), batch.batch(), self.hidden);
        let masks: Vec<Option<Var>> = (0..steps)
            .map(|t| {
                batch.active(t).map(|a| {
                    let data = a.iter().flat_map(|&v| std::iter::repeat_n(v, h)).collect();
                    tape.constant(Tensor::new(vec![rows, h], data).expect("mask shape"))
                })
            })
            .collect();
        let mut dense: Vec<Var> = Vec::new();
        let last = self.fwd.len() - 1;
        for (l, (lf, lb)) in self.fwd.iter().zip(&self.bwd).enumerate() {
            let feats = if l == 0 { features } else { None };
            let run = |layer: &GruLayer, reverse: bool| -> Result<Vec<Var>, AutodiffError> {
                let c = layer.constant_projection(tape, p, feats)?;
                let mut state = tape.constant(Tensor::zeros(&[rows, h]));
                let mut outs = vec![state; steps];
                let order: Box<dyn Iterator<Item = usize>> =
                    if reverse { Box::new((0..steps).rev()) } else { Box::new(0..steps) };
                for t in order {
                    let x = if l == 0 { StepInput::Tokens(Some(batch.tokens_at(t))) } else { StepInput::Dense(dense[t]) };
                    let proj = layer.project(tape, p, x, c, rows)?;
                    state = layer.cell(tape, p, state, proj, masks[t])?;
                    outs[t] = state;
                }
                Ok(outs)
            };
            let of = run(lf, false)?;
            let ob = run(lb, true)?;
            if l == last {
                return tape.concat(&[of[steps - 1], ob[0]]);
            }
            dense = of.iter().zip(&ob).map(|(&a, &b)| tape.concat(&[a, b])).collect::<Result<_, _>>()?;
        }
        unreachable!("at least one layer")
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    layers: Vec<GruLayer>,
    out_w: ParamId,
    out_b: ParamId,
}

impl Decoder {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.layers.iter().flat_map(GruLayer::param_ids).collect();
        ids.extend([self.out_w, self.out_b]);
        ids
    }

    fn constants(&self, tape: &Tape<'_>, p: &Bound, features: Var) -> Result<Vec<Var>, AutodiffError> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| layer.constant_projection(tape, p, (l == 0).then_some(features)))
            .collect()
    }

    fn step(
        &self,
        tape: &Tape<'_>,
        p: &Bound,
        hidden: &[Var],
        prev: Option<&[usize]>,
        constants: &[Var],
        rows: usize,
    ) -> Result<Vec<Var>, AutodiffError> {
        let mut x = StepInput::Tokens(prev);
        let mut next = Vec::with_capacity(self.layers.len());
        for ((layer, &h), &c) in self.layers.iter().zip(hidden).zip(constants) {
            let proj = layer.project(tape, p, x, c, rows)?;
            let out = layer.cell(tape, p, h, proj, None)?;
            next.push(out);
            x = StepInput::Dense(out);
        }
        Ok(next)
    }

    fn logits(&self, tape: &Tape<'_>, p: &Bound, top: Var) -> Result<Var, AutodiffError> {
        tape.add(tape.matmul(top, p.var(self.out_w))?, p.var(self.out_b))
    }
}

/// Per-layer decoder hidden states, `[rows x h]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<Tensor>,
}

impl DecoderState {
    pub fn rows(&self) -> usize {
        self.hidden[0].outer()
    }

    /// State made of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> DecoderState {
        let hidden = self
            .hidden
            .iter()
            .map(|t| {
                let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
                Tensor::new(vec![rows.len(), t.last_dim()], data).expect("row selection")
            })
            .collect();
        DecoderState { hidden }
    }
}

/// Parameters and topology of the predictor, encoder and decoder.
#[derive(Debug, Clone)]
pub struct NetworkBundle {
    pub config: NetConfig,
    pub params: ParamStore,
    predictor: BiGru,
    predictor_head: GaussianHead,
    encoder: BiGru,
    encoder_head: GaussianHead,
    decoder: Decoder,
}

impl NetworkBundle {
    /// Fresh parameters: Xavier-uniform matrices and zero biases.
    pub fn new(config: NetConfig, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut r = rng::stream(rng::derive(seed, "init"), 0);
        let NetConfig { vocab, props, latent, hidden, layers } = config;
        assert!(layers >= 1 && hidden >= 1 && vocab >= 1, "degenerate network config {config:?}");
        let predictor = BiGru::new(&mut params, "predictor", vocab, 0, hidden, layers, &mut r);
        let predictor_head = GaussianHead::new(&mut params, "predictor.head", 2 * hidden, props, &mut r);
        let encoder = BiGru::new(&mut params, "encoder", vocab, props, hidden, layers, &mut r);
        let encoder_head = GaussianHead::new(&mut params, "encoder.head", 2 * hidden, latent, &mut r);
        let dec_layers = (0..layers)
            .map(|l| {
                let (input, feats) = if l == 0 { (vocab, props + latent) } else { (hidden, 0) };
                GruLayer::new(&mut params, &format!("decoder.{l}"), input, feats, hidden, &mut r)
            })
            .collect();
        let out_w = params.add_xavier("decoder.out.w", hidden, vocab, &mut r);
        let out_b = params.add_zeros("decoder.out.b", &[vocab]);
        let decoder = Decoder { layers: dec_layers, out_w, out_b };
        NetworkBundle { config, params, predictor, predictor_head, encoder, encoder_head, decoder }
    }

    /// Rebuilds the topology for `config` and adopts `params`, which must
    /// match it name for name and shape for shape.
    pub fn from_params(config: NetConfig, params: ParamStore) -> Result<Self, AutodiffError> {
        let mut bundle = NetworkBundle::new(config, 0);
        let fits = bundle.params.len() == params.len()
            && bundle.params.iter().zip(params.iter()).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        if !fits {
            return Err(AutodiffError::InvalidArgument {
                op: "from_params",
                reason: "parameters do not match the network configuration".into(),
            });
        }
        bundle.params = params;
        Ok(bundle)
    }

    pub fn bind<'p>(&'p self, tape: &Tape<'p>) -> Bound {
        self.params.bind(tape)
    }

    pub fn predictor_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.predictor.param_ids();
        ids.extend(self.predictor_head.param_ids());
        ids
    }

    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.encoder_head.param_ids());
        ids
    }

    pub fn decoder_param_ids(&self) -> Vec<ParamId> {
        self.decoder.param_ids()
    }

    pub fn predictor(&self) -> &BiGru {
        &self.predictor
    }

    /// q(y|x) as `[batch x m]` mean and variance.
    pub fn predictor_forward(&self, tape: &Tape<'_>, p: &Bound, batch: &SeqBatch) -> Result<Gaussian, AutodiffError> {
        let s = self.predictor.summary(tape, p, batch, None)?;
        self.predictor_head.forward(tape, p, s)
    }

    /// q(z|x,y); `y` is `[batch x m]` in normalized units.
    pub fn encoder_forward(
        &self,
        tape: &Tape<'_>,
        p: &Bound,
        batch: &SeqBatch,
        y: Var,
    ) -> Result<Gaussian, AutodiffError> {
        let s = self.encoder.summary(tape, p, batch, Some(y))?;
        self.encoder_head.forward(tape, p, s)
    }

    /// Teacher-forced logits, `[(steps * batch) x vocab]` in step-major row
    /// order. Step 1 sees the all-zero token vector; step `j + 1` sees token `j`.
    pub fn decoder_forward(
        &self,
        tape: &Tape<'_>,
        p: &Bound,
        teacher: &SeqBatch,
        y: Var,
        z: Var,
    ) -> Result<Var, AutodiffError> {
        let rows = teacher.batch();
        let features = tape.concat(&[y, z])?;
        let constants = self.decoder.constants(tape, p, features)?;
        let zero = tape.constant(Tensor::zeros(&[rows, self.config.hidden]));
        let mut hidden = vec![zero; self.decoder.layers.len()];
        let mut tops = Vec::with_capacity(teacher.steps());
        for t in 0..teacher.steps() {
            let prev = (t > 0).then(|| teacher.tokens_at(t - 1));
            hidden = self.decoder.step(tape, p, &hidden, prev, &constants, rows)?;
            tops.push(*hidden.last().expect("at least one layer"));
        }
        let stacked = tape.stack_rows(&tops)?;
        self.decoder.logits(tape, p, stacked)
    }

    pub fn decoder_start(&self, rows: usize) -> DecoderState {
        DecoderState { hidden: vec![Tensor::zeros(&[rows, self.config.hidden]); self.decoder.layers.len()] }
    }

    /// Advances every row by one token (`None` at the first step) and
    /// returns the next-token log-probabilities `[rows x vocab]`.
    /// `features` holds `y ⊕ z` per row.
    pub fn decoder_next(
        &self,
        features: &Tensor,
        state: &DecoderState,
        prev: Option<&[usize]>,
    ) -> Result<(DecoderState, Tensor), AutodiffError> {
        let tape = Tape::new();
        let p = self.bind(&tape);
        let rows = state.rows();
        let f = tape.param(features);
        let constants = self.decoder.constants(&tape, &p, f)?;
        let hidden: Vec<Var> = state.hidden.iter().map(|h| tape.param(h)).collect();
        let next = self.decoder.step(&tape, &p, &hidden, prev, &constants, rows)?;
        let logits = self.decoder.logits(&tape, &p, *next.last().expect("at least one layer"))?;
        let lp = tape.log_softmax(logits)?;
        let out = tape.get(lp);
        let hidden = next.iter().map(|&v| tape.get(v)).collect();
        Ok((DecoderState { hidden }, out))
    }

    /// Next-token log-probabilities after `prefix`, for one `(y, z)`.
    pub fn decoder_step_distribution(&self, y: &[f64], z: &[f64], prefix: &[usize]) -> Result<Vec<f64>, AutodiffError> {
        let features = Tensor::new(vec![1, y.len() + z.len()], [y, z].concat())?;
        let mut state = self.decoder_start(1);
        let (mut s, mut lp) = self.decoder_next(&features, &state, None)?;
        for &tok in prefix {
            state = s;
            (s, lp) = self.decoder_next(&features, &state, Some(&[tok]))?;
        }
        Ok(lp.into_data())
    }

    /// Predictor means (normalized units) for many sequences.
    pub fn predict_normalized(&self, seqs: &[&TokenSequence]) -> Result<Vec<Vec<f64>>, AutodiffError> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(INFERENCE_CHUNK) {
            let batch = SeqBatch::new(chunk);
            let tape = Tape::new();
            let p = self.bind(&tape);
            let g = self.predictor_forward(&tape, &p, &batch)?;
            out.extend(tape.value(g.mean).rows().map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::seqnets::Preset;

    fn tiny() -> NetworkBundle {
        NetworkBundle::new(NetConfig { vocab: 10, props: 2, latent: 4, hidden: 16, layers: 1 }, 7)
    }

    fn seq(indices: &[usize], vocab: &Vocabulary) -> TokenSequence {
        TokenSequence::new(indices.to_vec(), vocab).unwrap()
    }

    fn vocab10() -> Vocabulary {
        Vocabulary::from_symbols(["#", "(", ")", "1", "=", "C", "N", "O", "c"]).unwrap()
    }

    #[test]
    fn presets() {
        let d = Preset::Desk.config(35, 3);
        assert_eq!((d.hidden, d.layers, d.latent), (32, 1, 8));
        let p = Preset::Large.config(35, 3);
        assert_eq!((p.hidden, p.layers, p.latent), (250, 3, 100));
        assert_eq!(Preset::parse("Large"), Some(Preset::Large));
    }

    #[test]
    fn variances_are_positive_and_outputs_deterministic() {
        let b = tiny();
        let v = vocab10();
        let seqs = [seq(&[5, 5, 7, 9], &v), seq(&[8, 9], &v)];
        let refs: Vec<&TokenSequence> = seqs.iter().collect();
        let run = || {
            let batch = SeqBatch::new(&refs);
            let tape = Tape::new();
            let p = b.bind(&tape);
            let g = b.predictor_forward(&tape, &p, &batch).unwrap();
            let y = tape.constant(Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap());
            let e = b.encoder_forward(&tape, &p, &batch, y).unwrap();
            assert!(tape.value(g.var).data().iter().all(|&v| v > 0.0));
            assert!(tape.value(e.var).data().iter().all(|&v| v > 0.0));
            (tape.get(g.mean), tape.get(e.mean))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batched_summary_matches_individual_runs() {
        let b = tiny();
        let v = vocab10();
        let seqs = [seq(&[5, 5, 7, 6, 9], &v), seq(&[8, 9], &v), seq(&[1, 5, 2, 9], &v)];
        let refs: Vec<&TokenSequence> = seqs.iter().collect();
        let all = b.predict_normalized(&refs).unwrap();
        for (s, row) in refs.iter().zip(&all) {
            let one = b.predict_normalized(&[s]).unwrap();
            for (a, c) in one[0].iter().zip(row) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn changing_y_changes_the_encoder() {
        let b = tiny();
        let v = vocab10();
        let s = seq(&[5, 7, 9], &v);
        let batch = SeqBatch::new(&[&s]);
        let mean_for = |y: [f64; 2]| {
            let tape = Tape::new();
            let p = b.bind(&tape);
            let yv = tape.constant(Tensor::new(vec![1, 2], y.to_vec()).unwrap());
            let e = b.encoder_forward(&tape, &p, &batch, yv).unwrap();
            tape.get(e.mean)
        };
        assert_ne!(mean_for([0.0, 0.0]), mean_for([1.0, -1.0]));
    }

    #[test]
    fn palindromes_give_equal_directions_under_weight_tying() {
        let mut b = tiny();
        let pairs: Vec<(Vec<ParamId>, Vec<ParamId>)> =
            b.predictor().layers().map(|(f, r)| (f.param_ids(), r.param_ids())).collect();
        for (f, r) in pairs {
            for (fi, ri) in f.into_iter().zip(r) {
                let t = b.params.get(fi).clone();
                *b.params.get_mut(ri) = t;
            }
        }
        let palindrome: &[usize] = &[5, 7, 3, 7, 5];
        let batch = SeqBatch::from_indices(&[palindrome]);
        let tape = Tape::new();
        let p = b.bind(&tape);
        let summary = b.predictor().summary(&tape, &p, &batch, None).unwrap();
        let row = tape.value(summary).row(0).to_vec();
        let (fwd, bwd) = row.split_at(16);
        assert_eq!(fwd, bwd);

        let lopsided: &[usize] = &[5, 7, 3, 7, 6];
        let batch = SeqBatch::from_indices(&[lopsided]);
        let summary = b.predictor().summary(&tape, &p, &batch, None).unwrap();
        let row = tape.value(summary).row(0).to_vec();
        assert_ne!(row[..16], row[16..]);
    }

    #[test]
    fn decoder_logits_are_causal() {
        let b = tiny();
        let v = vocab10();
        let base = [5, 7, 6, 1, 8, 2, 9];
        let logits_for = |tokens: &[usize]| {
            let s = seq(tokens, &v);
            let batch = SeqBatch::new(&[&s]);
            let tape = Tape::new();
            let p = b.bind(&tape);
            let y = tape.constant(Tensor::new(vec![1, 2], vec![0.3, -0.2]).unwrap());
            let z = tape.constant(Tensor::new(vec![1, 4], vec![0.1, 0.0, -1.0, 0.5]).unwrap());
            let l = b.decoder_forward(&tape, &p, &batch, y, z).unwrap();
            tape.get(l)
        };
        let reference = logits_for(&base);
        assert_eq!(reference.shape(), [base.len(), 10]);
        for j in 0..base.len() - 1 {
            let mut changed = base;
            changed[j] = if base[j] == 4 { 3 } else { 4 };
            let other = logits_for(&changed);
            for step in 0..base.len() {
                let same = reference.row(step) == other.row(step);
                // Step `step` conditions on tokens before it only.
                assert_eq!(same, step <= j, "token {j}, step {step}");
            }
        }
    }

    #[test]
    fn step_distribution_matches_teacher_forcing() {
        let b = tiny();
        let v = vocab10();
        let tokens = [5, 7, 6, 1, 8, 2, 9];
        let (y, z) = ([0.3, -0.2], [0.1, 0.0, -1.0, 0.5]);
        let s = seq(&tokens, &v);
        let batch = SeqBatch::new(&[&s]);
        let tape = Tape::new();
        let p = b.bind(&tape);
        let yv = tape.constant(Tensor::new(vec![1, 2], y.to_vec()).unwrap());
        let zv = tape.constant(Tensor::new(vec![1, 4], z.to_vec()).unwrap());
        let l = b.decoder_forward(&tape, &p, &batch, yv, zv).unwrap();
        let lp = tape.log_softmax(l).unwrap();
        let teacher = tape.value(lp);
        for j in 0..tokens.len() {
            let step = b.decoder_step_distribution(&y, &z, &tokens[..j]).unwrap();
            assert!((step.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, c) in step.iter().zip(teacher.row(j)) {
                assert!((a - c).abs() < 1e-12, "step {j}: {a} vs {c}");
            }
        }
    }

    #[test]
    fn from_params_checks_the_layout() {
        let b = tiny();
        assert!(NetworkBundle::from_params(b.config, b.params.clone()).is_ok());
        let other = NetConfig { hidden: 8, ..b.config };
        assert!(NetworkBundle::from_params(other, b.params.clone()).is_err());
    }
}
