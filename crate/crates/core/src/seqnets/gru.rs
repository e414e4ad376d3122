use rand::Rng;

use crate::autodiff::{AutodiffError, Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// One GRU layer. Each gate's matrix over `[input ⊕ hidden]` is stored as
/// row blocks: `wx` for the per-step input, `wf` for features that are
/// constant over time and `wh`/`wc` for the recurrent part, so
/// `W_g [x; f; h] = x·wx_g + f·wf_g + h·wh_g`. The three gates are fused
/// column-wise in the order update, reset, candidate.
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub input: usize,
    pub features: usize,
    pub hidden: usize,
    wx: ParamId,
    wf: Option<ParamId>,
    wh: ParamId,
    wc: ParamId,
    b: ParamId,
}

/// Per-step input of a layer.
#[derive(Debug, Clone, Copy)]
pub enum StepInput<'a> {
    /// One-hot token indices per row; `None` is the all-zero token vector.
    Tokens(Option<&'a [usize]>),
    /// Dense `[batch x input]` activations.
    Dense(Var),
}

impl GruLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        features: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        // Xavier bound of the logical per-gate matrix [(input + features + hidden) x hidden].
        let a = (6.0 / (input + features + 2 * hidden) as f64).sqrt();
        let wx = store.add_uniform(format!("{prefix}.wx"), &[input, 3 * hidden], a, rng);
        let wf = (features > 0).then(|| store.add_uniform(format!("{prefix}.wf"), &[features, 3 * hidden], a, rng));
        let wh = store.add_uniform(format!("{prefix}.wh"), &[hidden, 2 * hidden], a, rng);
        let wc = store.add_uniform(format!("{prefix}.wc"), &[hidden, hidden], a, rng);
        let b = store.add_zeros(format!("{prefix}.b"), &[3 * hidden]);
        GruLayer { input, features, hidden, wx, wf, wh, wc, b }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.wx];
        ids.extend(self.wf);
        ids.extend([self.wh, self.wc, self.b]);
        ids
    }

    /// `f·wf + b`, shared by every step of a sequence. Without features this
    /// is the bias alone.
    pub fn constant_projection(&self, tape: &Tape<'_>, p: &Bound, features: Option<Var>) -> Result<Var, AutodiffError> {
        match (features, self.wf) {
            (Some(f), Some(wf)) => {
                let m = tape.matmul(f, p.var(wf))?;
                tape.add(m, p.var(self.b))
            }
            (None, None) => Ok(p.var(self.b)),
            _ => Err(AutodiffError::InvalidArgument {
                op: "gru_layer",
                reason: format!("layer expects {} feature columns", self.features),
            }),
        }
    }

    /// Full gate pre-activation input part `[batch x 3h]`.
    pub fn project(
        &self,
        tape: &Tape<'_>,
        p: &Bound,
        x: StepInput<'_>,
        constant: Var,
        batch: usize,
    ) -> Result<Var, AutodiffError> {
        let base = match x {
            StepInput::Tokens(Some(ids)) => tape.select_rows(p.var(self.wx), ids)?,
            StepInput::Tokens(None) => tape.constant(Tensor::zeros(&[batch, 3 * self.hidden])),
            StepInput::Dense(v) => tape.matmul(v, p.var(self.wx))?,
        };
        tape.add(base, constant)
    }

    /// GRU update from a precomputed input projection. `mask` (`[batch x h]`,
    /// 0 or 1) freezes the state of rows whose sequence has ended.
    pub fn cell(
        &self,
        tape: &Tape<'_>,
        p: &Bound,
        h_prev: Var,
        proj: Var,
        mask: Option<Var>,
    ) -> Result<Var, AutodiffError> {
        let h = self.hidden;
        let rec = tape.matmul(h_prev, p.var(self.wh))?;
        let zr = tape.add(tape.slice_cols(proj, 0, 2 * h)?, rec)?;
        let zr = tape.sigmoid(zr)?;
        let mut z = tape.slice_cols(zr, 0, h)?;
        let r = tape.slice_cols(zr, h, 2 * h)?;
        let rh = tape.mul(r, h_prev)?;
        let cand = tape.add(tape.slice_cols(proj, 2 * h, 3 * h)?, tape.matmul(rh, p.var(self.wc))?)?;
        let cand = tape.tanh(cand)?;
        if let Some(m) = mask {
            z = tape.mul(z, m)?;
        }
        // (1 - z) h + z h̃ = h + z (h̃ - h)
        let delta = tape.sub(cand, h_prev)?;
        tape.add(h_prev, tape.mul(z, delta)?)
    }
}

/// Single GRU step on a dense input `x = [input ⊕ features]`.
pub fn gru_step(
    tape: &Tape<'_>,
    p: &Bound,
    layer: &GruLayer,
    h_prev: Var,
    x: Var,
) -> Result<Var, AutodiffError> {
    let width = tape.shape(x).last().copied().unwrap_or(0);
    if width != layer.input + layer.features {
        return Err(AutodiffError::ShapeMismatch {
            op: "gru_step",
            lhs: tape.shape(x),
            rhs: vec![layer.input + layer.features],
        });
    }
    let batch = tape.value(x).outer();
    let (xi, f) = if layer.features > 0 {
        (tape.slice_cols(x, 0, layer.input)?, Some(tape.slice_cols(x, layer.input, width)?))
    } else {
        (x, None)
    };
    let constant = layer.constant_projection(tape, p, f)?;
    let proj = layer.project(tape, p, StepInput::Dense(xi), constant, batch)?;
    layer.cell(tape, p, h_prev, proj, None)
}
