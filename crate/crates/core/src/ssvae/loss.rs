use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Bound, Tape, Tensor, Var};
use crate::condgen::GaussianPrior;
use crate::corpus::Example;
use crate::seqnets::{reparameterized_sample, NetworkBundle, SeqBatch};

use super::kl::{kl_prior_rows, kl_standard_rows};

/// Per-batch means in normalized units, with `total = labeled + unlabeled + β·mse`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub labeled: f64,
    pub unlabeled: f64,
    pub mse: f64,
    pub total: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
}

/// Which networks the objective trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// The full semi-supervised objective.
    Full,
    /// Mean squared error of the predictor on labeled examples only.
    PredictorOnly,
}

/// Labeled-example terms summed over the batch.
#[derive(Debug, Clone, Copy)]
pub struct LabeledTerms {
    pub sum: Var,
    pub reconstruction: f64,
    pub log_prior: f64,
    pub kl_z: f64,
}

/// Unlabeled-example terms summed over the batch.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledTerms {
    pub sum: Var,
    pub reconstruction: f64,
    pub kl_y: f64,
    pub kl_z: f64,
}

/// Standard-normal noise of the given shape.
pub fn normal_noise<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("noise shape")
}

/// Labels of a batch as a `[batch x m]` tensor.
pub fn label_tensor(examples: &[&Example], m: usize) -> Tensor {
    let data = examples
        .iter()
        .flat_map(|e| e.label.as_ref().expect("labeled example").iter().copied())
        .collect();
    Tensor::new(vec![examples.len(), m], data).expect("label shape")
}

/// Summed negative log-likelihood of the targets under step-major logits.
pub fn reconstruction_nll(tape: &Tape<'_>, logits: Var, target: &SeqBatch) -> Result<Var, AutodiffError> {
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, &target.flat_targets())?;
    let mask = target.flat_mask();
    let kept = if mask.iter().all(|&w| w == 1.0) { picked } else { tape.mul(picked, tape.constant(Tensor::vector(mask)))? };
    tape.neg(tape.sum(kept)?)
}

/// `Σ_batch [NLL(x | y, z̃) − ln N(y; µ_y, Σ_y) + KL(q(z|x,y) || N(0, I))]` with one
/// reparameterized `z̃` per example from `noise_z`.
pub fn labeled_loss(
    tape: &Tape<'_>,
    bundle: &NetworkBundle,
    p: &Bound,
    batch: &SeqBatch,
    y: &Tensor,
    prior: &GaussianPrior,
    noise_z: Tensor,
) -> Result<LabeledTerms, AutodiffError> {
    let yv = tape.constant(y.clone());
    let enc = bundle.encoder_forward(tape, p, batch, yv)?;
    let z = reparameterized_sample(tape, enc.mean, enc.var, noise_z)?;
    let logits = bundle.decoder_forward(tape, p, batch, yv, z)?;
    let nll = reconstruction_nll(tape, logits, batch)?;
    let kl = tape.sum(kl_standard_rows(tape, &enc)?)?;
    let log_prior: f64 = y.rows().map(|r| prior.log_density(r)).sum();
    let sum = tape.add_scalar(tape.add(nll, kl)?, -log_prior)?;
    Ok(LabeledTerms { sum, reconstruction: tape.item(nll), log_prior, kl_z: tape.item(kl) })
}

/// `Σ_batch [NLL(x | ỹ, z̃) + KL(q(y|x) || p(y)) + KL(q(z|x,ỹ) || N(0, I))]` with
/// `ỹ` drawn from the predictor and `z̃` from the encoder.
pub fn unlabeled_loss(
    tape: &Tape<'_>,
    bundle: &NetworkBundle,
    p: &Bound,
    batch: &SeqBatch,
    prior: &GaussianPrior,
    noise_y: Tensor,
    noise_z: Tensor,
) -> Result<UnlabeledTerms, AutodiffError> {
    let q = bundle.predictor_forward(tape, p, batch)?;
    let y = reparameterized_sample(tape, q.mean, q.var, noise_y)?;
    let enc = bundle.encoder_forward(tape, p, batch, y)?;
    let z = reparameterized_sample(tape, enc.mean, enc.var, noise_z)?;
    let logits = bundle.decoder_forward(tape, p, batch, y, z)?;
    let nll = reconstruction_nll(tape, logits, batch)?;
    let kl_y = tape.sum(kl_prior_rows(tape, &q, prior)?)?;
    let kl_z = tape.sum(kl_standard_rows(tape, &enc)?)?;
    let sum = tape.add(tape.add(nll, kl_y)?, kl_z)?;
    Ok(UnlabeledTerms { sum, reconstruction: tape.item(nll), kl_y: tape.item(kl_y), kl_z: tape.item(kl_z) })
}

/// `Σ_batch ‖y − µ_φ(x)‖²`.
pub fn squared_error(
    tape: &Tape<'_>,
    bundle: &NetworkBundle,
    p: &Bound,
    batch: &SeqBatch,
    y: &Tensor,
) -> Result<Var, AutodiffError> {
    let q = bundle.predictor_forward(tape, p, batch)?;
    let diff = tape.sub(q.mean, tape.constant(y.clone()))?;
    tape.sum(tape.square(diff)?)
}

/// The training objective on one pair of sub-batches. Noise is drawn from
/// `rng` in a fixed order: labeled `z`, then unlabeled `y`, then unlabeled `z`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<R: Rng>(
    tape: &Tape<'_>,
    bundle: &NetworkBundle,
    p: &Bound,
    labeled: &[&Example],
    unlabeled: &[&Example],
    prior: &GaussianPrior,
    beta: f64,
    objective: Objective,
    rng: &mut R,
) -> Result<(LossBreakdown, Var), AutodiffError> {
    let cfg = bundle.config;
    let (nl, nu) = (labeled.len(), if objective == Objective::Full { unlabeled.len() } else { 0 });
    if nl == 0 && nu == 0 {
        return Err(AutodiffError::InvalidArgument { op: "total_loss", reason: "empty batch".into() });
    }
    let mut parts = Vec::new();
    let mut out = LossBreakdown { n_labeled: nl, n_unlabeled: nu, ..LossBreakdown::default() };
    if nl > 0 {
        let seqs: Vec<_> = labeled.iter().map(|e| &e.sequence).collect();
        let batch = SeqBatch::new(&seqs);
        let y = label_tensor(labeled, cfg.props);
        let sq = squared_error(tape, bundle, p, &batch, &y)?;
        out.mse = tape.item(sq) / nl as f64;
        match objective {
            Objective::Full => {
                let noise_z = normal_noise(nl, cfg.latent, rng);
                let l = labeled_loss(tape, bundle, p, &batch, &y, prior, noise_z)?;
                out.labeled = tape.item(l.sum) / nl as f64;
                parts.push(tape.scale(l.sum, 1.0 / nl as f64)?);
                parts.push(tape.scale(sq, beta / nl as f64)?);
            }
            Objective::PredictorOnly => parts.push(tape.scale(sq, 1.0 / nl as f64)?),
        }
    }
    if nu > 0 {
        let seqs: Vec<_> = unlabeled.iter().map(|e| &e.sequence).collect();
        let batch = SeqBatch::new(&seqs);
        let noise_y = normal_noise(nu, cfg.props, rng);
        let noise_z = normal_noise(nu, cfg.latent, rng);
        let u = unlabeled_loss(tape, bundle, p, &batch, prior, noise_y, noise_z)?;
        out.unlabeled = tape.item(u.sum) / nu as f64;
        parts.push(tape.scale(u.sum, 1.0 / nu as f64)?);
    }
    let mut j = parts[0];
    for &part in &parts[1..] {
        j = tape.add(j, part)?;
    }
    out.total = tape.item(j);
    Ok((out, j))
}
