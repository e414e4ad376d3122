use rand::Rng;

use crate::autodiff::{AutodiffError, Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Bounds applied to every predicted log-variance.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Affine maps from a feature vector to a diagonal Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub dim: usize,
    wm: ParamId,
    bm: ParamId,
    wv: ParamId,
    bv: ParamId,
}

/// Tape handles of a diagonal Gaussian, each `[batch x dim]`.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian {
    pub mean: Var,
    pub logvar: Var,
    pub var: Var,
}

impl GaussianHead {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, dim: usize, rng: &mut R) -> Self {
        GaussianHead {
            dim,
            wm: store.add_xavier(format!("{prefix}.wm"), input, dim, rng),
            bm: store.add_zeros(format!("{prefix}.bm"), &[dim]),
            wv: store.add_xavier(format!("{prefix}.wv"), input, dim, rng),
            bv: store.add_zeros(format!("{prefix}.bv"), &[dim]),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.wm, self.bm, self.wv, self.bv]
    }

    pub fn forward(&self, tape: &Tape<'_>, p: &Bound, features: Var) -> Result<Gaussian, AutodiffError> {
        let mean = tape.add(tape.matmul(features, p.var(self.wm))?, p.var(self.bm))?;
        let raw = tape.add(tape.matmul(features, p.var(self.wv))?, p.var(self.bv))?;
        let logvar = tape.clamp(raw, LOGVAR_MIN, LOGVAR_MAX)?;
        let var = tape.exp(logvar)?;
        Ok(Gaussian { mean, logvar, var })
    }
}

/// `mean + sqrt(var) ⊙ noise`, differentiable in `mean` and `var`.
pub fn reparameterized_sample(tape: &Tape<'_>, mean: Var, var: Var, noise: Tensor) -> Result<Var, AutodiffError> {
    let sd = tape.sqrt(var)?;
    let n = tape.constant(noise);
    tape.add(mean, tape.mul(sd, n)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn variances_stay_positive_under_extreme_weights() {
        let mut store = ParamStore::new();
        let head = GaussianHead::new(&mut store, "h", 3, 2, &mut rng::stream(1, 0));
        for (k, t) in store.values_mut().iter_mut().enumerate() {
            t.data_mut().iter_mut().for_each(|v| *v = if k % 2 == 0 { -1e3 } else { 1e3 });
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let f = tape.constant(Tensor::new(vec![2, 3], vec![5.0, 1.0, 2.0, -3.0, 0.0, 9.0]).unwrap());
        let g = head.forward(&tape, &p, f).unwrap();
        let var = tape.value(g.var);
        assert!(var.data().iter().all(|&v| v > 0.0 && v >= LOGVAR_MIN.exp() && v <= LOGVAR_MAX.exp()));
    }

    #[test]
    fn reparameterization_basics() {
        let (m, v) = (Tensor::vector(vec![1.5, -2.0]), Tensor::vector(vec![4.0, 0.25]));
        let tape = Tape::new();
        let (mv, vv) = (tape.param(&m), tape.param(&v));
        let s = reparameterized_sample(&tape, mv, vv, Tensor::zeros(&[2])).unwrap();
        assert_eq!(*tape.value(s), m);
        let total = tape.sum(s).unwrap();
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(mv).unwrap().data(), [1.0, 1.0]);
    }

    #[test]
    fn sample_mean_is_within_three_standard_errors() {
        let (mu, var) = (0.7, 2.5);
        let n = 100_000;
        let mut r = rng::stream(11, 0);
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let tape = Tape::new();
        let m = tape.constant(Tensor::filled(&[n], mu));
        let v = tape.constant(Tensor::filled(&[n], var));
        let s = reparameterized_sample(&tape, m, v, Tensor::vector(noise)).unwrap();
        let mean = tape.value(s).data().iter().sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - mu).abs() < 3.0 * se, "{mean}");
    }
}
