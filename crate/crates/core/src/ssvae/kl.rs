use nalgebra::{DMatrix, DVector};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::condgen::{CondGenError, GaussianPrior};
use crate::seqnets::Gaussian;

/// `KL(N(mean, diag(var)) || N(0, I))`.
pub fn kl_diag_vs_standard(mean: &[f64], var: &[f64]) -> f64 {
    0.5 * mean.iter().zip(var).map(|(m, v)| v + m * m - 1.0 - v.ln()).sum::<f64>()
}

/// `KL(N(m_q, diag(d_q)) || N(mu, sigma))`.
pub fn kl_diag_vs_full(m_q: &[f64], d_q: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> Result<f64, CondGenError> {
    let prior = GaussianPrior::new(mu.to_vec(), sigma.clone())?;
    let identical = m_q == mu
        && (0..d_q.len()).all(|i| (0..d_q.len()).all(|j| sigma[(i, j)] == if i == j { d_q[i] } else { 0.0 }));
    if identical {
        // Rounding in the factorized form would leave a residue of order 1e-16.
        return Ok(0.0);
    }
    Ok(kl_diag_vs_prior(m_q, d_q, &prior))
}

/// [`kl_diag_vs_full`] against an already factorized prior.
pub fn kl_diag_vs_prior(m_q: &[f64], d_q: &[f64], prior: &GaussianPrior) -> f64 {
    let p = prior.precision();
    let m = m_q.len();
    let trace: f64 = (0..m).map(|i| p[(i, i)] * d_q[i]).sum();
    let diff = DVector::from_iterator(m, prior.mean().iter().zip(m_q).map(|(a, b)| a - b));
    let quad = (diff.transpose() * p * &diff)[(0, 0)];
    let log_dq: f64 = d_q.iter().map(|v| v.ln()).sum();
    0.5 * (trace + quad - m as f64 + prior.log_det() - log_dq)
}

/// Per-row KL against `N(0, I)`, shape `[batch]`.
pub fn kl_standard_rows(tape: &Tape<'_>, g: &Gaussian) -> Result<Var, AutodiffError> {
    let sq = tape.square(g.mean)?;
    let a = tape.add(g.var, sq)?;
    let b = tape.sub(a, g.logvar)?;
    let c = tape.add_scalar(b, -1.0)?;
    let s = tape.sum_last(c)?;
    tape.scale(s, 0.5)
}

/// Per-row KL against the full-covariance prior, shape `[batch]`.
pub fn kl_prior_rows(tape: &Tape<'_>, g: &Gaussian, prior: &GaussianPrior) -> Result<Var, AutodiffError> {
    let m = prior.dim();
    let p = prior.precision();
    let diag = tape.constant(Tensor::vector((0..m).map(|i| p[(i, i)]).collect()));
    let precision = tape.constant(Tensor::new(vec![m, m], p.transpose().as_slice().to_vec())?);
    let mu = tape.constant(Tensor::vector(prior.mean().to_vec()));
    let trace = tape.sum_last(tape.mul(g.var, diag)?)?;
    let diff = tape.sub(g.mean, mu)?;
    let quad = tape.sum_last(tape.mul(tape.matmul(diff, precision)?, diff)?)?;
    let log_dq = tape.sum_last(g.logvar)?;
    let inner = tape.sub(tape.add(trace, quad)?, log_dq)?;
    let shifted = tape.add_scalar(inner, prior.log_det() - m as f64)?;
    tape.scale(shifted, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::{prop, prop_assert, proptest, Strategy};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn closed_form_examples() {
        assert_eq!(kl_diag_vs_standard(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert_eq!(kl_diag_vs_standard(&[1.0], &[1.0]), 0.5);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        assert!(kl_diag_vs_full(&[0.3, -1.0], &[0.5, 2.0], &[0.3, -1.0], &sigma).unwrap().abs() < 1e-15);
        // Diagonal prior factorizes into univariate terms.
        let uni = |mq: f64, dq: f64, mp: f64, dp: f64| 0.5 * (dq / dp + (mp - mq).powi(2) / dp - 1.0 + dp.ln() - dq.ln());
        let kl = kl_diag_vs_full(&[0.1, 0.4], &[0.7, 1.3], &[-0.2, 1.0], &sigma).unwrap();
        let sum = uni(0.1, 0.7, -0.2, 0.5) + uni(0.4, 1.3, 1.0, 2.0);
        assert!((kl - sum).abs() < 1e-14);
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(kl_diag_vs_full(&[0.0; 2], &[1.0; 2], &[0.0; 2], &not_pd), Err(CondGenError::NotPositiveDefinite)));
    }

    /// Monte-Carlo estimate of KL(q || p) with its standard error.
    fn monte_carlo(m_q: &[f64], d_q: &[f64], log_p: impl Fn(&[f64]) -> f64, seed: u64) -> (f64, f64) {
        let n = 100_000;
        let mut r = rng::stream(seed, 0);
        let log_q = |x: &[f64]| {
            x.iter()
                .zip(m_q)
                .zip(d_q)
                .map(|((x, m), d)| -0.5 * ((2.0 * std::f64::consts::PI * d).ln() + (x - m).powi(2) / d))
                .sum::<f64>()
        };
        let mut samples = Vec::with_capacity(n);
        let mut x = vec![0.0; m_q.len()];
        for _ in 0..n {
            for i in 0..x.len() {
                x[i] = m_q[i] + d_q[i].sqrt() * r.sample::<f64, _>(StandardNormal);
            }
            samples.push(log_q(&x) - log_p(&x));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn standard_kl_matches_monte_carlo() {
        let (m, v) = ([0.4, -1.1, 0.2], [0.6, 1.8, 0.3]);
        let log_p = |x: &[f64]| x.iter().map(|x| -0.5 * ((2.0 * std::f64::consts::PI).ln() + x * x)).sum::<f64>();
        let (est, se) = monte_carlo(&m, &v, log_p, 1);
        assert!((est - kl_diag_vs_standard(&m, &v)).abs() < 3.0 * se);
    }

    #[test]
    fn correlated_prior_matches_monte_carlo() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let prior = GaussianPrior::new(vec![0.0, 0.0], sigma.clone()).unwrap();
        let (m, d) = ([0.3, -0.2], [0.5, 0.8]);
        let (est, se) = monte_carlo(&m, &d, |x| prior.log_density(x), 2);
        let kl = kl_diag_vs_full(&m, &d, &[0.0, 0.0], &sigma).unwrap();
        assert!((est - kl).abs() < 3.0 * se, "{est} ± {se} vs {kl}");
    }

    fn gaussian_on_tape<'a>(tape: &Tape<'a>, mean: &[f64], var: &[f64], rows: usize) -> Gaussian {
        let m = mean.len();
        let rep = |v: &[f64]| Tensor::new(vec![rows, m], v.repeat(rows)).unwrap();
        let mv = tape.constant(rep(mean));
        let vv = tape.constant(rep(var));
        let lv = tape.log(vv).unwrap();
        Gaussian { mean: mv, logvar: lv, var: vv }
    }

    #[test]
    fn tape_versions_agree_with_plain_versions() {
        let prior = GaussianPrior::new(vec![0.5, -0.3], DMatrix::from_row_slice(2, 2, &[1.2, 0.4, 0.4, 0.9])).unwrap();
        let (m, v) = ([0.1, 0.7], [0.4, 1.5]);
        let tape = Tape::new();
        let g = gaussian_on_tape(&tape, &m, &v, 3);
        let ks = tape.get(kl_standard_rows(&tape, &g).unwrap());
        let kp = tape.get(kl_prior_rows(&tape, &g, &prior).unwrap());
        assert_eq!(ks.shape(), [3]);
        for r in 0..3 {
            assert!((ks.data()[r] - kl_diag_vs_standard(&m, &v)).abs() < 1e-14);
            assert!((kp.data()[r] - kl_diag_vs_prior(&m, &v, &prior)).abs() < 1e-14);
        }
    }

    fn spd2() -> impl Strategy<Value = DMatrix<f64>> {
        (prop::collection::vec(-1.0f64..1.0, 4)).prop_map(|a| {
            let a = DMatrix::from_row_slice(2, 2, &a);
            &a * a.transpose() + DMatrix::identity(2, 2) * 0.2
        })
    }

    proptest! {
        #[test]
        fn kls_are_non_negative(
            m in prop::collection::vec(-3.0f64..3.0, 2),
            d in prop::collection::vec(0.05f64..4.0, 2),
            mu in prop::collection::vec(-3.0f64..3.0, 2),
            sigma in spd2(),
        ) {
            prop_assert!(kl_diag_vs_standard(&m, &d) >= 0.0);
            prop_assert!(kl_diag_vs_full(&m, &d, &mu, &sigma).unwrap() >= -1e-12);
            let diag = DMatrix::from_diagonal(&DVector::from_vec(d.clone()));
            prop_assert!(kl_diag_vs_full(&m, &d, &m, &diag).unwrap().abs() < 1e-12);
        }
    }
}
