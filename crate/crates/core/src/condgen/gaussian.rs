use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::CondGenError;

/// Added to the covariance diagonal when the first factorization fails.
pub const PRIOR_JITTER: f64 = 1e-9;

/// Multivariate normal with a positive-definite covariance and its cached
/// Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self, CondGenError> {
        let m = mean.len();
        if cov.nrows() != m || cov.ncols() != m || m == 0 {
            return Err(CondGenError::Shape(format!("{m}-vector mean with {}x{} covariance", cov.nrows(), cov.ncols())));
        }
        let scale = cov.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if (&cov - cov.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
            return Err(CondGenError::NotSymmetric);
        }
        let chol = cov.clone().cholesky().ok_or(CondGenError::NotPositiveDefinite)?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(GaussianPrior { mean: DVector::from_vec(mean), cov, chol: l, precision, log_det })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `ln N(y; µ, Σ)`.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let d = DVector::from_column_slice(y) - &self.mean;
        let quad = (d.transpose() * &self.precision * &d)[(0, 0)];
        -0.5 * (self.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + quad)
    }

    /// One draw `µ + L ε`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let eps = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.mean + &self.chol * eps).as_slice().to_vec()
    }
}

/// Sample mean and population covariance of normalized labels. Properties
/// with vanishing variance are rejected before any jitter is tried.
pub fn fit_prior(ys: &[Vec<f64>]) -> Result<GaussianPrior, CondGenError> {
    let m = ys.first().map_or(0, Vec::len);
    if ys.len() < m + 1 || m == 0 {
        return Err(CondGenError::TooFewLabels { needed: m.max(1) + 1, found: ys.len() });
    }
    if ys.iter().any(|y| y.len() != m) {
        return Err(CondGenError::Shape("labels of unequal length".into()));
    }
    let n = ys.len() as f64;
    let mut mean = vec![0.0; m];
    for y in ys {
        for (a, v) in mean.iter_mut().zip(y) {
            *a += v / n;
        }
    }
    let mut cov = DMatrix::zeros(m, m);
    for y in ys {
        for i in 0..m {
            for j in 0..m {
                cov[(i, j)] += (y[i] - mean[i]) * (y[j] - mean[j]) / n;
            }
        }
    }
    for i in 0..m {
        if cov[(i, i)] <= 1e-12 * mean[i].abs().max(1.0) {
            return Err(CondGenError::DegeneratePrior);
        }
    }
    // Exact symmetry for the checks in `GaussianPrior::new`.
    let cov = (&cov + cov.transpose()) * 0.5;
    match GaussianPrior::new(mean.clone(), cov.clone()) {
        Ok(p) => Ok(p),
        Err(CondGenError::NotPositiveDefinite) => {
            let jittered = cov + DMatrix::identity(m, m) * PRIOR_JITTER;
            GaussianPrior::new(mean, jittered).map_err(|_| CondGenError::DegeneratePrior)
        }
        Err(e) => Err(e),
    }
}

/// Gaussian over the free components after fixing some others. The
/// covariance is only positive semi-definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    /// Original indices of the free components, ascending.
    pub free: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn check_targets(m: usize, fixed: &[(usize, f64)]) -> Result<(), CondGenError> {
    for (k, &(i, v)) in fixed.iter().enumerate() {
        if i >= m || fixed[..k].iter().any(|&(j, _)| j == i) || !v.is_finite() {
            return Err(CondGenError::InvalidTarget(i));
        }
    }
    Ok(())
}

/// Schur-complement conditioning of `N(mean, cov)` on `y[i] = v` for each `(i, v)`.
pub fn condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    fixed: &[(usize, f64)],
) -> Result<Conditional, CondGenError> {
    let m = mean.len();
    check_targets(m, fixed)?;
    let fixed_idx: Vec<usize> = fixed.iter().map(|&(i, _)| i).collect();
    let free: Vec<usize> = (0..m).filter(|i| !fixed_idx.contains(i)).collect();
    if fixed.is_empty() {
        return Ok(Conditional { free, mean: mean.clone(), cov: cov.clone() });
    }
    let s11 = cov.select_rows(&fixed_idx).select_columns(&fixed_idx);
    let s21 = cov.select_rows(&free).select_columns(&fixed_idx);
    let s22 = cov.select_rows(&free).select_columns(&free);
    let chol = s11.cholesky().ok_or(CondGenError::NotPositiveDefinite)?;
    let t = DVector::from_iterator(fixed.len(), fixed.iter().map(|&(i, v)| v - mean[i]));
    let mu2 = mean.select_rows(&free);
    // Σ₂₁ Σ₁₁⁻¹ via a solve against the factor.
    let gain = chol.solve(&s21.transpose()).transpose();
    let cmean = mu2 + &gain * t;
    let ccov = &s22 - &gain * s21.transpose();
    let ccov = (&ccov + ccov.transpose()) * 0.5;
    Ok(Conditional { free, mean: cmean, cov: ccov })
}

/// Conditional of a prior given fixed values (normalized units).
pub fn condition_gaussian(prior: &GaussianPrior, fixed: &[(usize, f64)]) -> Result<Conditional, CondGenError> {
    condition(&prior.mean, &prior.cov, fixed)
}

/// Factor `A` with `A Aᵀ = cov` for a positive semi-definite matrix.
fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = cov.clone().cholesky() {
        return c.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// A property vector whose fixed entries equal `targets` exactly and whose
/// other entries are drawn from the conditional prior.
pub fn sample_y<R: Rng>(prior: &GaussianPrior, targets: &[(usize, f64)], rng: &mut R) -> Result<Vec<f64>, CondGenError> {
    let c = condition_gaussian(prior, targets)?;
    let mut y = vec![0.0; prior.dim()];
    for &(i, v) in targets {
        y[i] = v;
    }
    if !c.free.is_empty() {
        let a = psd_factor(&c.cov);
        let eps = DVector::from_iterator(c.free.len(), (0..c.free.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let draw = &c.mean + a * eps;
        for (k, &i) in c.free.iter().enumerate() {
            y[i] = draw[k];
        }
    }
    Ok(y)
}
