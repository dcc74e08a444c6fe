use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::RvmError;

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

/// Gaussian weight posterior for fixed precisions and noise.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    /// Diagonal of the posterior covariance.
    pub variances: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    /// `log |σ⁻²ΦᵀΦ + diag(α)|`.
    pub log_det_precision: f64,
    /// Relative diagonal jitter that was needed (0 when none).
    pub jitter: f64,
}

/// Cholesky factorization, retrying with diagonal jitter `1e-8, 1e-7, …, 1e-2`
/// (relative to the mean diagonal) when the matrix is not numerically PD.
pub(crate) fn jittered_cholesky(h: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), RvmError> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Ok((c, 0.0));
    }
    let n = h.nrows();
    let base = (h.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut hj = h.clone();
        for i in 0..n {
            hj[(i, i)] += jitter * base;
        }
        if let Some(c) = Cholesky::new(hj) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(RvmError::NumericalFailure)
}

/// Posterior from precomputed `ΦᵀΦ` and `Φᵀy`.
pub(crate) fn posterior_from_gram(
    gram: &DMatrix<f64>,
    phi_t_y: &DVector<f64>,
    alpha: &[f64],
    sigma2: f64,
) -> Result<Posterior, RvmError> {
    let beta = 1.0 / sigma2;
    let mut h = gram * beta;
    for (i, a) in alpha.iter().enumerate() {
        h[(i, i)] += a;
    }
    let (chol, jitter) = jittered_cholesky(&h)?;
    let log_det_precision = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mean = chol.solve(&(phi_t_y * beta));
    let variances = inverse_diagonal(chol.l_dirty());
    if !mean.iter().all(|v| v.is_finite()) {
        return Err(RvmError::NumericalFailure);
    }
    Ok(Posterior {
        mean,
        variances,
        factor: chol,
        log_det_precision,
        jitter,
    })
}

impl Posterior {
    /// Full posterior covariance `Σ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }
}

/// `diag((LLᵀ)⁻¹)` from the lower factor `L`: column `j` of `L⁻¹` is zero above
/// row `j`, so each forward substitution starts at `j`.
fn inverse_diagonal(l: &DMatrix<f64>) -> DVector<f64> {
    let m = l.nrows();
    let mut out = DVector::zeros(m);
    let mut rhs = vec![0.0; m];
    for j in 0..m {
        rhs[j..].fill(0.0);
        rhs[j] = 1.0;
        let mut acc = 0.0;
        for i in j..m {
            let col = l.column(i);
            let xi = rhs[i] / col[i];
            acc += xi * xi;
            if xi != 0.0 {
                for (r, c) in rhs[i + 1..].iter_mut().zip(&col.as_slice()[i + 1..]) {
                    *r -= c * xi;
                }
            }
        }
        out[j] = acc;
    }
    out
}

/// `Σ = (σ⁻²ΦᵀΦ + diag(α))⁻¹`, `μ = σ⁻² Σ Φᵀ y`.
pub fn fixed_alpha_posterior(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: &[f64],
    sigma2: f64,
) -> Result<Posterior, RvmError> {
    if phi.nrows() != y.len() {
        return Err(RvmError::DimMismatch {
            expected: phi.nrows(),
            got: y.len(),
        });
    }
    if phi.ncols() != alpha.len() {
        return Err(RvmError::DimMismatch {
            expected: phi.ncols(),
            got: alpha.len(),
        });
    }
    if sigma2.is_nan() || sigma2 <= 0.0 || alpha.iter().any(|a| a.is_nan() || *a <= 0.0) {
        return Err(RvmError::BadInput("precisions"));
    }
    posterior_from_gram(&(phi.transpose() * phi), &(phi.transpose() * y), alpha, sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interpolation_limit() {
        let phi = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![1.0, -2.0, 3.5, 0.25]);
        let p = fixed_alpha_posterior(&phi, &y, &[1e-12; 4], 1e-12).unwrap();
        for (m, t) in p.mean.iter().zip(y.iter()) {
            assert!((m - t).abs() < 1e-6);
        }
    }

    #[test]
    fn huge_precision_pins_weight_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let p = fixed_alpha_posterior(&phi, &y, &[1.0, 1e12, 1.0], 0.1).unwrap();
        assert!(p.mean[1].abs() < 1e-9);
    }

    #[test]
    fn matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let phi = DMatrix::from_fn(20, 5, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(20, |_, _| rng.random_range(-3.0..3.0));
        let alpha: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..5.0)).collect();
        let sigma2 = 0.3;
        let p = fixed_alpha_posterior(&phi, &y, &alpha, sigma2).unwrap();
        let h = phi.transpose() * &phi / sigma2 + DMatrix::from_diagonal(&DVector::from_vec(alpha));
        let sigma = h.try_inverse().unwrap();
        let mu = &sigma * phi.transpose() * &y / sigma2;
        assert!((&p.mean - mu).amax() < 1e-8);
        assert!((p.covariance() - &sigma).amax() < 1e-8);
        assert!((&p.variances - sigma.diagonal()).amax() < 1e-8);
    }

    #[test]
    fn rejects_non_positive_precision() {
        let phi = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        assert!(fixed_alpha_posterior(&phi, &y, &[0.0, 1.0], 1.0).is_err());
        assert!(fixed_alpha_posterior(&phi, &y, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let h = &v * v.transpose();
        let (_, jitter) = jittered_cholesky(&h).unwrap();
        assert!(jitter > 0.0);
    }
}
