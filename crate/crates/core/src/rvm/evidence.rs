use nalgebra::{DMatrix, DVector};

use super::posterior::{fixed_alpha_posterior, Posterior};
use super::RvmError;

/// Log marginal likelihood `L(α, σ²)` and its gradient in log-parameters.
#[derive(Debug, Clone)]
pub struct Evidence {
    pub value: f64,
    /// `∂L/∂ log α_i`
    pub grad_log_alpha: Vec<f64>,
    /// `∂L/∂ log σ²`
    pub grad_log_sigma2: f64,
}

/// Evaluates the evidence through the weight posterior (Woodbury form):
///
/// `L = -½ [n log 2π + n log σ² − Σ log α_i + log|Σ⁻¹| + ‖y − Φμ‖²/σ² + Σ α_i μ_i²]`
pub(crate) fn evidence_from_posterior(
    post: &Posterior,
    residual_sq: f64,
    n: usize,
    alpha: &[f64],
    sigma2: f64,
) -> Evidence {
    let n_f = n as f64;
    let mu = &post.mean;
    let log_alpha_sum: f64 = alpha.iter().map(|a| a.ln()).sum();
    let prior_term: f64 = alpha.iter().zip(mu.iter()).map(|(a, m)| a * m * m).sum();
    let value = -0.5
        * (n_f * (2.0 * std::f64::consts::PI).ln() + n_f * sigma2.ln() - log_alpha_sum
            + post.log_det_precision
            + residual_sq / sigma2
            + prior_term);
    let mut gamma_sum = 0.0;
    let grad_log_alpha = alpha
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let s_ii = post.variances[i];
            gamma_sum += 1.0 - a * s_ii;
            0.5 * (1.0 - a * (mu[i] * mu[i] + s_ii))
        })
        .collect();
    let grad_log_sigma2 = -0.5 * (n_f - residual_sq / sigma2 - gamma_sum);
    Evidence {
        value,
        grad_log_alpha,
        grad_log_sigma2,
    }
}

/// Log evidence of targets `y` under design `Φ`, precisions `α` and noise `σ²`.
pub fn log_evidence(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: &[f64],
    sigma2: f64,
) -> Result<Evidence, RvmError> {
    let post = fixed_alpha_posterior(phi, y, alpha, sigma2)?;
    let residual_sq = (y - phi * &post.mean).norm_squared();
    Ok(evidence_from_posterior(&post, residual_sq, y.len(), alpha, sigma2))
}
