use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::evidence::{evidence_from_posterior, Evidence};
use super::kernel::{linear_kernel_matrix, self_sq_distances, KernelSpec};
use super::posterior::{posterior_from_gram, Posterior};
use super::{DataMatrix, RvmError, RvmModel, Standardizer, MODEL_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RvmOptions {
    pub max_iter: usize,
    /// Bases whose precision exceeds this are pruned.
    pub prune_threshold: f64,
    /// Stop once `max |Δ log α|` over retained bases drops below this.
    pub tolerance: f64,
}

impl Default for RvmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            prune_threshold: 1e9,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainWarning {
    /// Every basis was pruned; a bias-only model was returned instead.
    DegenerateModel,
    /// Iteration limit reached before the precisions settled.
    NotConverged,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RvmModel,
    pub iterations: usize,
    pub converged: bool,
    /// Log evidence after initialization and after every accepted update.
    pub log_evidence: Vec<f64>,
    pub warnings: Vec<TrainWarning>,
}

/// Training inputs after standardization, with their pairwise squared distances.
///
/// Distances do not depend on the kernel width, so one `Prepared` serves a
/// whole width grid.
#[derive(Debug, Clone)]
pub struct Prepared {
    raw: DataMatrix,
    standardizer: Standardizer,
    standardized: DataMatrix,
    sq_dist: DMatrix<f64>,
}

impl Prepared {
    pub fn new(x: &DataMatrix) -> Result<Self, RvmError> {
        if !x.is_finite() {
            return Err(RvmError::BadInput("training inputs"));
        }
        let standardizer = Standardizer::fit(x);
        let standardized = standardizer.apply(x);
        let sq_dist = self_sq_distances(&standardized);
        Ok(Self {
            raw: x.clone(),
            standardizer,
            standardized,
            sq_dist,
        })
    }

    pub fn standardized(&self) -> &DataMatrix {
        &self.standardized
    }

    pub fn raw(&self) -> &DataMatrix {
        &self.raw
    }

    pub fn fit(&self, y: &[f64], kernel: KernelSpec, opts: &RvmOptions) -> Result<TrainOutcome, RvmError> {
        kernel.validate()?;
        let n = self.raw.rows();
        if n < 2 {
            return Err(RvmError::TooFewSamples(n));
        }
        if y.len() != n {
            return Err(RvmError::DimMismatch { expected: n, got: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(RvmError::BadInput("targets"));
        }
        Trainer::new(self, y, kernel, opts).run()
    }
}

/// Trains a relevance vector regressor on rows of `x` with targets `y`.
pub fn rvm_train(
    x: &DataMatrix,
    y: &[f64],
    kernel: KernelSpec,
    opts: &RvmOptions,
) -> Result<TrainOutcome, RvmError> {
    Prepared::new(x)?.fit(y, kernel, opts)
}

struct State {
    /// Column indices into the full design matrix.
    active: Vec<usize>,
    alpha: Vec<f64>,
    sigma2: f64,
    post: Posterior,
    evidence: Evidence,
}

struct Trainer<'a> {
    prep: &'a Prepared,
    y: DVector<f64>,
    kernel: KernelSpec,
    opts: &'a RvmOptions,
    phi: DMatrix<f64>,
    gram: DMatrix<f64>,
    phi_t_y: DVector<f64>,
    sigma2_floor: f64,
}

fn mean_var(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

impl<'a> Trainer<'a> {
    fn new(prep: &'a Prepared, y: &[f64], kernel: KernelSpec, opts: &'a RvmOptions) -> Self {
        let n = y.len();
        let k = kernel.matrix_from_parts(&prep.sq_dist, || {
            linear_kernel_matrix(&prep.standardized, &prep.standardized).expect("same matrix")
        });
        let offset = usize::from(kernel.include_bias);
        let mut phi = DMatrix::zeros(n, n + offset);
        if kernel.include_bias {
            phi.column_mut(0).fill(1.0);
        }
        phi.columns_mut(offset, n).copy_from(&k);
        let gram = phi.transpose() * &phi;
        let y = DVector::from_column_slice(y);
        let phi_t_y = phi.transpose() * &y;
        let (_, var) = mean_var(y.as_slice());
        Self {
            prep,
            y,
            kernel,
            opts,
            phi,
            gram,
            phi_t_y,
            sigma2_floor: 1e-9 * var.max(f64::MIN_POSITIVE),
        }
    }

    fn evaluate(&self, active: Vec<usize>, alpha: Vec<f64>, sigma2: f64) -> Result<State, RvmError> {
        let gram = self.gram.select_rows(&active).select_columns(&active);
        let phi_t_y = DVector::from_iterator(active.len(), active.iter().map(|&i| self.phi_t_y[i]));
        let post = posterior_from_gram(&gram, &phi_t_y, &alpha, sigma2)?;
        let residual_sq = self.residual_sq(&active, &post.mean);
        let evidence = evidence_from_posterior(&post, residual_sq, self.y.len(), &alpha, sigma2);
        Ok(State {
            active,
            alpha,
            sigma2,
            post,
            evidence,
        })
    }

    fn residual_sq(&self, active: &[usize], mu: &DVector<f64>) -> f64 {
        let mut fit = DVector::zeros(self.y.len());
        for (&c, &w) in active.iter().zip(mu.iter()) {
            fit.axpy(w, &self.phi.column(c), 1.0);
        }
        (&self.y - fit).norm_squared()
    }

    fn gammas(state: &State) -> Vec<f64> {
        state
            .alpha
            .iter()
            .enumerate()
            .map(|(i, a)| 1.0 - a * state.post.variances[i])
            .collect()
    }

    /// MacKay fixed-point re-estimation.
    fn mackay_step(&self, s: &State) -> (Vec<f64>, f64) {
        let n = self.y.len() as f64;
        let gamma = Self::gammas(s);
        let alpha = gamma
            .iter()
            .zip(s.post.mean.iter())
            .map(|(&g, &m)| {
                let a = g.max(0.0) / (m * m);
                if a.is_finite() {
                    a
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let r2 = self.residual_sq(&s.active, &s.post.mean);
        let dof = (n - gamma.iter().sum::<f64>()).max(1e-6);
        (alpha, (r2 / dof).max(self.sigma2_floor))
    }

    /// Expectation-maximization re-estimation; never decreases the evidence.
    fn em_step(&self, s: &State) -> (Vec<f64>, f64) {
        let n = self.y.len() as f64;
        let gamma_sum: f64 = Self::gammas(s).iter().sum();
        let alpha = s
            .alpha
            .iter()
            .enumerate()
            .map(|(i, _)| 1.0 / (s.post.mean[i].powi(2) + s.post.variances[i]))
            .collect();
        let r2 = self.residual_sq(&s.active, &s.post.mean);
        (alpha, ((r2 + s.sigma2 * gamma_sum) / n).max(self.sigma2_floor))
    }

    fn prune(&self, active: &[usize], alpha: Vec<f64>) -> (Vec<usize>, Vec<f64>) {
        active
            .iter()
            .zip(alpha)
            .filter(|(_, a)| *a <= self.opts.prune_threshold)
            .map(|(&c, a)| (c, a))
            .unzip()
    }

    fn propose(&self, s: &State, step: (Vec<f64>, f64)) -> Result<Option<State>, RvmError> {
        let (alpha, sigma2) = step;
        let (active, alpha) = self.prune(&s.active, alpha);
        if active.is_empty() {
            return Ok(None);
        }
        self.evaluate(active, alpha, sigma2).map(Some)
    }

    fn run(self) -> Result<TrainOutcome, RvmError> {
        let (mean, var) = mean_var(self.y.as_slice());
        if var <= 1e-24 * mean.abs().max(1.0).powi(2) {
            return Ok(self.bias_only(mean, self.sigma2_floor.max(1e-12), 0, true, Vec::new(), Vec::new()));
        }

        let m = self.phi.ncols();
        let mut state = self.evaluate((0..m).collect(), vec![1.0 / var; m], 0.1 * var)?;
        let mut trace = vec![state.evidence.value];
        let mut converged = false;
        let mut iterations = 0;

        while iterations < self.opts.max_iter {
            iterations += 1;
            let mut next = self.propose(&state, self.mackay_step(&state))?;
            if next.as_ref().is_none_or(|c| c.evidence.value < state.evidence.value) {
                next = self.propose(&state, self.em_step(&state))?;
            }
            let Some(next) = next else {
                warn!("all bases pruned; falling back to a bias-only model");
                let mut warnings = vec![TrainWarning::DegenerateModel];
                if !converged {
                    warnings.push(TrainWarning::NotConverged);
                }
                return Ok(self.bias_only(mean, var, iterations, false, trace, warnings));
            };
            let delta = next
                .active
                .iter()
                .zip(&next.alpha)
                .filter_map(|(c, a)| {
                    let k = state.active.binary_search(c).ok()?;
                    Some((a.ln() - state.alpha[k].ln()).abs())
                })
                .fold(0.0, f64::max);
            let pruned_any = next.active.len() < state.active.len();
            trace.push(next.evidence.value);
            state = next;
            if !pruned_any && delta < self.opts.tolerance {
                converged = true;
                break;
            }
        }

        let mut warnings = Vec::new();
        if !converged {
            warnings.push(TrainWarning::NotConverged);
        }
        Ok(self.finish(state, iterations, converged, trace, warnings))
    }

    fn finish(
        &self,
        s: State,
        iterations: usize,
        converged: bool,
        log_evidence: Vec<f64>,
        warnings: Vec<TrainWarning>,
    ) -> TrainOutcome {
        let offset = usize::from(self.kernel.include_bias);
        let bias = self.kernel.include_bias && s.active.first() == Some(&0);
        let relevance_indices: Vec<usize> = s
            .active
            .iter()
            .filter(|&&c| !(self.kernel.include_bias && c == 0))
            .map(|&c| c - offset)
            .collect();
        let relevance_vectors = relevance_indices
            .iter()
            .map(|&i| self.prep.raw.row(i).to_vec())
            .collect();
        let m = s.active.len();
        let full = s.post.covariance();
        let covariance = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| full[(i, j)])
            .collect();
        TrainOutcome {
            model: RvmModel {
                format_version: MODEL_FORMAT_VERSION,
                kernel: self.kernel,
                standardizer: self.prep.standardizer.clone(),
                bias,
                relevance_vectors,
                relevance_indices,
                weights: s.post.mean.iter().copied().collect(),
                alphas: s.alpha,
                noise_variance: s.sigma2,
                covariance,
                provenance: Default::default(),
            },
            iterations,
            converged,
            log_evidence,
            warnings,
        }
    }

    fn bias_only(
        &self,
        mean: f64,
        sigma2: f64,
        iterations: usize,
        converged: bool,
        log_evidence: Vec<f64>,
        warnings: Vec<TrainWarning>,
    ) -> TrainOutcome {
        let n = self.y.len() as f64;
        TrainOutcome {
            model: RvmModel {
                format_version: MODEL_FORMAT_VERSION,
                kernel: self.kernel,
                standardizer: self.prep.standardizer.clone(),
                bias: true,
                relevance_vectors: Vec::new(),
                relevance_indices: Vec::new(),
                weights: vec![mean],
                alphas: vec![1.0 / mean.powi(2).max(f64::MIN_POSITIVE)],
                noise_variance: sigma2,
                covariance: vec![sigma2 / n],
                provenance: Default::default(),
            },
            iterations,
            converged,
            log_evidence,
            warnings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvm::rbf_kernel_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sinc(x: f64) -> f64 {
        if x == 0.0 {
            1.0
        } else {
            x.sin() / x
        }
    }

    fn sinc_data(n: usize, noise: f64, seed: u64) -> (DataMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise).unwrap();
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y = xs.iter().map(|&x| sinc(x) + normal.sample(&mut rng)).collect();
        (DataMatrix::new(n, 1, xs).unwrap(), y)
    }

    #[test]
    fn constant_target_gives_bias_only() {
        let x = DataMatrix::new(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = rvm_train(&x, &[2.5; 5], KernelSpec::rbf(1.0), &RvmOptions::default()).unwrap();
        assert_eq!(out.model.num_relevance_vectors(), 0);
        let (mean, var) = out.model.predict(&DataMatrix::new(2, 1, vec![-3.0, 17.0]).unwrap()).unwrap();
        assert_eq!(mean, vec![2.5, 2.5]);
        assert!(var.iter().all(|&v| v >= out.model.noise_variance));
    }

    #[test]
    fn rejects_tiny_or_bad_inputs() {
        let x = DataMatrix::new(1, 1, vec![0.0]).unwrap();
        assert_eq!(
            rvm_train(&x, &[1.0], KernelSpec::rbf(1.0), &RvmOptions::default()).unwrap_err(),
            RvmError::TooFewSamples(1)
        );
        let x = DataMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(rvm_train(&x, &[1.0, f64::NAN], KernelSpec::rbf(1.0), &RvmOptions::default()).is_err());
    }

    #[test]
    fn sinc_is_sparse_and_accurate() {
        let (x, y) = sinc_data(100, 0.01, 42);
        let out = rvm_train(&x, &y, KernelSpec::rbf(0.3), &RvmOptions::default()).unwrap();
        let grid: Vec<f64> = (0..400).map(|k| -10.0 + 20.0 * (k as f64 + 0.5) / 400.0).collect();
        let pred = out.model.predict_mean(&DataMatrix::new(400, 1, grid.clone()).unwrap()).unwrap();
        let rmse = (grid.iter().zip(&pred).map(|(&g, p)| (sinc(g) - p).powi(2)).sum::<f64>() / 400.0).sqrt();
        assert!(rmse <= 0.05, "rmse {rmse}");
        assert!(out.model.num_relevance_vectors() <= 15, "rv {}", out.model.num_relevance_vectors());
    }

    #[test]
    fn evidence_never_decreases() {
        let (x, y) = sinc_data(60, 0.05, 9);
        let out = rvm_train(&x, &y, KernelSpec::rbf(0.4), &RvmOptions::default()).unwrap();
        for w in out.log_evidence.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn single_generating_basis_survives() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 40;
        let raw: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = DataMatrix::new(n, 2, raw).unwrap();
        let prep = Prepared::new(&x).unwrap();
        let gamma = 0.8;
        let centre = prep.standardized().select_rows(&[17]);
        let k = rbf_kernel_matrix(prep.standardized(), &centre, gamma).unwrap();
        let noise = Normal::new(0.0, 1e-4).unwrap();
        let y: Vec<f64> = k.iter().map(|v| 3.0 * v + noise.sample(&mut rng)).collect();
        let out = prep.fit(&y, KernelSpec::rbf(gamma), &RvmOptions::default()).unwrap();
        assert!(out.model.relevance_indices.contains(&17), "{:?}", out.model.relevance_indices);
        let pred = out.model.predict_mean(&x).unwrap();
        let rmse = (pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(rmse <= 1e-2, "rmse {rmse}");
    }

    #[test]
    fn batch_predict_equals_loop() {
        let (x, y) = sinc_data(50, 0.05, 3);
        let model = rvm_train(&x, &y, KernelSpec::rbf(0.3), &RvmOptions::default()).unwrap().model;
        let q = DataMatrix::new(7, 1, vec![-9.0, -4.5, -1.0, 0.0, 0.3, 5.0, 9.9]).unwrap();
        let (bm, bv) = model.predict(&q).unwrap();
        for i in 0..7 {
            let (m, v) = model.predict(&q.select_rows(&[i])).unwrap();
            assert!((m[0] - bm[i]).abs() < 1e-12);
            assert!((v[0] - bv[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn training_points_within_two_sigma() {
        let (x, y) = sinc_data(50, 0.02, 8);
        let model = rvm_train(&x, &y, KernelSpec::rbf(0.3), &RvmOptions::default()).unwrap().model;
        let (m, v) = model.predict(&x).unwrap();
        let inside = m
            .iter()
            .zip(&v)
            .zip(&y)
            .filter(|((m, v), t)| (*m - *t).abs() <= 2.0 * v.sqrt())
            .count();
        assert!(inside as f64 >= 0.9 * y.len() as f64, "{inside}");
    }

    #[test]
    fn predict_dim_mismatch() {
        let (x, y) = sinc_data(20, 0.05, 1);
        let model = rvm_train(&x, &y, KernelSpec::rbf(0.5), &RvmOptions::default()).unwrap().model;
        let q = DataMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(model.predict(&q), Err(RvmError::DimMismatch { .. })));
    }

    #[test]
    fn model_json_round_trip_is_lossless() {
        let (x, y) = sinc_data(30, 0.05, 2);
        let model = rvm_train(&x, &y, KernelSpec::rbf(0.5), &RvmOptions::default()).unwrap().model;
        let back = RvmModel::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        back.check_version().unwrap();
    }
}
