//! Relevance vector regression.
//!
//! A sparse Bayesian kernel regressor: every training input contributes one RBF
//! basis function (plus a constant bias column), each weight gets its own prior
//! precision `α_i`, and evidence maximization drives most precisions to infinity.
//! The surviving kernel columns are the relevance vectors.

mod evidence;
mod kernel;
mod posterior;
mod train;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use evidence::{log_evidence, Evidence};
pub use kernel::{median_pairwise_distance, pairwise_sq_distances, rbf_kernel_matrix, KernelKind, KernelSpec};
pub use posterior::{fixed_alpha_posterior, Posterior};
pub use train::{rvm_train, Prepared, RvmOptions, TrainOutcome, TrainWarning};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RvmError {
    #[error("non-finite value in {0}")]
    BadInput(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("kernel width must be finite and positive, got {0}")]
    BadGamma(f64),
    #[error("need at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("posterior system is not positive definite even with jitter")]
    NumericalFailure,
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
}

/// Dense row-major sample matrix: one row per sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, RvmError> {
        if data.len() != rows * cols {
            return Err(RvmError::DimMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, RvmError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(RvmError::DimMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn select_rows(&self, idx: &[usize]) -> DataMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DataMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-dimension z-scoring. Dimensions with (near-)zero spread keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

const SCALE_FLOOR: f64 = 1e-12;

impl Standardizer {
    pub fn fit(x: &DataMatrix) -> Self {
        let n = x.rows().max(1) as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for r in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < SCALE_FLOOR {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DataMatrix) -> DataMatrix {
        let mut data = Vec::with_capacity(x.as_slice().len());
        for r in x.iter_rows() {
            data.extend(
                r.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((v, m), s)| (v - m) / s),
            );
        }
        DataMatrix {
            rows: x.rows(),
            cols: x.cols(),
            data,
        }
    }
}

/// A trained relevance vector regressor. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvmModel {
    pub format_version: u32,
    pub kernel: KernelSpec,
    pub standardizer: Standardizer,
    /// Whether the constant basis survived pruning (first weight when present).
    pub bias: bool,
    /// Raw (unstandardized) training inputs whose kernel columns survived.
    pub relevance_vectors: Vec<Vec<f64>>,
    /// Their row indices in the training matrix.
    pub relevance_indices: Vec<usize>,
    /// Posterior mean weights, bias first when present.
    pub weights: Vec<f64>,
    /// Prior precisions of the retained bases.
    pub alphas: Vec<f64>,
    pub noise_variance: f64,
    /// Posterior covariance of the weights, row-major.
    pub covariance: Vec<f64>,
    /// Identifiers (subjects) of the samples this model was trained on.
    #[serde(default)]
    pub provenance: BTreeSet<String>,
}

impl RvmModel {
    pub fn input_dim(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn num_relevance_vectors(&self) -> usize {
        self.relevance_vectors.len()
    }

    pub fn num_bases(&self) -> usize {
        self.weights.len()
    }

    pub fn with_provenance(mut self, provenance: BTreeSet<String>) -> Self {
        self.provenance = provenance;
        self
    }

    /// Design matrix of `x` against the retained bases.
    fn design(&self, x: &DataMatrix) -> Result<DMatrix<f64>, RvmError> {
        if x.cols() != self.input_dim() {
            return Err(RvmError::DimMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        if !x.is_finite() {
            return Err(RvmError::BadInput("prediction inputs"));
        }
        let q = x.rows();
        let offset = usize::from(self.bias);
        let mut phi = DMatrix::zeros(q, self.num_bases());
        if self.bias {
            phi.column_mut(0).fill(1.0);
        }
        if !self.relevance_vectors.is_empty() {
            let xs = self.standardizer.apply(x);
            let rv = self
                .standardizer
                .apply(&DataMatrix::from_rows(&self.relevance_vectors)?);
            let k = self.kernel.matrix(&xs, &rv)?;
            phi.columns_mut(offset, k.ncols()).copy_from(&k);
        }
        Ok(phi)
    }

    /// Predictive mean and variance at each row of `x`. Values are not clamped.
    pub fn predict(&self, x: &DataMatrix) -> Result<(Vec<f64>, Vec<f64>), RvmError> {
        let phi = self.design(x)?;
        let m = self.num_bases();
        let mu = DVector::from_column_slice(&self.weights);
        let sigma = DMatrix::from_row_slice(m, m, &self.covariance);
        let mean = &phi * &mu;
        let spread = &phi * &sigma;
        let var = (0..phi.nrows())
            .map(|i| self.noise_variance + spread.row(i).dot(&phi.row(i)))
            .collect();
        Ok((mean.iter().copied().collect(), var))
    }

    pub fn predict_mean(&self, x: &DataMatrix) -> Result<Vec<f64>, RvmError> {
        Ok(self.predict(x)?.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn check_version(&self) -> Result<(), RvmError> {
        if self.format_version == MODEL_FORMAT_VERSION {
            Ok(())
        } else {
            Err(RvmError::FormatVersion(self.format_version))
        }
    }
}
