use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DataMatrix, RvmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `exp(-‖x − z‖² / (2γ²))`
    Rbf,
    /// `x · z`
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// RBF width γ; ignored by the linear kernel.
    pub gamma: f64,
    pub include_bias: bool,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            gamma,
            include_bias: true,
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: 1.0,
            include_bias: true,
        }
    }

    pub fn validate(&self) -> Result<(), RvmError> {
        if self.kind == KernelKind::Rbf && !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(RvmError::BadGamma(self.gamma));
        }
        Ok(())
    }

    pub fn matrix(&self, x: &DataMatrix, z: &DataMatrix) -> Result<DMatrix<f64>, RvmError> {
        match self.kind {
            KernelKind::Rbf => rbf_kernel_matrix(x, z, self.gamma),
            KernelKind::Linear => linear_kernel_matrix(x, z),
        }
    }

    /// Kernel values from precomputed squared distances and dot products.
    pub(crate) fn matrix_from_parts(&self, sq_dist: &DMatrix<f64>, dots: impl Fn() -> DMatrix<f64>) -> DMatrix<f64> {
        match self.kind {
            KernelKind::Rbf => {
                let c = -1.0 / (2.0 * self.gamma * self.gamma);
                sq_dist.map(|d| (d * c).exp())
            }
            KernelKind::Linear => dots(),
        }
    }
}

fn check_pair(x: &DataMatrix, z: &DataMatrix) -> Result<(), RvmError> {
    if x.cols() != z.cols() {
        return Err(RvmError::DimMismatch {
            expected: x.cols(),
            got: z.cols(),
        });
    }
    if !x.is_finite() || !z.is_finite() {
        return Err(RvmError::BadInput("kernel inputs"));
    }
    Ok(())
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `D[i, j] = ‖x_i − z_j‖²`.
pub fn pairwise_sq_distances(x: &DataMatrix, z: &DataMatrix) -> Result<DMatrix<f64>, RvmError> {
    check_pair(x, z)?;
    Ok(DMatrix::from_fn(x.rows(), z.rows(), |i, j| sq_dist(x.row(i), z.row(j))))
}

/// Symmetric variant of [`pairwise_sq_distances`] that fills each pair once.
pub(crate) fn self_sq_distances(x: &DataMatrix) -> DMatrix<f64> {
    let n = x.rows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(x.row(i), x.row(j));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

pub fn rbf_kernel_matrix(x: &DataMatrix, z: &DataMatrix, gamma: f64) -> Result<DMatrix<f64>, RvmError> {
    KernelSpec::rbf(gamma).validate()?;
    let d = pairwise_sq_distances(x, z)?;
    let c = -1.0 / (2.0 * gamma * gamma);
    Ok(d.map(|v| (v * c).exp()))
}

pub(crate) fn linear_kernel_matrix(x: &DataMatrix, z: &DataMatrix) -> Result<DMatrix<f64>, RvmError> {
    check_pair(x, z)?;
    Ok(DMatrix::from_fn(x.rows(), z.rows(), |i, j| {
        x.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum()
    }))
}

/// Median Euclidean distance over distinct pairs, on at most 400 evenly strided rows.
pub fn median_pairwise_distance(x: &DataMatrix) -> f64 {
    const CAP: usize = 400;
    let n = x.rows();
    let idx: Vec<usize> = if n > CAP {
        (0..CAP).map(|k| k * n / CAP).collect()
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            dists.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        (dists[m / 2 - 1] + dists[m / 2]) / 2.0
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_distance_is_one() {
        let x = DataMatrix::from_rows(&[[0.3, -1.0, 2.0]]).unwrap();
        let k = rbf_kernel_matrix(&x, &x, 0.7).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
    }

    #[test]
    fn analytic_point() {
        let gamma = 1.3;
        let x = DataMatrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let z = DataMatrix::from_rows(&[[gamma * 2f64.sqrt(), 0.0]]).unwrap();
        let k = rbf_kernel_matrix(&x, &z, gamma).unwrap();
        assert!((k[(0, 0)] - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn double_loop_oracle() {
        let x = random(5, 3, 1);
        let z = random(4, 3, 2);
        let gamma = 0.9;
        let k = rbf_kernel_matrix(&x, &z, gamma).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let mut d2 = 0.0;
                for c in 0..3 {
                    let diff = x.row(i)[c] - z.row(j)[c];
                    d2 += diff * diff;
                }
                let expected = (-d2 / (2.0 * gamma * gamma)).exp();
                assert!((k[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_and_psd() {
        let x = random(30, 4, 9);
        let k = rbf_kernel_matrix(&x, &x, 1.1).unwrap();
        assert_eq!(k, k.transpose());
        let jittered = &k + DMatrix::identity(30, 30) * 1e-8;
        assert!(nalgebra::Cholesky::new(jittered).is_some());
        assert_eq!(self_sq_distances(&x), pairwise_sq_distances(&x, &x).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = DataMatrix::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        assert_eq!(rbf_kernel_matrix(&x, &x, 1.0), Err(RvmError::BadInput("kernel inputs")));
        let y = random(2, 2, 0);
        assert!(matches!(rbf_kernel_matrix(&y, &y, 0.0), Err(RvmError::BadGamma(_))));
        let z = random(2, 3, 0);
        assert!(matches!(rbf_kernel_matrix(&y, &z, 1.0), Err(RvmError::DimMismatch { .. })));
    }

    #[test]
    fn median_distance_small() {
        let x = DataMatrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        // distances 1, 3, 2
        assert_eq!(median_pairwise_distance(&x), 2.0);
    }
}
