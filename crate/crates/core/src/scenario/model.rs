use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Pivots of the symmetric factorization may dip this far below zero before
/// the covariance is rejected as indefinite.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Parameters of the correlated lognormal indicator model.
///
/// Each period, indicator `j` moves as `level * exp(g_j)` where `g` is drawn
/// from `N(drift, covariance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicModelConfig {
    pub indicator_count: usize,
    pub period_count: usize,
    pub drift: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub initial_levels: Vec<f64>,
    pub seed: u64,
}

impl EconomicModelConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.indicator_count;
        if k == 0 {
            return Err(Error::validation("indicator_count must be positive"));
        }
        if self.period_count == 0 {
            return Err(Error::validation("period_count must be positive"));
        }
        if self.drift.len() != k {
            return Err(Error::validation(format!(
                "drift has {} entries, expected {k}",
                self.drift.len()
            )));
        }
        if self.initial_levels.len() != k {
            return Err(Error::validation(format!(
                "initial_levels has {} entries, expected {k}",
                self.initial_levels.len()
            )));
        }
        if let Some((j, v)) = self
            .initial_levels
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::validation(format!(
                "initial level {j} is {v}; levels must be strictly positive"
            )));
        }
        if self.drift.iter().any(|d| !d.is_finite()) {
            return Err(Error::validation("drift must be finite"));
        }
        self.factor().map(|_| ())
    }

    /// Factorizes the covariance as `F Fᵀ` via LDLᵀ, accepting semi-definite
    /// (rank-deficient) matrices.
    pub fn factor(&self) -> Result<CovarianceFactor> {
        CovarianceFactor::new(&self.covariance, self.indicator_count)
    }

    /// Stable 64-bit digest of the configuration (leading bytes of SHA-256
    /// over a little-endian canonical encoding).
    pub fn digest(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(b"scenopt-model-v1");
        hasher.update((self.indicator_count as u64).to_le_bytes());
        hasher.update((self.period_count as u64).to_le_bytes());
        for v in &self.drift {
            hasher.update(v.to_le_bytes());
        }
        for row in &self.covariance {
            for v in row {
                hasher.update(v.to_le_bytes());
            }
        }
        for v in &self.initial_levels {
            hasher.update(v.to_le_bytes());
        }
        hasher.update(self.seed.to_le_bytes());
        let out = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&out[..8]);
        u64::from_le_bytes(head)
    }
}

/// Lower-triangular factor `F` with `F Fᵀ = Σ`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactor {
    dim: usize,
    lower: Vec<f64>,
    pivots: Vec<f64>,
}

impl CovarianceFactor {
    pub fn new(cov: &[Vec<f64>], dim: usize) -> Result<Self> {
        if cov.len() != dim || cov.iter().any(|r| r.len() != dim) {
            return Err(Error::ModelConfig(format!("covariance must be {dim}x{dim}")));
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (cov[i][j], cov[j][i]);
                if !a.is_finite() || (a - b).abs() > PIVOT_TOLERANCE * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::ModelConfig(format!(
                        "covariance is not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }

        // Unit-lower L and diagonal D with Σ = L D Lᵀ.
        let mut l = vec![0.0; dim * dim];
        let mut d = vec![0.0; dim];
        for j in 0..dim {
            let mut dj = cov[j][j];
            for k in 0..j {
                dj -= l[j * dim + k] * l[j * dim + k] * d[k];
            }
            if dj < -PIVOT_TOLERANCE {
                return Err(Error::ModelConfig(format!(
                    "covariance is not positive semi-definite (pivot {j} = {dj:e})"
                )));
            }
            l[j * dim + j] = 1.0;
            if dj <= PIVOT_TOLERANCE {
                d[j] = 0.0;
                // A zero pivot forces the rest of the column to vanish.
                for i in (j + 1)..dim {
                    let mut r = cov[i][j];
                    for k in 0..j {
                        r -= l[i * dim + k] * l[j * dim + k] * d[k];
                    }
                    if r.abs() > 1e-9 {
                        return Err(Error::ModelConfig(format!(
                            "covariance is not positive semi-definite (zero pivot {j} with coupling {r:e})"
                        )));
                    }
                }
                continue;
            }
            d[j] = dj;
            for i in (j + 1)..dim {
                let mut r = cov[i][j];
                for k in 0..j {
                    r -= l[i * dim + k] * l[j * dim + k] * d[k];
                }
                l[i * dim + j] = r / dj;
            }
        }

        let mut lower = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                lower[i * dim + j] = l[i * dim + j] * d[j].sqrt();
            }
        }
        Ok(Self { dim, lower, pivots: d })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    /// `out = mean + F z`.
    pub fn transform(&self, mean: &[f64], z: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let row = &self.lower[i * self.dim..i * self.dim + i + 1];
            out[i] = mean[i] + row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Reconstructs `F Fᵀ`.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| self.lower[i * n + k] * self.lower[j * n + k]).sum())
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(cov: Vec<Vec<f64>>) -> EconomicModelConfig {
        let k = cov.len();
        EconomicModelConfig {
            indicator_count: k,
            period_count: 4,
            drift: vec![0.0; k],
            covariance: cov,
            initial_levels: vec![1.0; k],
            seed: 1,
        }
    }

    #[test]
    fn factor_reconstructs_covariance() {
        let cov = vec![
            vec![0.04, 0.01, 0.002],
            vec![0.01, 0.09, -0.01],
            vec![0.002, -0.01, 0.03],
        ];
        let f = CovarianceFactor::new(&cov, 3).unwrap();
        let back = f.reconstruct();
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - cov[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rank_deficient_covariance_is_accepted() {
        // Perfectly correlated pair.
        let cov = vec![vec![0.04, 0.04], vec![0.04, 0.04]];
        let f = CovarianceFactor::new(&cov, 2).unwrap();
        assert_eq!(f.pivots()[1], 0.0);
        let back = f.reconstruct();
        assert!((back[1][1] - 0.04).abs() < 1e-15);
        assert!(config(cov).validate().is_ok());
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let cov = vec![vec![0.01, 0.05], vec![0.05, 0.01]];
        assert!(matches!(config(cov).validate(), Err(Error::ModelConfig(_))));
        let neg = vec![vec![-0.01]];
        assert!(matches!(config(neg).validate(), Err(Error::ModelConfig(_))));
    }

    #[test]
    fn asymmetric_covariance_is_rejected() {
        let cov = vec![vec![0.04, 0.01], vec![0.02, 0.04]];
        assert!(matches!(config(cov).validate(), Err(Error::ModelConfig(_))));
    }

    #[test]
    fn non_positive_initial_level_is_a_validation_error() {
        let mut c = config(vec![vec![0.01]]);
        c.initial_levels = vec![0.0];
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
        c.initial_levels = vec![-3.0];
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn digest_changes_with_seed() {
        let a = config(vec![vec![0.01]]);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 2;
        assert_ne!(a.digest(), b.digest());
    }
}
