use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{AlignedPanel, MIN_OBSERVATIONS, PERIODS_PER_YEAR};
use crate::error::{Result, SaaError};
use crate::linalg;

/// Eigenvalue floor applied by [`nearest_psd_repair`].
pub const PSD_FLOOR: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Sample,
    Shrunk,
}

/// Annualized covariance matrix with asset ordering fixed by `assets`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub assets: Vec<String>,
    pub matrix: DMatrix<f64>,
    pub estimator: Estimator,
    pub shrinkage_intensity: f64,
}

impl CovarianceEstimate {
    pub fn new(assets: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        let est = CovarianceEstimate {
            assets,
            matrix,
            estimator: Estimator::Sample,
            shrinkage_intensity: 0.0,
        };
        est.validate()?;
        Ok(est)
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn vols(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn correlation(&self) -> DMatrix<f64> {
        linalg::correlation_from_covariance(&self.matrix)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        if !m.is_square() || m.nrows() != self.assets.len() {
            return Err(SaaError::Domain(format!(
                "covariance is {}x{} for {} assets",
                m.nrows(),
                m.ncols(),
                self.assets.len()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(SaaError::Domain("covariance has non-finite entries".into()));
        }
        if linalg::max_asymmetry(m) > SYMMETRY_TOL {
            return Err(SaaError::Domain("covariance is not symmetric".into()));
        }
        if m.diagonal().iter().any(|&d| d < 0.0) {
            return Err(SaaError::Domain("covariance has a negative variance".into()));
        }
        Ok(())
    }

    /// Row-major nested vectors for serialization.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.matrix[(i, j)]).collect())
            .collect()
    }
}

pub fn sample_covariance(panel: &AlignedPanel) -> Result<CovarianceEstimate> {
    let t = panel.n_rows();
    if t < MIN_OBSERVATIONS {
        return Err(SaaError::InsufficientData(format!(
            "{t} aligned rows, need at least {MIN_OBSERVATIONS}"
        )));
    }
    let x = &panel.returns;
    let n = x.ncols();
    let means: Vec<f64> = (0..n).map(|j| x.column(j).mean()).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for r in 0..t {
                s += (x[(r, i)] - means[i]) * (x[(r, j)] - means[j]);
            }
            let v = PERIODS_PER_YEAR * s / (t - 1) as f64;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    CovarianceEstimate::new(panel.universe.slugs(), m)
}

/// Linear shrinkage toward the diagonal: (1−δ)Σ + δ·Diag(Σ).
pub fn shrink_covariance(cov: &CovarianceEstimate, intensity: f64) -> Result<CovarianceEstimate> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(SaaError::Domain(format!(
            "shrinkage intensity {intensity} outside [0, 1]"
        )));
    }
    let n = cov.n();
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            cov.matrix[(i, i)]
        } else {
            (1.0 - intensity) * cov.matrix[(i, j)]
        }
    });
    Ok(CovarianceEstimate {
        assets: cov.assets.clone(),
        matrix: m,
        estimator: Estimator::Shrunk,
        shrinkage_intensity: intensity,
    })
}

/// Clips eigenvalues at [`PSD_FLOOR`]. Matrices that already pass the PSD
/// tolerance are returned unchanged so repeated application is a no-op.
pub fn nearest_psd_repair(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(SaaError::Domain("matrix is not square".into()));
    }
    let scale = m.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    if linalg::max_asymmetry(m) > SYMMETRY_TOL * scale {
        return Err(SaaError::Domain("matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(m.clone());
    }
    let clipped = eig.eigenvalues.map(|l| l.max(PSD_FLOOR));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    // Restore exact symmetry lost to rounding in the reassembly.
    let n = out.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    Ok(out)
}
