//! Principal component analysis through the eigendecomposition of the
//! sample covariance matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug)]
pub struct PcaResult {
    /// D×K, orthonormal columns.
    pub components: DMatrix<f64>,
    /// K values, non-increasing.
    pub explained_variance: Vec<f64>,
    /// N×K scores.
    pub projected: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Trace of the covariance matrix, i.e. the variance over all D
    /// components.
    pub total_variance: f64,
}

impl PcaResult {
    /// Maps scores back into data space.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut out = &self.projected * self.components.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

/// Fits `k` components to the rows of `data`.
///
/// Each component's sign is chosen so that its largest-magnitude entry is
/// positive.
pub fn pca_fit(data: &DMatrix<f64>, k: usize) -> Result<PcaResult> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(CoreError::InvalidParameter(format!("PCA needs at least 2 items, got {n}")));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(CoreError::InvalidParameter(format!(
            "component count {k} outside 1..={}",
            (n - 1).min(d)
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidParameter("PCA input contains non-finite values".into()));
    }

    let mean = data.row_mean().transpose();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = DMatrix::zeros(d, k);
    let mut explained_variance = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            v.neg_mut();
        }
        components.set_column(c, &v);
        explained_variance.push(eig.eigenvalues[i].max(0.0));
    }
    let projected = &centered * &components;
    Ok(PcaResult {
        components,
        explained_variance,
        projected,
        mean,
        total_variance,
    })
}
