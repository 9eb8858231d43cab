//! Per-dataset feature matrices and principal component projection.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::features::{FeatureSet, MIN_FEATURE_LEN};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub datasets: Vec<String>,
    pub features: Vec<String>,
    /// Row-major `datasets × features`.
    pub rows: Vec<Vec<f64>>,
    /// Columns with zero variance across datasets (left at 0).
    pub constant_columns: Vec<String>,
}

/// Standardizes each column to zero mean and unit population variance.
/// Constant columns become 0 and are reported.
pub fn standardize_columns(rows: &mut [Vec<f64>]) -> Vec<usize> {
    let Some(cols) = rows.first().map(Vec::len) else {
        return Vec::new();
    };
    let n = rows.len() as f64;
    let mut constant = Vec::new();
    for c in 0..cols {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            constant.push(c);
            rows.iter_mut().for_each(|r| r[c] = 0.0);
        } else {
            rows.iter_mut().for_each(|r| r[c] = (r[c] - mean) / sd);
        }
    }
    constant
}

/// Mean feature vector of every dataset, columns standardized across datasets.
pub fn dataset_feature_matrix(corpus: &[Dataset], set: &dyn FeatureSet) -> Result<FeatureMatrix> {
    let mut rows = Vec::with_capacity(corpus.len());
    for d in corpus {
        let vectors = d
            .records
            .par_iter()
            .filter(|r| r.len() >= MIN_FEATURE_LEN)
            .map(|r| set.compute(&r.target))
            .collect::<Result<Vec<_>>>()?;
        if vectors.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{}: no series with at least {MIN_FEATURE_LEN} points",
                d.name
            )));
        }
        let k = vectors.len() as f64;
        let mut mean = vec![0.0; set.feature_names().len()];
        for v in &vectors {
            for (m, x) in mean.iter_mut().zip(&v.values) {
                *m += x / k;
            }
        }
        rows.push(mean);
    }
    let constant = standardize_columns(&mut rows);
    let features: Vec<String> = set.feature_names().iter().map(|s| s.to_string()).collect();
    let constant_columns: Vec<String> = constant.iter().map(|&c| features[c].clone()).collect();
    if !constant_columns.is_empty() && corpus.len() > 1 {
        log::warn!("features constant across datasets: {}", constant_columns.join(", "));
    }
    Ok(FeatureMatrix {
        datasets: corpus.iter().map(|d| d.name.clone()).collect(),
        features,
        rows,
        constant_columns,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `rows × k` scores of the centered data.
    pub projections: Vec<Vec<f64>>,
    /// Explained-variance ratio per component, zero-padded past the rank.
    pub explained_ratio: Vec<f64>,
    /// `k` unit loading vectors; the first non-negligible entry of each is positive.
    pub components: Vec<Vec<f64>>,
    pub means: Vec<f64>,
}

/// Top-`k` principal components from the eigendecomposition of the sample
/// covariance.
pub fn pca_project(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidArgument("PCA rows must share a positive width".into()));
    }
    let n = rows.len();
    let means: Vec<f64> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, cols, |i, j| rows[i][j] - means[j]);
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(k);
    let mut explained_ratio = Vec::with_capacity(k);
    for idx in 0..k {
        if idx >= cols {
            components.push(vec![0.0; cols]);
            explained_ratio.push(0.0);
            continue;
        }
        let j = order[idx];
        let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let lambda = eig.eigenvalues[j].max(0.0);
        explained_ratio.push(if total > 0.0 { lambda / total } else { 0.0 });
        components.push(v);
    }
    let projections = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|v| (0..cols).map(|c| x[(i, c)] * v[c]).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        projections,
        explained_ratio,
        components,
        means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_moments() {
        let mut rows = vec![vec![1.0, 10.0], vec![2.0, 30.0], vec![6.0, 20.0]];
        assert!(standardize_columns(&mut rows).is_empty());
        for c in 0..2 {
            let mean: f64 = rows.iter().map(|r| r[c]).sum::<f64>() / 3.0;
            let var: f64 = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
        let mut one = vec![vec![3.0, 4.0]];
        assert_eq!(standardize_columns(&mut one), vec![0, 1]);
        assert_eq!(one, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn collinear_points() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let p = pca_project(&rows, 2).unwrap();
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-9);
        assert!(p.components[0][0] > 0.0);
        for c in 0..2 {
            let m: f64 = p.projections.iter().map(|r| r[c]).sum::<f64>() / 10.0;
            assert!(m.abs() < 1e-10);
        }
    }

    #[test]
    fn padded_beyond_width() {
        let rows = vec![vec![0.0], vec![1.0], vec![3.0]];
        let p = pca_project(&rows, 3).unwrap();
        assert_eq!(p.explained_ratio.len(), 3);
        assert_eq!(&p.explained_ratio[1..], &[0.0, 0.0]);
    }
}
