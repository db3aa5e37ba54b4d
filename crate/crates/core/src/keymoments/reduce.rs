//! Robust scaling followed by principal component projection.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::KeyMomentError;
use crate::featurize::FeatureTable;
use crate::{stats, Modality};

/// Identifies a window across a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowKey {
    pub session_id: String,
    pub t_s: f64,
}

/// Fitted scaling and projection, reusable on new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub median: Vec<f64>,
    pub scale: Vec<f64>,
    pub center: Vec<f64>,
    /// Row-major `n_components x n_features` loading matrix.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the scaled covariance for the kept components.
    pub explained_variance: Vec<f64>,
}

impl Projection {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn scale_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.median).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        let scaled = self.scale_row(row);
        self.components
            .iter()
            .map(|c| c.iter().zip(&scaled).zip(&self.center).map(|((w, x), m)| w * (x - m)).sum())
            .collect()
    }

    /// Fits robust scaling and PCA on `rows` (all of equal length).
    pub fn fit(rows: &[&[f64]], n_components: usize) -> Result<Self, KeyMomentError> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if n_components == 0 || n < n_components.min(d).max(2) || d == 0 {
            return Err(KeyMomentError::TooFewWindows { needed: n_components.max(2), found: n });
        }
        let mut median = Vec::with_capacity(d);
        let mut scale = Vec::with_capacity(d);
        for j in 0..d {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            median.push(stats::quantile_sorted(&col, 0.5));
            let iqr = stats::quantile_sorted(&col, 0.75) - stats::quantile_sorted(&col, 0.25);
            scale.push(if iqr > 0.0 { iqr } else { 1.0 });
        }
        let scaled = DMatrix::from_fn(n, d, |i, j| (rows[i][j] - median[j]) / scale[j]);
        let center: Vec<f64> = (0..d).map(|j| scaled.column(j).mean()).collect();
        let mut centered = scaled;
        for j in 0..d {
            centered.column_mut(j).add_scalar_mut(-center[j]);
        }
        let cov = centered.transpose() * &centered / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let k = n_components.min(d);
        let mut components = Vec::with_capacity(k);
        let mut explained = Vec::with_capacity(k);
        for &idx in order.iter().take(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            // Deterministic sign: largest-magnitude loading positive.
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            explained.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(Self {
            median,
            scale,
            center,
            components,
            explained_variance: explained,
        })
    }
}

/// Valid windows of one or more tables projected into a common space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedTable {
    pub modality: Modality,
    pub keys: Vec<WindowKey>,
    pub rows: Vec<Vec<f64>>,
    pub projection: Projection,
}

impl ReducedTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.projection.n_components()
    }
}

/// Robust scaling and PCA over the valid windows of one table.
pub fn preprocess_features(table: &FeatureTable, n_components: usize) -> Result<ReducedTable, KeyMomentError> {
    preprocess_corpus(table.modality, &[("", table)], n_components, 1)
}

/// Like [`preprocess_features`] over several sessions of one modality,
/// keeping every `stride`-th valid window of each session.
pub fn preprocess_corpus(
    modality: Modality,
    tables: &[(&str, &FeatureTable)],
    n_components: usize,
    stride: usize,
) -> Result<ReducedTable, KeyMomentError> {
    let mut keys = Vec::new();
    let mut raw: Vec<&[f64]> = Vec::new();
    for (sid, table) in tables {
        for w in table.valid_windows().step_by(stride.max(1)) {
            keys.push(WindowKey {
                session_id: sid.to_string(),
                t_s: w.t_s,
            });
            raw.push(&w.values);
        }
    }
    let projection = Projection::fit(&raw, n_components)?;
    let rows = raw.iter().map(|r| projection.project(r)).collect();
    Ok(ReducedTable {
        modality,
        keys,
        rows,
        projection,
    })
}
