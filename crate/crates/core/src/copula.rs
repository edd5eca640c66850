//! Gaussian-copula synthesizer for feature-plus-target tables.
//!
//! Each column gets an empirical-CDF marginal with midpoint plotting
//! positions `(i - 0.5) / n` and linear interpolation between order
//! statistics. Columns are coupled through the correlation of their normal
//! scores. Sampling draws correlated normals, pushes them through the
//! standard-normal CDF and then through each column's inverse empirical CDF,
//! so every synthetic value stays inside the observed range.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::FeatureTable;
use crate::rng;

pub const COPULA_FORMAT: &str = "polyflam-copula";
pub const COPULA_VERSION: u32 = 1;

/// Eigenvalue floor used when repairing the correlation matrix.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum CopulaError {
    #[error("need at least 3 rows to fit, got {0}")]
    TooFewRows(usize),
    #[error("non-finite value at row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalKind {
    EmpiricalCdf,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub column: String,
    pub kind: MarginalKind,
    pub sorted_values: Vec<f64>,
    pub observed_min: f64,
    pub observed_max: f64,
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

impl MarginalModel {
    fn fit(column: &str, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        Self {
            column: column.to_string(),
            kind: if min == max {
                MarginalKind::Degenerate
            } else {
                MarginalKind::EmpiricalCdf
            },
            sorted_values: sorted,
            observed_min: min,
            observed_max: max,
        }
    }

    fn n(&self) -> usize {
        self.sorted_values.len()
    }

    /// Plotting position of the value at ascending rank `i` (0-based).
    fn position(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n() as f64
    }

    /// Inverse empirical CDF: flat below the first and above the last
    /// plotting position, linear between consecutive order statistics.
    pub fn quantile(&self, u: f64) -> f64 {
        let xs = &self.sorted_values;
        let n = xs.len();
        if self.kind == MarginalKind::Degenerate || n == 1 {
            return xs[0];
        }
        let scaled = u * n as f64 - 0.5;
        if scaled <= 0.0 {
            return xs[0];
        }
        let k = scaled.floor() as usize;
        if k >= n - 1 {
            return xs[n - 1];
        }
        let t = scaled - k as f64;
        let x = xs[k] + t * (xs[k + 1] - xs[k]);
        x.clamp(self.observed_min, self.observed_max)
    }

    /// Empirical CDF with tied values sharing their mean plotting position,
    /// interpolated linearly between distinct values.
    pub fn cdf(&self, x: f64) -> f64 {
        let knots = self.knots();
        if x <= knots[0].0 {
            return knots[0].1;
        }
        let last = knots[knots.len() - 1];
        if x >= last.0 {
            return last.1;
        }
        let k = knots.partition_point(|(v, _)| *v <= x) - 1;
        let (x0, p0) = knots[k];
        let (x1, p1) = knots[k + 1];
        p0 + (x - x0) / (x1 - x0) * (p1 - p0)
    }

    /// Distinct values with their mid-rank plotting positions.
    fn knots(&self) -> Vec<(f64, f64)> {
        let xs = &self.sorted_values;
        let mut out = Vec::new();
        let mut i = 0;
        while i < xs.len() {
            let mut j = i;
            while j + 1 < xs.len() && xs[j + 1] == xs[i] {
                j += 1;
            }
            let mean_pos = (self.position(i) + self.position(j)) / 2.0;
            out.push((xs[i], mean_pos));
            i = j + 1;
        }
        out
    }

    /// Normal score of an observed or synthetic value.
    pub fn normal_score(&self, x: f64) -> f64 {
        standard_normal().inverse_cdf(self.cdf(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub format: String,
    pub version: u32,
    pub catalog_id: String,
    pub target_column: Option<String>,
    pub marginals: Vec<MarginalModel>,
    /// Row-major correlation of normal scores after PSD repair.
    pub correlation: Vec<Vec<f64>>,
    pub fit_row_count: usize,
}

/// Pearson correlation; 0 when either side has no spread.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Pairwise normal-score correlation matrix; degenerate columns correlate 0
/// with everything but themselves.
pub fn normal_score_correlation(scores: &[Vec<f64>], degenerate: &[bool]) -> DMatrix<f64> {
    let d = scores.len();
    let mut m = DMatrix::identity(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let r = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                pearson(&scores[i], &scores[j])
            };
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    m
}

/// Nearest-PSD repair: clip eigenvalues at [`EIGEN_FLOOR`], rebuild, then
/// rescale to unit diagonal.
pub fn repair_correlation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let scale = DVector::from_iterator(d, (0..d).map(|i| 1.0 / rebuilt[(i, i)].sqrt()));
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = if i == j {
                1.0
            } else {
                rebuilt[(i, j)] * scale[i] * scale[j]
            };
        }
    }
    // exact symmetry
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn fit(table: &FeatureTable) -> Result<CopulaModel, CopulaError> {
    let n = table.n_rows();
    if n < 3 {
        return Err(CopulaError::TooFewRows(n));
    }
    for (r, row) in table.rows.iter().enumerate() {
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(CopulaError::NonFinite {
                row: r + 1,
                column: table.column_names[c].clone(),
            });
        }
    }
    let marginals: Vec<MarginalModel> = table
        .column_names
        .iter()
        .enumerate()
        .map(|(j, name)| MarginalModel::fit(name, &table.column(j)))
        .collect();
    let scores: Vec<Vec<f64>> = marginals
        .iter()
        .enumerate()
        .map(|(j, m)| table.rows.iter().map(|r| m.normal_score(r[j])).collect())
        .collect();
    let degenerate: Vec<bool> = marginals
        .iter()
        .map(|m| m.kind == MarginalKind::Degenerate)
        .collect();
    let raw = normal_score_correlation(&scores, &degenerate);
    let repaired = repair_correlation(&raw);
    let d = marginals.len();
    Ok(CopulaModel {
        format: COPULA_FORMAT.to_string(),
        version: COPULA_VERSION,
        catalog_id: table.catalog_id.clone(),
        target_column: table.target_column.clone(),
        marginals,
        correlation: (0..d)
            .map(|i| (0..d).map(|j| repaired[(i, j)]).collect())
            .collect(),
        fit_row_count: n,
    })
}

impl CopulaModel {
    pub fn dimension(&self) -> usize {
        self.marginals.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.marginals.iter().map(|m| m.column.clone()).collect()
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let d = self.dimension();
        DMatrix::from_fn(d, d, |i, j| self.correlation[i][j])
    }

    /// Lower factor `L` with `L Lᵀ = correlation`: Cholesky when it succeeds,
    /// otherwise the symmetric square root from the eigendecomposition.
    pub fn factor(&self) -> DMatrix<f64> {
        let c = self.correlation_matrix();
        match c.clone().cholesky() {
            Some(ch) => ch.l(),
            None => {
                let eig = SymmetricEigen::new(c);
                let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                &eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose()
            }
        }
    }

    /// Maps each column of `table` to normal scores under this model's marginals.
    pub fn normal_scores(&self, table: &FeatureTable) -> Vec<Vec<f64>> {
        self.marginals
            .iter()
            .enumerate()
            .map(|(j, m)| table.rows.iter().map(|r| m.normal_score(r[j])).collect())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("copula model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CopulaError> {
        let model: Self = serde_json::from_str(text).map_err(|e| CopulaError::Format(e.to_string()))?;
        if model.format != COPULA_FORMAT {
            return Err(CopulaError::Format(format!(
                "unexpected format `{}`",
                model.format
            )));
        }
        if model.version != COPULA_VERSION {
            return Err(CopulaError::Format(format!(
                "unsupported version {} (expected {COPULA_VERSION})",
                model.version
            )));
        }
        let d = model.marginals.len();
        if model.correlation.len() != d || model.correlation.iter().any(|r| r.len() != d) {
            return Err(CopulaError::Format(
                "correlation shape does not match marginals".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CopulaError> {
        std::fs::write(path, self.to_json()).map_err(|e| CopulaError::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CopulaError> {
        let text = std::fs::read_to_string(path).map_err(|e| CopulaError::Format(e.to_string()))?;
        Self::from_json(&text)
    }
}

/// Draws `n` synthetic rows. Identical `(model, n, seed)` give bit-identical
/// tables: one `ChaCha8Rng` seeded with `seed`, normals drawn row-major.
pub fn sample(model: &CopulaModel, n: usize, seed: u64) -> Result<FeatureTable, CopulaError> {
    if n == 0 {
        return Err(CopulaError::EmptySample);
    }
    let d = model.dimension();
    let l = model.factor();
    let phi = standard_normal();
    let mut rng = rng::rng_from_seed(seed);
    let mut rows = Vec::with_capacity(n);
    let mut e = DVector::zeros(d);
    for _ in 0..n {
        for k in 0..d {
            e[k] = StandardNormal.sample(&mut rng);
        }
        let z = &l * &e;
        let row = model
            .marginals
            .iter()
            .enumerate()
            .map(|(j, m)| match m.kind {
                MarginalKind::Degenerate => m.sorted_values[0],
                MarginalKind::EmpiricalCdf => m.quantile(phi.cdf(z[j])),
            })
            .collect();
        rows.push(row);
    }
    Ok(FeatureTable {
        column_names: model.column_names(),
        rows,
        catalog_id: model.catalog_id.clone(),
        target_column: model.target_column.clone(),
        row_names: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: Vec<Vec<f64>>) -> FeatureTable {
        FeatureTable::new(cols.iter().map(|s| s.to_string()).collect(), rows, "t").unwrap()
    }

    #[test]
    fn quantile_interpolates_between_order_statistics() {
        let m = MarginalModel::fit("a", &[3.0, 1.0, 2.0, 4.0]);
        // positions 0.125, 0.375, 0.625, 0.875
        assert_eq!(m.quantile(0.0), 1.0);
        assert_eq!(m.quantile(0.125), 1.0);
        assert_eq!(m.quantile(0.25), 1.5);
        assert_eq!(m.quantile(0.875), 4.0);
        assert_eq!(m.quantile(1.0), 4.0);
        assert!((m.cdf(1.5) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ties_share_mid_rank() {
        let m = MarginalModel::fit("a", &[0.0, 0.0, 0.0, 1.0]);
        assert!((m.cdf(0.0) - 0.375).abs() < 1e-15);
        assert!((m.cdf(1.0) - 0.875).abs() < 1e-15);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let t = table(&["a", "b"], vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]);
        let m = fit(&t).unwrap();
        assert_eq!(m.marginals[1].kind, MarginalKind::Degenerate);
        assert_eq!(m.correlation[0][1], 0.0);
        assert_eq!(m.correlation[1][1], 1.0);
        let s = sample(&m, 5, 3).unwrap();
        assert!(s.rows.iter().all(|r| r[1] == 5.0));
    }

    #[test]
    fn degenerate_single_column_samples_constant() {
        let t = table(&["a"], vec![vec![2.5]; 4]);
        let m = fit(&t).unwrap();
        let s = sample(&m, 5, 11).unwrap();
        assert_eq!(s.rows, vec![vec![2.5]; 5]);
    }

    #[test]
    fn identical_columns_correlate_fully() {
        let rows = (0..10).map(|i| vec![i as f64 * 1.3, i as f64 * 1.3]).collect();
        let m = fit(&table(&["a", "b"], rows)).unwrap();
        assert!((m.correlation[0][1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_preconditions() {
        let t = table(&["a"], vec![vec![1.0], vec![2.0]]);
        assert_eq!(fit(&t), Err(CopulaError::TooFewRows(2)));
        let mut t = table(&["a"], vec![vec![1.0], vec![2.0], vec![3.0]]);
        t.rows[2][0] = f64::NAN;
        assert!(matches!(fit(&t), Err(CopulaError::NonFinite { row: 3, .. })));
        let t = table(&["a"], vec![vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(sample(&fit(&t).unwrap(), 0, 1), Err(CopulaError::EmptySample));
    }

    #[test]
    fn same_seed_same_table() {
        let rows = (0..12)
            .map(|i| vec![i as f64, (i * i) as f64, (i % 3) as f64])
            .collect();
        let m = fit(&table(&["a", "b", "c"], rows)).unwrap();
        let a = sample(&m, 50, 9).unwrap();
        let b = sample(&m, 50, 9).unwrap();
        assert_eq!(a, b);
        let c = sample(&m, 50, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let rows = (0..6).map(|i| vec![i as f64, 6.0 - i as f64]).collect();
        let m = fit(&table(&["a", "b"], rows)).unwrap();
        let back = CopulaModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let future = m.to_json().replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(
            CopulaModel::from_json(&future),
            Err(CopulaError::Format(_))
        ));
    }

    #[test]
    fn repair_makes_indefinite_matrix_psd() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let r = repair_correlation(&m);
        let eig = SymmetricEigen::new(r.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
        for i in 0..3 {
            assert_eq!(r[(i, i)], 1.0);
        }
    }
}
