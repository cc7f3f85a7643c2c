//! Norm-bounded feature tables and the mean classifier.

use ndarray::{Array2, ArrayView1};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// Slack allowed on the norm constraint to absorb round-off from
/// normalization layers.
pub const NORM_TOL: f64 = 1e-9;

/// An embedding of a finite point set: row `i` is the feature vector of
/// dataset point `i`, with every row inside the L2 ball of radius
/// `norm_bound` (up to [`NORM_TOL`]).
#[derive(Clone, Debug)]
pub struct FeatureMap {
    feats: Array2<f64>,
    norm_bound: f64,
}

impl FeatureMap {
    /// Wraps a precomputed feature table, checking the norm constraint row
    /// by row.
    pub fn from_table(feats: Array2<f64>, norm_bound: f64) -> Result<Self> {
        if !norm_bound.is_finite() || norm_bound < 0.0 {
            return Err(Error::InvalidParams(format!(
                "norm bound must be finite and nonnegative, got {norm_bound}"
            )));
        }
        for (i, row) in feats.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm <= norm_bound + NORM_TOL) {
                return Err(Error::InvalidParams(format!(
                    "feature row {i} has norm {norm}, exceeding bound {norm_bound}"
                )));
            }
        }
        Ok(Self { feats, norm_bound })
    }

    /// The all-zeros embedding (f == 0).
    pub fn zeros(n: usize, dim: usize, norm_bound: f64) -> Result<Self> {
        Self::from_table(Array2::zeros((n, dim)), norm_bound)
    }

    pub fn n(&self) -> usize {
        self.feats.nrows()
    }

    pub fn dim(&self) -> usize {
        self.feats.ncols()
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.feats
    }

    pub fn feature(&self, i: usize) -> ArrayView1<'_, f64> {
        self.feats.row(i)
    }

    /// Rescales every feature by `s` in (0, 1]; the ball constraint is
    /// preserved, so the same `norm_bound` still applies.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(0.0 < s && s <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "scale factor must lie in (0, 1], got {s}"
            )));
        }
        Self::from_table(&self.feats * s, self.norm_bound)
    }

    /// Keeps only the given rows (in order), e.g. to match a class-subset
    /// view of the underlying dataset.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut feats = Array2::zeros((rows.len(), self.dim()));
        for (new, &old) in rows.iter().enumerate() {
            if old >= self.n() {
                return Err(Error::InvalidParams(format!("row {old} out of range")));
            }
            feats.row_mut(new).assign(&self.feats.row(old));
        }
        Self::from_table(feats, self.norm_bound)
    }
}

/// The linear classifier whose c-th weight row is the class-conditional mean
/// embedding `mu_c`.
#[derive(Clone, Debug)]
pub struct MeanClassifier {
    means: Array2<f64>,
}

impl MeanClassifier {
    pub fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Weight matrix W^mu, one row per class.
    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn mean(&self, c: usize) -> ArrayView1<'_, f64> {
        self.means.row(c)
    }
}

/// Computes `mu_c` as the arithmetic mean of the features over each class's
/// points (the exact empirical class-conditional expectation).
pub fn build_mean_classifier(data: &LabeledDataset, f: &FeatureMap) -> Result<MeanClassifier> {
    if f.n() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature table has {} rows, dataset {}",
            f.n(),
            data.len()
        )));
    }
    let mut means = Array2::zeros((data.num_classes(), f.dim()));
    for c in 0..data.num_classes() {
        let bucket = data.class_points(c);
        debug_assert!(!bucket.is_empty(), "dataset invariant: no empty classes");
        let mut row = means.row_mut(c);
        for &i in bucket {
            row += &f.feature(i);
        }
        row /= bucket.len() as f64;
        // mean of points in the L-ball stays in the L-ball (convexity)
        debug_assert!(row.dot(&row).sqrt() <= f.norm_bound() + NORM_TOL);
    }
    Ok(MeanClassifier { means })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> LabeledDataset {
        let points = array![[0.0], [1.0], [2.0], [3.0]];
        LabeledDataset::new(points, vec![0, 0, 1, 1], 2).unwrap()
    }

    #[test]
    fn norm_check_enforced() {
        let ok = array![[0.6, 0.8], [0.0, 0.0]];
        assert!(FeatureMap::from_table(ok, 1.0).is_ok());
        let bad = array![[1.1, 0.0]];
        assert!(FeatureMap::from_table(bad, 1.0).is_err());
    }

    #[test]
    fn zero_map_means_are_zero() {
        let data = toy();
        let f = FeatureMap::zeros(4, 3, 1.0).unwrap();
        let mc = build_mean_classifier(&data, &f).unwrap();
        assert!(mc.means().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_point_classes_copy_features() {
        let points = array![[0.0], [1.0]];
        let data = LabeledDataset::new(points, vec![0, 1], 2).unwrap();
        let feats = array![[0.3, 0.4], [-0.5, 0.1]];
        let f = FeatureMap::from_table(feats.clone(), 1.0).unwrap();
        let mc = build_mean_classifier(&data, &f).unwrap();
        assert_eq!(mc.means(), &feats);
    }

    #[test]
    fn opposite_features_cancel() {
        let data = toy();
        let feats = array![[0.7], [-0.7], [0.2], [0.2]];
        let f = FeatureMap::from_table(feats, 1.0).unwrap();
        let mc = build_mean_classifier(&data, &f).unwrap();
        assert_eq!(mc.means()[[0, 0]], 0.0);
        assert!((mc.means()[[1, 0]] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn scaling_stays_in_ball() {
        let feats = array![[0.6, 0.8]];
        let f = FeatureMap::from_table(feats, 1.0).unwrap();
        let half = f.scaled(0.5).unwrap();
        assert!((half.feature(0).dot(&half.feature(0)).sqrt() - 0.5).abs() < 1e-12);
        assert!(f.scaled(0.0).is_err());
        assert!(f.scaled(1.5).is_err());
    }
}
