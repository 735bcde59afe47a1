use crate::error::{Error, Result};
use crate::io::FeatureMatrix;
use crate::linalg::Matrix;

/// Per-dimension upper thresholds taken from training features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipThresholds {
    pub percentile: f64,
    pub thresholds: Vec<f64>,
}

pub(crate) fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("clip percentile must lie in (0, 100], got {p}")))
    }
}

impl ClipThresholds {
    /// Threshold of column `j` is its `ceil(p/100 * n)`-th smallest value.
    pub fn fit(train: &Matrix, percentile: f64) -> Result<Self> {
        check_percentile(percentile)?;
        let n = train.rows();
        if n == 0 {
            return Err(Error::Data("clip thresholds need at least one row".into()));
        }
        let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
        let thresholds = (0..train.cols())
            .map(|j| {
                let mut col = train.column(j);
                col.sort_by(f64::total_cmp);
                col[rank - 1]
            })
            .collect();
        Ok(Self {
            percentile,
            thresholds,
        })
    }

    /// Caps every entry at its column threshold.
    pub fn apply(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.thresholds.len() {
            return Err(Error::Shape(format!(
                "{} clip thresholds for width {}",
                self.thresholds.len(),
                features.cols()
            )));
        }
        let mut out = features.clone();
        for i in 0..out.rows() {
            for (v, t) in out.row_mut(i).iter_mut().zip(&self.thresholds) {
                if *v > *t {
                    *v = *t;
                }
            }
        }
        Ok(out)
    }

    pub fn apply_features(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.apply(features)?, features.role())
    }
}
