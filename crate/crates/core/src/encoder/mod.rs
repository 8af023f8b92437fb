//! Voxel-wise encoding models: ridge regression from scan-aligned features
//! to BOLD, nested run-wise cross-validation and Pearson scoring.

use nalgebra::DMatrix;
use thiserror::Error;

mod cv;
mod ridge;

pub use cv::{
    nested_cv_score, score_single_split, CvConfig, FactorCache, FoldRecord, InnerCv, ScoreMap,
};
pub use ridge::{AlphaSweep, Form, RidgeFactorization, Standardizer};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("need at least 3 runs, got {0}")]
    TooFewRuns(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("invalid penalty {0}")]
    BadAlpha(f64),
    #[error("invalid alpha grid: {0}")]
    BadGrid(String),
    #[error("every penalty produced an undefined validation score (layer {layer}, test run {run})")]
    AllAlphasFailed { layer: usize, run: usize },
    #[error("analysis mask is empty")]
    EmptyMask,
}

/// Candidate ridge penalties, strictly increasing and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrid {
    values: Vec<f64>,
}

impl AlphaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, EncoderError> {
        if values.is_empty() {
            return Err(EncoderError::BadGrid("empty".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EncoderError::BadGrid("penalties must be finite and positive".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EncoderError::BadGrid("penalties must be strictly increasing".into()));
        }
        Ok(AlphaGrid { values })
    }

    /// `count` values evenly spaced in log10 between `min` and `max`.
    pub fn logspace(min: f64, max: f64, count: usize) -> Result<Self, EncoderError> {
        if !(min > 0.0 && max >= min) || count == 0 || (count == 1 && max != min) {
            return Err(EncoderError::BadGrid(format!("logspace({min}, {max}, {count})")));
        }
        let (lo, hi) = (min.log10(), max.log10());
        let values = (0..count)
            .map(|i| {
                if i == 0 {
                    min
                } else if i + 1 == count {
                    max
                } else {
                    10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64)
                }
            })
            .collect();
        AlphaGrid::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for AlphaGrid {
    /// 16 penalties from 1e2 to 1e7.
    fn default() -> Self {
        AlphaGrid::logspace(1e2, 1e7, 16).expect("valid default grid")
    }
}

/// Per-column Pearson correlations with a flag for undefined columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlations {
    pub r: Vec<f64>,
    pub undefined: Vec<bool>,
}

/// Column-wise Pearson r. Columns where either side has zero variance score
/// 0 and are flagged.
pub fn pearson_per_voxel(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<Correlations, EncoderError> {
    if y.shape() != yhat.shape() {
        return Err(EncoderError::Shape(format!(
            "observed {:?} vs predicted {:?}",
            y.shape(),
            yhat.shape()
        )));
    }
    if y.nrows() < 3 {
        return Err(EncoderError::Shape(format!("need at least 3 rows, got {}", y.nrows())));
    }
    let n = y.nrows() as f64;
    let mut r = Vec::with_capacity(y.ncols());
    let mut undefined = Vec::with_capacity(y.ncols());
    for (a, b) in y.column_iter().zip(yhat.column_iter()) {
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, z) in a.iter().zip(b.iter()) {
            let (dx, dz) = (x - ma, z - mb);
            sab += dx * dz;
            saa += dx * dx;
            sbb += dz * dz;
        }
        if saa > 0.0 && sbb > 0.0 && (saa * sbb).is_finite() {
            r.push((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0));
            undefined.push(false);
        } else {
            r.push(0.0);
            undefined.push(true);
        }
    }
    Ok(Correlations { r, undefined })
}

/// Stack row blocks vertically.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(*b);
        at += b.nrows();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn default_grid_endpoints() {
        let g = AlphaGrid::default();
        assert_eq!(g.len(), 16);
        assert_eq!(g.values()[0], 1e2);
        assert_eq!(g.values()[15], 1e7);
        for w in g.values().windows(2) {
            assert!((w[1] / w[0] - 10f64.powf(1.0 / 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(AlphaGrid::new(vec![1.0, 1.0]).is_err());
        assert!(AlphaGrid::new(vec![-1.0]).is_err());
        assert!(AlphaGrid::new(vec![]).is_err());
        assert_eq!(AlphaGrid::logspace(5.0, 5.0, 1).unwrap().values(), &[5.0]);
    }

    #[test]
    fn pearson_examples() {
        let y = col(&[1.0, 2.0, 3.0]);
        assert!((pearson_per_voxel(&y, &y).unwrap().r[0] - 1.0).abs() < 1e-15);
        assert!((pearson_per_voxel(&y, &col(&[3.0, 2.0, 1.0])).unwrap().r[0] + 1.0).abs() < 1e-15);
        let r = pearson_per_voxel(&y, &col(&[1.0, 2.0, 4.0])).unwrap().r[0];
        assert!((r - 0.981980506061966).abs() < 1e-12);
    }

    #[test]
    fn pearson_flags_constant_prediction() {
        let c = pearson_per_voxel(&col(&[1.0, 2.0, 3.0]), &col(&[2.0; 3])).unwrap();
        assert_eq!(c.r, vec![0.0]);
        assert_eq!(c.undefined, vec![true]);
        assert!(pearson_per_voxel(&col(&[1.0, 2.0]), &col(&[1.0, 2.0])).is_err());
        assert!(pearson_per_voxel(&col(&[1.0, 2.0, 3.0]), &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn vstack_blocks() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 5.0, 6.0]);
        let s = vstack(&[&a, &b]);
        assert_eq!(s, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    }
}
