//! Multi-target ridge through one spectral factorization of the training
//! design, reused for every penalty and every target column.
//!
//! With `X = U S V'`, the ridge solution for penalty `a` is
//! `B(a) = V diag(s / (s^2 + a)) U' Y`. The factor is computed from the
//! smaller Gram matrix: `X'X = V S^2 V'` when `n >= d` (primal form) or
//! `XX' = U S^2 U'` when `n < d` (dual form). Either way a sweep over the
//! penalty grid costs one eigendecomposition plus one small product per
//! penalty.
//!
//! Products go through explicit transposes: nalgebra's `tr_mul` does not use
//! the blocked GEMM kernel and is several times slower.

use nalgebra::{DMatrix, SymmetricEigen};

use super::EncoderError;

/// Column centering and scaling learned on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population standard deviation; constant columns get scale 1 (they
    /// become zero after centering).
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            scale.push(if s > 1e-12 * m.abs().max(f64::MIN_POSITIVE) { s } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    /// Centering only (unit scales).
    pub fn fit_center(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        Standardizer {
            mean: x.column_iter().map(|c| c.iter().sum::<f64>() / n).collect(),
            scale: vec![1.0; x.ncols()],
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    /// Eigenvectors are the right singular vectors (d x r).
    Primal,
    /// Eigenvectors are the left singular vectors (n x r).
    Dual,
}

/// Spectral factor of one training design.
#[derive(Debug, Clone)]
pub struct RidgeFactorization {
    form: Form,
    x: DMatrix<f64>,
    basis: DMatrix<f64>,
    /// Squared singular values, descending, matching `basis` columns.
    eig: Vec<f64>,
}

impl RidgeFactorization {
    pub fn new(x: &DMatrix<f64>) -> Result<Self, EncoderError> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite("training design"));
        }
        let (n, d) = x.shape();
        let (form, gram) = if n >= d {
            (Form::Primal, x.transpose() * x)
        } else {
            (Form::Dual, x * x.transpose())
        };
        let eigen = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..eigen.eigenvalues.len()).collect();
        order.sort_by(|a, b| eigen.eigenvalues[*b].total_cmp(&eigen.eigenvalues[*a]).then(a.cmp(b)));
        let top = order.first().map_or(0.0, |i| eigen.eigenvalues[*i].max(0.0));
        // Components below round-off of the Gram matrix carry no signal.
        let tol = top * (n.max(d) as f64) * f64::EPSILON;
        let kept: Vec<usize> = order
            .into_iter()
            .filter(|i| eigen.eigenvalues[*i] > tol)
            .collect();
        let basis = DMatrix::from_fn(eigen.eigenvectors.nrows(), kept.len(), |r, c| {
            eigen.eigenvectors[(r, kept[c])]
        });
        let eig = kept.iter().map(|i| eigen.eigenvalues[*i]).collect();
        Ok(RidgeFactorization {
            form,
            x: x.clone(),
            basis,
            eig,
        })
    }

    /// Rebuild from a stored basis (e.g. an on-disk cache).
    pub fn from_parts(x: &DMatrix<f64>, form: Form, basis: DMatrix<f64>, eig: Vec<f64>) -> Self {
        RidgeFactorization {
            form,
            x: x.clone(),
            basis,
            eig,
        }
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.eig.iter().map(|l| l.sqrt()).collect()
    }

    pub fn rank(&self) -> usize {
        self.eig.len()
    }

    fn filter(&self, alpha: f64) -> Vec<f64> {
        self.eig.iter().map(|l| 1.0 / (l + alpha)).collect()
    }

    /// Coefficients `d x targets` for penalty `alpha` (`alpha = 0` gives the
    /// minimum-norm least-squares solution).
    pub fn coefficients(&self, y: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>, EncoderError> {
        if y.nrows() != self.x.nrows() {
            return Err(EncoderError::Shape(format!(
                "targets have {} rows, design has {}",
                y.nrows(),
                self.x.nrows()
            )));
        }
        if !(alpha >= 0.0) {
            return Err(EncoderError::BadAlpha(alpha));
        }
        let w = self.filter(alpha);
        Ok(match self.form {
            Form::Primal => {
                let mut p = self.basis.transpose() * (self.x.transpose() * y);
                scale_rows(&mut p, &w);
                &self.basis * p
            }
            Form::Dual => {
                let mut p = self.basis.transpose() * y;
                scale_rows(&mut p, &w);
                self.x.transpose() * (&self.basis * p)
            }
        })
    }

    /// Precompute everything needed to predict `x_eval` at any penalty.
    pub fn sweep(&self, y: &DMatrix<f64>, x_eval: &DMatrix<f64>) -> Result<AlphaSweep, EncoderError> {
        if y.nrows() != self.x.nrows() || x_eval.ncols() != self.x.ncols() {
            return Err(EncoderError::Shape(format!(
                "sweep: targets {:?}, eval {:?}, design {:?}",
                y.shape(),
                x_eval.shape(),
                self.x.shape()
            )));
        }
        let (eval_proj, target_proj) = match self.form {
            Form::Primal => (
                x_eval * &self.basis,
                self.basis.transpose() * (self.x.transpose() * y),
            ),
            Form::Dual => (
                x_eval * (self.x.transpose() * &self.basis),
                self.basis.transpose() * y,
            ),
        };
        Ok(AlphaSweep {
            eval_proj,
            target_proj,
            eig: self.eig.clone(),
        })
    }
}

fn scale_rows(m: &mut DMatrix<f64>, w: &[f64]) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row *= w[i];
    }
}

/// Predictions for one evaluation design across penalties.
#[derive(Debug, Clone)]
pub struct AlphaSweep {
    eval_proj: DMatrix<f64>,
    target_proj: DMatrix<f64>,
    eig: Vec<f64>,
}

impl AlphaSweep {
    pub fn predict(&self, alpha: f64) -> DMatrix<f64> {
        let mut p = self.target_proj.clone();
        let w: Vec<f64> = self.eig.iter().map(|l| 1.0 / (l + alpha)).collect();
        scale_rows(&mut p, &w);
        &self.eval_proj * p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_example() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let b = RidgeFactorization::new(&x).unwrap().coefficients(&y, 1.0).unwrap();
        assert!((b[0] - 0.875).abs() < 1e-12 && (b[1] - 1.375).abs() < 1e-12, "{b}");
    }

    #[test]
    fn dual_form_matches_primal() {
        let x = DMatrix::from_fn(4, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let y = DMatrix::from_fn(4, 2, |i, j| ((i + 3 * j) as f64).cos());
        let f = RidgeFactorization::new(&x).unwrap();
        assert_eq!(f.form(), Form::Dual);
        let b = f.coefficients(&y, 0.5).unwrap();
        let direct = (x.tr_mul(&x) + DMatrix::identity(7, 7) * 0.5)
            .lu()
            .solve(&x.tr_mul(&y))
            .unwrap();
        assert!((b - direct).abs().max() < 1e-10);
    }

    #[test]
    fn ols_limit_and_shrinkage() {
        let x = DMatrix::from_fn(20, 3, |i, j| ((i * 7919 + j * 104_729) % 1000) as f64 / 1000.0);
        let beta = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let y = &x * &beta;
        let f = RidgeFactorization::new(&x).unwrap();
        let err = (f.coefficients(&y, 0.0).unwrap() - &beta).abs().max();
        assert!(err < 1e-10, "{err}");
        assert!(f.coefficients(&y, 1e12).unwrap().norm() < 1e-6);
    }

    #[test]
    fn sweep_equals_coefficients() {
        let x = DMatrix::from_fn(30, 5, |i, j| ((i * 5 + j) as f64 * 0.71).sin());
        let y = DMatrix::from_fn(30, 3, |i, j| ((i * 2 + j) as f64 * 0.3).cos());
        let xe = DMatrix::from_fn(6, 5, |i, j| ((i + j) as f64).sin());
        let f = RidgeFactorization::new(&x).unwrap();
        let s = f.sweep(&y, &xe).unwrap();
        for a in [0.1, 10.0, 1000.0] {
            let direct = &xe * f.coefficients(&y, a).unwrap();
            assert!((s.predict(a) - direct).abs().max() < 1e-12);
        }
    }

    #[test]
    fn rejects_nonfinite() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(RidgeFactorization::new(&x), Err(EncoderError::NonFinite(_))));
    }
}
