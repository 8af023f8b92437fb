//! On-disk store of ridge factorizations, keyed by the digest of the training
//! design and mask. Files are plain NPY so a cache hit reproduces the factor
//! bit for bit.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use lscale_core::encoder::{FactorCache, Form, RidgeFactorization};
use lscale_core::matio::{self, Dtype, Matrix2D};
use nalgebra::DMatrix;

pub struct DiskCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskCache {
    pub fn new(dir: &Path) -> Self {
        DiskCache {
            dir: dir.to_path_buf(),
            write_lock: Mutex::new(()),
        }
    }

    fn basis_path(&self, key: &str, form: Form) -> PathBuf {
        let tag = match form {
            Form::Primal => "primal",
            Form::Dual => "dual",
        };
        self.dir.join(format!("{key}.{tag}.npy"))
    }

    fn eig_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.eig.npy"))
    }
}

impl FactorCache for DiskCache {
    fn load(&self, key: &str, x: &DMatrix<f64>) -> Option<RidgeFactorization> {
        let (form, basis) = [Form::Primal, Form::Dual]
            .into_iter()
            .find_map(|f| matio::read_matrix(&self.basis_path(key, f)).ok().map(|m| (f, m)))?;
        let eig = matio::read_matrix(&self.eig_path(key)).ok()?;
        let want_rows = match form {
            Form::Primal => x.ncols(),
            Form::Dual => x.nrows(),
        };
        if basis.dtype() != Dtype::F64 || basis.rows() != want_rows || eig.rows() != 1 || eig.cols() != basis.cols() {
            return None;
        }
        let eig: Vec<f64> = eig.to_dmatrix().iter().copied().collect();
        Some(RidgeFactorization::from_parts(x, form, basis.to_dmatrix(), eig))
    }

    fn store(&self, key: &str, f: &RidgeFactorization) {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let basis = Matrix2D::from_dmatrix(f.basis(), Dtype::F64);
        let eig = DMatrix::from_row_slice(1, f.eigenvalues().len(), f.eigenvalues());
        // best effort: a failed store only costs a recomputation later
        let _ = matio::write_matrix(&self.eig_path(key), &Matrix2D::from_dmatrix(&eig, Dtype::F64));
        let _ = matio::write_matrix(&self.basis_path(key, f.form()), &basis);
    }
}
