//! Readers and writers for every on-disk artifact.
//!
//! Matrices use the NPY 1.0 layout (see [`npy`]); events, geometry, masks and
//! parcel labels are tab-separated tables; manifests are JSON.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod manifest;
pub mod npy;
pub mod tables;

pub use manifest::{
    read_manifest, read_model_manifest, read_study_manifest, Manifest, ModelEntry, ModelManifest,
    ModelMeta, PreprocessSpec, StudyManifest,
};
pub use npy::{decode_matrix, encode_matrix, read_matrix, read_matrix_with, write_matrix, Dtype, Matrix2D, MatrixData};
pub use tables::{
    read_events, read_geometry, read_mask, read_parcel_labels, write_events, write_geometry,
    write_mask, EventList, ParcelLabel, ParcelLabels, WordEvent,
};

#[derive(Debug, Error)]
pub enum MatioError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not an NPY file (bad magic)")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?} (only '<f4' and '<f8')")]
    UnsupportedDtype(String),
    #[error("big-endian dtype {0:?} is not accepted")]
    BigEndian(String),
    #[error("Fortran-ordered arrays are not accepted")]
    FortranOrder,
    #[error("expected a 2-D shape, got {0:?}")]
    UnsupportedShape(Vec<usize>),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing data: expected {expected} bytes, found {found}")]
    TrailingData { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("buffer of {len} values cannot hold a {rows}x{cols} matrix")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("{table} table is missing column {column:?}")]
    MissingColumn { table: &'static str, column: String },
    #[error("{table} table, line {line}: {msg}")]
    Table {
        table: &'static str,
        line: usize,
        msg: String,
    },
    #[error("events, line {line}: {msg}")]
    Events { line: usize, msg: String },
    #[error("duplicate voxel id {0}")]
    DuplicateVoxel(usize),
    #[error("voxel id {id} outside 0..{n}")]
    VoxelIdRange { id: usize, n: usize },
    #[error("manifest field `{path}`: {msg}")]
    Schema { path: String, msg: String },
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> MatioError {
    MatioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write through a sibling temp file and rename, so readers never observe a
/// half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), MatioError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
