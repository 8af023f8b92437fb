//! Temporal cleaning of BOLD runs, subject averaging, trimming and the
//! group masks (multi-subject, symmetric, reliable voxels).
//!
//! Fixed order per subject and run: high-pass, detrend, standardize. Then
//! the subject average per run, then trim and standardize again.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::matio::PreprocessSpec;
use crate::volume::{Mask, VoxelGeometry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("high-pass cutoff {cutoff} s must exceed twice the TR ({tr} s)")]
    CutoffTooLow { cutoff: f64, tr: f64 },
    #[error("need at least {needed} scans, got {got}")]
    TooFewScans { needed: usize, got: usize },
    #[error("run of {n_scans} scans is too short to trim {trim_scans} scans at each end")]
    RunTooShort { n_scans: usize, trim_scans: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("TR mismatch: {0} vs {1}")]
    TrMismatch(f64, f64),
    #[error("no runs to combine")]
    Empty,
    #[error("mask length {got} does not match {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("fraction/threshold {0} outside (0, 1]")]
    BadFraction(f64),
}

/// Residuals smaller than this fraction of the input norm are set to zero.
const SNAP_RELATIVE: f64 = 1e-10;
/// A column whose population std is at most this fraction of |mean| is
/// treated as constant.
const CONSTANT_RELATIVE: f64 = 1e-12;

/// One run of BOLD data, scans in rows and voxels in columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BoldRun {
    pub data: DMatrix<f64>,
    pub tr: f64,
    pub run_id: usize,
}

impl BoldRun {
    pub fn new(data: DMatrix<f64>, tr: f64, run_id: usize) -> Self {
        BoldRun { data, tr, run_id }
    }

    pub fn n_scans(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.data.ncols()
    }

    fn with_data(&self, data: DMatrix<f64>) -> BoldRun {
        BoldRun {
            data,
            tr: self.tr,
            run_id: self.run_id,
        }
    }
}

/// Apply `f` to every column independently. Columns are processed in
/// parallel and reassembled in order.
pub(crate) fn map_columns<F>(m: &DMatrix<f64>, f: F) -> DMatrix<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let (rows, cols) = m.shape();
    let mut out = DMatrix::zeros(rows, cols);
    let src = m.as_slice();
    out.as_mut_slice()
        .par_chunks_mut(rows.max(1))
        .enumerate()
        .for_each(|(j, dst)| f(&src[j * rows..(j + 1) * rows], dst));
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn snap(residual: &mut [f64], input_norm: f64) {
    if norm(residual) <= SNAP_RELATIVE * input_norm {
        residual.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Number of drift cosines for a run: `floor(2 * n_scans * tr / cutoff)`.
pub fn drift_basis_size(n_scans: usize, tr: f64, cutoff: f64) -> usize {
    (2.0 * n_scans as f64 * tr / cutoff).floor() as usize
}

/// Discrete-cosine drift regressors (constant first, then cosines of
/// increasing frequency), one `Vec` per regressor.
pub fn drift_basis(n_scans: usize, tr: f64, cutoff: f64) -> Vec<Vec<f64>> {
    let k_max = drift_basis_size(n_scans, tr, cutoff).min(n_scans.saturating_sub(1));
    let n = n_scans as f64;
    let mut basis = vec![vec![1.0; n_scans]];
    for k in 1..=k_max {
        basis.push(
            (0..n_scans)
                .map(|i| (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .collect(),
        );
    }
    basis
}

/// Remove slow drifts by projecting each voxel off the cosine drift basis.
pub fn highpass_dct(run: &BoldRun, cutoff: f64) -> Result<BoldRun, PreprocessError> {
    if !(cutoff > 2.0 * run.tr) {
        return Err(PreprocessError::CutoffTooLow {
            cutoff,
            tr: run.tr,
        });
    }
    let basis = drift_basis(run.n_scans(), run.tr, cutoff);
    // The DCT-II vectors are mutually orthogonal on this grid.
    let sq_norms: Vec<f64> = basis.iter().map(|b| b.iter().map(|x| x * x).sum()).collect();
    let out = map_columns(&run.data, |y, dst| {
        dst.copy_from_slice(y);
        for (b, nb) in basis.iter().zip(&sq_norms) {
            let c = b.iter().zip(y).map(|(u, v)| u * v).sum::<f64>() / nb;
            dst.iter_mut().zip(b).for_each(|(d, u)| *d -= c * u);
        }
        snap(dst, norm(y));
    });
    Ok(run.with_data(out))
}

/// Remove the least-squares line (against scan index) from every voxel.
pub fn detrend_linear(run: &BoldRun) -> Result<BoldRun, PreprocessError> {
    let n = run.n_scans();
    if n < 3 {
        return Err(PreprocessError::TooFewScans { needed: 3, got: n });
    }
    let mid = (n as f64 - 1.0) / 2.0;
    let t: Vec<f64> = (0..n).map(|i| i as f64 - mid).collect();
    let tt: f64 = t.iter().map(|x| x * x).sum();
    let out = map_columns(&run.data, |y, dst| {
        let mean = y.iter().sum::<f64>() / n as f64;
        let slope = t.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / tt;
        for ((d, v), ti) in dst.iter_mut().zip(y).zip(&t) {
            *d = v - mean - slope * ti;
        }
        snap(dst, norm(y));
    });
    Ok(run.with_data(out))
}

fn standardize_column(y: &[f64], dst: &mut [f64]) {
    let n = y.len() as f64;
    let rough = y.iter().sum::<f64>() / n;
    // second pass removes the rounding left in the first mean
    let mean = rough + y.iter().map(|v| v - rough).sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || std <= CONSTANT_RELATIVE * mean.abs() {
        dst.iter_mut().for_each(|d| *d = 0.0);
    } else {
        dst.iter_mut().zip(y).for_each(|(d, v)| *d = (v - mean) / std);
    }
}

/// Zero mean and unit population variance per voxel; constant voxels become
/// zeros.
pub fn standardize(run: &BoldRun) -> BoldRun {
    run.with_data(map_columns(&run.data, standardize_column))
}

/// Element-wise mean of several subjects' versions of the same run.
pub fn average_subjects(runs: &[&BoldRun]) -> Result<BoldRun, PreprocessError> {
    let first = runs.first().ok_or(PreprocessError::Empty)?;
    let mut acc = first.data.clone();
    for r in &runs[1..] {
        if r.data.shape() != first.data.shape() {
            return Err(PreprocessError::ShapeMismatch(first.data.shape(), r.data.shape()));
        }
        if r.tr != first.tr {
            return Err(PreprocessError::TrMismatch(first.tr, r.tr));
        }
        acc += &r.data;
    }
    acc /= runs.len() as f64;
    Ok(first.with_data(acc))
}

/// Scans dropped at each end of a run for `trim` seconds.
pub fn trim_scans(trim: f64, tr: f64) -> usize {
    // guard against 20.0 / 2.0 landing a hair under an integer
    (trim / tr + 1e-9).floor() as usize
}

/// Drop `floor(trim / tr)` scans at each end, then standardize.
pub fn trim_run(run: &BoldRun, trim: f64) -> Result<BoldRun, PreprocessError> {
    let k = trim_scans(trim, run.tr);
    let n = run.n_scans();
    if n <= 2 * k {
        return Err(PreprocessError::RunTooShort {
            n_scans: n,
            trim_scans: k,
        });
    }
    let kept = run.data.rows(k, n - 2 * k).into_owned();
    Ok(standardize(&run.with_data(kept)))
}

/// High-pass (optional), detrend (optional) and standardize one run.
pub fn clean_run(run: &BoldRun, spec: &PreprocessSpec) -> Result<BoldRun, PreprocessError> {
    let mut out = match spec.highpass_cutoff {
        Some(c) => highpass_dct(run, c)?,
        None => run.clone(),
    };
    if spec.detrend {
        out = detrend_linear(&out)?;
    }
    if spec.standardize {
        out = standardize(&out);
    }
    Ok(out)
}

/// Full group pipeline. `subjects[s][k]` is run `k` of subject `s`; returns
/// the trimmed, standardized average subject, one entry per run.
pub fn average_subject_pipeline(
    subjects: &[Vec<BoldRun>],
    spec: Option<&PreprocessSpec>,
    trim: f64,
) -> Result<Vec<BoldRun>, PreprocessError> {
    let first = subjects.first().ok_or(PreprocessError::Empty)?;
    let cleaned: Vec<Vec<BoldRun>> = subjects
        .iter()
        .map(|runs| {
            runs.iter()
                .map(|r| match spec {
                    Some(s) => clean_run(r, s),
                    None => Ok(r.clone()),
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    (0..first.len())
        .map(|k| {
            let per_subject: Vec<&BoldRun> = cleaned
                .iter()
                .map(|runs| runs.get(k).ok_or(PreprocessError::Empty))
                .collect::<Result<_, _>>()?;
            trim_run(&average_subjects(&per_subject)?, trim)
        })
        .collect()
}

/// Keep voxels present in at least `threshold * n_subjects` subject masks.
pub fn multi_subject_mask(masks: &[Mask], threshold: f64) -> Result<Mask, PreprocessError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PreprocessError::BadFraction(threshold));
    }
    let first = masks.first().ok_or(PreprocessError::Empty)?;
    let n = first.len();
    if let Some(m) = masks.iter().find(|m| m.len() != n) {
        return Err(PreprocessError::MaskLength {
            expected: n,
            got: m.len(),
        });
    }
    let need = threshold * masks.len() as f64;
    let bits = (0..n)
        .map(|v| masks.iter().filter(|m| m.get(v)).count() as f64 >= need - 1e-9)
        .collect();
    Ok(Mask::new(bits, "multi-subject"))
}

/// Keep a voxel only if it and its mirror `(-x, y, z)` are both kept.
pub fn symmetrize_mask(mask: &Mask, geometry: &VoxelGeometry) -> Mask {
    let mirror = geometry.mirror_index();
    let bits = (0..mask.len())
        .map(|v| mask.get(v) && mirror[v].is_some_and(|m| mask.get(m)))
        .collect();
    Mask::new(bits, format!("{}-sym", mask.label()))
}

/// Number of voxels kept when taking `fraction` of `n`, rounded up.
pub fn top_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Highest-valued `top_count(fraction, |candidates|)` candidates. Ties go to
/// the lower voxel id; NaN ranks last.
pub fn top_fraction(
    values: &[f64],
    candidates: &Mask,
    fraction: f64,
    label: &str,
) -> Result<Mask, PreprocessError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(PreprocessError::BadFraction(fraction));
    }
    if values.len() != candidates.len() {
        return Err(PreprocessError::MaskLength {
            expected: values.len(),
            got: candidates.len(),
        });
    }
    let mut ids: Vec<usize> = candidates.ids().collect();
    let k = top_count(fraction, ids.len());
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    ids.sort_by(|a, b| key(values[*b]).total_cmp(&key(values[*a])).then(a.cmp(b)));
    ids.truncate(k);
    Ok(Mask::from_ids(values.len(), ids, label).expect("ids come from the mask"))
}

/// The `fraction` most reliable voxels by inter-subject correlation.
pub fn select_reliable(isc: &[f64], fraction: f64) -> Result<Mask, PreprocessError> {
    top_fraction(isc, &Mask::full(isc.len(), "all"), fraction, "reliable")
}
