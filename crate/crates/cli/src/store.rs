//! Score maps on disk: `<stem>.npy` (voxels x 1), `<stem>.layers.npy`
//! (voxels x layers) and a `<stem>.json` sidecar with everything else.

use std::path::{Path, PathBuf};

use lscale_core::encoder::{FoldRecord, ScoreMap};
use lscale_core::matio::{self, Dtype, Matrix2D, ModelMeta};
use lscale_core::Mask;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::out::OutputDir;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldJson {
    pub layer: usize,
    pub test_run: usize,
    pub validation_runs: Vec<usize>,
    pub alpha: f64,
    pub validation_curve: Vec<f64>,
}

impl From<&FoldRecord> for FoldJson {
    fn from(f: &FoldRecord) -> Self {
        FoldJson {
            layer: f.layer,
            test_run: f.test_run,
            validation_runs: f.validation_runs.clone(),
            alpha: f.alpha,
            validation_curve: f.validation_curve.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitJson {
    pub seed: u64,
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub model: String,
    pub kind: String,
    pub n_voxels: usize,
    pub n_layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ModelMeta>,
    pub mask_label: String,
    pub mask_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_cv: Option<String>,
    /// Mean over scored voxels; absent when nothing was scored.
    pub mean: Option<f64>,
    pub layer_means: Vec<Option<f64>>,
    pub best_layer: Vec<usize>,
    pub excluded: Vec<usize>,
    pub undefined: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub splits: Vec<SplitJson>,
}

fn scored_mean(values: &[f64], excluded: &[bool]) -> Option<f64> {
    let kept: Vec<f64> = values.iter().zip(excluded).filter(|(_, e)| !**e).map(|(v, _)| *v).collect();
    (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
}

fn true_ids(flags: &[bool]) -> Vec<usize> {
    flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect()
}

impl Sidecar {
    pub fn describe(map: &ScoreMap, meta: Option<&ModelMeta>, mask: &Mask) -> Self {
        Sidecar {
            model: map.model.clone(),
            kind: map.kind.clone(),
            n_voxels: map.len(),
            n_layers: map.n_layers(),
            meta: meta.cloned(),
            mask_label: mask.label().to_string(),
            mask_count: mask.count(),
            inner_cv: None,
            mean: scored_mean(&map.values, &map.excluded),
            layer_means: map.per_layer.iter().map(|l| scored_mean(l, &map.excluded)).collect(),
            best_layer: map.best_layer.clone(),
            excluded: true_ids(&map.excluded),
            undefined: true_ids(&map.undefined),
            folds: map.folds.iter().map(FoldJson::from).collect(),
            splits: Vec::new(),
        }
    }
}

pub fn write_map(out: &OutputDir, stem: &str, map: &ScoreMap, sidecar: &Sidecar, dtype: Dtype) -> Result<()> {
    let n = map.len();
    let values = DMatrix::from_column_slice(n, 1, &map.values);
    out.matrix(&format!("{stem}.npy"), &Matrix2D::from_dmatrix(&values, dtype))?;
    let layers = DMatrix::from_fn(n, map.n_layers(), |v, l| map.per_layer[l][v]);
    out.matrix(&format!("{stem}.layers.npy"), &Matrix2D::from_dmatrix(&layers, dtype))?;
    out.json(&format!("{stem}.json"), sidecar)
}

fn flags(n: usize, ids: &[usize], what: &str, path: &Path) -> Result<Vec<bool>> {
    let mut out = vec![false; n];
    for &i in ids {
        *out.get_mut(i).ok_or_else(|| {
            CliError::validation(format!("{}: {what} voxel {i} outside 0..{n}", path.display()))
        })? = true;
    }
    Ok(out)
}

/// Load a map written by [`write_map`]; `json` is the sidecar path.
pub fn read_map(json: &Path) -> Result<(ScoreMap, Sidecar)> {
    let text = std::fs::read_to_string(json).map_err(|e| CliError::validation(format!("{}: {e}", json.display())))?;
    let side: Sidecar = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: malformed score sidecar: {e}", json.display())))?;
    let stem = json.with_extension("");
    let values = matio::read_matrix(&with_suffix(&stem, ".npy"))?;
    let layers = matio::read_matrix(&with_suffix(&stem, ".layers.npy"))?;
    let n = side.n_voxels;
    if values.shape() != (n, 1) || layers.shape() != (n, side.n_layers) || side.best_layer.len() != n {
        return Err(CliError::validation(format!(
            "{}: matrices do not match the sidecar ({n} voxels, {} layers)",
            json.display(),
            side.n_layers
        )));
    }
    let values = values.to_dmatrix();
    let layers = layers.to_dmatrix();
    let map = ScoreMap {
        model: side.model.clone(),
        kind: side.kind.clone(),
        values: values.iter().copied().collect(),
        undefined: flags(n, &side.undefined, "undefined", json)?,
        excluded: flags(n, &side.excluded, "excluded", json)?,
        best_layer: side.best_layer.clone(),
        per_layer: (0..side.n_layers).map(|l| layers.column(l).iter().copied().collect()).collect(),
        per_run: Vec::new(),
        folds: side
            .folds
            .iter()
            .map(|f| FoldRecord {
                layer: f.layer,
                test_run: f.test_run,
                validation_runs: f.validation_runs.clone(),
                alpha: f.alpha,
                validation_curve: f.validation_curve.clone(),
            })
            .collect(),
    };
    Ok((map, side))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Sidecars of encoding maps under `dir/scores`, sorted by file name.
pub fn list_score_maps(dir: &Path) -> Result<Vec<PathBuf>> {
    let scores = dir.join("scores");
    let Ok(entries) = std::fs::read_dir(&scores) else {
        return Ok(Vec::new());
    };
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}
