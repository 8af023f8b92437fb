//! Spherical regions of interest and atlas parcels.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{log_params, mean_score, scaling_fit, AnalysisError, FitResult};
use crate::encoder::ScoreMap;
use crate::matio::{ModelMeta, ParcelLabels};
use crate::stats::{two_sample_ttest, TTest, TTestKind};
use crate::volume::{Hemisphere, Mask, VoxelGeometry};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoiSpec {
    pub label: String,
    /// MNI coordinates in mm.
    pub center: [f64; 3],
    pub radius: f64,
    pub hemisphere: Hemisphere,
}

impl RoiSpec {
    pub fn new(label: &str, center: [f64; 3], radius: f64) -> Option<Self> {
        if !(radius > 0.0) {
            return None;
        }
        let hemisphere = if center[0] < 0.0 { Hemisphere::Left } else { Hemisphere::Right };
        Some(RoiSpec {
            label: label.to_string(),
            center,
            radius,
            hemisphere,
        })
    }
}

/// The seven left-hemisphere language regions, 10 mm spheres.
pub fn default_rois() -> Vec<RoiSpec> {
    [
        ("TP", [-48.0, 15.0, -27.0]),
        ("aSTS", [-54.0, -12.0, -12.0]),
        ("pSTS", [-51.0, -39.0, 3.0]),
        ("AG_TPJ", [-52.0, -56.0, 22.0]),
        ("BA44", [-50.0, 12.0, 16.0]),
        ("BA45", [-52.0, 28.0, 10.0]),
        ("BA47", [-44.0, 34.0, -8.0]),
    ]
    .into_iter()
    .map(|(l, c)| RoiSpec::new(l, c, 10.0).expect("positive radius"))
    .collect()
}

/// Same sphere on the other side of the midline.
pub fn mirror_roi(spec: &RoiSpec) -> RoiSpec {
    RoiSpec {
        label: spec.label.clone(),
        center: [-spec.center[0], spec.center[1], spec.center[2]],
        radius: spec.radius,
        hemisphere: spec.hemisphere.opposite(),
    }
}

/// Voxels within `radius` (inclusive) of the center.
pub fn roi_mask(spec: &RoiSpec, geometry: &VoxelGeometry) -> Mask {
    let r2 = spec.radius * spec.radius;
    let bits = geometry
        .coords()
        .iter()
        .map(|c| {
            let d2: f64 = c.iter().zip(&spec.center).map(|(a, b)| (a - b) * (a - b)).sum();
            // squared distances on a mm grid are exact in f64; allow round-off
            d2 <= r2 * (1.0 + 1e-12)
        })
        .collect();
    Mask::new(bits, format!("{}-{}", spec.label, spec.hemisphere.as_str()))
}

/// Two-sample t-test between slope sets of a region and its mirror.
pub fn roi_slope_ttest(left: &[f64], right: &[f64], kind: TTestKind) -> Result<TTest, AnalysisError> {
    Ok(two_sample_ttest(left, right, kind)?)
}

/// Per model, mean score in the region minus the mirrored region, fitted
/// against log10 size.
pub fn roi_interaction_corr(
    maps: &[ScoreMap],
    metas: &[ModelMeta],
    geometry: &VoxelGeometry,
    roi: &RoiSpec,
    n_boot: usize,
    seed: u64,
) -> Result<FitResult, AnalysisError> {
    let x = log_params(metas, maps, 3)?;
    let here = roi_mask(roi, geometry);
    let there = roi_mask(&mirror_roi(roi), geometry);
    let diffs = maps
        .iter()
        .map(|m| Ok(mean_score(m, &here)? - mean_score(m, &there)?))
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    scaling_fit(&x, &diffs, n_boot, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParcelRow {
    pub parcel_id: usize,
    pub parcel_name: String,
    pub hemisphere: Hemisphere,
    pub n_voxels: usize,
    pub mean: f64,
}

/// Homologous left/right parcels sharing a name.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParcelPair {
    pub parcel_name: String,
    pub mean_left: f64,
    pub mean_right: f64,
    pub diff: f64,
    /// Absent when either side has fewer than 2 voxels or no variance.
    pub ttest: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParcelSummary {
    pub rows: Vec<ParcelRow>,
    pub pairs: Vec<ParcelPair>,
}

/// Mean score per parcel over the scored voxels of `mask`, plus left/right
/// comparisons of homologous parcels.
pub fn parcel_summary(map: &ScoreMap, labels: &ParcelLabels, mask: &Mask) -> Result<ParcelSummary, AnalysisError> {
    if labels.labels.len() != map.len() || mask.len() != map.len() {
        return Err(AnalysisError::Shape(format!(
            "labels cover {} voxels, mask {}, map {}",
            labels.labels.len(),
            mask.len(),
            map.len()
        )));
    }
    let mut groups: BTreeMap<(usize, Hemisphere, String), Vec<f64>> = BTreeMap::new();
    for v in mask.ids().filter(|v| !map.excluded[*v]) {
        let l = labels.labels[v].as_ref().ok_or(AnalysisError::UnlabeledVoxel(v))?;
        groups
            .entry((l.parcel_id, l.hemisphere, l.parcel_name.clone()))
            .or_default()
            .push(map.values[v]);
    }
    let rows: Vec<ParcelRow> = groups
        .iter()
        .map(|((id, hemi, name), vals)| ParcelRow {
            parcel_id: *id,
            parcel_name: name.clone(),
            hemisphere: *hemi,
            n_voxels: vals.len(),
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
        })
        .collect();

    let mut sides: BTreeMap<&str, [Vec<f64>; 2]> = BTreeMap::new();
    for ((_, hemi, name), vals) in &groups {
        let slot = &mut sides.entry(name.as_str()).or_default()[(*hemi == Hemisphere::Right) as usize];
        slot.extend_from_slice(vals);
    }
    let pairs = sides
        .into_iter()
        .filter(|(_, [l, r])| !l.is_empty() && !r.is_empty())
        .map(|(name, [l, r])| {
            let mean_left = l.iter().sum::<f64>() / l.len() as f64;
            let mean_right = r.iter().sum::<f64>() / r.len() as f64;
            ParcelPair {
                parcel_name: name.to_string(),
                mean_left,
                mean_right,
                diff: mean_left - mean_right,
                ttest: two_sample_ttest(&l, &r, TTestKind::Pooled).ok(),
            }
        })
        .collect();
    Ok(ParcelSummary { rows, pairs })
}
