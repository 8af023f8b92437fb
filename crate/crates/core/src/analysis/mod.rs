//! Statistics over score maps: scaling laws against model size, voxel-wise
//! slopes, hemispheric asymmetry, ISC normalization, covariates and layer
//! profiles. Region- and parcel-level summaries live in [`roi`].

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::encoder::ScoreMap;
use crate::matio::ModelMeta;
use crate::preprocess::{top_fraction, PreprocessError};
use crate::stats::{bootstrap_slope_ci, ols_line, StatsError};
use crate::volume::{Hemisphere, Mask, VoxelGeometry};

pub mod roi;

pub use roi::{
    default_rois, mirror_roi, parcel_summary, roi_interaction_corr, roi_mask, roi_slope_ttest,
    ParcelPair, ParcelRow, ParcelSummary, RoiSpec,
};

pub const DEFAULT_BOOTSTRAP: usize = 10_000;
/// ISC values below this are not used as divisors.
pub const DEFAULT_ISC_FLOOR: f64 = 0.05;
/// Display threshold for voxel-wise slope maps.
pub const SLOPE_P_THRESHOLD: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("mask {0:?} selects no scored voxels")]
    EmptyMask(String),
    #[error("no scored voxels in the {} hemisphere", .0.as_str())]
    EmptyHemisphere(Hemisphere),
    #[error("need at least {needed} models, got {got}")]
    TooFewModels { needed: usize, got: usize },
    #[error("{0}")]
    Shape(String),
    #[error("model {model:?} has no covariate {name:?}")]
    MissingCovariate { model: String, name: String },
    #[error("voxel {0} is in the mask but has no parcel label")]
    UnlabeledVoxel(usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// Line fit of a score against a predictor, with a bootstrap interval of the
/// slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    pub p_value: f64,
    pub ci95: (f64, f64),
    pub n_points: usize,
}

/// OLS fit of `y` on `x` with a two-sided p-value and a 95% percentile
/// bootstrap interval of the slope.
pub fn scaling_fit(x: &[f64], y: &[f64], n_boot: usize, seed: u64) -> Result<FitResult, AnalysisError> {
    if x.len() < 3 {
        return Err(StatsError::TooFewPoints {
            needed: 3,
            got: x.len(),
        }
        .into());
    }
    let fit = ols_line(x, y)?;
    let ci95 = bootstrap_slope_ci(x, y, n_boot, 0.95, seed)?;
    Ok(FitResult {
        slope: fit.slope,
        intercept: fit.intercept,
        r: fit.r,
        // p underflows to 0 for perfect fits; keep it a valid probability
        p_value: fit.p_value().clamp(f64::MIN_POSITIVE, 1.0),
        ci95,
        n_points: fit.n,
    })
}

fn check_len(map: &ScoreMap, n: usize) -> Result<(), AnalysisError> {
    if map.len() != n {
        return Err(AnalysisError::Shape(format!(
            "map {:?} has {} voxels, expected {n}",
            map.model,
            map.len()
        )));
    }
    Ok(())
}

/// Mean score over voxels in `mask` that the map has not excluded.
pub fn mean_score(map: &ScoreMap, mask: &Mask) -> Result<f64, AnalysisError> {
    check_len(map, mask.len())?;
    mean_over(&map.values, map, mask)
}

fn mean_over(values: &[f64], map: &ScoreMap, mask: &Mask) -> Result<f64, AnalysisError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in mask.ids().filter(|v| !map.excluded[*v]) {
        sum += values[v];
        n += 1;
    }
    if n == 0 {
        return Err(AnalysisError::EmptyMask(mask.label().to_string()));
    }
    Ok(sum / n as f64)
}

fn log_params(metas: &[ModelMeta], maps: &[ScoreMap], needed: usize) -> Result<Vec<f64>, AnalysisError> {
    if metas.len() != maps.len() {
        return Err(AnalysisError::Shape(format!(
            "{} models but {} score maps",
            metas.len(),
            maps.len()
        )));
    }
    if metas.len() < needed {
        return Err(AnalysisError::TooFewModels {
            needed,
            got: metas.len(),
        });
    }
    Ok(metas.iter().map(ModelMeta::log10_params).collect())
}

/// Per-voxel OLS slope of score against log10 parameter count.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeMap {
    pub slope: Vec<f64>,
    pub p: Vec<f64>,
}

impl SlopeMap {
    /// Voxels whose slope p-value is below `p_max`.
    pub fn threshold(&self, p_max: f64) -> Mask {
        Mask::new(self.p.iter().map(|p| *p < p_max).collect(), format!("p<{p_max:e}"))
    }
}

pub fn voxelwise_slopes(maps: &[ScoreMap], metas: &[ModelMeta]) -> Result<SlopeMap, AnalysisError> {
    let x = log_params(metas, maps, 3)?;
    let n = maps[0].len();
    for m in maps {
        check_len(m, n)?;
    }
    let fits = (0..n)
        .into_par_iter()
        .map(|v| {
            let y: Vec<f64> = maps.iter().map(|m| m.values[v]).collect();
            ols_line(&x, &y).map(|f| (f.slope, f.p_value()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (slope, p) = fits.into_iter().unzip();
    Ok(SlopeMap { slope, p })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymmetryPoint {
    pub model: String,
    pub log10_params: f64,
    pub mean_left: f64,
    pub mean_right: f64,
    /// `mean_left - mean_right`.
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymmetrySeries {
    pub points: Vec<AsymmetryPoint>,
    /// Fit of `diff` against log10 parameters.
    pub fit: FitResult,
}

/// Left (x < 0) and right (x > 0) halves of `mask`; midline voxels dropped.
pub fn hemisphere_masks(mask: &Mask, geometry: &VoxelGeometry) -> (Mask, Mask) {
    (
        mask.restrict_to(geometry, Hemisphere::Left),
        mask.restrict_to(geometry, Hemisphere::Right),
    )
}

/// Left minus right mean score per model, fitted against log10 size.
pub fn lr_series(
    maps: &[ScoreMap],
    metas: &[ModelMeta],
    geometry: &VoxelGeometry,
    mask: &Mask,
    n_boot: usize,
    seed: u64,
) -> Result<AsymmetrySeries, AnalysisError> {
    let x = log_params(metas, maps, 3)?;
    let (left, right) = hemisphere_masks(mask, geometry);
    let mut points = Vec::with_capacity(maps.len());
    for (m, meta) in maps.iter().zip(metas) {
        let mean_left = mean_score(m, &left).map_err(|_| AnalysisError::EmptyHemisphere(Hemisphere::Left))?;
        let mean_right = mean_score(m, &right).map_err(|_| AnalysisError::EmptyHemisphere(Hemisphere::Right))?;
        points.push(AsymmetryPoint {
            model: meta.name.clone(),
            log10_params: meta.log10_params(),
            mean_left,
            mean_right,
            diff: mean_left - mean_right,
        });
    }
    let diffs: Vec<f64> = points.iter().map(|p| p.diff).collect();
    let fit = scaling_fit(&x, &diffs, n_boot, seed)?;
    Ok(AsymmetrySeries { points, fit })
}

/// Top `fraction` of one hemisphere's voxels by score.
pub fn top_fraction_mask(
    map: &ScoreMap,
    geometry: &VoxelGeometry,
    hemisphere: Hemisphere,
    fraction: f64,
) -> Result<Mask, AnalysisError> {
    check_len(map, geometry.len())?;
    let included = Mask::new(map.excluded.iter().map(|e| !e).collect(), "scored");
    let hemi = included.restrict_to(geometry, hemisphere);
    if hemi.count() == 0 {
        return Err(AnalysisError::EmptyHemisphere(hemisphere));
    }
    let label = format!("top{}-{}", fraction, hemisphere.as_str());
    Ok(top_fraction(&map.values, &hemi, fraction, &label)?)
}

/// Divide scores by ISC where the ISC reaches `floor`; other voxels are
/// excluded.
pub fn normalize_by_isc(map: &ScoreMap, isc: &ScoreMap, floor: f64) -> Result<ScoreMap, AnalysisError> {
    check_len(isc, map.len())?;
    let mut out = map.clone();
    out.kind = "normalized".to_string();
    let keep: Vec<bool> = (0..map.len())
        .map(|v| !map.excluded[v] && !isc.excluded[v] && isc.values[v] >= floor)
        .collect();
    let scale = |vals: &[f64]| -> Vec<f64> {
        vals.iter()
            .zip(&keep)
            .zip(&isc.values)
            .map(|((r, k), i)| if *k { r / i } else { 0.0 })
            .collect()
    };
    out.values = scale(&map.values);
    out.per_layer = map.per_layer.iter().map(|l| scale(l)).collect();
    out.per_run = map
        .per_run
        .iter()
        .map(|runs| runs.iter().map(|r| scale(r)).collect())
        .collect();
    out.excluded = keep.iter().map(|k| !k).collect();
    Ok(out)
}

/// Mean score over `mask` fitted against a named model covariate.
pub fn covariate_fit(
    metas: &[ModelMeta],
    maps: &[ScoreMap],
    name: &str,
    mask: &Mask,
    n_boot: usize,
    seed: u64,
) -> Result<FitResult, AnalysisError> {
    log_params(metas, maps, 3)?;
    let x = metas
        .iter()
        .map(|m| {
            m.covariates
                .get(name)
                .copied()
                .ok_or_else(|| AnalysisError::MissingCovariate {
                    model: m.name.clone(),
                    name: name.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let y = maps
        .iter()
        .map(|m| mean_score(m, mask))
        .collect::<Result<Vec<_>, _>>()?;
    scaling_fit(&x, &y, n_boot, seed)
}

/// Mean score of every layer over a mask, at relative depth
/// `layer / n_layers` (embedding layer at 0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerPoint {
    pub layer: usize,
    pub depth: f64,
    pub mean: f64,
}

pub fn layer_profile(map: &ScoreMap, mask: &Mask) -> Result<Vec<LayerPoint>, AnalysisError> {
    check_len(map, mask.len())?;
    let deepest = map.n_layers().saturating_sub(1).max(1) as f64;
    map.per_layer
        .iter()
        .enumerate()
        .map(|(l, vals)| {
            Ok(LayerPoint {
                layer: l,
                depth: l as f64 / deepest,
                mean: mean_over(vals, map, mask)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    pub(crate) fn meta(name: &str, params: u64) -> ModelMeta {
        ModelMeta {
            name: name.into(),
            family: "f".into(),
            n_parameters: params,
            n_layers: 2,
            n_neurons: 4,
            covariates: BTreeMap::new(),
            checkpoint: None,
        }
    }

    fn pair_geometry() -> VoxelGeometry {
        VoxelGeometry::new(vec![[-4.0, 0.0, 0.0], [4.0, 0.0, 0.0], [-8.0, 0.0, 0.0], [8.0, 0.0, 0.0]])
    }

    #[test]
    fn collinear_points() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = scaling_fit(&x, &y, 500, 1).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.r - 1.0).abs() < 1e-12);
        assert!((f.ci95.1 - f.ci95.0).abs() < 1e-12);
        assert!(f.p_value > 0.0 && f.p_value <= 1.0);
    }

    #[test]
    fn mean_score_cases() {
        let m = ScoreMap::from_values("m", "encoding", vec![0.3; 4]);
        assert!((mean_score(&m, &Mask::full(4, "a")).unwrap() - 0.3).abs() < 1e-15);
        let m = ScoreMap::from_values("m", "encoding", vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(mean_score(&m, &Mask::from_ids(4, [2], "one").unwrap()).unwrap(), 0.3);
        assert!(matches!(mean_score(&m, &Mask::empty(4, "e")), Err(AnalysisError::EmptyMask(_))));
    }

    #[test]
    fn lr_series_constant_offset() {
        let g = pair_geometry();
        let metas: Vec<ModelMeta> = [1e6, 1e7, 1e8].iter().map(|p| meta("m", *p as u64)).collect();
        let maps: Vec<ScoreMap> = (0..3)
            .map(|i| {
                let b = 0.1 * i as f64;
                ScoreMap::from_values("m", "encoding", vec![b + 0.05, b, b + 0.05, b])
            })
            .collect();
        let s = lr_series(&maps, &metas, &g, &Mask::full(4, "a"), 200, 0).unwrap();
        for p in &s.points {
            assert!((p.diff - 0.05).abs() < 1e-12);
            assert_eq!(p.diff, p.mean_left - p.mean_right);
        }
        assert!(s.fit.slope.abs() < 1e-12);
    }

    #[test]
    fn voxelwise_slope_cases() {
        let metas: Vec<ModelMeta> = [1e6, 1e7, 1e8, 1e9].iter().map(|p| meta("m", *p as u64)).collect();
        let maps: Vec<ScoreMap> = metas
            .iter()
            .map(|m| ScoreMap::from_values("m", "encoding", vec![0.2, 0.01 * m.log10_params()]))
            .collect();
        let s = voxelwise_slopes(&maps, &metas).unwrap();
        assert_eq!(s.slope[0], 0.0);
        assert_eq!(s.p[0], 1.0);
        assert!((s.slope[1] - 0.01).abs() < 1e-12);
        assert!(s.p[1] < 1e-7);
        assert_eq!(s.threshold(SLOPE_P_THRESHOLD).bits(), &[false, true]);
        assert!(matches!(
            voxelwise_slopes(&maps[..2], &metas[..2]),
            Err(AnalysisError::TooFewModels { .. })
        ));
    }

    #[test]
    fn isc_normalization() {
        let m = ScoreMap::from_values("m", "encoding", vec![0.1, 0.1, 0.3]);
        let isc = ScoreMap::from_values("isc", "isc", vec![0.5, 0.01, 0.3]);
        let n = normalize_by_isc(&m, &isc, DEFAULT_ISC_FLOOR).unwrap();
        assert!((n.values[0] - 0.2).abs() < 1e-15);
        assert_eq!(n.excluded, vec![false, true, false]);
        assert_eq!(n.values[2], 1.0);
    }

    #[test]
    fn top_fraction_within_hemisphere() {
        let g = pair_geometry();
        let m = ScoreMap::from_values("m", "encoding", vec![0.1, 0.5, 0.9, 0.7]);
        let t = top_fraction_mask(&m, &g, Hemisphere::Left, 0.5).unwrap();
        assert_eq!(t.ids().collect::<Vec<_>>(), vec![2]);
        let all = top_fraction_mask(&m, &g, Hemisphere::Right, 1.0).unwrap();
        assert_eq!(all.ids().collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn covariate_required() {
        let mut metas: Vec<ModelMeta> = (1..=3).map(|i| meta(&format!("m{i}"), 10u64.pow(i))).collect();
        let maps: Vec<ScoreMap> = (0..3).map(|i| ScoreMap::from_values("m", "e", vec![i as f64])).collect();
        let mask = Mask::full(1, "a");
        assert!(matches!(
            covariate_fit(&metas, &maps, "ppl", &mask, 100, 0),
            Err(AnalysisError::MissingCovariate { .. })
        ));
        for (i, m) in metas.iter_mut().enumerate() {
            m.covariates.insert("ppl".into(), 3.0 * i as f64 - 1.0);
        }
        let f = covariate_fit(&metas, &maps, "ppl", &mask, 100, 0).unwrap();
        assert!((f.r.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_depths() {
        let mut m = ScoreMap::from_values("m", "e", vec![0.5]);
        m.per_layer = vec![vec![0.1], vec![0.3], vec![0.5]];
        let p = layer_profile(&m, &Mask::full(1, "a")).unwrap();
        assert_eq!(p.iter().map(|q| q.depth).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert_eq!(p[1].mean, 0.3);
    }
}
