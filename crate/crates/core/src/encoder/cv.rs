//! Nested run-wise cross-validation.
//!
//! For every layer and every held-out test run, a penalty is chosen on an
//! inner validation run (or on every inner run, in rotate mode) by the mean
//! correlation over the analysis mask, then the model is refit on all
//! non-test runs and scored on the test run. Scores are averaged over test
//! runs, then each voxel keeps its best layer.

use nalgebra::DMatrix;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{pearson_per_voxel, vstack, AlphaGrid, Correlations, EncoderError, RidgeFactorization, Standardizer};
use crate::volume::Mask;

/// How the inner validation run is chosen for test run `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerCv {
    /// Validate on run `(k + 1) mod n_runs` only.
    #[default]
    Single,
    /// Validate on every non-test run in turn and average the curves.
    Rotate,
}

impl InnerCv {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(InnerCv::Single),
            "rotate" => Some(InnerCv::Rotate),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InnerCv::Single => "single",
            InnerCv::Rotate => "rotate",
        }
    }
}

/// Storage for factorizations keyed by a digest of the training design and
/// the mask.
pub trait FactorCache: Send + Sync {
    fn load(&self, key: &str, x: &DMatrix<f64>) -> Option<RidgeFactorization>;
    fn store(&self, key: &str, factor: &RidgeFactorization);
}

#[derive(Clone, Copy, Default)]
pub struct CvConfig<'a> {
    pub inner: InnerCv,
    pub cache: Option<&'a dyn FactorCache>,
}

impl std::fmt::Debug for CvConfig<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CvConfig")
            .field("inner", &self.inner)
            .field("cache", &self.cache.is_some())
            .finish()
    }
}

/// Penalty selection record for one (layer, test run) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRecord {
    pub layer: usize,
    pub test_run: usize,
    pub validation_runs: Vec<usize>,
    pub alpha: f64,
    /// Mean masked validation r for every grid value.
    pub validation_curve: Vec<f64>,
}

/// Per-voxel brain correlations for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub model: String,
    pub kind: String,
    /// Final score per voxel (0 outside the mask).
    pub values: Vec<f64>,
    /// Score undefined in at least one run of the retained layer.
    pub undefined: Vec<bool>,
    /// Voxel not scored (outside the fitting mask, or excluded downstream).
    pub excluded: Vec<bool>,
    pub best_layer: Vec<usize>,
    /// `[layer][voxel]`, averaged over test runs.
    pub per_layer: Vec<Vec<f64>>,
    /// `[layer][run][voxel]`.
    pub per_run: Vec<Vec<Vec<f64>>>,
    pub folds: Vec<FoldRecord>,
}

impl ScoreMap {
    /// A bare map with every voxel included and defined.
    pub fn from_values(model: &str, kind: &str, values: Vec<f64>) -> Self {
        let n = values.len();
        ScoreMap {
            model: model.to_string(),
            kind: kind.to_string(),
            per_layer: vec![values.clone()],
            values,
            undefined: vec![false; n],
            excluded: vec![false; n],
            best_layer: vec![0; n],
            per_run: Vec::new(),
            folds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_layers(&self) -> usize {
        self.per_layer.len()
    }
}

fn digest(x: &DMatrix<f64>, mask: &Mask) -> String {
    let mut h = Sha256::new();
    h.update((x.nrows() as u64).to_le_bytes());
    h.update((x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        h.update(v.to_le_bytes());
    }
    h.update((mask.len() as u64).to_le_bytes());
    h.update(mask.bits().iter().map(|b| *b as u8).collect::<Vec<_>>());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn factorize(x: &DMatrix<f64>, mask: &Mask, cache: Option<&dyn FactorCache>) -> Result<RidgeFactorization, EncoderError> {
    let Some(cache) = cache else {
        return RidgeFactorization::new(x);
    };
    let key = digest(x, mask);
    if let Some(f) = cache.load(&key, x) {
        return Ok(f);
    }
    let f = RidgeFactorization::new(x)?;
    cache.store(&key, &f);
    Ok(f)
}

/// A training split after standardization, ready to score any evaluation
/// design.
struct Split {
    xs: Standardizer,
    factor: RidgeFactorization,
    y: DMatrix<f64>,
}

impl Split {
    fn new(x: &DMatrix<f64>, y: &DMatrix<f64>, mask: &Mask, cache: Option<&dyn FactorCache>) -> Result<Self, EncoderError> {
        if x.nrows() != y.nrows() {
            return Err(EncoderError::Shape(format!(
                "design has {} rows, targets {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite("targets"));
        }
        let xs = Standardizer::fit(x);
        let factor = factorize(&xs.apply(x), mask, cache)?;
        let y = Standardizer::fit_center(y).apply(y);
        Ok(Split { xs, factor, y })
    }

    fn sweep(&self, x_eval: &DMatrix<f64>) -> Result<super::AlphaSweep, EncoderError> {
        if x_eval.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite("evaluation design"));
        }
        self.factor.sweep(&self.y, &self.xs.apply(x_eval))
    }
}

/// Fit on one split with a fixed penalty and correlate predictions with the
/// test targets, voxel by voxel.
pub fn score_single_split(
    x_train: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    y_test: &DMatrix<f64>,
    alpha: f64,
) -> Result<Correlations, EncoderError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(EncoderError::BadAlpha(alpha));
    }
    let full = Mask::full(y_train.ncols(), "all");
    let split = Split::new(x_train, y_train, &full, None)?;
    let pred = split.sweep(x_test)?.predict(alpha);
    pearson_per_voxel(y_test, &pred)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct FoldOutcome {
    record: FoldRecord,
    scores: Correlations,
}

fn run_fold(
    designs: &[DMatrix<f64>],
    targets: &[DMatrix<f64>],
    grid: &AlphaGrid,
    mask: &Mask,
    layer: usize,
    test: usize,
    cfg: &CvConfig,
) -> Result<FoldOutcome, EncoderError> {
    let n_runs = targets.len();
    let validation_runs: Vec<usize> = match cfg.inner {
        InnerCv::Single => vec![(test + 1) % n_runs],
        InnerCv::Rotate => (0..n_runs).filter(|r| *r != test).collect(),
    };
    let mut curve = vec![0.0; grid.len()];
    for &val in &validation_runs {
        let train: Vec<usize> = (0..n_runs).filter(|r| *r != test && *r != val).collect();
        let x = vstack(&train.iter().map(|r| &designs[*r]).collect::<Vec<_>>());
        let y = vstack(&train.iter().map(|r| &targets[*r]).collect::<Vec<_>>());
        let sweep = Split::new(&x, &y, mask, cfg.cache)?.sweep(&designs[val])?;
        for (slot, alpha) in curve.iter_mut().zip(grid.values()) {
            let c = pearson_per_voxel(&targets[val], &sweep.predict(*alpha))?;
            *slot += mean(&c.r);
        }
    }
    curve.iter_mut().for_each(|v| *v /= validation_runs.len() as f64);

    let mut best: Option<usize> = None;
    for (i, v) in curve.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| *v > curve[b]) {
            best = Some(i);
        }
    }
    let best = best.ok_or(EncoderError::AllAlphasFailed { layer, run: test })?;
    let alpha = grid.values()[best];

    let train: Vec<usize> = (0..n_runs).filter(|r| *r != test).collect();
    let x = vstack(&train.iter().map(|r| &designs[*r]).collect::<Vec<_>>());
    let y = vstack(&train.iter().map(|r| &targets[*r]).collect::<Vec<_>>());
    let pred = Split::new(&x, &y, mask, cfg.cache)?
        .sweep(&designs[test])?
        .predict(alpha);
    let scores = pearson_per_voxel(&targets[test], &pred)?;
    Ok(FoldOutcome {
        record: FoldRecord {
            layer,
            test_run: test,
            validation_runs,
            alpha,
            validation_curve: curve,
        },
        scores,
    })
}

/// Nested cross-validated brain correlation of one model.
///
/// `layers[l][k]` is the design of layer `l` for run `k`; `bold[k]` is the
/// scans x voxels matrix of run `k`. Only voxels in `mask` are fitted.
pub fn nested_cv_score(
    model: &str,
    layers: &[Vec<DMatrix<f64>>],
    bold: &[DMatrix<f64>],
    grid: &AlphaGrid,
    mask: &Mask,
    cfg: &CvConfig,
) -> Result<ScoreMap, EncoderError> {
    let n_runs = bold.len();
    if n_runs < 3 {
        return Err(EncoderError::TooFewRuns(n_runs));
    }
    if layers.is_empty() {
        return Err(EncoderError::Shape("no layers".into()));
    }
    let n_vox = bold[0].ncols();
    if mask.len() != n_vox {
        return Err(EncoderError::Shape(format!(
            "mask covers {} voxels, BOLD has {n_vox}",
            mask.len()
        )));
    }
    let ids: Vec<usize> = mask.ids().collect();
    if ids.is_empty() {
        return Err(EncoderError::EmptyMask);
    }
    for (k, run) in bold.iter().enumerate() {
        if run.ncols() != n_vox {
            return Err(EncoderError::Shape(format!("run {k} has {} voxels, expected {n_vox}", run.ncols())));
        }
    }
    for (l, designs) in layers.iter().enumerate() {
        if designs.len() != n_runs {
            return Err(EncoderError::Shape(format!(
                "layer {l} has {} runs, BOLD has {n_runs}",
                designs.len()
            )));
        }
        for (k, d) in designs.iter().enumerate() {
            if d.nrows() != bold[k].nrows() || d.ncols() != designs[0].ncols() {
                return Err(EncoderError::Shape(format!(
                    "layer {l} run {k}: design {:?} vs BOLD {:?}",
                    d.shape(),
                    bold[k].shape()
                )));
            }
        }
    }
    let targets: Vec<DMatrix<f64>> = bold.iter().map(|b| b.select_columns(&ids)).collect();

    let tasks: Vec<(usize, usize)> = (0..layers.len())
        .flat_map(|l| (0..n_runs).map(move |k| (l, k)))
        .collect();
    let outcomes = tasks
        .par_iter()
        .map(|&(l, k)| run_fold(&layers[l], &targets, grid, mask, l, k, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let n_layers = layers.len();
    let mut per_run = vec![vec![vec![0.0; n_vox]; n_runs]; n_layers];
    let mut undefined_runs = vec![vec![false; n_vox]; n_layers];
    let mut folds = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let (l, k) = (o.record.layer, o.record.test_run);
        for (j, &v) in ids.iter().enumerate() {
            per_run[l][k][v] = o.scores.r[j];
            undefined_runs[l][v] |= o.scores.undefined[j];
        }
        folds.push(o.record);
    }
    let per_layer: Vec<Vec<f64>> = per_run
        .iter()
        .map(|runs| {
            (0..n_vox)
                .map(|v| runs.iter().map(|r| r[v]).sum::<f64>() / n_runs as f64)
                .collect()
        })
        .collect();

    let mut values = vec![0.0; n_vox];
    let mut best_layer = vec![0; n_vox];
    let mut undefined = vec![false; n_vox];
    let mut excluded = vec![true; n_vox];
    for &v in &ids {
        let mut b = 0;
        for l in 1..n_layers {
            if per_layer[l][v] > per_layer[b][v] {
                b = l;
            }
        }
        values[v] = per_layer[b][v];
        best_layer[v] = b;
        undefined[v] = undefined_runs[b][v];
        excluded[v] = false;
    }
    Ok(ScoreMap {
        model: model.to_string(),
        kind: "encoding".to_string(),
        values,
        undefined,
        excluded,
        best_layer,
        per_layer,
        per_run,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn noiseless_recovery_picks_smallest_alpha() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let beta = randn(10, 6, &mut rng);
        let xs: Vec<DMatrix<f64>> = (0..9).map(|_| randn(120, 10, &mut rng)).collect();
        let ys: Vec<DMatrix<f64>> = xs.iter().map(|x| x * &beta).collect();
        let mask = Mask::full(6, "all");
        let m = nested_cv_score("m", &[xs], &ys, &AlphaGrid::default(), &mask, &CvConfig::default()).unwrap();
        assert!(mean(&m.values) > 0.999, "{:?}", m.values);
        assert!(m.folds.iter().all(|f| f.alpha == 1e2));
        assert_eq!(m.folds.len(), 9);
    }

    #[test]
    fn sign_flip_gives_minus_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let beta = randn(4, 1, &mut rng);
        let x = randn(200, 4, &mut rng);
        let xt = randn(50, 4, &mut rng);
        let c = score_single_split(&x, &(&x * &beta), &xt, &-(&xt * &beta), 1e-6).unwrap();
        assert_eq!(c.r.len(), 1);
        assert!((c.r[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn needs_three_runs() {
        let x = vec![DMatrix::zeros(10, 2); 2];
        let err = nested_cv_score("m", &[x.clone()], &x, &AlphaGrid::default(), &Mask::full(2, "a"), &CvConfig::default());
        assert!(matches!(err, Err(EncoderError::TooFewRuns(2))));
    }

    #[test]
    fn masked_voxels_are_excluded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let beta = randn(5, 3, &mut rng);
        let xs: Vec<DMatrix<f64>> = (0..4).map(|_| randn(60, 5, &mut rng)).collect();
        let ys: Vec<DMatrix<f64>> = xs.iter().map(|x| x * &beta).collect();
        let mask = Mask::from_ids(3, [0, 2], "two").unwrap();
        let cfg = CvConfig {
            inner: InnerCv::Rotate,
            cache: None,
        };
        let m = nested_cv_score("m", &[xs], &ys, &AlphaGrid::default(), &mask, &cfg).unwrap();
        assert_eq!(m.excluded, vec![false, true, false]);
        assert_eq!(m.values[1], 0.0);
        assert_eq!(m.folds[0].validation_runs, vec![1, 2, 3]);
    }
}
