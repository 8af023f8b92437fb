//! Synthetic studies with known ground truth.
//!
//! A latent feature stream of dimension `D = max(family_dims)` drives every
//! voxel through fixed loadings and the HRF. A synthetic "model" of size `d`
//! sees the first `d` latent dimensions behind a random rotation, so larger
//! models carry strictly more of the signal. Left-hemisphere voxels load on
//! all `D` dimensions; in the left-only configuration their right-hemisphere
//! mirrors load only on the first `family_dims[0]`, so the left advantage
//! grows with `d`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::design::{build_design_with_kernel, glover_hrf, DesignError, HrfKernel, DEFAULT_HRF_LENGTH, DEFAULT_OVERSAMPLING};
use crate::matio::{EventList, ModelMeta, WordEvent};
use crate::preprocess::BoldRun;
use crate::rng;
use crate::volume::{Hemisphere, VoxelGeometry};

const VOCABULARY: usize = 400;
const WORD_GAP: (f64, f64) = (0.2, 0.6);
const PARAMS_PER_DIM: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error("signal and noise variance are both zero")]
    ZeroVariance,
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// Which latent dimensions the right hemisphere responds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Lateralization {
    /// Mirror voxels share identical loadings.
    #[default]
    Symmetric,
    /// Right voxels keep only the first `family_dims[0]` loadings.
    LeftOnly,
}

impl Lateralization {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "symmetric" => Some(Lateralization::Symmetric),
            "left-only" => Some(Lateralization::LeftOnly),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lateralization::Symmetric => "symmetric",
            Lateralization::LeftOnly => "left-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_runs: usize,
    pub n_scans_per_run: usize,
    /// Even; voxels come in mirror pairs.
    pub n_voxels: usize,
    pub tr: f64,
    pub noise_sigma: f64,
    /// Lag-one autocorrelation of the measurement noise (0 = white).
    pub noise_ar1: f64,
    pub family_dims: Vec<usize>,
    pub lateralization: Lateralization,
    /// Hidden layers per model; layer `l` exposes the first
    /// `ceil(d * (l + 1) / (n_layers + 1))` dimensions.
    pub n_layers: usize,
    /// Standard deviation of model-specific word-level noise added to each
    /// model's features (0 = models are exact views of the latent stream).
    pub model_noise: f64,
    pub oversampling: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_runs: 9,
            n_scans_per_run: 300,
            n_voxels: 200,
            tr: 2.0,
            noise_sigma: 1.0,
            noise_ar1: 0.0,
            family_dims: vec![8, 16, 32, 64, 128, 256],
            lateralization: Lateralization::Symmetric,
            n_layers: 1,
            model_noise: 0.0,
            oversampling: DEFAULT_OVERSAMPLING,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.n_runs == 0 || self.n_scans_per_run < 3 {
            return bad("need at least one run of at least 3 scans");
        }
        if self.n_voxels == 0 || self.n_voxels % 2 != 0 {
            return bad("n_voxels must be a positive even number");
        }
        if !(self.tr > 0.0) || !(self.noise_sigma >= 0.0) || !(self.model_noise >= 0.0) {
            return bad("tr must be positive and noise levels non-negative");
        }
        if !(self.noise_ar1.abs() < 1.0) {
            return bad("noise_ar1 must lie in (-1, 1)");
        }
        if self.family_dims.is_empty() || self.family_dims[0] == 0 {
            return bad("family_dims must be non-empty and positive");
        }
        if self.family_dims.windows(2).any(|w| w[1] <= w[0]) {
            return bad("family_dims must be strictly increasing");
        }
        if self.oversampling == 0 {
            return bad("oversampling must be at least 1");
        }
        Ok(())
    }

    pub fn max_dim(&self) -> usize {
        *self.family_dims.last().expect("validated")
    }

    /// Dimensions exposed by each layer of a model of size `d`.
    pub fn layer_dims(&self, d: usize) -> Vec<usize> {
        let parts = self.n_layers + 1;
        (1..=parts).map(|l| (d * l).div_ceil(parts)).collect()
    }
}

/// Ground truth of a synthetic study.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// `D x n_voxels` loadings after scaling each voxel's signal to unit
    /// variance.
    pub betas: DMatrix<f64>,
    pub ceiling: Vec<f64>,
    pub hemisphere: Vec<Hemisphere>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthModel {
    pub meta: ModelMeta,
    /// `[layer][run]`, words x dimensions.
    pub features: Vec<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStudy {
    pub config: SynthConfig,
    pub events: Vec<EventList>,
    pub models: Vec<SynthModel>,
    pub bold: Vec<BoldRun>,
    pub geometry: VoxelGeometry,
    pub truth: SynthTruth,
}

impl SynthStudy {
    pub fn kernel(&self) -> Result<HrfKernel, SynthError> {
        Ok(glover_hrf(self.config.tr, self.config.oversampling, DEFAULT_HRF_LENGTH)?)
    }

    /// Convolved designs `[layer][run]` of one model.
    pub fn designs(&self, model: usize) -> Result<Vec<Vec<DMatrix<f64>>>, SynthError> {
        let kernel = self.kernel()?;
        let n = self.config.n_scans_per_run;
        self.models[model]
            .features
            .iter()
            .map(|runs| {
                runs.iter()
                    .zip(&self.events)
                    .map(|(f, ev)| Ok(build_design_with_kernel(f, ev, n, &kernel)?))
                    .collect()
            })
            .collect()
    }
}

/// `sqrt(signal / (signal + noise))`.
pub fn theoretical_ceiling(signal_var: f64, noise_var: f64) -> Result<f64, SynthError> {
    if !(signal_var >= 0.0 && noise_var >= 0.0) {
        return Err(SynthError::Config("variances must be non-negative".into()));
    }
    let total = signal_var + noise_var;
    if total == 0.0 {
        return Err(SynthError::ZeroVariance);
    }
    Ok((signal_var / total).sqrt())
}

fn normals(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix.
fn rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let qr = normals(rng, d, d).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn tag(parts: &[u64]) -> Vec<u8> {
    parts.iter().flat_map(|p| p.to_le_bytes()).collect()
}

fn gen_events(cfg: &SynthConfig, run: usize) -> EventList {
    let mut rng = rng::stream(cfg.seed, &[b"events", &tag(&[run as u64])]);
    let end = cfg.n_scans_per_run as f64 * cfg.tr - 1.0;
    let mut t = 0.0;
    let mut entries = Vec::new();
    loop {
        t += rng.random_range(WORD_GAP.0..WORD_GAP.1);
        if t >= end {
            break;
        }
        entries.push(WordEvent {
            word: format!("w{:03}", rng.random_range(0..VOCABULARY)),
            onset: t,
            duration: None,
        });
    }
    EventList::new(entries).expect("increasing non-negative onsets")
}

/// Mirror pairs on a 4 mm grid: voxel `i < n/2` is left, `i + n/2` its mirror.
pub fn mirrored_geometry(n_voxels: usize) -> VoxelGeometry {
    let half = n_voxels / 2;
    let coord = |i: usize, sign: f64| {
        [
            sign * 4.0 * (1 + i % 10) as f64,
            4.0 * ((i / 10) % 10) as f64,
            4.0 * (i / 100) as f64,
        ]
    };
    let coords = (0..half)
        .map(|i| coord(i, -1.0))
        .chain((0..half).map(|i| coord(i, 1.0)))
        .collect();
    VoxelGeometry::new(coords)
}

fn ar1_noise(rng: &mut ChaCha8Rng, n: usize, cols: usize, phi: f64) -> DMatrix<f64> {
    let mut e = normals(rng, n, cols);
    if phi != 0.0 {
        let s = (1.0 - phi * phi).sqrt();
        for mut col in e.column_iter_mut() {
            for i in 1..n {
                col[i] = phi * col[i - 1] + s * col[i];
            }
        }
    }
    e
}

pub fn gen_study(cfg: &SynthConfig) -> Result<SynthStudy, SynthError> {
    cfg.validate()?;
    let big_d = cfg.max_dim();
    let n_scans = cfg.n_scans_per_run;
    let half = cfg.n_voxels / 2;
    let kernel = glover_hrf(cfg.tr, cfg.oversampling, DEFAULT_HRF_LENGTH)?;

    let events: Vec<EventList> = (0..cfg.n_runs).into_par_iter().map(|r| gen_events(cfg, r)).collect();
    let latent: Vec<DMatrix<f64>> = events
        .par_iter()
        .enumerate()
        .map(|(r, ev)| normals(&mut rng::stream(cfg.seed, &[b"latent", &tag(&[r as u64])]), ev.len(), big_d))
        .collect();
    let convolved = latent
        .par_iter()
        .zip(&events)
        .map(|(l, ev)| build_design_with_kernel(l, ev, n_scans, &kernel))
        .collect::<Result<Vec<_>, _>>()?;

    let mut loadings = normals(&mut rng::stream(cfg.seed, &[b"loadings"]), big_d, half);
    let mut right = loadings.clone();
    if cfg.lateralization == Lateralization::LeftOnly {
        right.rows_mut(cfg.family_dims[0], big_d - cfg.family_dims[0]).fill(0.0);
    }
    loadings = DMatrix::from_fn(big_d, cfg.n_voxels, |i, j| {
        if j < half {
            loadings[(i, j)]
        } else {
            right[(i, j - half)]
        }
    });

    // scale every voxel's noiseless signal to unit variance over the study
    let signal: Vec<DMatrix<f64>> = convolved.iter().map(|x| x * &loadings).collect();
    let total = (cfg.n_runs * n_scans) as f64;
    for v in 0..cfg.n_voxels {
        let mean = signal.iter().map(|s| s.column(v).sum()).sum::<f64>() / total;
        let var = signal
            .iter()
            .map(|s| s.column(v).iter().map(|x| (x - mean) * (x - mean)).sum::<f64>())
            .sum::<f64>()
            / total;
        let sd = var.sqrt();
        if sd > 0.0 {
            loadings.column_mut(v).unscale_mut(sd);
        }
    }
    let bold: Vec<BoldRun> = convolved
        .par_iter()
        .enumerate()
        .map(|(r, x)| {
            let mut rng = rng::stream(cfg.seed, &[b"noise", &tag(&[r as u64])]);
            let noise = ar1_noise(&mut rng, n_scans, cfg.n_voxels, cfg.noise_ar1);
            BoldRun::new(x * &loadings + noise * cfg.noise_sigma, cfg.tr, r)
        })
        .collect();

    let models = cfg
        .family_dims
        .iter()
        .map(|&d| gen_model(cfg, d, &latent))
        .collect();

    let ceiling = theoretical_ceiling(1.0, cfg.noise_sigma * cfg.noise_sigma)?;
    let hemisphere = (0..cfg.n_voxels)
        .map(|v| if v < half { Hemisphere::Left } else { Hemisphere::Right })
        .collect();
    Ok(SynthStudy {
        config: cfg.clone(),
        events,
        models,
        bold,
        geometry: mirrored_geometry(cfg.n_voxels),
        truth: SynthTruth {
            betas: loadings,
            ceiling: vec![ceiling; cfg.n_voxels],
            hemisphere,
        },
    })
}

fn gen_model(cfg: &SynthConfig, d: usize, latent: &[DMatrix<f64>]) -> SynthModel {
    let layer_dims = cfg.layer_dims(d);
    let views: Vec<DMatrix<f64>> = latent
        .par_iter()
        .enumerate()
        .map(|(r, l)| {
            let mut view = l.columns(0, d).into_owned();
            if cfg.model_noise > 0.0 {
                let mut rng = rng::stream(cfg.seed, &[b"model-noise", &tag(&[d as u64, r as u64])]);
                view += normals(&mut rng, l.nrows(), d) * cfg.model_noise;
            }
            view
        })
        .collect();
    let features = layer_dims
        .iter()
        .enumerate()
        .map(|(layer, &k)| {
            let q = rotation(&mut rng::stream(cfg.seed, &[b"rotation", &tag(&[d as u64, layer as u64])]), k);
            views.iter().map(|v| v.columns(0, k) * &q).collect()
        })
        .collect();
    SynthModel {
        meta: ModelMeta {
            name: format!("synth-d{d:03}"),
            family: "synth".to_string(),
            n_parameters: d as u64 * PARAMS_PER_DIM,
            n_layers: cfg.n_layers,
            n_neurons: d,
            covariates: Default::default(),
            checkpoint: None,
        },
        features,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IscCohortConfig {
    pub n_subjects: usize,
    pub shared_var: f64,
    pub noise_var: f64,
    /// Total scans, split evenly over `n_runs`.
    pub n_scans: usize,
    pub n_runs: usize,
    pub n_voxels: usize,
    pub tr: f64,
    pub seed: u64,
}

impl Default for IscCohortConfig {
    fn default() -> Self {
        IscCohortConfig {
            n_subjects: 49,
            shared_var: 1.0,
            noise_var: 1.0,
            n_scans: 10_000,
            n_runs: 5,
            n_voxels: 10,
            tr: 2.0,
            seed: 0,
        }
    }
}

/// Subjects `[subject][run]` sharing one white signal per voxel plus
/// independent white noise.
pub fn gen_isc_cohort(cfg: &IscCohortConfig) -> Result<Vec<Vec<BoldRun>>, SynthError> {
    if cfg.n_subjects < 2 {
        return Err(SynthError::Config("need at least 2 subjects".into()));
    }
    if cfg.n_runs == 0 || cfg.n_scans < 3 * cfg.n_runs || cfg.n_voxels == 0 {
        return Err(SynthError::Config("need runs of at least 3 scans and one voxel".into()));
    }
    if !(cfg.shared_var >= 0.0 && cfg.noise_var >= 0.0) {
        return Err(SynthError::Config("variances must be non-negative".into()));
    }
    let per_run = cfg.n_scans / cfg.n_runs;
    let shared: Vec<DMatrix<f64>> = (0..cfg.n_runs)
        .map(|r| {
            let mut rng = rng::stream(cfg.seed, &[b"isc-shared", &tag(&[r as u64])]);
            normals(&mut rng, per_run, cfg.n_voxels) * cfg.shared_var.sqrt()
        })
        .collect();
    Ok((0..cfg.n_subjects)
        .into_par_iter()
        .map(|s| {
            shared
                .iter()
                .enumerate()
                .map(|(r, sig)| {
                    let mut rng = rng::stream(cfg.seed, &[b"isc-noise", &tag(&[s as u64, r as u64])]);
                    let data = sig + normals(&mut rng, per_run, cfg.n_voxels) * cfg.noise_var.sqrt();
                    BoldRun::new(data, cfg.tr, r)
                })
                .collect()
        })
        .collect())
}
