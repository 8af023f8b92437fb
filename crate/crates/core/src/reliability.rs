//! Inter-subject correlation: how well one half of the cohort predicts the
//! other half, voxel by voxel, through the same nested-CV ridge used for
//! model features.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::encoder::{nested_cv_score, AlphaGrid, CvConfig, EncoderError, InnerCv, ScoreMap};
use crate::preprocess::{average_subjects, standardize, BoldRun, PreprocessError};
use crate::rng;
use crate::volume::Mask;

#[derive(Debug, Error)]
pub enum IscError {
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("need at least one split")]
    NoSplits,
    #[error("subject {subject} has {found} runs, expected {expected}")]
    RunCount {
        subject: usize,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone)]
pub struct IscConfig {
    pub n_splits: usize,
    pub seed: u64,
    /// Average the A->B and B->A predictions (otherwise B predicts A only).
    pub both_directions: bool,
    pub grid: AlphaGrid,
    pub inner: InnerCv,
}

impl Default for IscConfig {
    fn default() -> Self {
        IscConfig {
            n_splits: 10,
            seed: 0,
            both_directions: true,
            grid: AlphaGrid::default(),
            inner: InnerCv::Single,
        }
    }
}

/// One random half-split of the cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub seed: u64,
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    /// B predicting A, per voxel.
    pub b_to_a: Vec<f64>,
    /// A predicting B, per voxel (empty when only one direction is run).
    pub a_to_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IscMap {
    /// Mean over splits, labeled `kind = "isc"`.
    pub map: ScoreMap,
    pub splits: Vec<Split>,
}

impl IscMap {
    pub fn n_splits(&self) -> usize {
        self.splits.len()
    }

    pub fn split_seeds(&self) -> Vec<u64> {
        self.splits.iter().map(|s| s.seed).collect()
    }
}

/// Seeded Fisher-Yates split into halves of sizes `floor(n/2)` and
/// `ceil(n/2)`, each sorted.
pub fn split_subjects(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed, &[b"isc-split"]));
    let mut a = ids[..n / 2].to_vec();
    let mut b = ids[n / 2..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

fn group_average(subjects: &[Vec<BoldRun>], group: &[usize], run: usize) -> Result<DMatrix<f64>, IscError> {
    let runs: Vec<&BoldRun> = group.iter().map(|s| &subjects[*s][run]).collect();
    Ok(standardize(&average_subjects(&runs)?).data)
}

/// ISC per voxel. `subjects[s][k]` is run `k` of subject `s`; the other
/// group's masked voxels serve as predictors.
pub fn isc(subjects: &[Vec<BoldRun>], mask: &Mask, cfg: &IscConfig) -> Result<IscMap, IscError> {
    if subjects.len() < 2 {
        return Err(IscError::TooFewSubjects(subjects.len()));
    }
    if cfg.n_splits == 0 {
        return Err(IscError::NoSplits);
    }
    let n_runs = subjects[0].len();
    for (s, runs) in subjects.iter().enumerate() {
        if runs.len() != n_runs {
            return Err(IscError::RunCount {
                subject: s,
                expected: n_runs,
                found: runs.len(),
            });
        }
    }
    let ids: Vec<usize> = mask.ids().collect();
    let cv = CvConfig {
        inner: cfg.inner,
        cache: None,
    };

    let splits = (0..cfg.n_splits)
        .into_par_iter()
        .map(|i| -> Result<Split, IscError> {
            let seed = rng::derive_seed(cfg.seed, &[b"isc", &(i as u64).to_le_bytes()]);
            let (group_a, group_b) = split_subjects(subjects.len(), seed);
            let mut avg_a = Vec::with_capacity(n_runs);
            let mut avg_b = Vec::with_capacity(n_runs);
            for k in 0..n_runs {
                avg_a.push(group_average(subjects, &group_a, k)?);
                avg_b.push(group_average(subjects, &group_b, k)?);
            }
            let predictors = |avg: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
                avg.iter().map(|m| m.select_columns(&ids)).collect()
            };
            let b_to_a = nested_cv_score("isc", &[predictors(&avg_b)], &avg_a, &cfg.grid, mask, &cv)?.values;
            let a_to_b = if cfg.both_directions {
                nested_cv_score("isc", &[predictors(&avg_a)], &avg_b, &cfg.grid, mask, &cv)?.values
            } else {
                Vec::new()
            };
            Ok(Split {
                seed,
                group_a,
                group_b,
                b_to_a,
                a_to_b,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n_vox = mask.len();
    let mut values = vec![0.0; n_vox];
    for &v in &ids {
        let mut acc = 0.0;
        for s in &splits {
            acc += if s.a_to_b.is_empty() {
                s.b_to_a[v]
            } else {
                0.5 * (s.b_to_a[v] + s.a_to_b[v])
            };
        }
        values[v] = acc / splits.len() as f64;
    }
    let mut map = ScoreMap::from_values("isc", "isc", values);
    map.excluded = mask.bits().iter().map(|b| !b).collect();
    Ok(IscMap { map, splits })
}
