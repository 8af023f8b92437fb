//! Scan-aligned regressors from word-level features.
//!
//! Every word contributes an impulse of its feature value at its onset on a
//! grid `oversampling` times finer than the TR. The impulse train is
//! convolved with the Glover double-gamma HRF and read back at scan times.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matio::EventList;
use crate::stats::ln_gamma;

pub const DEFAULT_OVERSAMPLING: usize = 16;
pub const DEFAULT_HRF_LENGTH: f64 = 32.0;

const PEAK_DELAY: f64 = 6.0;
const UNDERSHOOT_DELAY: f64 = 12.0;
const DISPERSION: f64 = 0.9;
const UNDERSHOOT_RATIO: f64 = 0.35;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("feature matrix has {features} rows but there are {events} events")]
    RowMismatch { features: usize, events: usize },
    #[error("event {index} at {onset} s falls outside the run ({limit} s)")]
    OnsetOutOfRange { index: usize, onset: f64, limit: f64 },
    #[error("invalid HRF parameters: {0}")]
    BadKernel(String),
}

fn gamma_pdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((shape - 1.0) * t.ln() - t / scale - ln_gamma(shape) - shape * scale.ln()).exp()
}

/// HRF sampled every `tr / oversampling` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct HrfKernel {
    samples: Vec<f64>,
    tr: f64,
    oversampling: usize,
    time_length: f64,
}

impl HrfKernel {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.tr / self.oversampling as f64
    }

    pub fn tr(&self) -> f64 {
        self.tr
    }

    pub fn oversampling(&self) -> usize {
        self.oversampling
    }

    pub fn time_length(&self) -> f64 {
        self.time_length
    }

    /// Same kernel multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> HrfKernel {
        HrfKernel {
            samples: self.samples.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("time_s\tvalue\n");
        for (k, v) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{}\t{v}", k as f64 * self.dt());
        }
        out
    }
}

/// Glover double-gamma HRF on `[0, time_length)`, scaled to unit peak.
pub fn glover_hrf(tr: f64, oversampling: usize, time_length: f64) -> Result<HrfKernel, DesignError> {
    if !(tr > 0.0 && tr.is_finite()) || oversampling == 0 || !(time_length > 0.0) {
        return Err(DesignError::BadKernel(format!(
            "tr={tr}, oversampling={oversampling}, time_length={time_length}"
        )));
    }
    let dt = tr / oversampling as f64;
    let n = (time_length / dt).round() as usize;
    let mut samples: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            gamma_pdf(t, PEAK_DELAY / DISPERSION, DISPERSION)
                - UNDERSHOOT_RATIO * gamma_pdf(t, UNDERSHOOT_DELAY / DISPERSION, DISPERSION)
        })
        .collect();
    let peak = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(DesignError::BadKernel("kernel has no positive peak".into()));
    }
    samples.iter_mut().for_each(|v| *v /= peak);
    Ok(HrfKernel {
        samples,
        tr,
        oversampling,
        time_length,
    })
}

/// `y[n] = sum_k kernel[k] * signal[n - k]`, truncated to the signal length.
pub fn convolve_causal(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    for (n, o) in out.iter_mut().enumerate() {
        let kmax = kernel.len().min(n + 1);
        *o = (0..kmax).map(|k| kernel[k] * signal[n - k]).sum();
    }
    out
}

/// Oversampled bin of each event, validated against the run length. An onset
/// just below the end can round to bin `n_scans * oversampling`; it reaches no
/// scan.
pub fn impulse_bins(events: &EventList, n_scans: usize, kernel: &HrfKernel) -> Result<Vec<usize>, DesignError> {
    let dt = kernel.dt();
    let limit = n_scans as f64 * kernel.tr;
    let n_bins = n_scans * kernel.oversampling;
    events
        .onsets()
        .enumerate()
        .map(|(index, onset)| {
            // f64::round rounds half away from zero
            let bin = (onset / dt).round();
            if !(onset >= 0.0 && onset < limit && bin <= n_bins as f64) {
                return Err(DesignError::OnsetOutOfRange { index, onset, limit });
            }
            Ok(bin as usize)
        })
        .collect()
}

/// Convolved regressors, `n_scans x features.ncols()`, using a prebuilt kernel.
pub fn build_design_with_kernel(
    features: &DMatrix<f64>,
    events: &EventList,
    n_scans: usize,
    kernel: &HrfKernel,
) -> Result<DMatrix<f64>, DesignError> {
    if features.nrows() != events.len() {
        return Err(DesignError::RowMismatch {
            features: features.nrows(),
            events: events.len(),
        });
    }
    let bins = impulse_bins(events, n_scans, kernel)?;
    let os = kernel.oversampling;
    let h = kernel.samples();
    // For each word, the (scan, kernel value) pairs it reaches.
    let taps: Vec<Vec<(usize, f64)>> = bins
        .iter()
        .map(|&b| {
            let first = b.div_ceil(os);
            (first..n_scans)
                .map(|i| (i, i * os - b))
                .take_while(|(_, lag)| *lag < h.len())
                .map(|(i, lag)| (i, h[lag]))
                .collect()
        })
        .collect();
    let n_words = features.nrows();
    let mut out = DMatrix::zeros(n_scans, features.ncols());
    out.as_mut_slice()
        .par_chunks_mut(n_scans.max(1))
        .enumerate()
        .for_each(|(j, col)| {
            let f = &features.as_slice()[j * n_words..(j + 1) * n_words];
            for (w, word_taps) in taps.iter().enumerate() {
                let v = f[w];
                if v == 0.0 {
                    continue;
                }
                for &(i, hv) in word_taps {
                    col[i] += hv * v;
                }
            }
        });
    Ok(out)
}

/// Convolved regressors with a Glover kernel built for `tr` and `oversampling`.
pub fn build_design(
    features: &DMatrix<f64>,
    events: &EventList,
    n_scans: usize,
    tr: f64,
    oversampling: usize,
) -> Result<DMatrix<f64>, DesignError> {
    let kernel = glover_hrf(tr, oversampling, DEFAULT_HRF_LENGTH)?;
    build_design_with_kernel(features, events, n_scans, &kernel)
}

/// Drop `k` rows at each end, matching BOLD trimming.
pub fn trim_rows(design: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = design.nrows();
    design.rows(k.min(n), n.saturating_sub(2 * k)).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomMode {
    /// A fresh vector for every word token.
    Iid,
    /// One vector per distinct word string, reused at every occurrence.
    PerWord,
}

/// Random baseline features, `events.len() x dim`, standard normal entries.
pub fn random_features(events: &EventList, dim: usize, mode: RandomMode, seed: u64) -> DMatrix<f64> {
    let n = events.len();
    match mode {
        RandomMode::Iid => {
            let mut rng = crate::rng::stream(seed, &[b"random-iid"]);
            DMatrix::from_row_iterator(n, dim, (0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
        }
        RandomMode::PerWord => {
            let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
            let mut out = DMatrix::zeros(n, dim);
            for (i, word) in events.words().enumerate() {
                let v = cache.entry(word).or_insert_with(|| {
                    let mut rng = crate::rng::stream(seed, &[b"random-word", word.as_bytes()]);
                    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
                });
                for (j, x) in v.iter().enumerate() {
                    out[(i, j)] = *x;
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matio::WordEvent;

    fn events(items: &[(&str, f64)]) -> EventList {
        EventList::new(
            items
                .iter()
                .map(|(w, t)| WordEvent {
                    word: w.to_string(),
                    onset: *t,
                    duration: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn hrf_shape() {
        let k = glover_hrf(2.0, 16, 32.0).unwrap();
        assert_eq!(k.samples().len(), 256);
        assert_eq!(k.samples()[0], 0.0);
        let (imax, vmax) = k
            .samples()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (i, v)| if *v > a.1 { (i, *v) } else { a });
        assert_eq!(vmax, 1.0);
        let t_peak = imax as f64 * k.dt();
        assert!((t_peak - 5.1).abs() < 0.2, "{t_peak}");
        for (i, v) in k.samples().iter().enumerate() {
            let t = i as f64 * k.dt();
            if (12.0..=25.0).contains(&t) {
                assert!(*v < 0.0, "t={t} v={v}");
            }
        }
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let k = glover_hrf(2.0, 1, 32.0).unwrap();
        let f = DMatrix::from_element(1, 1, 1.0);
        let d = build_design_with_kernel(&f, &events(&[("a", 0.0)]), 20, &k).unwrap();
        for i in 0..16 {
            assert_eq!(d[(i, 0)], k.samples()[i]);
        }
        for i in 16..20 {
            assert_eq!(d[(i, 0)], 0.0);
        }
    }

    #[test]
    fn onset_bin_rounding() {
        let k = glover_hrf(2.0, 16, 32.0).unwrap();
        assert_eq!(impulse_bins(&events(&[("a", 4.0)]), 10, &k).unwrap(), vec![32]);
        // 0.0625 / 0.125 = 0.5 rounds away from zero
        assert_eq!(impulse_bins(&events(&[("a", 0.0625)]), 10, &k).unwrap(), vec![1]);
        assert!(matches!(
            impulse_bins(&events(&[("a", 20.0)]), 10, &k),
            Err(DesignError::OnsetOutOfRange { .. })
        ));
    }

    #[test]
    fn row_mismatch() {
        let f = DMatrix::zeros(2, 3);
        assert!(matches!(
            build_design(&f, &events(&[("a", 0.0)]), 10, 2.0, 16),
            Err(DesignError::RowMismatch { features: 2, events: 1 })
        ));
    }

    #[test]
    fn superposition() {
        let ev = events(&[("a", 1.0), ("b", 7.3)]);
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let both = build_design(&f, &ev, 30, 2.0, 16).unwrap();
        let f1 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let f2 = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let sum = build_design(&f1, &ev, 30, 2.0, 16).unwrap() + build_design(&f2, &ev, 30, 2.0, 16).unwrap();
        assert!((both - sum).abs().max() < 1e-14);
    }

    #[test]
    fn convolution_edge_cases() {
        let k = [0.5, 0.25, 0.125];
        assert_eq!(convolve_causal(&[1.0, 0.0, 0.0, 0.0], &k), vec![0.5, 0.25, 0.125, 0.0]);
        assert_eq!(convolve_causal(&[0.0; 5], &k), vec![0.0; 5]);
    }

    #[test]
    fn per_word_vectors_repeat() {
        let ev = events(&[("rose", 0.0), ("the", 1.0), ("rose", 2.0)]);
        let m = random_features(&ev, 300, RandomMode::PerWord, 3);
        assert_eq!(m.row(0), m.row(2));
        assert_ne!(m.row(0), m.row(1));
        let iid = random_features(&ev, 1024, RandomMode::Iid, 3);
        assert_eq!(iid.shape(), (3, 1024));
        assert_eq!(iid, random_features(&ev, 1024, RandomMode::Iid, 3));
        assert_ne!(iid.row(0), iid.row(2));
    }
}
