//! Design construction against brute-force convolution, and its algebraic
//! properties.

use lscale_core::design::*;
use lscale_core::encoder::{nested_cv_score, AlphaGrid, CvConfig};
use lscale_core::matio::{EventList, WordEvent};
use lscale_core::Mask;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn events(onsets: &[f64]) -> EventList {
    EventList::new(
        onsets
            .iter()
            .enumerate()
            .map(|(i, &t)| WordEvent {
                word: format!("w{}", i % 7),
                onset: t,
                duration: None,
            })
            .collect(),
    )
    .unwrap()
}

fn random_events(rng: &mut ChaCha8Rng, n_scans: usize, tr: f64) -> EventList {
    let n = rng.random_range(1..120);
    let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..n_scans as f64 * tr)).collect();
    t.sort_by(f64::total_cmp);
    events(&t)
}

/// Place impulses on the fine grid, convolve by the textbook double sum,
/// then read every `os`-th sample.
fn brute_force(features: &DMatrix<f64>, ev: &EventList, n_scans: usize, kernel: &HrfKernel) -> DMatrix<f64> {
    let os = kernel.oversampling();
    let n_fine = n_scans * os;
    let h = kernel.samples();
    let mut out = DMatrix::zeros(n_scans, features.ncols());
    for j in 0..features.ncols() {
        let mut fine = vec![0.0; n_fine];
        for (w, onset) in ev.onsets().enumerate() {
            if let Some(slot) = fine.get_mut((onset / kernel.dt()).round() as usize) {
                *slot += features[(w, j)];
            }
        }
        for i in 0..n_scans {
            let n = i * os;
            let mut acc = 0.0;
            for m in 0..=n {
                if n - m < h.len() {
                    acc += h[n - m] * fine[m];
                }
            }
            out[(i, j)] = acc;
        }
    }
    out
}

#[test]
fn matches_direct_summation_on_random_event_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let tr = [1.0, 1.5, 2.0][case % 3];
        let os = [1, 4, 16][case % 3];
        let n_scans = rng.random_range(20..80);
        let ev = random_events(&mut rng, n_scans, tr);
        let f = DMatrix::from_fn(ev.len(), 3, |_, _| rng.sample(StandardNormal));
        let kernel = glover_hrf(tr, os, DEFAULT_HRF_LENGTH).unwrap();
        let fast = build_design_with_kernel(&f, &ev, n_scans, &kernel).unwrap();
        let slow = brute_force(&f, &ev, n_scans, &kernel);
        let err = (fast - slow).abs().max();
        assert!(err < 1e-12, "case {case}: {err}");
    }
}

#[test]
fn convolve_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let signal: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
    let kernel: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
    let fast = convolve_causal(&signal, &kernel);
    for (n, y) in fast.iter().enumerate() {
        let mut acc = 0.0;
        for k in 0..kernel.len() {
            if k <= n {
                acc += kernel[k] * signal[n - k];
            }
        }
        assert!((y - acc).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn linear_in_features(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ev = random_events(&mut rng, 40, 2.0);
        let f1 = DMatrix::from_fn(ev.len(), 4, |_, _| rng.sample(StandardNormal));
        let f2 = DMatrix::from_fn(ev.len(), 4, |_, _| rng.sample(StandardNormal));
        let d = |f: &DMatrix<f64>| build_design(f, &ev, 40, 2.0, 16).unwrap();
        let lhs = d(&(&f1 * a + &f2 * b));
        let rhs = d(&f1) * a + d(&f2) * b;
        prop_assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn shifting_onsets_by_one_tr_shifts_rows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ev = random_events(&mut rng, 38, 2.0);
        let shifted = events(&ev.onsets().map(|t| t + 2.0).collect::<Vec<_>>());
        let f = DMatrix::from_fn(ev.len(), 2, |_, _| rng.sample(StandardNormal));
        let a = build_design(&f, &ev, 40, 2.0, 16).unwrap();
        let b = build_design(&f, &shifted, 40, 2.0, 16).unwrap();
        prop_assert!(b.row(0).iter().all(|v| *v == 0.0));
        prop_assert!((b.rows(1, 39) - a.rows(0, 39)).abs().max() < 1e-12);
    }
}

#[test]
fn kernel_scale_does_not_change_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let kernel = glover_hrf(2.0, 16, DEFAULT_HRF_LENGTH).unwrap();
    let loud = kernel.scaled(10.0);
    let n_scans = 120;
    let runs: Vec<(EventList, DMatrix<f64>)> = (0..4)
        .map(|_| {
            let mut t = 0.0;
            let mut on = Vec::new();
            while t < 235.0 {
                on.push(t);
                t += rng.random_range(0.3..0.9);
            }
            let ev = events(&on);
            let f = DMatrix::from_fn(ev.len(), 5, |_, _| rng.sample(StandardNormal));
            (ev, f)
        })
        .collect();
    let beta = DMatrix::from_fn(5, 6, |_, _| rng.sample(StandardNormal));
    let design = |k: &HrfKernel| -> Vec<DMatrix<f64>> {
        runs.iter()
            .map(|(ev, f)| build_design_with_kernel(f, ev, n_scans, k).unwrap())
            .collect()
    };
    let base = design(&kernel);
    let bold: Vec<DMatrix<f64>> = base
        .iter()
        .map(|x| x * &beta + DMatrix::from_fn(n_scans, 6, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let mask = Mask::full(6, "all");
    let a = nested_cv_score("a", &[base], &bold, &AlphaGrid::default(), &mask, &CvConfig::default()).unwrap();
    let b = nested_cv_score("b", &[design(&loud)], &bold, &AlphaGrid::default(), &mask, &CvConfig::default()).unwrap();
    for (p, q) in a.values.iter().zip(&b.values) {
        assert!((p - q).abs() < 1e-10, "{p} vs {q}");
    }
}
