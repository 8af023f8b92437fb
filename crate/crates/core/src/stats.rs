//! Statistical primitives shared by the analysis layer.
//!
//! Everything here works on plain `f64` slices. The special functions
//! (log-gamma, regularized incomplete beta) back the Student-t tail
//! probabilities used for every reported p-value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("x values are all equal; slope is undefined")]
    DegenerateX,
    #[error("both samples have zero variance")]
    DegenerateVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite input value")]
    NonFinite,
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`, with `1 - x` passed separately so
/// callers that know it exactly avoid cancellation near `x = 1`.
pub fn beta_reg_split(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if one_minus_x <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * one_minus_x.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, one_minus_x) / b
    }
}

pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    beta_reg_split(a, b, x, 1.0 - x)
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    let denom = df + t2;
    let p = beta_reg_split(0.5 * df, 0.5, df / denom, t2 / denom);
    p.clamp(0.0, 1.0)
}

/// Two-sided p-value of a Pearson correlation `r` over `n` points.
pub fn pearson_p(r: f64, n: usize) -> f64 {
    let df = n as f64 - 2.0;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    t_two_sided_p(t, df)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Ordinary least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    /// Standard error of the slope.
    pub se_slope: f64,
    pub n: usize,
}

impl LineFit {
    /// Two-sided p-value of the slope (equal to that of `r`).
    pub fn p_value(&self) -> f64 {
        if self.n < 3 {
            return f64::NAN;
        }
        if self.se_slope == 0.0 {
            return if self.slope == 0.0 { 1.0 } else { 0.0 };
        }
        t_two_sided_p(self.slope / self.se_slope, self.n as f64 - 2.0)
    }
}

pub fn ols_line(x: &[f64], y: &[f64]) -> Result<LineFit, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFewPoints { needed: 2, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return Err(StatsError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r = if syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    };
    let se_slope = if n > 2 {
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let e = b - (intercept + slope * a);
                e * e
            })
            .sum();
        (sse / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LineFit {
        slope,
        intercept,
        r,
        se_slope,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    #[default]
    Pooled,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided two-sample t-test of `mean(a) - mean(b)`.
pub fn two_sample_ttest(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest, StatsError> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(StatsError::TooFewPoints {
            needed: 2,
            got: na.min(nb),
        });
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_var(a), sample_var(b));
    if va == 0.0 && vb == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let (na, nb) = (na as f64, nb as f64);
    let (t, df) = match kind {
        TTestKind::Pooled => {
            let df = na + nb - 2.0;
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            ((ma - mb) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt(), df)
        }
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
            ((ma - mb) / (qa + qb).sqrt(), df)
        }
    };
    Ok(TTest {
        t,
        df,
        p: t_two_sided_p(t, df),
    })
}

/// Quantile of already-sorted data with linear interpolation between order
/// statistics (position `q * (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile-bootstrap interval of the OLS slope, resampling (x, y) pairs
/// with replacement. Resamples whose x values are all equal are redrawn.
pub fn bootstrap_slope_ci(
    x: &[f64],
    y: &[f64],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    let n = x.len();
    if n != y.len() {
        return Err(StatsError::LengthMismatch(n, y.len()));
    }
    if n < 2 {
        return Err(StatsError::TooFewPoints { needed: 2, got: n });
    }
    if n_boot == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(n_boot);
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    let mut attempts = 0usize;
    while slopes.len() < n_boot {
        attempts += 1;
        if attempts > n_boot.saturating_mul(1000) {
            break;
        }
        for i in 0..n {
            let j = rng.random_range(0..n);
            bx[i] = x[j];
            by[i] = y[j];
        }
        if let Ok(fit) = ols_line(&bx, &by) {
            slopes.push(fit.slope);
        }
    }
    if slopes.is_empty() {
        return Err(StatsError::DegenerateX);
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&slopes, tail),
        quantile_sorted(&slopes, 1.0 - tail),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_relative_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn pooled_ttest_hand_values() {
        let t = two_sample_ttest(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], TTestKind::Pooled).unwrap();
        assert_relative_eq!(t.t, -1.224_744_871_391_589, epsilon = 1e-12);
        assert_eq!(t.df, 4.0);
        assert!((t.p - 0.287_864_134_726_690_8).abs() < 1e-10);
    }

    #[test]
    fn identical_samples_give_t_zero_p_one() {
        let t = two_sample_ttest(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], TTestKind::Welch).unwrap();
        assert_eq!(t.t, 0.0);
        assert_relative_eq!(t.p, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_variance_both_sides() {
        assert_eq!(
            two_sample_ttest(&[1.0, 1.0], &[2.0, 2.0], TTestKind::Pooled),
            Err(StatsError::DegenerateVariance)
        );
    }

    #[test]
    fn pearson_p_values() {
        // t = 15.5134, df = 26
        let p = pearson_p(0.95, 28);
        assert!((p - 1.169_375_216_914_194e-14).abs() / p < 1e-8, "{p}");
        let p = pearson_p(0.30, 10);
        assert!((p - 0.399_691_468_750_000_2).abs() < 1e-10, "{p}");
    }

    #[test]
    fn pearson_hand_value() {
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]);
        assert!((r - 0.981_980_506_061_965_5).abs() < 1e-12);
    }

    #[test]
    fn exact_line_has_zero_se() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = ols_line(&x, &y).unwrap();
        assert_eq!(f.slope, 2.0);
        assert_eq!(f.intercept, 1.0);
        assert_eq!(f.r, 1.0);
        assert_eq!(f.p_value(), 0.0);
    }

    #[test]
    fn quantile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + (v * 1.7).sin()).collect();
        let a = bootstrap_slope_ci(&x, &y, 500, 0.95, 7).unwrap();
        let b = bootstrap_slope_ci(&x, &y, 500, 0.95, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.0 < 0.5 && 0.5 < a.1);
    }
}
