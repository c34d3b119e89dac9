//! Reconstruction metrics: MAE, Pearson correlation, Dirichlet distance and
//! per-fiducial amplitude errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::peaks::{ecg_fiducials, FiducialKind};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("constant input has no correlation")]
    ConstantInput,
    #[error("need at least two samples")]
    TooShort,
    #[error("no beats could be matched")]
    NoMatchedBeats,
}

fn same_len(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    Ok(())
}

pub fn mae(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    same_len(x, y)?;
    if x.is_empty() {
        return Err(MetricsError::TooShort);
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

/// Centred dot product over the product of centred norms.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    same_len(x, y)?;
    if x.len() < 2 {
        return Err(MetricsError::TooShort);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Largest pointwise distance under index-aligned pairing.
pub fn dirichlet_distance(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    same_len(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Discrete Fréchet distance between two sequences of scalar samples: the
/// minimum over monotone couplings of the largest coupled distance.
pub fn frechet_distance(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricsError::TooShort);
    }
    let m = y.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, a) in x.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            let d = (a - b).abs();
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DirichletMode {
    #[default]
    Aligned,
    Frechet,
}

impl DirichletMode {
    pub fn distance(self, x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
        match self {
            Self::Aligned => dirichlet_distance(x, y),
            Self::Frechet => {
                same_len(x, y)?;
                frechet_distance(x, y)
            }
        }
    }
}

/// Mean and population standard deviation of per-beat absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakError {
    pub mmae: f64,
    pub msae: f64,
}

pub type PeakTable = BTreeMap<FiducialKind, PeakError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub mae: f64,
    pub pearson: f64,
    pub dirichlet: f64,
    pub per_peak: PeakTable,
}

/// Cycle-averaged MAE, Pearson and Dirichlet distance over paired cycles.
/// A cycle pair with a constant member counts as zero correlation.
pub fn cycle_scores(
    reference: &[Vec<f64>],
    reconstructed: &[Vec<f64>],
    mode: DirichletMode,
) -> Result<(f64, f64, f64), MetricsError> {
    same_len_sets(reference, reconstructed)?;
    if reference.is_empty() {
        return Err(MetricsError::NoMatchedBeats);
    }
    let n = reference.len() as f64;
    let (mut m, mut p, mut d) = (0.0, 0.0, 0.0);
    for (r, c) in reference.iter().zip(reconstructed) {
        m += mae(r, c)?;
        // a flat reconstruction carries no shape information
        p += match pearson(r, c) {
            Err(MetricsError::ConstantInput) => 0.0,
            other => other?,
        };
        d += mode.distance(r, c)?;
    }
    Ok((m / n, p / n, d / n))
}

fn same_len_sets<A, B>(a: &[A], b: &[B]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn argmax(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > x[best] { i } else { best })
}

/// Amplitudes at P/Q/R/S/T of one normalized single-beat cycle. R is the
/// cycle maximum; the rest follow the fixed fiducial windows.
pub fn cycle_fiducial_amplitudes(cycle: &[f64], rate_hz: f64) -> BTreeMap<FiducialKind, f64> {
    let r = argmax(cycle);
    let set = ecg_fiducials(cycle, rate_hz, &[r]).expect("one R peak");
    FiducialKind::ECG
        .iter()
        .filter_map(|k| set.get(*k, 0).map(|i| (*k, cycle[i])))
        .collect()
}

/// Per-fiducial MMAE / MSAE over subjects, each subject a list of cycles.
/// `rates_hz[s][c]` is the effective sample rate of cycle `c` of subject `s`
/// (cycle length over its RR interval).
pub fn peak_error_table_with_rates(
    reference: &[Vec<Vec<f64>>],
    reconstructed: &[Vec<Vec<f64>>],
    rates_hz: &[Vec<f64>],
) -> Result<PeakTable, MetricsError> {
    same_len_sets(reference, reconstructed)?;
    same_len_sets(reference, rates_hz)?;
    let mut per_kind: BTreeMap<FiducialKind, Vec<(f64, f64)>> = BTreeMap::new();
    for ((refs, recs), rates) in reference.iter().zip(reconstructed).zip(rates_hz) {
        same_len_sets(refs, recs)?;
        same_len_sets(refs, rates)?;
        let mut errors: BTreeMap<FiducialKind, Vec<f64>> = BTreeMap::new();
        for ((r, c), rate) in refs.iter().zip(recs).zip(rates) {
            same_len(r, c)?;
            let a = cycle_fiducial_amplitudes(r, *rate);
            let b = cycle_fiducial_amplitudes(c, *rate);
            for (kind, va) in &a {
                if let Some(vb) = b.get(kind) {
                    errors.entry(*kind).or_default().push((va - vb).abs());
                }
            }
        }
        for (kind, e) in errors {
            let n = e.len() as f64;
            let mu = e.iter().sum::<f64>() / n;
            let sd = (e.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
            per_kind.entry(kind).or_default().push((mu, sd));
        }
    }
    if per_kind.is_empty() {
        return Err(MetricsError::NoMatchedBeats);
    }
    Ok(per_kind
        .into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mmae = v.iter().map(|p| p.0).sum::<f64>() / n;
            let msae = v.iter().map(|p| p.1).sum::<f64>() / n;
            (k, PeakError { mmae, msae })
        })
        .collect())
}

/// [`peak_error_table_with_rates`] with one effective rate for every cycle.
pub fn peak_error_table(
    reference: &[Vec<Vec<f64>>],
    reconstructed: &[Vec<Vec<f64>>],
    rate_hz: f64,
) -> Result<PeakTable, MetricsError> {
    let rates: Vec<Vec<f64>> = reference.iter().map(|s| vec![rate_hz; s.len()]).collect();
    peak_error_table_with_rates(reference, reconstructed, &rates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two-pass textbook formula written out independently.
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx: f64 = x.iter().sum::<f64>() / n;
        let my: f64 = y.iter().sum::<f64>() / n;
        let cov: f64 = (0..x.len()).map(|i| (x[i] - mx) * (y[i] - my)).sum();
        let vx: f64 = (0..x.len()).map(|i| (x[i] - mx).powi(2)).sum();
        let vy: f64 = (0..x.len()).map(|i| (y[i] - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn pearson_examples() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 7.0).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &[1.0; 20]), Err(MetricsError::ConstantInput));
        assert_eq!(pearson(&x, &x[..3]), Err(MetricsError::LengthMismatch(20, 3)));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!((pearson(&a, &b).unwrap() - pearson_oracle(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_examples() {
        let x = [0.1, 0.5, -0.2, 0.9];
        assert_eq!(dirichlet_distance(&x, &x).unwrap(), 0.0);
        let mut y = x;
        y[2] += 0.3;
        assert!((dirichlet_distance(&x, &y).unwrap() - 0.3).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut brute = 0.0;
        for i in 0..50 {
            let d = (a[i] - b[i]).abs();
            if d > brute {
                brute = d;
            }
        }
        assert_eq!(dirichlet_distance(&a, &b).unwrap(), brute);
    }

    #[test]
    fn frechet_binds_under_shift() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = (0..40).map(|i| ((i as f64 - 2.0) * 0.3).sin()).collect();
        let f = frechet_distance(&x, &y).unwrap();
        let d = dirichlet_distance(&x, &y).unwrap();
        assert!(f < d);
        assert_eq!(frechet_distance(&x, &x).unwrap(), 0.0);
    }

    fn beat(len: usize, rate: f64) -> Vec<f64> {
        // R at 30% of the cycle with Q/S/P/T bumps
        (0..len)
            .map(|i| {
                let t = i as f64 / rate - 0.3 * len as f64 / rate;
                let g = |c: f64, a: f64, s: f64| a * (-0.5 * ((t - c) / s).powi(2)).exp();
                g(-0.16, 0.15, 0.02) + g(-0.035, -0.12, 0.01) + g(0.0, 1.0, 0.01) + g(0.035, -0.2, 0.01) + g(0.24, 0.3, 0.04)
            })
            .collect()
    }

    #[test]
    fn peak_table_of_identical_and_offset() {
        let rate = 375.0;
        let subjects: Vec<Vec<Vec<f64>>> = (0..3).map(|_| (0..5).map(|_| beat(300, rate)).collect()).collect();
        let t = peak_error_table(&subjects, &subjects, rate).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.values().all(|e| e.mmae == 0.0 && e.msae == 0.0));

        let shifted: Vec<Vec<Vec<f64>>> = subjects
            .iter()
            .map(|s| s.iter().map(|c| c.iter().map(|v| v + 0.05).collect()).collect())
            .collect();
        let t = peak_error_table(&subjects, &shifted, rate).unwrap();
        for e in t.values() {
            assert!((e.mmae - 0.05).abs() < 1e-12 && e.msae < 1e-12, "{e:?}");
        }
        assert_eq!(
            peak_error_table(&[], &[], rate),
            Err(MetricsError::NoMatchedBeats)
        );
    }

    proptest! {
        #[test]
        fn pearson_affine(
            x in proptest::collection::vec(-10.0f64..10.0, 5..40),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-3.0..3.0)).collect();
            let (Ok(base), true) = (pearson(&x, &y), x.iter().any(|v| *v != x[0])) else { return Ok(()); };
            let pos: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&pos, &y).unwrap() - base).abs() < 1e-9);
            prop_assert!((pearson(&neg, &y).unwrap() + base).abs() < 1e-9);
        }

        #[test]
        fn dirichlet_is_a_metric(
            v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..30)
        ) {
            let x: Vec<f64> = v.iter().map(|t| t.0).collect();
            let y: Vec<f64> = v.iter().map(|t| t.1).collect();
            let z: Vec<f64> = v.iter().map(|t| t.2).collect();
            let d = |a: &[f64], b: &[f64]| dirichlet_distance(a, b).unwrap();
            prop_assert_eq!(d(&x, &x), 0.0);
            prop_assert_eq!(d(&x, &y), d(&y, &x));
            prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
            prop_assert!(frechet_distance(&x, &y).unwrap() <= d(&x, &y));
        }
    }
}
