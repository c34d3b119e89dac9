//! Multilevel Daubechies DWT and the two PPG/ECG wavelet filters.
//!
//! `denoise_keep_baseline` drops the finest detail bands (noise, motion);
//! `detrend_and_denoise` additionally drops the approximation band
//! (respiratory baseline, ambient drift). Band edges follow a five-level
//! decomposition at 30 Hz video rate. Higher sample rates get one extra level
//! and one extra dropped detail band per octave so that the retained band
//! stays at the same physical frequencies.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::exec::Exec;
use crate::signal::SignalTrace;

#[derive(Debug, Error, PartialEq)]
pub enum WaveletError {
    #[error("signal of {len} samples is shorter than the required {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("inconsistent bands: {0}")]
    InconsistentBands(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WaveletFamily {
    Haar,
    #[default]
    Db4,
}

const DB4_DEC_LO: [f64; 8] = [
    -0.010_597_401_784_997_278,
    0.032_883_011_666_982_945,
    0.030_841_381_835_986_965,
    -0.187_034_811_718_881_14,
    -0.027_983_769_416_983_85,
    0.630_880_767_929_590_4,
    0.714_846_570_552_541_5,
    0.230_377_813_308_855_23,
];

impl WaveletFamily {
    /// Decomposition low-pass filter.
    pub fn dec_lo(self) -> Vec<f64> {
        match self {
            WaveletFamily::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            WaveletFamily::Db4 => DB4_DEC_LO.to_vec(),
        }
    }

    /// Quadrature-mirror high-pass: `g[j] = (-1)^(j+1) h[F-1-j]`.
    pub fn dec_hi(self) -> Vec<f64> {
        let lo = self.dec_lo();
        let f = lo.len();
        (0..f)
            .map(|j| {
                let s = if j % 2 == 0 { -1.0 } else { 1.0 };
                s * lo[f - 1 - j]
            })
            .collect()
    }

    pub fn filter_len(self) -> usize {
        self.dec_lo().len()
    }
}

/// How the signal is continued past its ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Half-sample mirror (`x[-1] = x[0]`). Produces `F-1` extra
    /// coefficients per level; perfect reconstruction but redundant, so
    /// zeroing bands is not an exact projection.
    Symmetric,
    /// Circular wrap over the even-length prefix; an odd trailing sample is
    /// folded into the approximation by an orthogonal reflection. Every level
    /// is orthogonal, so energy is preserved, band zeroing is an exact
    /// projection and constants stay in the approximation.
    #[default]
    Periodization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Band {
    Approx,
    /// Detail level, 1 = finest.
    Detail(usize),
}

/// Coefficients of a multilevel decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBands {
    pub approx: Vec<f64>,
    /// `details[0]` is level 1 (finest).
    pub details: Vec<Vec<f64>>,
    /// Input length at each level, `level_lens[0]` is the signal length.
    pub level_lens: Vec<usize>,
    pub family: WaveletFamily,
    pub boundary: Boundary,
}

impl WaveletBands {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn band_mut(&mut self, band: Band) -> Option<&mut Vec<f64>> {
        match band {
            Band::Approx => Some(&mut self.approx),
            Band::Detail(l) if l >= 1 && l <= self.details.len() => Some(&mut self.details[l - 1]),
            Band::Detail(_) => None,
        }
    }

    pub fn zero(&mut self, band: Band) {
        if let Some(b) = self.band_mut(band) {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Sum of squared coefficients over all bands.
    pub fn energy(&self) -> f64 {
        self.approx
            .iter()
            .chain(self.details.iter().flatten())
            .map(|v| v * v)
            .sum()
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// `(approx_len, detail_len)` produced by one analysis step on `n` samples.
fn coeff_lens(n: usize, f: usize, boundary: Boundary) -> (usize, usize) {
    match boundary {
        Boundary::Symmetric => ((n + f - 1) / 2, (n + f - 1) / 2),
        Boundary::Periodization => (n.div_ceil(2), n / 2),
    }
}

fn dwt_step(x: &[f64], lo: &[f64], hi: &[f64], boundary: Boundary) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let f = lo.len();
    match boundary {
        Boundary::Symmetric => {
            let m = (n + f - 1) / 2;
            let mut a = vec![0.0; m];
            let mut d = vec![0.0; m];
            for k in 0..m {
                let (mut sa, mut sd) = (0.0, 0.0);
                for j in 0..f {
                    let v = x[reflect(2 * k as isize + 1 - j as isize, n)];
                    sa += lo[j] * v;
                    sd += hi[j] * v;
                }
                a[k] = sa;
                d[k] = sd;
            }
            (a, d)
        }
        Boundary::Periodization => {
            let p = n - n % 2;
            let m = p / 2;
            let mut a = vec![0.0; m];
            let mut d = vec![0.0; m];
            for k in 0..m {
                let (mut sa, mut sd) = (0.0, 0.0);
                for j in 0..f {
                    let v = x[(2 * k + 1 + p * f - j) % p];
                    sa += lo[j] * v;
                    sd += hi[j] * v;
                }
                a[k] = sa;
                d[k] = sd;
            }
            if n % 2 == 1 {
                a.push(x[n - 1]);
                odd_fold(&mut a);
            }
            (a, d)
        }
    }
}

/// Householder reflection taking the image of a constant signal, `sqrt(2)`
/// on the `m` periodized coefficients and `1` on the carried sample, onto a
/// constant vector. Orthogonal and self-inverse, so odd-length levels stay
/// orthogonal and constants never leak into detail bands.
fn odd_fold(a: &mut [f64]) {
    let m1 = a.len();
    let m = (m1 - 1) as f64;
    let u_norm = (2.0 * m + 1.0).sqrt();
    let e = 1.0 / (m1 as f64).sqrt();
    let v = |i: usize| {
        let u = if i + 1 == m1 { 1.0 } else { std::f64::consts::SQRT_2 };
        u / u_norm - e
    };
    let vv: f64 = (0..m1).map(|i| v(i) * v(i)).sum();
    let vy: f64 = (0..m1).map(|i| v(i) * a[i]).sum();
    let s = 2.0 * vy / vv;
    for (i, ai) in a.iter_mut().enumerate() {
        *ai -= s * v(i);
    }
}

/// Inverse of one analysis step. For orthogonal filters this is the
/// transpose of the analysis operator.
fn idwt_step(a: &[f64], d: &[f64], lo: &[f64], hi: &[f64], n: usize, boundary: Boundary) -> Vec<f64> {
    let f = lo.len();
    match boundary {
        Boundary::Symmetric => {
            let m = a.len();
            (0..n)
                .map(|i| {
                    // contributions from k with 0 <= 2k+1-i < f
                    let mut s = 0.0;
                    let mut k = (i + 1).saturating_sub(f) / 2;
                    while k < m {
                        let j = 2 * k as isize + 1 - i as isize;
                        if j >= f as isize {
                            break;
                        }
                        if j >= 0 {
                            s += lo[j as usize] * a[k] + hi[j as usize] * d[k];
                        }
                        k += 1;
                    }
                    s
                })
                .collect()
        }
        Boundary::Periodization => {
            let m = d.len();
            let p = 2 * m;
            let mut out = vec![0.0; n];
            let mut a = a.to_vec();
            if n % 2 == 1 {
                odd_fold(&mut a);
                out[n - 1] = a[m];
            }
            for k in 0..m {
                for j in 0..f {
                    let i = (2 * k + 1 + p * f - j) % p;
                    out[i] += lo[j] * a[k] + hi[j] * d[k];
                }
            }
            out
        }
    }
}

/// Multilevel decomposition.
pub fn dwt_with(
    signal: &[f64],
    family: WaveletFamily,
    levels: usize,
    boundary: Boundary,
) -> Result<WaveletBands, WaveletError> {
    let f = family.filter_len();
    if levels == 0 {
        return Err(WaveletError::InvalidPlan("levels must be >= 1".into()));
    }
    if signal.len() < f {
        return Err(WaveletError::SignalTooShort {
            len: signal.len(),
            min: f,
        });
    }
    let lo = family.dec_lo();
    let hi = family.dec_hi();
    let mut approx = signal.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut level_lens = Vec::with_capacity(levels);
    for _ in 0..levels {
        level_lens.push(approx.len());
        let (a, d) = dwt_step(&approx, &lo, &hi, boundary);
        details.push(d);
        approx = a;
    }
    Ok(WaveletBands {
        approx,
        details,
        level_lens,
        family,
        boundary,
    })
}

/// Multilevel decomposition with the default (periodized) boundary.
pub fn dwt(signal: &[f64], family: WaveletFamily, levels: usize) -> Result<WaveletBands, WaveletError> {
    dwt_with(signal, family, levels, Boundary::default())
}

/// Inverse of [`dwt`], truncated to `original_length`.
pub fn idwt(bands: &WaveletBands, original_length: usize) -> Result<Vec<f64>, WaveletError> {
    let levels = bands.levels();
    if levels == 0 || bands.level_lens.len() != levels {
        return Err(WaveletError::InconsistentBands(
            "level count mismatch".into(),
        ));
    }
    let f = bands.family.filter_len();
    for (l, d) in bands.details.iter().enumerate() {
        let (want_a, want) = coeff_lens(bands.level_lens[l], f, bands.boundary);
        if d.len() != want {
            return Err(WaveletError::InconsistentBands(format!(
                "detail {} has {} coefficients, expected {want}",
                l + 1,
                d.len()
            )));
        }
        if l + 1 < levels && bands.level_lens[l + 1] != want_a {
            return Err(WaveletError::InconsistentBands(format!(
                "level {} length {} does not follow from level {}",
                l + 2,
                bands.level_lens[l + 1],
                l + 1
            )));
        }
    }
    let (want_a, _) = coeff_lens(bands.level_lens[levels - 1], f, bands.boundary);
    if bands.approx.len() != want_a {
        return Err(WaveletError::InconsistentBands(format!(
            "approximation has {} coefficients, expected {want_a}",
            bands.approx.len()
        )));
    }
    if original_length > bands.level_lens[0] {
        return Err(WaveletError::InconsistentBands(format!(
            "original length {original_length} exceeds decomposed length {}",
            bands.level_lens[0]
        )));
    }
    let lo = bands.family.dec_lo();
    let hi = bands.family.dec_hi();
    let mut a = bands.approx.clone();
    for l in (0..levels).rev() {
        a = idwt_step(&a, &bands.details[l], &lo, &hi, bands.level_lens[l], bands.boundary);
    }
    a.truncate(original_length);
    Ok(a)
}

/// Which bands to drop before reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPlan {
    pub family: WaveletFamily,
    pub boundary: Boundary,
    pub levels: usize,
    pub zeroed_bands: BTreeSet<Band>,
}

/// Sample rate at which the reference five-level plan is defined.
pub const REFERENCE_RATE_HZ: f64 = 30.0;
pub const REFERENCE_LEVELS: usize = 5;

fn extra_levels(rate_hz: f64) -> usize {
    let octaves = (rate_hz / REFERENCE_RATE_HZ).log2().round();
    if octaves > 0.0 {
        octaves as usize
    } else {
        0
    }
}

impl WaveletPlan {
    pub fn new(levels: usize, zeroed_bands: impl IntoIterator<Item = Band>) -> Result<Self, WaveletError> {
        let plan = Self {
            family: WaveletFamily::Db4,
            boundary: Boundary::Periodization,
            levels,
            zeroed_bands: zeroed_bands.into_iter().collect(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), WaveletError> {
        if self.levels == 0 {
            return Err(WaveletError::InvalidPlan("levels must be >= 1".into()));
        }
        for b in &self.zeroed_bands {
            if let Band::Detail(l) = b {
                if *l == 0 || *l > self.levels {
                    return Err(WaveletError::InvalidPlan(format!(
                        "detail {l} not in 1..={}",
                        self.levels
                    )));
                }
            }
        }
        Ok(())
    }

    /// Drop details 1 and 2 at the reference rate, keep the baseline.
    pub fn denoise(rate_hz: f64) -> Self {
        let extra = extra_levels(rate_hz);
        Self::new(
            REFERENCE_LEVELS + extra,
            (1..=2 + extra).map(Band::Detail),
        )
        .expect("valid by construction")
    }

    /// Drop details 1 and 2 and the approximation at the reference rate.
    pub fn detrend(rate_hz: f64) -> Self {
        let mut p = Self::denoise(rate_hz);
        p.zeroed_bands.insert(Band::Approx);
        p
    }

    /// ECG variant: drop the approximation and only the finest detail so the
    /// QRS complex keeps its high-frequency content.
    pub fn ecg_detrend(rate_hz: f64) -> Self {
        let extra = extra_levels(rate_hz);
        Self::new(
            REFERENCE_LEVELS + extra,
            [Band::Approx, Band::Detail(1)],
        )
        .expect("valid by construction")
    }

    /// Keep only the approximation band (respiratory baseline surrogate).
    pub fn baseline(rate_hz: f64) -> Self {
        let levels = REFERENCE_LEVELS + extra_levels(rate_hz);
        Self::new(levels, (1..=levels).map(Band::Detail)).expect("valid by construction")
    }

    pub fn min_len(&self) -> usize {
        (1usize << self.levels).max(self.family.filter_len())
    }

    /// Decompose, zero the planned bands, reconstruct.
    pub fn apply(&self, signal: &[f64]) -> Result<Vec<f64>, WaveletError> {
        self.validate()?;
        if signal.len() < self.min_len() {
            return Err(WaveletError::SignalTooShort {
                len: signal.len(),
                min: self.min_len(),
            });
        }
        let mut bands = dwt_with(signal, self.family, self.levels, self.boundary)?;
        for b in &self.zeroed_bands {
            bands.zero(*b);
        }
        idwt(&bands, signal.len())
    }

    /// Apply to every channel of a trace, channels in parallel per `exec`.
    pub fn apply_trace(&self, trace: &SignalTrace, exec: Exec) -> Result<SignalTrace, WaveletError> {
        let filtered = exec.try_map(trace.channels(), |c| self.apply(c))?;
        Ok(SignalTrace::new(
            filtered,
            trace.sample_rate_hz(),
            trace.channel_labels().to_vec(),
            trace.t0_s(),
        )
        .expect("filtered trace keeps shape and stays finite"))
    }
}

/// Remove high-frequency noise, keep the baseline.
pub fn denoise_keep_baseline(trace: &SignalTrace) -> Result<SignalTrace, WaveletError> {
    WaveletPlan::denoise(trace.sample_rate_hz()).apply_trace(trace, Exec::Sequential)
}

/// Remove high-frequency noise and the baseline.
pub fn detrend_and_denoise(trace: &SignalTrace) -> Result<SignalTrace, WaveletError> {
    WaveletPlan::detrend(trace.sample_rate_hz()).apply_trace(trace, Exec::Sequential)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn tone(f: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * f * i as f64 / rate).sin())
            .collect()
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn max_abs(x: &[f64]) -> f64 {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn db4_filters_are_orthonormal() {
        let lo = WaveletFamily::Db4.dec_lo();
        let hi = WaveletFamily::Db4.dec_hi();
        assert!((lo.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-12);
        assert!(hi.iter().sum::<f64>().abs() < 1e-12);
        assert!((energy(&lo) - 1.0).abs() < 1e-12);
        for shift in [2usize, 4, 6] {
            let dot: f64 = (0..8 - shift).map(|i| lo[i] * lo[i + shift]).sum();
            assert!(dot.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_lives_in_approx() {
        for levels in 1..=6 {
            let b = dwt(&[0.75; 256], WaveletFamily::Db4, levels).unwrap();
            for d in &b.details {
                assert!(max_abs(d) <= 1e-10);
            }
            assert!(max_abs(&b.approx) > 0.0);
        }
    }

    #[test]
    fn round_trip_4096() {
        for boundary in [Boundary::Symmetric, Boundary::Periodization] {
            let x = random(4096, 1);
            let b = dwt_with(&x, WaveletFamily::Db4, 5, boundary).unwrap();
            let y = idwt(&b, x.len()).unwrap();
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-9 * max_abs(&x), "{boundary:?}: {err}");
        }
    }

    #[test]
    fn periodized_transform_preserves_energy() {
        for (seed, n) in [(0, 1024), (1, 1000), (2, 777), (3, 4097), (4, 65)] {
            let x = random(n, seed);
            let b = dwt_with(&x, WaveletFamily::Db4, 5, Boundary::Periodization).unwrap();
            assert!((b.energy() - energy(&x)).abs() <= 1e-6 * energy(&x));
        }
    }

    #[test]
    fn zeroing_all_bands_gives_zero() {
        let x = random(300, 2);
        let mut b = dwt(&x, WaveletFamily::Db4, 5).unwrap();
        b.zero(Band::Approx);
        for l in 1..=5 {
            b.zero(Band::Detail(l));
        }
        assert!(idwt(&b, 300).unwrap().iter().all(|v| *v == 0.0));

        let mut c = dwt(&[2.0; 300], WaveletFamily::Db4, 5).unwrap();
        c.zero(Band::Approx);
        assert!(max_abs(&idwt(&c, 300).unwrap()) <= 1e-9);
    }

    #[test]
    fn inconsistent_bands_rejected() {
        let mut b = dwt(&random(300, 3), WaveletFamily::Db4, 3).unwrap();
        b.details[1].pop();
        assert!(matches!(idwt(&b, 300), Err(WaveletError::InconsistentBands(_))));
        assert!(matches!(
            dwt(&[1.0; 5], WaveletFamily::Db4, 2),
            Err(WaveletError::SignalTooShort { .. })
        ));
    }

    #[test]
    fn plans_at_reference_rate_match_five_levels() {
        let p = WaveletPlan::detrend(30.0);
        assert_eq!(p.levels, 5);
        let want: BTreeSet<Band> = [Band::Approx, Band::Detail(1), Band::Detail(2)].into();
        assert_eq!(p.zeroed_bands, want);
        let p = WaveletPlan::denoise(125.0);
        assert_eq!(p.levels, 7);
        assert!(!p.zeroed_bands.contains(&Band::Approx));
    }

    #[test]
    fn baseline_survives_denoise() {
        let x = tone(0.3, 125.0, 2500);
        let t = SignalTrace::mono(x.clone(), 125.0, "g").unwrap();
        let y = denoise_keep_baseline(&t).unwrap();
        let diff: Vec<f64> = x.iter().zip(y.channel(0)).map(|(a, b)| a - b).collect();
        assert!((energy(&diff) / energy(&x)).sqrt() <= 0.05);
    }

    #[test]
    fn denoise_removes_white_noise_energy() {
        let x = random(2000, 7);
        let t = SignalTrace::mono(x.clone(), 125.0, "g").unwrap();
        let y = denoise_keep_baseline(&t).unwrap();
        assert!(energy(y.channel(0)) < energy(&x));
        let z = SignalTrace::mono(vec![0.0; 500], 125.0, "g").unwrap();
        assert!(denoise_keep_baseline(&z).unwrap().channel(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn detrend_kills_constant() {
        let t = SignalTrace::mono(vec![3.3; 1000], 125.0, "g").unwrap();
        let y = detrend_and_denoise(&t).unwrap();
        assert!(max_abs(y.channel(0)) <= 1e-8);
    }

    #[test]
    fn detrend_keeps_cardiac_band() {
        let x = tone(1.5, 125.0, 2500);
        let t = SignalTrace::mono(x.clone(), 125.0, "g").unwrap();
        let y = detrend_and_denoise(&t).unwrap();
        assert!(energy(y.channel(0)) >= 0.8 * energy(&x));
    }

    #[test]
    fn detrend_separates_baseline_from_pulse() {
        let pulse = tone(1.5, 125.0, 4000);
        let base = tone(0.25, 125.0, 4000);
        let mix: Vec<f64> = pulse.iter().zip(&base).map(|(a, b)| a + b).collect();
        let t = SignalTrace::mono(mix, 125.0, "g").unwrap();
        let y = detrend_and_denoise(&t).unwrap();
        let r = crate::metrics::pearson(y.channel(0), &pulse).unwrap();
        assert!(r >= 0.95, "{r}");
    }

    #[test]
    fn five_levels_at_125hz_would_lose_the_pulse() {
        // the literal five-level plan puts 1.5 Hz in the approximation band at 125 Hz
        let x = tone(1.5, 125.0, 2500);
        let p = WaveletPlan::new(5, [Band::Approx, Band::Detail(1), Band::Detail(2)]).unwrap();
        let y = p.apply(&x).unwrap();
        assert!(energy(&y) < 0.2 * energy(&x));
    }

    #[test]
    fn short_signal_rejected() {
        let t = SignalTrace::mono(vec![1.0; 20], 30.0, "g").unwrap();
        assert!(matches!(
            detrend_and_denoise(&t),
            Err(WaveletError::SignalTooShort { len: 20, min: 32 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn perfect_reconstruction(n in 64usize..8192, seed in 0u64..10_000, periodic in any::<bool>()) {
            let boundary = if periodic { Boundary::Periodization } else { Boundary::Symmetric };
            let x = random(n, seed);
            let b = dwt_with(&x, WaveletFamily::Db4, 5, boundary).unwrap();
            let y = idwt(&b, n).unwrap();
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-9 * max_abs(&x));
        }

        #[test]
        fn filter_is_linear(n in 128usize..2000, s1 in 0u64..1000, a in -3f64..3.0, b in -3f64..3.0) {
            let x = random(n, s1);
            let y = random(n, s1 + 1);
            let p = WaveletPlan::detrend(30.0);
            let lhs = p.apply(&x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect::<Vec<_>>()).unwrap();
            let fx = p.apply(&x).unwrap();
            let fy = p.apply(&y).unwrap();
            for i in 0..n {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9);
            }
        }

        #[test]
        fn detrended_mean_is_zero(n in 128usize..4000, seed in 0u64..1000) {
            let x: Vec<f64> = random(n, seed).iter().enumerate().map(|(i, v)| v + 5.0 + i as f64 * 0.01).collect();
            let y = WaveletPlan::detrend(30.0).apply(&x).unwrap();
            let mean = y.iter().sum::<f64>() / n as f64;
            let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            prop_assert!(mean.abs() <= 1e-6 * std, "mean {} std {}", mean, std);
        }

        #[test]
        fn detrend_is_idempotent(n in 128usize..4000, seed in 0u64..1000) {
            let x = random(n, seed);
            let p = WaveletPlan::detrend(30.0);
            let once = p.apply(&x).unwrap();
            let twice = p.apply(&once).unwrap();
            let d: f64 = once.iter().zip(&twice).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!((d / energy(&once)).sqrt() <= 1e-6);
        }
    }
}
