//! PPG/ECG alignment and per-beat cycle pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::peaks::{ppg_onsets, terma_detect, TermaParams};
use crate::signal::{interp_at, SignalTrace};

#[derive(Debug, Error, PartialEq)]
pub enum CycleError {
    #[error("no beats detected in {0}")]
    NoBeatsDetected(&'static str),
    #[error("PPG and ECG traces do not overlap in time")]
    NoOverlap,
    #[error("sample rates differ: PPG {ppg} Hz, ECG {ecg} Hz (resample first)")]
    RateMismatch { ppg: f64, ecg: f64 },
    #[error("invalid cycle config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// Samples per resampled cycle.
    pub cycle_len: usize,
    pub rr_min_s: f64,
    pub rr_max_s: f64,
    /// Pairing gate as a fraction of the median RR interval.
    pub gate_frac: f64,
    pub max_lag_s: f64,
    /// Gaussian width of the impulse trains used for lag estimation.
    pub train_sigma_s: f64,
    /// Share of the RR interval placed before R in an ECG cycle.
    pub pre_r_frac: f64,
    pub ppg_terma: TermaParams,
    pub ecg_terma: TermaParams,
    /// PPG channel to segment; `green` when present, else the first.
    pub ppg_channel: Option<String>,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            cycle_len: 300,
            rr_min_s: 0.33,
            rr_max_s: 2.0,
            gate_frac: 0.4,
            max_lag_s: 2.0,
            train_sigma_s: 0.05,
            pre_r_frac: 0.3,
            ppg_terma: TermaParams::ppg(),
            ecg_terma: TermaParams::ecg(),
            ppg_channel: None,
        }
    }
}

impl CycleConfig {
    fn validate(&self) -> Result<(), CycleError> {
        let bad = |m: &str| Err(CycleError::InvalidConfig(m.into()));
        if self.cycle_len < 2 {
            return bad("cycle length must be >= 2");
        }
        if !(self.rr_min_s > 0.0 && self.rr_min_s < self.rr_max_s) {
            return bad("need 0 < rr_min < rr_max");
        }
        if !(self.gate_frac > 0.0 && self.max_lag_s > 0.0 && self.train_sigma_s > 0.0) {
            return bad("gate, lag range and train width must be positive");
        }
        if !(0.0..1.0).contains(&self.pre_r_frac) {
            return bad("pre_r_frac must be in [0, 1)");
        }
        Ok(())
    }

    fn ppg_channel<'a>(&self, trace: &'a SignalTrace) -> &'a [f64] {
        let label = self.ppg_channel.as_deref().unwrap_or("green");
        trace.channel_by_label(label).unwrap_or_else(|| trace.channel(0))
    }
}

fn ecg_channel(trace: &SignalTrace) -> &[f64] {
    trace.channel_by_label("ecg").unwrap_or_else(|| trace.channel(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    NoPpgMatch,
    RrOutOfRange,
    NoClosingOnset,
    OutOfBounds,
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NoPpgMatch => "no_ppg_match",
            Self::RrOutOfRange => "rr_out_of_range",
            Self::NoClosingOnset => "no_closing_onset",
            Self::OutOfBounds => "out_of_bounds",
        }
    }
}

/// One R peak matched to one PPG pulse, with both cycle windows in their
/// own trace's sample indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatPair {
    pub r_peak: usize,
    pub sys_peak: usize,
    pub ppg_range: (usize, usize),
    /// Continuous ECG window `[R - pre RR, R + (1 - pre) RR]`.
    pub ecg_window: (f64, f64),
    pub rr_interval_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Global lag of the PPG anchors behind the R peaks.
    pub lag_s: f64,
    pub paired: usize,
    pub dropped: usize,
    pub drops: Vec<(usize, DropReason)>,
    pub pairs: Vec<BeatPair>,
    pub r_peaks: Vec<usize>,
    pub sys_peaks: Vec<usize>,
    pub onsets: Vec<usize>,
}

impl AlignmentReport {
    pub fn drop_count(&self, reason: DropReason) -> usize {
        self.drops.iter().filter(|d| d.1 == reason).count()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const NEAR_TOP: f64 = 0.9;

/// Lag between two impulse trains from the normalized cross-correlation of
/// their Gaussian-smoothed versions, on a grid of `step` seconds refined by
/// a parabola.
///
/// Smoothed trains correlate as a sum of Gaussians of width `sigma * sqrt 2`
/// over all event pairs, which is evaluated directly.
pub fn train_lag(ecg_times: &[f64], ppg_times: &[f64], sigma: f64, max_lag: f64, step: f64) -> f64 {
    let n_steps = (max_lag / step).floor() as i64;
    let norm = ((ecg_times.len() * ppg_times.len()) as f64).sqrt();
    let reach = 6.0 * sigma;
    let score = |lag: f64| {
        let mut s = 0.0;
        let mut lo = 0;
        for &r in ecg_times {
            let target = r + lag;
            while lo < ppg_times.len() && ppg_times[lo] < target - reach {
                lo += 1;
            }
            for &p in &ppg_times[lo..] {
                if p > target + reach {
                    break;
                }
                let d = p - target;
                s += (-d * d / (4.0 * sigma * sigma)).exp();
            }
        }
        s / norm
    };
    let scores: Vec<f64> = (-n_steps..=n_steps).map(|k| score(k as f64 * step)).collect();
    // Quasi-periodic trains score almost equally at every multiple of the
    // beat interval. Among local maxima near the top score, take the
    // smallest non-negative lag (the pulse follows the R peak), else the
    // negative one closest to zero.
    let top = scores.iter().copied().fold(0.0, f64::max);
    let near_top: Vec<usize> = (0..scores.len())
        .filter(|&i| {
            scores[i] >= NEAR_TOP * top
                && (i == 0 || scores[i] >= scores[i - 1])
                && (i + 1 == scores.len() || scores[i] >= scores[i + 1])
        })
        .collect();
    let zero = n_steps as usize;
    let best = near_top
        .iter()
        .copied()
        .find(|&i| i >= zero)
        .or_else(|| near_top.last().copied())
        .unwrap_or(zero);
    let mut lag = (best as i64 - n_steps) as f64 * step;
    if best > 0 && best + 1 < scores.len() {
        let (l, c, r) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            lag += step * (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    lag
}

pub fn align(ppg: &SignalTrace, ecg: &SignalTrace, cfg: &CycleConfig) -> Result<AlignmentReport, CycleError> {
    cfg.validate()?;
    let rate = ppg.sample_rate_hz();
    if (rate - ecg.sample_rate_hz()).abs() > 1e-9 * rate {
        return Err(CycleError::RateMismatch {
            ppg: rate,
            ecg: ecg.sample_rate_hz(),
        });
    }
    let (p0, p1) = (ppg.t0_s(), ppg.t0_s() + ppg.duration_s());
    let (e0, e1) = (ecg.t0_s(), ecg.t0_s() + ecg.duration_s());
    if p0.max(e0) >= p1.min(e1) {
        return Err(CycleError::NoOverlap);
    }
    let ppg_x = cfg.ppg_channel(ppg);
    let ecg_x = ecg_channel(ecg);
    let r_peaks = terma_detect(ecg_x, rate, &cfg.ecg_terma).map_err(|_| CycleError::NoBeatsDetected("ECG"))?;
    let sys_peaks = terma_detect(ppg_x, rate, &cfg.ppg_terma).map_err(|_| CycleError::NoBeatsDetected("PPG"))?;
    let onsets = ppg_onsets(ppg_x, &sys_peaks).expect("peaks are non-empty");

    let r_t: Vec<f64> = r_peaks.iter().map(|i| ecg.time_at(*i)).collect();
    let s_t: Vec<f64> = sys_peaks.iter().map(|i| ppg.time_at(*i)).collect();
    let lag_s = train_lag(&r_t, &s_t, cfg.train_sigma_s, cfg.max_lag_s, 1.0 / rate);

    let rr_all: Vec<f64> = r_t.windows(2).map(|w| w[1] - w[0]).collect();
    let gate = if rr_all.is_empty() {
        cfg.gate_frac * cfg.rr_max_s
    } else {
        cfg.gate_frac * median(rr_all.clone())
    };

    let mut pairs = Vec::new();
    let mut drops = Vec::new();
    let mut next_sys = 0;
    for (i, (&r, &rt)) in r_peaks.iter().zip(&r_t).enumerate() {
        let target = rt + lag_s;
        // nearest unused PPG anchor, order preserving
        let mut best: Option<usize> = None;
        for (j, &st) in s_t.iter().enumerate().skip(next_sys) {
            if st > target + gate {
                break;
            }
            if (st - target).abs() <= gate && best.is_none_or(|b| (st - target).abs() < (s_t[b] - target).abs()) {
                best = Some(j);
            }
        }
        let Some(j) = best else {
            drops.push((i, DropReason::NoPpgMatch));
            continue;
        };
        next_sys = j + 1;
        let rr = match (rr_all.get(i), i.checked_sub(1).and_then(|k| rr_all.get(k))) {
            (Some(v), _) | (None, Some(v)) => *v,
            (None, None) => {
                drops.push((i, DropReason::RrOutOfRange));
                continue;
            }
        };
        if !(cfg.rr_min_s..=cfg.rr_max_s).contains(&rr) {
            drops.push((i, DropReason::RrOutOfRange));
            continue;
        }
        if j == 0 || j >= onsets.len() {
            drops.push((i, DropReason::NoClosingOnset));
            continue;
        }
        let ppg_range = (onsets[j - 1], onsets[j]);
        let rr_samples = rr * rate;
        let ecg_window = (
            r as f64 - cfg.pre_r_frac * rr_samples,
            r as f64 + (1.0 - cfg.pre_r_frac) * rr_samples,
        );
        if ecg_window.0 < 0.0 || ecg_window.1 > (ecg_x.len() - 1) as f64 || ppg_range.1 <= ppg_range.0 {
            drops.push((i, DropReason::OutOfBounds));
            continue;
        }
        pairs.push(BeatPair {
            r_peak: r,
            sys_peak: sys_peaks[j],
            ppg_range,
            ecg_window,
            rr_interval_s: rr,
        });
    }
    Ok(AlignmentReport {
        lag_s,
        paired: pairs.len(),
        dropped: drops.len(),
        drops,
        pairs,
        r_peaks,
        sys_peaks,
        onsets,
    })
}

/// Resample `x[a..=b]` (continuous bounds) to `len` points, then remove the
/// mean and scale to unit max-abs.
pub fn normalized_cycle(x: &[f64], a: f64, b: f64, len: usize) -> Vec<f64> {
    let step = (b - a) / (len - 1) as f64;
    let mut v: Vec<f64> = (0..len).map(|k| interp_at(x, a + step * k as f64)).collect();
    normalize(&mut v);
    v
}

/// Zero mean, unit max-abs (all zeros when constant).
pub fn normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 1e-12 {
        v.iter_mut().for_each(|x| *x /= peak);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardiacCyclePair {
    pub ppg: Vec<f64>,
    pub ecg: Vec<f64>,
    pub src_ppg_range: (usize, usize),
    pub src_ecg_range: (usize, usize),
    pub rr_interval_s: f64,
}

impl CardiacCyclePair {
    /// Sample rate of the resampled ECG cycle.
    pub fn ecg_cycle_rate_hz(&self) -> f64 {
        (self.ecg.len() - 1) as f64 / self.rr_interval_s
    }
}

pub fn segment_pairs(
    ppg: &SignalTrace,
    ecg: &SignalTrace,
    report: &AlignmentReport,
    cfg: &CycleConfig,
    exec: Exec,
) -> Vec<CardiacCyclePair> {
    let ppg_x = cfg.ppg_channel(ppg);
    let ecg_x = ecg_channel(ecg);
    let l = cfg.cycle_len;
    exec.map(&report.pairs, |p| {
        let (pa, pb) = p.ppg_range;
        let (ea, eb) = p.ecg_window;
        CardiacCyclePair {
            ppg: normalized_cycle(ppg_x, pa as f64, pb as f64, l),
            ecg: normalized_cycle(ecg_x, ea, eb, l),
            src_ppg_range: p.ppg_range,
            src_ecg_range: (ea.floor() as usize, eb.ceil() as usize),
            rr_interval_s: p.rr_interval_s,
        }
    })
}

/// Align and segment in one call.
pub fn cycle_pairs(
    ppg: &SignalTrace,
    ecg: &SignalTrace,
    cfg: &CycleConfig,
    exec: Exec,
) -> Result<(AlignmentReport, Vec<CardiacCyclePair>), CycleError> {
    let report = align(ppg, ecg, cfg)?;
    let pairs = segment_pairs(ppg, ecg, &report, cfg, exec);
    Ok((report, pairs))
}

/// An onset-to-onset PPG cycle with no ECG partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpgCycle {
    pub range: (usize, usize),
    pub cycle: Vec<f64>,
}

/// PPG cycles cut the same way as the PPG half of [`align`]'s pairs, for
/// translating records that have no ECG. Cycles whose length falls outside
/// the RR gate are dropped.
pub fn ppg_cycles(ppg: &SignalTrace, cfg: &CycleConfig) -> Result<Vec<PpgCycle>, CycleError> {
    cfg.validate()?;
    let rate = ppg.sample_rate_hz();
    let x = cfg.ppg_channel(ppg);
    let sys = terma_detect(x, rate, &cfg.ppg_terma).map_err(|_| CycleError::NoBeatsDetected("PPG"))?;
    let onsets = ppg_onsets(x, &sys).expect("peaks are non-empty");
    Ok(onsets
        .windows(2)
        .filter(|w| (cfg.rr_min_s..=cfg.rr_max_s).contains(&((w[1] - w[0]) as f64 / rate)))
        .map(|w| PpgCycle {
            range: (w[0], w[1]),
            cycle: normalized_cycle(x, w[0] as f64, w[1] as f64, cfg.cycle_len),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, HrProfile, SynthConfig, SynthTruth};

    const RATE: f64 = 125.0;

    fn pulses(times: &[f64], n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / RATE;
                times.iter().map(|c| (-0.5 * ((t - c) / 0.012).powi(2)).exp()).sum()
            })
            .collect()
    }

    #[test]
    fn ppg_cycles_match_paired_ppg_halves() {
        let rec = generate(&SynthConfig {
            duration_s: 20.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = CycleConfig::default();
        let (_, pairs) = cycle_pairs(&rec.ppg, &rec.ecg, &cfg, Exec::Sequential).unwrap();
        let cycles = ppg_cycles(&rec.ppg, &cfg).unwrap();
        assert!(cycles.len() >= pairs.len());
        for p in &pairs {
            let c = cycles.iter().find(|c| c.range == p.src_ppg_range).expect("same cut");
            assert_eq!(c.cycle, p.ppg);
        }
    }

    #[test]
    fn zero_lag_trains() {
        let t: Vec<f64> = (0..12).map(|k| 0.5 + 0.8 * k as f64).collect();
        assert!(train_lag(&t, &t, 0.05, 2.0, 1.0 / RATE).abs() < 1e-9);
    }

    #[test]
    fn delayed_train() {
        let mut t = vec![0.4];
        for k in 0..40 {
            t.push(t[k] + 0.75 + 0.1 * ((k as f64) * 1.3).sin());
        }
        let d: Vec<f64> = t.iter().map(|v| v + 0.25).collect();
        let lag = train_lag(&t, &d, 0.05, 2.0, 1.0 / RATE);
        assert!((lag - 0.25).abs() <= 0.01, "{lag}");
    }

    #[test]
    fn periodic_train_prefers_causal_lag() {
        for (period, lag) in [(0.72, 0.28), (0.5, 0.28), (1.1, 0.05)] {
            let t: Vec<f64> = (0..60).map(|k| 0.3 + period * k as f64).collect();
            let d: Vec<f64> = t.iter().map(|v| v + lag).collect();
            let got = train_lag(&t, &d, 0.05, 2.0, 1.0 / RATE);
            assert!((got - lag).abs() <= 0.01, "{period} {got}");
        }
    }

    #[test]
    fn disjoint_traces() {
        let x = pulses(&[1.0, 2.0, 3.0], 500);
        let a = SignalTrace::mono(x.clone(), RATE, "green").unwrap();
        let b = SignalTrace::new(vec![x], RATE, vec!["ecg".into()], 100.0).unwrap();
        assert_eq!(align(&a, &b, &CycleConfig::default()), Err(CycleError::NoOverlap));
    }

    #[test]
    fn identical_trains_pair_everything() {
        let times: Vec<f64> = (0..10).map(|k| 0.6 + 0.8 * k as f64).collect();
        let x = pulses(&times, 1100);
        let ppg = SignalTrace::mono(x.clone(), RATE, "green").unwrap();
        let ecg = SignalTrace::mono(x, RATE, "ecg").unwrap();
        let cfg = CycleConfig {
            ppg_terma: TermaParams::ecg(),
            ..Default::default()
        };
        let rep = align(&ppg, &ecg, &cfg).unwrap();
        assert!(rep.lag_s.abs() < 1e-9);
        assert_eq!(rep.paired + rep.dropped, rep.r_peaks.len());
        assert_eq!(rep.drop_count(DropReason::NoPpgMatch), 0);
    }

    #[test]
    fn ten_clean_beats() {
        let rec = generate(&SynthConfig {
            hr: HrProfile::Constant(75.0),
            duration_s: 8.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(rec.truth.r_times_s.len(), 10);
        let cfg = CycleConfig::default();
        let (rep, pairs) = cycle_pairs(&rec.ppg, &rec.ecg, &cfg, Exec::auto()).unwrap();
        assert!((rep.lag_s - 0.25).abs() < 0.02, "{}", rep.lag_s);
        assert_eq!(rep.paired + rep.dropped, rep.r_peaks.len());
        assert!((8..=10).contains(&pairs.len()), "{}", pairs.len());
        for p in &pairs {
            assert_eq!(p.ppg.len(), 300);
            assert_eq!(p.ecg.len(), 300);
            assert!(p.ppg.iter().chain(&p.ecg).all(|v| v.is_finite()));
            assert!((p.rr_interval_s - 0.8).abs() < 0.02);
        }
        let ppg_starts: Vec<usize> = pairs.iter().map(|p| p.src_ppg_range.0).collect();
        let ecg_starts: Vec<usize> = pairs.iter().map(|p| p.src_ecg_range.0).collect();
        assert!(ppg_starts.windows(2).all(|w| w[0] < w[1]));
        assert!(ecg_starts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn pipeline_recovers_truth_beats() {
        let rec = generate(&SynthConfig::default()).unwrap();
        let ecg = crate::wavelet::WaveletPlan::ecg_detrend(RATE)
            .apply_trace(&rec.ecg, Exec::Sequential)
            .unwrap();
        let ppg = crate::wavelet::WaveletPlan::detrend(RATE)
            .apply_trace(&rec.ppg, Exec::Sequential)
            .unwrap();
        let rep = align(&ppg, &ecg, &CycleConfig::default()).unwrap();
        let truth = SynthTruth::indices(&rec.truth.r_times_s, RATE);
        let (se, ppv, worst) = crate::peaks::match_events(&truth, &rep.r_peaks, 2);
        assert!(se >= 0.99 && ppv >= 0.99 && worst <= 2, "{se} {ppv} {worst}");
        assert!(rep.paired as f64 >= 0.95 * truth.len() as f64);
    }

    #[test]
    fn long_pause_is_dropped() {
        let mut times: Vec<f64> = (0..6).map(|k| 0.6 + 0.8 * k as f64).collect();
        let last = *times.last().unwrap();
        times.extend((1..6).map(|k| last + 3.0 + 0.8 * (k - 1) as f64));
        let x = pulses(&times, 1500);
        let ppg = SignalTrace::mono(x.clone(), RATE, "green").unwrap();
        let ecg = SignalTrace::mono(x, RATE, "ecg").unwrap();
        let cfg = CycleConfig {
            ppg_terma: TermaParams::ecg(),
            ..Default::default()
        };
        let rep = align(&ppg, &ecg, &cfg).unwrap();
        assert_eq!(rep.drop_count(DropReason::RrOutOfRange), 1);
    }

    #[test]
    fn constant_cycle_normalizes_to_zero() {
        let v = normalized_cycle(&[1.0; 10], 0.0, 9.0, 4);
        assert_eq!(v, vec![0.0; 4]);
        let w = normalized_cycle(&[0.0, 1.0, 2.0, 3.0], 0.0, 3.0, 4);
        assert_eq!(w, vec![-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0]);
    }
}
