//! TERMA event detection and ECG/PPG fiducial points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{bandpass_zero_phase, moving_average};

#[derive(Debug, Error, PartialEq)]
pub enum PeakError {
    #[error("signal of {len} samples is shorter than two cycle windows ({min})")]
    TooShort { len: usize, min: usize },
    #[error("no peaks found")]
    NoPeaksFound,
    #[error("no R peaks given")]
    EmptyRPeaks,
    #[error("no systolic peaks given")]
    EmptyPeaks,
    #[error("invalid TERMA parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermaParams {
    pub w_event_s: f64,
    pub w_cycle_s: f64,
    pub beta: f64,
    pub bandpass_lo_hz: f64,
    pub bandpass_hi_hz: f64,
    /// Zero the negative half of the filtered signal before squaring.
    pub clip_negative: bool,
}

impl TermaParams {
    pub fn ecg() -> Self {
        Self {
            w_event_s: 0.097,
            w_cycle_s: 0.611,
            beta: 0.08,
            bandpass_lo_hz: 8.0,
            bandpass_hi_hz: 20.0,
            clip_negative: false,
        }
    }

    pub fn ppg() -> Self {
        Self {
            w_event_s: 0.111,
            w_cycle_s: 0.667,
            beta: 0.02,
            bandpass_lo_hz: 0.5,
            bandpass_hi_hz: 8.0,
            clip_negative: true,
        }
    }

    pub fn validate(&self, rate_hz: f64) -> Result<(), PeakError> {
        let bad = |m: &str| Err(PeakError::InvalidParams(m.into()));
        if !(self.w_event_s > 0.0 && self.w_event_s < self.w_cycle_s) {
            return bad("need 0 < w_event < w_cycle");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be >= 0");
        }
        if !(self.bandpass_lo_hz > 0.0 && self.bandpass_lo_hz < self.bandpass_hi_hz) {
            return bad("need 0 < bandpass_lo < bandpass_hi");
        }
        if self.bandpass_hi_hz >= rate_hz / 2.0 {
            return bad("bandpass_hi must be below Nyquist");
        }
        Ok(())
    }
}

fn odd_width(seconds: f64, rate_hz: f64) -> usize {
    let w = (seconds * rate_hz).round().max(1.0) as usize;
    w | 1
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

fn argmin(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v < x[best] {
            best = i;
        }
    }
    best
}

/// Two-moving-average event detector. Returns one peak index per block of
/// interest.
pub fn terma_detect(signal: &[f64], rate_hz: f64, params: &TermaParams) -> Result<Vec<usize>, PeakError> {
    params.validate(rate_hz)?;
    let min = (2.0 * params.w_cycle_s * rate_hz).ceil() as usize;
    if signal.len() < min {
        return Err(PeakError::TooShort { len: signal.len(), min });
    }
    let mut y = bandpass_zero_phase(signal, params.bandpass_lo_hz, params.bandpass_hi_hz, rate_hz);
    if params.clip_negative {
        for v in y.iter_mut() {
            *v = v.max(0.0);
        }
    }
    let z: Vec<f64> = y.iter().map(|v| v * v).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(PeakError::NoPeaksFound);
    }
    let w_event = odd_width(params.w_event_s, rate_hz);
    let ma_event = moving_average(&z, w_event);
    let ma_cycle = moving_average(&z, odd_width(params.w_cycle_s, rate_hz));
    let offset = params.beta * mean;

    let mut peaks = Vec::new();
    let mut start = None;
    for i in 0..=z.len() {
        let inside = i < z.len() && ma_event[i] > ma_cycle[i] + offset;
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= w_event {
                    peaks.push(s + argmax(&signal[s..i]));
                }
                start = None;
            }
            _ => {}
        }
    }
    if peaks.is_empty() {
        return Err(PeakError::NoPeaksFound);
    }
    Ok(peaks)
}

/// Per-beat fiducials. Optional entries are aligned with `peaks`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FiducialSet {
    /// R peaks for ECG, systolic peaks for PPG.
    pub peaks: Vec<usize>,
    /// PPG pulse onsets (one fewer than peaks).
    pub onsets: Vec<usize>,
    pub p_peaks: Vec<Option<usize>>,
    pub q_valleys: Vec<Option<usize>>,
    pub s_valleys: Vec<Option<usize>>,
    pub t_peaks: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FiducialKind {
    P,
    Q,
    R,
    S,
    T,
    Sys,
    Onset,
}

impl FiducialKind {
    pub const ECG: [FiducialKind; 5] = [Self::P, Self::Q, Self::R, Self::S, Self::T];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::P => "P",
            Self::Q => "Q",
            Self::R => "R",
            Self::S => "S",
            Self::T => "T",
            Self::Sys => "SYS",
            Self::Onset => "ONSET",
        }
    }
}

impl FiducialSet {
    /// Fiducial of `kind` for beat `i`, if located.
    pub fn get(&self, kind: FiducialKind, i: usize) -> Option<usize> {
        match kind {
            FiducialKind::R | FiducialKind::Sys => self.peaks.get(i).copied(),
            FiducialKind::P => self.p_peaks.get(i).copied().flatten(),
            FiducialKind::Q => self.q_valleys.get(i).copied().flatten(),
            FiducialKind::S => self.s_valleys.get(i).copied().flatten(),
            FiducialKind::T => self.t_peaks.get(i).copied().flatten(),
            FiducialKind::Onset => i.checked_sub(1).and_then(|j| self.onsets.get(j).copied()),
        }
    }

    /// All located points as `(index, kind)`, sorted by index.
    pub fn points(&self, peak_kind: FiducialKind) -> Vec<(usize, FiducialKind)> {
        let mut out: Vec<(usize, FiducialKind)> = self.peaks.iter().map(|i| (*i, peak_kind)).collect();
        out.extend(self.onsets.iter().map(|i| (*i, FiducialKind::Onset)));
        for (list, kind) in [
            (&self.p_peaks, FiducialKind::P),
            (&self.q_valleys, FiducialKind::Q),
            (&self.s_valleys, FiducialKind::S),
            (&self.t_peaks, FiducialKind::T),
        ] {
            out.extend(list.iter().flatten().map(|i| (*i, kind)));
        }
        out.sort();
        out
    }
}

/// Search range as a half-open index interval, clipped to `[lo, hi)`.
fn clipped(lo: f64, hi: f64, min: usize, max: usize) -> Option<(usize, usize)> {
    let a = lo.ceil().max(min as f64);
    let b = hi.ceil().min(max as f64);
    (a < b).then_some((a as usize, b as usize))
}

/// Share of an RR interval after which the next beat's P search begins.
const T_P_SPLIT: f64 = 0.6;

/// P/Q/S/T around each R peak.
pub fn ecg_fiducials(signal: &[f64], rate_hz: f64, r_peaks: &[usize]) -> Result<FiducialSet, PeakError> {
    if r_peaks.is_empty() {
        return Err(PeakError::EmptyRPeaks);
    }
    let ms = |v: f64| v * rate_hz / 1000.0;
    let n = signal.len();
    let find = |range: Option<(usize, usize)>, max: bool| {
        range.map(|(a, b)| a + if max { argmax(&signal[a..b]) } else { argmin(&signal[a..b]) })
    };
    let mut set = FiducialSet {
        peaks: r_peaks.to_vec(),
        ..Default::default()
    };
    for (i, &r) in r_peaks.iter().enumerate() {
        let rf = r as f64;
        // neighbours bound the search so beats never share a point
        let prev = i.checked_sub(1).map(|j| r_peaks[j]);
        let next = r_peaks.get(i + 1).copied();
        let lo_bound = prev.map_or(0, |p| p + 1);
        let hi_bound = next.unwrap_or(n);
        let p_lo = prev.map_or(0.0, |p| p as f64 + T_P_SPLIT * (rf - p as f64));
        let t_hi = next.map_or(n as f64, |q| rf + T_P_SPLIT * (q as f64 - rf));

        let q = find(clipped(rf - ms(50.0), rf, lo_bound, hi_bound), false);
        let s = find(clipped(rf + 1.0, rf + ms(50.0) + 1.0, lo_bound, hi_bound), false);
        let p = find(
            clipped((rf - ms(250.0)).max(p_lo), rf - ms(50.0), lo_bound, hi_bound),
            true,
        );
        let t = find(
            clipped(rf + ms(80.0) + 1.0, (rf + ms(400.0) + 1.0).min(t_hi), lo_bound, hi_bound),
            true,
        );
        set.p_peaks.push(p);
        set.q_valleys.push(q);
        set.s_valleys.push(s);
        set.t_peaks.push(t);
    }
    Ok(set)
}

/// Pulse onset before each systolic peak after the first.
pub fn ppg_onsets(signal: &[f64], sys_peaks: &[usize]) -> Result<Vec<usize>, PeakError> {
    if sys_peaks.is_empty() {
        return Err(PeakError::EmptyPeaks);
    }
    Ok(sys_peaks
        .windows(2)
        .map(|w| w[0] + argmin(&signal[w[0]..w[1]]))
        .collect())
}

/// TERMA systolic peaks plus onsets.
pub fn ppg_fiducials(signal: &[f64], rate_hz: f64, params: &TermaParams) -> Result<FiducialSet, PeakError> {
    let peaks = terma_detect(signal, rate_hz, params)?;
    let onsets = ppg_onsets(signal, &peaks)?;
    Ok(FiducialSet {
        peaks,
        onsets,
        ..Default::default()
    })
}

/// Sensitivity and positive predictivity of `detected` against `truth`
/// with a matching tolerance in samples, plus the worst matched offset.
pub fn match_events(truth: &[usize], detected: &[usize], tol: usize) -> (f64, f64, usize) {
    let mut used = vec![false; detected.len()];
    let mut tp = 0;
    let mut worst = 0;
    for &t in truth {
        let lo = detected.partition_point(|d| *d + tol < t);
        let mut best: Option<usize> = None;
        for (j, &d) in detected.iter().enumerate().skip(lo) {
            if d > t + tol {
                break;
            }
            if !used[j] && best.is_none_or(|b| d.abs_diff(t) < detected[b].abs_diff(t)) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            used[j] = true;
            tp += 1;
            worst = worst.max(detected[j].abs_diff(t));
        }
    }
    let se = if truth.is_empty() { 1.0 } else { tp as f64 / truth.len() as f64 };
    let ppv = if detected.is_empty() { 1.0 } else { tp as f64 / detected.len() as f64 };
    (se, ppv, worst)
}
