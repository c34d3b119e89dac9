//! Windowed heart rate, SpO2 and respiratory rate from multi-channel PPG.

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod head;

pub use head::{stft_features, train_vitals_head, HeadConfig, TrainedHead, VitalTarget, VitalsHead, MIN_WINDOWS};

use crate::exec::Exec;
use crate::peaks::{ppg_fiducials, TermaParams};
use crate::signal::{SignalError, SignalTrace, WindowSpec};
use crate::spectral::{spectral_peak, SpectralError};
use crate::wavelet::{WaveletError, WaveletPlan};

#[derive(Debug, Error)]
pub enum VitalsError {
    #[error("no dominant spectral peak in {lo}-{hi} Hz")]
    NoDominantPeak { lo: f64, hi: f64 },
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("channel {0} has non-positive mean")]
    NonPositiveDc(String),
    #[error("window of {got:.3} s is shorter than {min} s")]
    TooShort { got: f64, min: f64 },
    #[error("too few beats for amplitude surrogate")]
    NoBeats,
    #[error("length mismatch: {0} estimates vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} labelled windows, got {got}")]
    TooFewWindows { got: usize, need: usize },
    #[error("{0}")]
    Spectral(#[from] SpectralError),
    #[error("{0}")]
    Wavelet(#[from] WaveletError),
    #[error("{0}")]
    Signal(#[from] SignalError),
    #[error("{0}")]
    Nn(#[from] crate::nn::NnError),
    #[error("{0}")]
    ModelIo(#[from] crate::model_io::ModelIoError),
}

/// One window's vitals. Absent values mean "not estimated".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VitalsEstimate {
    pub hr_bpm: Option<f64>,
    pub spo2_pct: Option<f64>,
    pub rr_rpm: Option<f64>,
    pub window_start_s: f64,
    pub window_len_s: f64,
}

/// Linear ratio-of-ratios calibration `SpO2 = a - b R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpO2Calibration {
    pub a: f64,
    pub b: f64,
}

impl Default for SpO2Calibration {
    fn default() -> Self {
        Self { a: 110.0, b: 25.0 }
    }
}

impl SpO2Calibration {
    pub fn spo2_for(&self, ratio: f64) -> f64 {
        (self.a - self.b * ratio).clamp(0.0, 100.0)
    }

    /// Inverse of the unclamped line.
    pub fn ratio_for(&self, spo2: f64) -> f64 {
        (self.a - spo2) / self.b
    }
}

pub const HR_BAND_HZ: (f64, f64) = (0.7, 3.5);
pub const RR_BAND_HZ: (f64, f64) = (0.1, 0.67);
pub const HR_WINDOW_S: f64 = 4.0;
pub const RR_WINDOW_S: f64 = 32.0;
/// Uniform rate of the amplitude-modulation series.
pub const AM_RATE_HZ: f64 = 4.0;
/// RR estimates whose chosen spectral peak falls below this prominence are
/// flagged.
pub const RR_MIN_PROMINENCE: f64 = 4.0;
/// Modulation depth floors relative to the pulse RMS.
pub const RR_MIN_AM_DEPTH: f64 = 0.03;
pub const RR_MIN_BASELINE_DEPTH: f64 = 0.15;
/// Spectral and beat-count HR further apart than this are flagged.
pub const HR_DISAGREEMENT_BPM: f64 = 10.0;

fn check_len(n: usize, rate_hz: f64, min_s: f64) -> Result<(), VitalsError> {
    let got = n as f64 / rate_hz;
    if got + 1e-9 < min_s {
        return Err(VitalsError::TooShort { got, min: min_s });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrEstimate {
    pub bpm: f64,
    /// Rate from the TERMA beat intervals, when at least two beats were found.
    pub beat_bpm: Option<f64>,
    pub disagrees: bool,
}

/// Spectral pulse rate of one detrended channel, cross-checked against the
/// TERMA beat intervals.
pub fn estimate_hr(window: &[f64], rate_hz: f64) -> Result<HrEstimate, VitalsError> {
    check_len(window.len(), rate_hz, HR_WINDOW_S)?;
    let (lo, hi) = HR_BAND_HZ;
    let peak = spectral_peak(window, rate_hz, lo, hi)?;
    if !(peak.magnitude > 1e-12 * window.iter().map(|v| v.abs()).fold(1.0, f64::max)) {
        return Err(VitalsError::NoDominantPeak { lo, hi });
    }
    let bpm = 60.0 * peak.freq_hz;
    let beat_bpm = match crate::peaks::terma_detect(window, rate_hz, &TermaParams::ppg()) {
        Ok(p) if p.len() >= 2 => {
            let span = (p[p.len() - 1] - p[0]) as f64 / rate_hz;
            Some(60.0 * (p.len() - 1) as f64 / span)
        }
        _ => None,
    };
    let disagrees = beat_bpm.is_some_and(|b| (b - bpm).abs() > HR_DISAGREEMENT_BPM);
    Ok(HrEstimate { bpm, beat_bpm, disagrees })
}

fn ac_dc(raw: &[f64], rate_hz: f64, label: &str) -> Result<f64, VitalsError> {
    let dc = raw.iter().sum::<f64>() / raw.len() as f64;
    if !(dc > 0.0) {
        return Err(VitalsError::NonPositiveDc(label.into()));
    }
    let ac = WaveletPlan::detrend(rate_hz).apply(raw)?;
    let rms = (ac.iter().map(|v| v * v).sum::<f64>() / ac.len() as f64).sqrt();
    Ok(rms / dc)
}

/// Ratio of ratios between the red and green channels of a raw window.
pub fn ratio_of_ratios(window: &SignalTrace) -> Result<f64, VitalsError> {
    check_len(window.n_samples(), window.sample_rate_hz(), HR_WINDOW_S)?;
    let rate = window.sample_rate_hz();
    let get = |l: &str| {
        window
            .channel_by_label(l)
            .ok_or_else(|| VitalsError::MissingChannel(l.into()))
    };
    let red = get("red")?;
    let green = get("green")?;
    Ok(ac_dc(red, rate, "red")? / ac_dc(green, rate, "green")?)
}

pub fn estimate_spo2(window: &SignalTrace, cal: &SpO2Calibration) -> Result<f64, VitalsError> {
    Ok(cal.spo2_for(ratio_of_ratios(window)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RrSurrogate {
    Baseline,
    AmplitudeModulation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrEstimate {
    pub rpm: f64,
    pub surrogate: RrSurrogate,
    pub prominence: f64,
    pub low_confidence: bool,
}

/// Per-beat pulse RMS resampled to a uniform [`AM_RATE_HZ`] grid. The pulse
/// is isolated with the shift-invariant TERMA bandpass rather than the
/// decimated wavelet, whose beat-position dependence would alias into the
/// respiratory band.
fn am_series(window: &[f64], rate_hz: f64) -> Result<Vec<f64>, VitalsError> {
    let p = TermaParams::ppg();
    let pulse = crate::filter::bandpass_zero_phase(window, p.bandpass_lo_hz, p.bandpass_hi_hz, rate_hz);
    let set = ppg_fiducials(&pulse, rate_hz, &p).map_err(|_| VitalsError::NoBeats)?;
    let bounds = &set.onsets;
    if bounds.len() < 5 {
        return Err(VitalsError::NoBeats);
    }
    let mut times = Vec::with_capacity(bounds.len() - 1);
    let mut amps = Vec::with_capacity(bounds.len() - 1);
    for w in bounds.windows(2) {
        let seg = &pulse[w[0]..w[1]];
        amps.push((seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt());
        times.push(0.5 * (w[0] + w[1]) as f64 / rate_hz);
    }
    let n = ((times[times.len() - 1] - times[0]) * AM_RATE_HZ).floor() as usize + 1;
    let mut j = 0;
    Ok((0..n)
        .map(|i| {
            let t = times[0] + i as f64 / AM_RATE_HZ;
            while j + 2 < times.len() && times[j + 1] <= t {
                j += 1;
            }
            let f = ((t - times[j]) / (times[j + 1] - times[j])).clamp(0.0, 1.0);
            amps[j] + f * (amps[j + 1] - amps[j])
        })
        .collect())
}

/// Sinusoid amplitude behind a Hann-windowed spectral peak of `n` samples.
fn peak_amplitude(magnitude: f64, n: usize) -> f64 {
    4.0 * magnitude / n as f64
}

/// Respiratory rate from the stronger (by prominence) of the baseline and
/// amplitude surrogates. `window` is a raw or denoised single channel.
///
/// The estimate is flagged when neither surrogate carries a modulation
/// deeper than its floor, relative to the pulse RMS, or when the chosen
/// peak is not prominent.
pub fn estimate_rr(window: &[f64], rate_hz: f64) -> Result<RrEstimate, VitalsError> {
    check_len(window.len(), rate_hz, RR_WINDOW_S)?;
    let (lo, hi) = RR_BAND_HZ;
    let baseline = WaveletPlan::baseline(rate_hz).apply(window)?;
    let base_peak = spectral_peak(&baseline, rate_hz, lo, hi)?;
    let base_amp = peak_amplitude(base_peak.magnitude, window.len());
    let am = match am_series(window, rate_hz) {
        Ok(am) => Some((spectral_peak(&am, AM_RATE_HZ, lo, hi)?, am)),
        Err(VitalsError::NoBeats) => None,
        Err(e) => return Err(e),
    };
    let Some((am_peak, series)) = am else {
        return Ok(RrEstimate {
            rpm: 60.0 * base_peak.freq_hz,
            surrogate: RrSurrogate::Baseline,
            prominence: base_peak.prominence,
            low_confidence: true,
        });
    };
    let pulse_rms = series.iter().sum::<f64>() / series.len() as f64;
    let am_depth = peak_amplitude(am_peak.magnitude, series.len()) / pulse_rms;
    let base_depth = base_amp / pulse_rms;
    let (peak, surrogate) = if am_peak.prominence > base_peak.prominence {
        (am_peak, RrSurrogate::AmplitudeModulation)
    } else {
        (base_peak, RrSurrogate::Baseline)
    };
    let modulated = am_depth >= RR_MIN_AM_DEPTH || base_depth >= RR_MIN_BASELINE_DEPTH;
    Ok(RrEstimate {
        rpm: 60.0 * peak.freq_hz,
        surrogate,
        prominence: peak.prominence,
        low_confidence: !modulated || peak.prominence < RR_MIN_PROMINENCE,
    })
}

/// Mean and population standard deviation of absolute error.
pub fn evaluate_vitals(estimates: &[f64], labels: &[f64]) -> Result<(f64, f64), VitalsError> {
    if estimates.len() != labels.len() {
        return Err(VitalsError::LengthMismatch(estimates.len(), labels.len()));
    }
    if estimates.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = estimates.len() as f64;
    let ae: Vec<f64> = estimates.iter().zip(labels).map(|(e, l)| (e - l).abs()).collect();
    let mu = ae.iter().sum::<f64>() / n;
    let var = ae.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VitalsFlags {
    pub hr_disagrees: bool,
    pub rr_low_confidence: bool,
}

impl VitalsFlags {
    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if self.hr_disagrees {
            parts.push("hr_beat_mismatch");
        }
        if self.rr_low_confidence {
            parts.push("rr_low_prominence");
        }
        parts.join("|")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitalsRow {
    pub estimate: VitalsEstimate,
    pub flags: VitalsFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitalsConfig {
    pub hr_window: WindowSpec,
    pub rr_window: WindowSpec,
    pub hr_channel: String,
    pub calibration: SpO2Calibration,
}

impl Default for VitalsConfig {
    fn default() -> Self {
        Self {
            hr_window: WindowSpec::new(HR_WINDOW_S, 1.0).expect("valid"),
            rr_window: WindowSpec::new(RR_WINDOW_S, 1.0).expect("valid"),
            hr_channel: "green".into(),
            calibration: SpO2Calibration::default(),
        }
    }
}

/// HR and SpO2 per short window; RR from the long window sharing the short
/// window's centre, when one exists. Windows run in parallel per `exec`.
pub fn estimate_series(trace: &SignalTrace, cfg: &VitalsConfig, exec: Exec) -> Result<Vec<VitalsRow>, VitalsError> {
    let rate = trace.sample_rate_hz();
    let ch = trace
        .channel_index(&cfg.hr_channel)
        .ok_or_else(|| VitalsError::MissingChannel(cfg.hr_channel.clone()))?;
    let detrended = WaveletPlan::detrend(rate).apply(trace.channel(ch))?;
    let denoised = WaveletPlan::denoise(rate).apply(trace.channel(ch))?;
    let hr_len = cfg.hr_window.len_samples(rate);
    let rr_len = cfg.rr_window.len_samples(rate);
    let hr_starts = cfg.hr_window.starts(trace.n_samples(), rate);
    let rr_starts = cfg.rr_window.starts(trace.n_samples(), rate);
    let has_rgb = trace.channel_index("red").is_some() && trace.channel_index("green").is_some();

    exec.try_map(&hr_starts, |&s| {
        let hr = estimate_hr(&detrended[s..s + hr_len], rate)?;
        let spo2 = if has_rgb {
            Some(estimate_spo2(&trace.slice(s, hr_len)?, &cfg.calibration)?)
        } else {
            None
        };
        let centre = s + hr_len / 2;
        let rr_start = rr_starts
            .iter()
            .copied()
            .find(|r| (r + rr_len / 2).abs_diff(centre) * 2 <= (cfg.rr_window.stride_s * rate).round() as usize);
        let rr = rr_start
            .map(|r| estimate_rr(&denoised[r..r + rr_len], rate))
            .transpose()?;
        Ok(VitalsRow {
            estimate: VitalsEstimate {
                hr_bpm: Some(hr.bpm),
                spo2_pct: spo2,
                rr_rpm: rr.map(|r| r.rpm),
                window_start_s: trace.time_at(s),
                window_len_s: cfg.hr_window.length_s,
            },
            flags: VitalsFlags {
                hr_disagrees: hr.disagrees,
                rr_low_confidence: rr.is_some_and(|r| r.low_confidence),
            },
        })
    })
}
