//! Deterministic synthetic PPG/ECG with closed-form ground truth.
//!
//! ECG beats are sums of five Gaussian bumps (P, Q, R, S, T) at fixed
//! offsets from the R time. PPG beats are an asymmetric systolic Gaussian
//! plus a diastolic Gaussian, delayed from R by a fixed lag. Respiration
//! enters as a baseline sinusoid and as per-beat amplitude modulation.
//! Red/green AC ratios are set from the inverse ratio-of-ratios calibration
//! so that SpO2 estimation recovers the configured value.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{LabelSeries, SignalTrace};
use crate::vitals::SpO2Calibration;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HrProfile {
    Constant(f64),
    /// Linear ramp from start to end bpm over the record.
    Ramp(f64, f64),
}

impl HrProfile {
    pub fn at(&self, t: f64, duration: f64) -> f64 {
        match *self {
            HrProfile::Constant(h) => h,
            HrProfile::Ramp(a, b) => a + (b - a) * (t / duration).clamp(0.0, 1.0),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            HrProfile::Constant(h) => (h, h),
            HrProfile::Ramp(a, b) => (a.min(b), a.max(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub hr: HrProfile,
    pub rr_rpm: f64,
    pub rr_baseline_gain: f64,
    pub rr_am_gain: f64,
    pub spo2_pct: f64,
    pub calibration: SpO2Calibration,
    /// White Gaussian noise per channel relative to that channel's AC power.
    pub snr_db: Option<f64>,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub seed: u64,
    pub ppg_ecg_lag_s: f64,
    /// Per-beat +-2% jitter of every bump width.
    pub width_jitter: bool,
    /// Strength of a per-beat latent that modulates PPG and ECG morphology,
    /// linearly on the PPG side and quadratically on the ECG side. 0 = off.
    pub amp_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            hr: HrProfile::Constant(75.0),
            rr_rpm: 15.0,
            rr_baseline_gain: 0.3,
            rr_am_gain: 0.1,
            spo2_pct: 97.5,
            calibration: SpO2Calibration::default(),
            snr_db: None,
            duration_s: 60.0,
            rate_hz: 125.0,
            seed: 0,
            ppg_ecg_lag_s: 0.25,
            width_jitter: false,
            amp_jitter: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let (lo, hi) = self.hr.bounds();
        if !(30.0..=220.0).contains(&lo) || !(30.0..=220.0).contains(&hi) {
            return bad(format!("heart rate {lo}..{hi} outside 30..220 bpm"));
        }
        if !(4.0..=40.0).contains(&self.rr_rpm) {
            return bad(format!("respiratory rate {} outside 4..40 rpm", self.rr_rpm));
        }
        if !(self.rr_baseline_gain >= 0.0 && self.rr_am_gain >= 0.0 && self.rr_am_gain < 1.0) {
            return bad("modulation gains must be >= 0 (AM gain < 1)".into());
        }
        if !(0.0..=100.0).contains(&self.spo2_pct) {
            return bad(format!("spo2 {} outside 0..100", self.spo2_pct));
        }
        let ratio = self.calibration.ratio_for(self.spo2_pct);
        if !(ratio > 0.0 && ratio * GREEN.ac < 0.5) {
            return bad(format!("spo2 {} implies unusable ratio {ratio}", self.spo2_pct));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration must be positive".into());
        }
        if !(self.rate_hz.is_finite() && self.rate_hz >= 10.0) {
            return bad("rate must be >= 10 Hz".into());
        }
        if !(0.0..=1.0).contains(&self.ppg_ecg_lag_s) {
            return bad("lag must be in 0..1 s".into());
        }
        if !(0.0..=0.5).contains(&self.amp_jitter) {
            return bad("amp_jitter must be in 0..0.5".into());
        }
        Ok(())
    }
}

/// One Gaussian bump of the ECG template: offset from R (s), amplitude,
/// width (s).
#[derive(Debug, Clone, Copy)]
struct Bump {
    offset: f64,
    amp: f64,
    sigma: f64,
}

const P_WAVE: Bump = Bump { offset: -0.16, amp: 0.15, sigma: 0.022 };
const Q_WAVE: Bump = Bump { offset: -0.035, amp: -0.12, sigma: 0.010 };
const R_WAVE: Bump = Bump { offset: 0.0, amp: 1.0, sigma: 0.010 };
const S_WAVE: Bump = Bump { offset: 0.035, amp: -0.22, sigma: 0.010 };
const T_WAVE: Bump = Bump { offset: 0.24, amp: 0.30, sigma: 0.040 };

// PPG pulse shape, times relative to the systolic peak.
const SYS_RISE: f64 = 0.07;
const SYS_FALL: f64 = 0.14;
const DIA_OFFSET: f64 = 0.28;
const DIA_AMP: f64 = 0.35;
const DIA_SIGMA: f64 = 0.09;

struct ChannelLevel {
    dc: f64,
    ac: f64,
}

const GREEN: ChannelLevel = ChannelLevel { dc: 0.5, ac: 0.04 };
const RED_DC: f64 = 0.6;
const BLUE: ChannelLevel = ChannelLevel { dc: 0.3, ac: 0.01 };

/// Per-beat morphology after jitter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct BeatShape {
    width: f64,
    latent: f64,
    am: f64,
}

/// Everything the generator knows about a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub r_times_s: Vec<f64>,
    pub p_times_s: Vec<f64>,
    pub q_times_s: Vec<f64>,
    pub s_times_s: Vec<f64>,
    pub t_times_s: Vec<f64>,
    pub sys_times_s: Vec<f64>,
    /// Pulse foot between consecutive systolic peaks (one fewer than peaks).
    pub onset_times_s: Vec<f64>,
    /// Per-beat latent driving morphology jitter.
    pub latents: Vec<f64>,
    pub label_times_s: Vec<f64>,
    pub hr_bpm: Vec<f64>,
    pub spo2_pct: Vec<f64>,
    pub rr_rpm: Vec<f64>,
    /// Ratio of ratios implied by the configured SpO2.
    pub ratio_of_ratios: f64,
}

impl SynthTruth {
    pub fn labels(&self) -> LabelSeries {
        LabelSeries::new(
            self.label_times_s.clone(),
            self.hr_bpm.iter().map(|v| Some(*v)).collect(),
            self.spo2_pct.iter().map(|v| Some(*v)).collect(),
            self.rr_rpm.iter().map(|v| Some(*v)).collect(),
        )
        .expect("generator labels are valid")
    }

    /// Nearest sample index of each time at `rate_hz`.
    pub fn indices(times: &[f64], rate_hz: f64) -> Vec<usize> {
        times.iter().map(|t| (t * rate_hz).round() as usize).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthRecord {
    /// Channels `red`, `green`, `blue`.
    pub ppg: SignalTrace,
    /// Channel `ecg`.
    pub ecg: SignalTrace,
    pub truth: SynthTruth,
}

/// Beat times from the integrated instantaneous heart rate, first beat at
/// half a period.
fn beat_times(hr: HrProfile, duration: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0.. {
        let phase = k as f64 + 0.5;
        let t = match hr {
            HrProfile::Constant(h) => 60.0 * phase / h,
            HrProfile::Ramp(a, b) if a == b => 60.0 * phase / a,
            HrProfile::Ramp(a, b) => {
                let s = (b - a) / duration;
                let disc = a * a + 2.0 * s * 60.0 * phase;
                if disc < 0.0 {
                    break;
                }
                (-a + disc.sqrt()) / s
            }
        };
        if t >= duration {
            break;
        }
        out.push(t);
    }
    out
}

fn gauss(t: f64, sigma: f64) -> f64 {
    (-0.5 * (t / sigma) * (t / sigma)).exp()
}

fn ecg_bumps(shape: &BeatShape, amp_jitter: f64) -> [Bump; 5] {
    let u = shape.latent;
    let w = shape.width;
    let scale = |b: Bump, amp_mul: f64| Bump {
        offset: b.offset,
        amp: b.amp * amp_mul,
        sigma: b.sigma * w,
    };
    [
        scale(P_WAVE, 1.0 + amp_jitter * (3.0 * u * u - 1.0)),
        scale(Q_WAVE, 1.0 + 2.0 * amp_jitter * u * u),
        scale(R_WAVE, 1.0),
        scale(S_WAVE, 1.0 + 2.0 * amp_jitter * (1.0 - u * u)),
        scale(T_WAVE, 1.0 + 1.5 * amp_jitter * (3.0 * u * u - 1.0)),
    ]
}

fn ecg_value(t: f64, r_times: &[f64], shapes: &[BeatShape], amp_jitter: f64) -> f64 {
    let mut v = 0.0;
    // beats within +-1 s contribute
    let start = r_times.partition_point(|r| *r < t - 1.0);
    for (k, r) in r_times.iter().enumerate().skip(start) {
        if *r > t + 1.0 {
            break;
        }
        for b in ecg_bumps(&shapes[k], amp_jitter) {
            v += b.amp * gauss(t - r - b.offset, b.sigma);
        }
    }
    v
}

fn ppg_pulse(t: f64, shape: &BeatShape, amp_jitter: f64) -> f64 {
    let w = shape.width;
    let u = shape.latent;
    let sys = if t < 0.0 {
        gauss(t, SYS_RISE * w * (1.0 + 0.5 * amp_jitter * u))
    } else {
        gauss(t, SYS_FALL * w)
    };
    let dia = DIA_AMP * (1.0 + amp_jitter * u) * gauss(t - DIA_OFFSET, DIA_SIGMA * w);
    shape.am * (sys + dia)
}

fn ppg_value(t: f64, sys_times: &[f64], shapes: &[BeatShape], amp_jitter: f64) -> f64 {
    let start = sys_times.partition_point(|s| *s < t - 1.5);
    let mut v = 0.0;
    for (k, s) in sys_times.iter().enumerate().skip(start) {
        if *s > t + 1.0 {
            break;
        }
        v += ppg_pulse(t - s, &shapes[k], amp_jitter);
    }
    v
}

/// Extremum of `f` on `[lo, hi]` by dense evaluation at 0.1 ms steps.
fn refine<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, maximize: bool) -> f64 {
    let step = 1e-4;
    let n = ((hi - lo) / step).ceil() as usize;
    let mut best_t = lo;
    let mut best = f(lo);
    for i in 1..=n {
        let t = (lo + i as f64 * step).min(hi);
        let v = f(t);
        if (maximize && v > best) || (!maximize && v < best) {
            best = v;
            best_t = t;
        }
    }
    best_t
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthRecord, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let duration = cfg.duration_s;
    let rate = cfg.rate_hz;
    let n = (duration * rate).round() as usize;
    let f_resp = cfg.rr_rpm / 60.0;
    let resp_phase = rng.random_range(0.0..2.0 * PI);

    let r_times = beat_times(cfg.hr, duration);
    let shapes: Vec<BeatShape> = r_times
        .iter()
        .map(|r| {
            let width = if cfg.width_jitter {
                1.0 + rng.random_range(-0.02..=0.02)
            } else {
                1.0
            };
            let latent = if cfg.amp_jitter > 0.0 {
                rng.random_range(-1.0..=1.0)
            } else {
                0.0
            };
            let sys_t = r + cfg.ppg_ecg_lag_s;
            let am = 1.0 + cfg.rr_am_gain * (2.0 * PI * f_resp * sys_t + resp_phase).sin();
            BeatShape { width, latent, am }
        })
        .collect();
    let sys_all: Vec<f64> = r_times.iter().map(|r| r + cfg.ppg_ecg_lag_s).collect();
    let aj = cfg.amp_jitter;

    let ecg_at = |t: f64| ecg_value(t, &r_times, &shapes, aj);
    let pulse_at = |t: f64| ppg_value(t, &sys_all, &shapes, aj);
    let baseline_at = |t: f64| cfg.rr_baseline_gain * (2.0 * PI * f_resp * t + resp_phase).sin();

    let mut ecg: Vec<f64> = (0..n).map(|i| ecg_at(i as f64 / rate)).collect();
    let shape: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            pulse_at(t) + baseline_at(t)
        })
        .collect();

    let ratio = cfg.calibration.ratio_for(cfg.spo2_pct);
    let red_ac = ratio * GREEN.ac;
    let levels = [(RED_DC, red_ac), (GREEN.dc, GREEN.ac), (BLUE.dc, BLUE.ac)];
    let mut ppg: Vec<Vec<f64>> = levels
        .iter()
        .map(|(dc, ac)| shape.iter().map(|s| dc * (1.0 + ac * s)).collect())
        .collect();

    if let Some(snr) = cfg.snr_db {
        let gain = 10f64.powf(-snr / 10.0);
        let add_noise = |x: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let power = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
            let sigma = (power * gain).sqrt();
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                for v in x.iter_mut() {
                    *v += normal.sample(rng);
                }
            }
        };
        add_noise(&mut ecg, &mut rng);
        for ch in ppg.iter_mut() {
            add_noise(ch, &mut rng);
        }
    }

    // fiducial truth from the noise-free waveform
    let fid = |b: Bump, r: f64, maximize: bool| {
        let c = r + b.offset;
        refine(ecg_at, c - 0.02, c + 0.02, maximize)
    };
    let r_refined: Vec<f64> = r_times.iter().map(|r| fid(R_WAVE, *r, true)).collect();
    let p_times = r_times.iter().map(|r| fid(P_WAVE, *r, true)).collect();
    let q_times = r_times.iter().map(|r| fid(Q_WAVE, *r, false)).collect();
    let s_times = r_times.iter().map(|r| fid(S_WAVE, *r, false)).collect();
    let t_times = r_times.iter().map(|r| fid(T_WAVE, *r, true)).collect();
    let sys_times: Vec<f64> = sys_all
        .iter()
        .map(|s| refine(pulse_at, s - 0.05, s + 0.05, true))
        .collect();
    let onset_times = sys_times
        .windows(2)
        .map(|w| refine(pulse_at, w[0], w[1], false))
        .collect();

    let n_labels = duration.ceil() as usize;
    let label_times_s: Vec<f64> = (0..n_labels).map(|i| i as f64).collect();
    let hr_bpm = label_times_s.iter().map(|t| cfg.hr.at(*t, duration)).collect();

    let ppg = SignalTrace::new(
        ppg,
        rate,
        vec!["red".into(), "green".into(), "blue".into()],
        0.0,
    )
    .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let ecg = SignalTrace::mono(ecg, rate, "ecg").map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    Ok(SynthRecord {
        ppg,
        ecg,
        truth: SynthTruth {
            r_times_s: r_refined,
            p_times_s: p_times,
            q_times_s: q_times,
            s_times_s: s_times,
            t_times_s: t_times,
            sys_times_s: sys_times,
            onset_times_s: onset_times,
            latents: shapes.iter().map(|s| s.latent).collect(),
            spo2_pct: vec![cfg.spo2_pct; n_labels],
            rr_rpm: vec![cfg.rr_rpm; n_labels],
            label_times_s,
            hr_bpm,
            ratio_of_ratios: ratio,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_bpm_for_sixty_seconds() {
        let rec = generate(&SynthConfig {
            hr: HrProfile::Constant(60.0),
            ..Default::default()
        })
        .unwrap();
        assert!((59..=61).contains(&rec.truth.r_times_s.len()));
        assert_eq!(rec.ppg.n_samples(), 7500);
        assert_eq!(rec.truth.onset_times_s.len(), rec.truth.sys_times_s.len() - 1);
    }

    #[test]
    fn beat_count_matches_integrated_rate() {
        for (hr, dur) in [
            (HrProfile::Constant(75.0), 60.0),
            (HrProfile::Ramp(50.0, 120.0), 60.0),
            (HrProfile::Ramp(110.0, 60.0), 37.0),
        ] {
            let rec = generate(&SynthConfig {
                hr,
                duration_s: dur,
                ..Default::default()
            })
            .unwrap();
            let (a, b) = match hr {
                HrProfile::Constant(h) => (h, h),
                HrProfile::Ramp(a, b) => (a, b),
            };
            let beats = (0.5 * (a + b) * dur / 60.0).floor() as i64;
            let got = rec.truth.r_times_s.len() as i64;
            assert!((got - beats).abs() <= 1, "{got} vs {beats}");
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let cfg = SynthConfig {
            snr_db: Some(10.0),
            width_jitter: true,
            amp_jitter: 0.3,
            seed: 42,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.ppg, b.ppg);
        assert_eq!(a.ecg, b.ecg);
        assert_eq!(a.truth, b.truth);
        let c = generate(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.ecg, c.ecg);
    }

    #[test]
    fn channel_ratio_inverts_calibration() {
        let rec = generate(&SynthConfig {
            spo2_pct: 97.5,
            ..Default::default()
        })
        .unwrap();
        assert!((rec.truth.ratio_of_ratios - 0.5).abs() < 1e-12);
        // noise-free channels are affine images of the same shape
        let red = rec.ppg.channel_by_label("red").unwrap();
        let green = rec.ppg.channel_by_label("green").unwrap();
        let ac = |x: &[f64], dc: f64| x.iter().map(|v| v / dc - 1.0).collect::<Vec<_>>();
        let r = ac(red, RED_DC);
        let g = ac(green, GREEN.dc);
        for (a, b) in r.iter().zip(&g) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn r_truth_is_on_the_waveform_maximum() {
        let rec = generate(&SynthConfig::default()).unwrap();
        let ecg = rec.ecg.channel(0);
        for r in &rec.truth.r_times_s {
            let i = (r * 125.0).round() as usize;
            if i == 0 || i + 1 >= ecg.len() {
                continue;
            }
            assert!(ecg[i] >= ecg[i - 1] && ecg[i] >= ecg[i + 1]);
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { duration_s: 0.0, ..Default::default() },
            SynthConfig { hr: HrProfile::Constant(10.0), ..Default::default() },
            SynthConfig { spo2_pct: 120.0, ..Default::default() },
            SynthConfig { rr_rpm: 0.5, ..Default::default() },
        ] {
            assert!(matches!(generate(&cfg), Err(SynthError::InvalidConfig(_))));
        }
    }
}
