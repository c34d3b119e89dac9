use std::path::PathBuf;

use clap::{Args, ValueEnum};
use pulseforge_core::cycles::CycleConfig;
use pulseforge_core::exec::Exec;
use pulseforge_core::p2e::record_pairs;
use pulseforge_core::peaks::{ecg_fiducials, ppg_fiducials, terma_detect, FiducialKind, TermaParams};
use pulseforge_core::signal::{write_labels_csv, write_trace_csv};
use pulseforge_core::spectral::rfft_magnitude;
use pulseforge_core::synth::{generate, HrProfile, SynthConfig};
use pulseforge_core::video::{extract_ppg_file, synthesize_frames, CropSpec};
use pulseforge_core::vitals::SpO2Calibration;
use pulseforge_core::wavelet::WaveletPlan;
use pulseforge_core::SignalTrace;

use crate::error::CliError;
use crate::io::{self, join, read_trace, Out, ECG_FILE, LABELS_FILE, PPG_FILE};
use crate::plot::LinePlot;
use crate::Common;

/// Seconds of signal shown in trace plots.
const PLOT_SPAN_S: f64 = 10.0;

fn head_plot(plot: LinePlot, trace: &SignalTrace, channels: &[&str]) -> LinePlot {
    let n = ((PLOT_SPAN_S * trace.sample_rate_hz()) as usize).min(trace.n_samples());
    let dt = 1.0 / trace.sample_rate_hz();
    channels.iter().fold(plot, |p, name| match trace.channel_by_label(name) {
        Some(x) => p.uniform(name, trace.t0_s(), dt, &x[..n]),
        None => p,
    })
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Heart rate in bpm (start of the ramp when --hr-end is set)
    #[arg(long, default_value_t = 75.0)]
    pub hr: f64,
    /// End heart rate of a linear ramp [default: none, constant rate]
    #[arg(long)]
    pub hr_end: Option<f64>,
    /// Respiratory rate in breaths per minute
    #[arg(long, default_value_t = 15.0)]
    pub rr: f64,
    /// Relative depth of the respiratory baseline wander
    #[arg(long, default_value_t = 0.3)]
    pub rr_baseline_gain: f64,
    /// Relative depth of the respiratory amplitude modulation
    #[arg(long, default_value_t = 0.1)]
    pub rr_am_gain: f64,
    /// Oxygen saturation in percent
    #[arg(long, default_value_t = 97.5)]
    pub spo2: f64,
    /// SpO2 calibration intercept a in SpO2 = a - b R
    #[arg(long, default_value_t = 110.0)]
    pub cal_a: f64,
    /// SpO2 calibration slope b in SpO2 = a - b R
    #[arg(long, default_value_t = 25.0)]
    pub cal_b: f64,
    /// White noise SNR in dB [default: none, noise-free]
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Record length in seconds
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Sample rate in Hz
    #[arg(long, default_value_t = 125.0)]
    pub rate: f64,
    /// Delay from R peak to systolic peak in seconds
    #[arg(long, default_value_t = 0.25)]
    pub lag: f64,
    /// Jitter every beat's bump widths by up to 2% [default: off]
    #[arg(long)]
    pub width_jitter: bool,
    /// Strength of the per-beat morphology latent, 0 disables
    #[arg(long, default_value_t = 0.0)]
    pub amp_jitter: f64,
    /// Also write a WIDTHxHEIGHT PFS1 frame stream [default: none]
    #[arg(long, value_name = "WxH")]
    pub video: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

fn parse_size(s: &str) -> Result<(u32, u32), CliError> {
    s.split_once('x')
        .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
        .filter(|(w, h)| *w > 0 && *h > 0)
        .ok_or_else(|| CliError::Usage(format!("--video expects WIDTHxHEIGHT, got `{s}`")))
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let video = a.video.as_deref().map(parse_size).transpose()?;
    let cfg = SynthConfig {
        hr: match a.hr_end {
            Some(end) => HrProfile::Ramp(a.hr, end),
            None => HrProfile::Constant(a.hr),
        },
        rr_rpm: a.rr,
        rr_baseline_gain: a.rr_baseline_gain,
        rr_am_gain: a.rr_am_gain,
        spo2_pct: a.spo2,
        calibration: SpO2Calibration { a: a.cal_a, b: a.cal_b },
        snr_db: a.snr_db,
        duration_s: a.duration,
        rate_hz: a.rate,
        seed: a.common.seed,
        ppg_ecg_lag_s: a.lag,
        width_jitter: a.width_jitter,
        amp_jitter: a.amp_jitter,
    };
    let rec = generate(&cfg)?;
    let out = &a.common.out;
    write_trace_csv(&rec.ppg, out.join(PPG_FILE))?;
    write_trace_csv(&rec.ecg, out.join(ECG_FILE))?;
    write_labels_csv(&rec.truth.labels(), out.join(LABELS_FILE))?;
    io::write_string(&out.join("truth.json"), &serde_json::to_string_pretty(&rec.truth)?)?;
    if let Some((w, h)) = video {
        synthesize_frames(&rec.ppg, w, h, out.join("video.pfs1"))?;
    }
    head_plot(LinePlot::new("Synthetic PPG", "time (s)", "intensity"), &rec.ppg, &["red", "green", "blue"])
        .save(&out.join("ppg.svg"))?;
    head_plot(LinePlot::new("Synthetic ECG", "time (s)", "amplitude"), &rec.ecg, &["ecg"]).save(&out.join("ecg.svg"))?;
    log::info!("{} beats in {} s", rec.truth.r_times_s.len(), a.duration);
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// PFS1 frame stream
    pub input: PathBuf,
    /// Share of each frame axis kept by the centred crop
    #[arg(long, default_value_t = 0.5)]
    pub crop: f64,
    #[command(flatten)]
    pub common: Common,
}

pub fn extract(a: &ExtractArgs) -> Result<(), CliError> {
    if !(a.crop > 0.0 && a.crop <= 1.0) {
        return Err(CliError::Usage(format!("--crop must be in (0, 1], got {}", a.crop)));
    }
    let trace = extract_ppg_file(&a.input, CropSpec { fraction: a.crop })?;
    let out = &a.common.out;
    write_trace_csv(&trace, out.join(PPG_FILE))?;
    head_plot(LinePlot::new("Extracted PPG", "time (s)", "mean intensity"), &trace, &["red", "green", "blue"])
        .save(&out.join("ppg.svg"))?;
    Ok(())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SignalKind {
    /// `ecg` when the trace has an `ecg` column, else `ppg`
    Auto,
    Ppg,
    Ecg,
}

impl SignalKind {
    fn resolve(self, trace: &SignalTrace) -> SignalKind {
        match self {
            SignalKind::Auto if trace.channel_index("ecg").is_some() => SignalKind::Ecg,
            SignalKind::Auto => SignalKind::Ppg,
            k => k,
        }
    }
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Trace CSV
    pub input: PathBuf,
    /// Signal type, selects the wavelet plan
    #[arg(long, value_enum, default_value_t = SignalKind::Auto)]
    pub signal: SignalKind,
    /// Denoise only, keeping the low-frequency baseline [default: off]
    #[arg(long)]
    pub keep_baseline: bool,
    /// Sample rate in Hz [default: from the t column]
    #[arg(long)]
    pub rate: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

pub fn preprocess(a: &PreprocessArgs) -> Result<(), CliError> {
    let trace = read_trace(&a.input, a.rate)?;
    let rate = trace.sample_rate_hz();
    let plan = match (a.signal.resolve(&trace), a.keep_baseline) {
        (_, true) => WaveletPlan::denoise(rate),
        (SignalKind::Ecg, false) => WaveletPlan::ecg_detrend(rate),
        _ => WaveletPlan::detrend(rate),
    };
    let clean = plan.apply_trace(&trace, Exec::auto())?;
    let out = &a.common.out;
    write_trace_csv(&clean, out.join("preprocessed.csv"))?;
    let first = clean.channel_labels()[0].clone();
    let n = ((PLOT_SPAN_S * rate) as usize).min(clean.n_samples());
    LinePlot::new(&format!("Preprocessed {first}"), "time (s)", "amplitude")
        .uniform("raw", trace.t0_s(), 1.0 / rate, &trace.channel(0)[..n])
        .uniform("filtered", clean.t0_s(), 1.0 / rate, &clean.channel(0)[..n])
        .save(&out.join("preprocess.svg"))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct PeaksArgs {
    /// Trace CSV
    pub input: PathBuf,
    /// Signal type: ECG gives R/P/Q/S/T, PPG gives SYS/ONSET
    #[arg(long, value_enum, default_value_t = SignalKind::Auto)]
    pub signal: SignalKind,
    /// Channel to analyse [default: ecg or green, else the first column]
    #[arg(long)]
    pub channel: Option<String>,
    /// Sample rate in Hz [default: from the t column]
    #[arg(long)]
    pub rate: Option<f64>,
    /// TERMA event window in seconds [default: 0.097 ecg, 0.111 ppg]
    #[arg(long)]
    pub w_event: Option<f64>,
    /// TERMA cycle window in seconds [default: 0.611 ecg, 0.667 ppg]
    #[arg(long)]
    pub w_cycle: Option<f64>,
    /// TERMA threshold offset [default: 0.08 ecg, 0.02 ppg]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Bandpass low edge in Hz [default: 8 ecg, 0.5 ppg]
    #[arg(long)]
    pub band_lo: Option<f64>,
    /// Bandpass high edge in Hz [default: 20 ecg, 8 ppg]
    #[arg(long)]
    pub band_hi: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

fn channel_or<'a>(trace: &'a SignalTrace, name: Option<&str>, fallback: &str) -> Result<(String, &'a [f64]), CliError> {
    if let Some(n) = name {
        return trace
            .channel_by_label(n)
            .map(|x| (n.to_string(), x))
            .ok_or_else(|| CliError::Domain(format!("signal: no channel `{n}` in trace")));
    }
    Ok(match trace.channel_by_label(fallback) {
        Some(x) => (fallback.to_string(), x),
        None => (trace.channel_labels()[0].clone(), trace.channel(0)),
    })
}

pub fn peaks(a: &PeaksArgs) -> Result<(), CliError> {
    let trace = read_trace(&a.input, a.rate)?;
    let rate = trace.sample_rate_hz();
    let kind = a.signal.resolve(&trace);
    let (mut params, plan, fallback) = match kind {
        SignalKind::Ecg => (TermaParams::ecg(), WaveletPlan::ecg_detrend(rate), "ecg"),
        _ => (TermaParams::ppg(), WaveletPlan::detrend(rate), "green"),
    };
    params.w_event_s = a.w_event.unwrap_or(params.w_event_s);
    params.w_cycle_s = a.w_cycle.unwrap_or(params.w_cycle_s);
    params.beta = a.beta.unwrap_or(params.beta);
    params.bandpass_lo_hz = a.band_lo.unwrap_or(params.bandpass_lo_hz);
    params.bandpass_hi_hz = a.band_hi.unwrap_or(params.bandpass_hi_hz);

    let (name, raw) = channel_or(&trace, a.channel.as_deref(), fallback)?;
    let x = plan.apply(raw)?;
    let points = match kind {
        SignalKind::Ecg => {
            let r = terma_detect(&x, rate, &params)?;
            ecg_fiducials(&x, rate, &r)?.points(FiducialKind::R)
        }
        _ => ppg_fiducials(&x, rate, &params)?.points(FiducialKind::Sys),
    };

    let out_dir = &a.common.out;
    let mut out = Out::create(&out_dir.join("peaks.csv"))?;
    out.line("index,time_s,kind")?;
    for (i, k) in &points {
        out.line(format!("{i},{},{}", trace.time_at(*i), k.as_str()))?;
    }
    out.finish()?;

    let n = ((PLOT_SPAN_S * rate) as usize).min(x.len());
    let marks = |k: FiducialKind| -> Vec<(f64, f64)> {
        points
            .iter()
            .filter(|(i, kk)| *kk == k && *i < n)
            .map(|(i, _)| (trace.time_at(*i), x[*i]))
            .collect()
    };
    let peak_kind = if kind == SignalKind::Ecg { FiducialKind::R } else { FiducialKind::Sys };
    let mut plot = LinePlot::new(&format!("Fiducials on {name}"), "time (s)", "amplitude").uniform(
        &name,
        trace.t0_s(),
        1.0 / rate,
        &x[..n],
    );
    plot = plot.series(peak_kind.as_str(), marks(peak_kind));
    plot.save(&out_dir.join("peaks.svg"))?;
    log::info!("{} fiducials", points.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Record directory holding ppg.csv and ecg.csv
    pub input: PathBuf,
    /// Samples per normalized cycle
    #[arg(long, default_value_t = 300)]
    pub cycle_len: usize,
    /// PPG channel used for beat detection
    #[arg(long, default_value = "green")]
    pub ppg_channel: String,
    #[command(flatten)]
    pub common: Common,
}

pub fn segment(a: &SegmentArgs) -> Result<(), CliError> {
    let ppg = read_trace(&a.input.join(PPG_FILE), None)?;
    let ecg = read_trace(&a.input.join(ECG_FILE), None)?;
    let cfg = CycleConfig {
        cycle_len: a.cycle_len,
        ppg_channel: Some(a.ppg_channel.clone()),
        ..CycleConfig::default()
    };
    let (report, pairs) = record_pairs(&ppg, &ecg, &cfg, Exec::auto())?;
    let out = &a.common.out;
    io::write_pairs_csv(&pairs, a.cycle_len, &out.join("pairs.csv"))?;
    let drops: Vec<serde_json::Value> = report
        .drops
        .iter()
        .map(|(beat, why)| serde_json::json!({"beat": beat, "reason": why.as_str()}))
        .collect();
    let summary = serde_json::json!({
        "lag_s": report.lag_s,
        "paired": report.paired,
        "dropped": report.dropped,
        "drops": drops,
    });
    io::write_string(&out.join("alignment.json"), &serde_json::to_string_pretty(&summary)?)?;
    if let Some(p) = pairs.first() {
        let u = 1.0 / (a.cycle_len - 1) as f64;
        LinePlot::new("First cycle pair", "cycle phase", "normalized amplitude")
            .uniform("ppg", 0.0, u, &p.ppg)
            .uniform("ecg", 0.0, u, &p.ecg)
            .save(&out.join("cycles.svg"))?;
    }
    log::info!("{} pairs, {} dropped, lag {:.3} s", report.paired, report.dropped, report.lag_s);
    Ok(())
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    /// Trace CSV
    pub input: PathBuf,
    /// Channel [default: green, else the first column]
    #[arg(long)]
    pub channel: Option<String>,
    /// Sample rate in Hz [default: from the t column]
    #[arg(long)]
    pub rate: Option<f64>,
    /// FFT length [default: next power of two of the trace length]
    #[arg(long)]
    pub n_fft: Option<usize>,
    /// Highest frequency written in Hz [default: Nyquist]
    #[arg(long)]
    pub max_hz: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

pub fn spectrum(a: &SpectrumArgs) -> Result<(), CliError> {
    let trace = read_trace(&a.input, a.rate)?;
    let rate = trace.sample_rate_hz();
    let (name, x) = channel_or(&trace, a.channel.as_deref(), "green")?;
    let n_fft = a.n_fft.unwrap_or(x.len().next_power_of_two());
    if n_fft < 2 {
        return Err(CliError::Usage("--n-fft must be at least 2".into()));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let mag = rfft_magnitude(&centred, n_fft);
    let df = rate / n_fft as f64;
    let max_hz = a.max_hz.unwrap_or(rate / 2.0);
    let rows: Vec<(f64, f64)> = mag
        .iter()
        .enumerate()
        .map(|(k, m)| (k as f64 * df, *m))
        .take_while(|(f, _)| *f <= max_hz + 1e-12)
        .collect();
    let out_dir = &a.common.out;
    let mut out = Out::create(&out_dir.join("spectrum.csv"))?;
    out.line("freq_hz,magnitude")?;
    for (f, m) in &rows {
        out.line(join([*f, *m]))?;
    }
    out.finish()?;
    LinePlot::new(&format!("Spectrum of {name}"), "frequency (Hz)", "magnitude")
        .series(&name, rows)
        .save(&out_dir.join("spectrum.svg"))?;
    Ok(())
}
