//! Uniformly sampled traces, 1 Hz label series, CSV exchange and windowing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::vitals::VitalsEstimate;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid label series: {0}")]
    InvalidLabels(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric or non-finite cell at row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("trace needs at least two samples")]
    DegenerateTrace,
    #[error("invalid window spec: {0}")]
    InvalidWindow(String),
    #[error("no label sample falls inside window starting at {0:.3} s")]
    LabelsDoNotCover(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Multi-channel uniformly sampled signal. Samples are stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    channels: Vec<Vec<f64>>,
    sample_rate_hz: f64,
    channel_labels: Vec<String>,
    t0_s: f64,
}

impl SignalTrace {
    pub fn new(
        channels: Vec<Vec<f64>>,
        sample_rate_hz: f64,
        channel_labels: Vec<String>,
        t0_s: f64,
    ) -> Result<Self, SignalError> {
        if channels.is_empty() {
            return Err(SignalError::InvalidTrace("no channels".into()));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SignalError::InvalidTrace(format!(
                "sample rate {sample_rate_hz} must be positive"
            )));
        }
        if channel_labels.len() != channels.len() {
            return Err(SignalError::InvalidTrace(format!(
                "{} labels for {} channels",
                channel_labels.len(),
                channels.len()
            )));
        }
        let n = channels[0].len();
        if n == 0 {
            return Err(SignalError::InvalidTrace("no samples".into()));
        }
        for (label, ch) in channel_labels.iter().zip(&channels) {
            if ch.len() != n {
                return Err(SignalError::InvalidTrace(format!(
                    "channel `{label}` has {} samples, expected {n}",
                    ch.len()
                )));
            }
            if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
                return Err(SignalError::InvalidTrace(format!(
                    "non-finite value in `{label}` at sample {i}"
                )));
            }
        }
        if !t0_s.is_finite() {
            return Err(SignalError::InvalidTrace("non-finite t0".into()));
        }
        Ok(Self {
            channels,
            sample_rate_hz,
            channel_labels,
            t0_s,
        })
    }

    /// Single-channel convenience constructor.
    pub fn mono(samples: Vec<f64>, sample_rate_hz: f64, label: &str) -> Result<Self, SignalError> {
        Self::new(vec![samples], sample_rate_hz, vec![label.to_string()], 0.0)
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn t0_s(&self) -> f64 {
        self.t0_s
    }

    /// Span covered by `n_samples` sample periods.
    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channel_labels.iter().position(|l| l == label)
    }

    pub fn channel_by_label(&self, label: &str) -> Option<&[f64]> {
        self.channel_index(label).map(|i| self.channel(i))
    }

    pub fn time_at(&self, idx: usize) -> f64 {
        self.t0_s + idx as f64 / self.sample_rate_hz
    }

    /// Apply `f` to every channel, keeping rate, labels and offset.
    pub fn map_channels<F>(&self, mut f: F) -> Result<Self, SignalError>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let channels = self.channels.iter().map(|c| f(c)).collect();
        Self::new(
            channels,
            self.sample_rate_hz,
            self.channel_labels.clone(),
            self.t0_s,
        )
    }

    /// Sample range `[start, start + len)` as a new trace.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self, SignalError> {
        if len == 0 || start + len > self.n_samples() {
            return Err(SignalError::InvalidTrace(format!(
                "slice {start}+{len} out of bounds for {} samples",
                self.n_samples()
            )));
        }
        Self::new(
            self.channels
                .iter()
                .map(|c| c[start..start + len].to_vec())
                .collect(),
            self.sample_rate_hz,
            self.channel_labels.clone(),
            self.time_at(start),
        )
    }

    pub fn select(&self, labels: &[&str]) -> Result<Self, SignalError> {
        let mut channels = Vec::with_capacity(labels.len());
        for l in labels {
            let c = self
                .channel_by_label(l)
                .ok_or_else(|| SignalError::MissingColumn(l.to_string()))?;
            channels.push(c.to_vec());
        }
        Self::new(
            channels,
            self.sample_rate_hz,
            labels.iter().map(|s| s.to_string()).collect(),
            self.t0_s,
        )
    }
}

/// Ground-truth vitals sampled at (typically) 1 Hz. Absent cells are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSeries {
    pub times_s: Vec<f64>,
    pub hr_bpm: Vec<Option<f64>>,
    pub spo2_pct: Vec<Option<f64>>,
    pub rr_rpm: Vec<Option<f64>>,
}

impl LabelSeries {
    pub fn new(
        times_s: Vec<f64>,
        hr_bpm: Vec<Option<f64>>,
        spo2_pct: Vec<Option<f64>>,
        rr_rpm: Vec<Option<f64>>,
    ) -> Result<Self, SignalError> {
        let s = Self {
            times_s,
            hr_bpm,
            spo2_pct,
            rr_rpm,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let n = self.times_s.len();
        if self.hr_bpm.len() != n || self.spo2_pct.len() != n || self.rr_rpm.len() != n {
            return Err(SignalError::InvalidLabels("column lengths differ".into()));
        }
        if self.times_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SignalError::InvalidLabels(
                "times must be strictly increasing".into(),
            ));
        }
        let all = self
            .hr_bpm
            .iter()
            .chain(&self.spo2_pct)
            .chain(&self.rr_rpm)
            .flatten();
        if self.times_s.iter().chain(all).any(|v| !v.is_finite()) {
            return Err(SignalError::InvalidLabels("non-finite value".into()));
        }
        if self
            .spo2_pct
            .iter()
            .flatten()
            .any(|v| !(0.0..=100.0).contains(v))
        {
            return Err(SignalError::InvalidLabels("spo2 outside [0, 100]".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelReduction {
    #[default]
    Mean,
}

/// Sliding window geometry in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub length_s: f64,
    pub stride_s: f64,
    pub label_reduction: LabelReduction,
}

impl WindowSpec {
    pub fn new(length_s: f64, stride_s: f64) -> Result<Self, SignalError> {
        if !(length_s.is_finite() && length_s > 0.0 && stride_s.is_finite() && stride_s > 0.0) {
            return Err(SignalError::InvalidWindow(format!(
                "length {length_s} and stride {stride_s} must be positive"
            )));
        }
        Ok(Self {
            length_s,
            stride_s,
            label_reduction: LabelReduction::Mean,
        })
    }

    /// Window length in samples at `rate_hz`.
    pub fn len_samples(&self, rate_hz: f64) -> usize {
        (self.length_s * rate_hz).round() as usize
    }

    /// Number of full windows over `duration_s`: `floor((T - w) / stride) + 1`.
    pub fn count(&self, duration_s: f64) -> usize {
        if duration_s + 1e-9 < self.length_s {
            return 0;
        }
        ((duration_s - self.length_s) / self.stride_s + 1e-9).floor() as usize + 1
    }

    /// Start sample of every full window in a trace of `n` samples.
    pub fn starts(&self, n: usize, rate_hz: f64) -> Vec<usize> {
        let len = self.len_samples(rate_hz);
        let count = self.count(n as f64 / rate_hz);
        (0..count)
            .map(|i| (i as f64 * self.stride_s * rate_hz).round() as usize)
            .filter(|&s| s + len <= n)
            .collect()
    }
}

fn parse_cell(s: &str, row: usize, col: &str) -> Result<f64, SignalError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| SignalError::NonNumericCell {
            row,
            col: col.to_string(),
        })
}

/// Read the named columns of a trace CSV. A `t` column, when present,
/// supplies the start offset.
pub fn read_trace_csv<P: AsRef<Path>>(
    path: P,
    sample_rate_hz: f64,
    channel_cols: &[&str],
) -> Result<SignalTrace, SignalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| SignalError::MissingColumn(name.to_string()))
    };
    let idx: Vec<usize> = channel_cols
        .iter()
        .map(|c| find(c))
        .collect::<Result<_, _>>()?;
    let t_idx = headers.iter().position(|h| h.trim() == "t");

    let mut channels = vec![Vec::new(); idx.len()];
    let mut t0 = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if row == 0 {
            if let Some(ti) = t_idx {
                t0 = Some(parse_cell(rec.get(ti).unwrap_or(""), row, "t")?);
            }
        }
        for (ch, (&ci, name)) in idx.iter().zip(channel_cols).enumerate() {
            channels[ch].push(parse_cell(rec.get(ci).unwrap_or(""), row, name)?);
        }
    }
    if channels[0].is_empty() {
        return Err(SignalError::EmptyFile);
    }
    SignalTrace::new(
        channels,
        sample_rate_hz,
        channel_cols.iter().map(|s| s.to_string()).collect(),
        t0.unwrap_or(0.0),
    )
}

/// Column names of a trace CSV excluding `t`.
pub fn trace_csv_channels<P: AsRef<Path>>(path: P) -> Result<Vec<String>, SignalError> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    Ok(rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .filter(|h| h != "t")
        .collect())
}

/// Sample rate implied by the first two rows of the `t` column.
pub fn infer_rate_csv<P: AsRef<Path>>(path: P) -> Result<f64, SignalError> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    let headers = rdr.headers()?.clone();
    let ti = headers
        .iter()
        .position(|h| h.trim() == "t")
        .ok_or_else(|| SignalError::MissingColumn("t".into()))?;
    let mut ts = Vec::new();
    for (row, rec) in rdr.records().take(2).enumerate() {
        ts.push(parse_cell(rec?.get(ti).unwrap_or(""), row, "t")?);
    }
    if ts.len() < 2 || !(ts[1] > ts[0]) {
        return Err(SignalError::DegenerateTrace);
    }
    Ok(1.0 / (ts[1] - ts[0]))
}

/// Write `t,<labels...>` with shortest round-trip decimal encoding.
pub fn write_trace_csv<P: AsRef<Path>>(trace: &SignalTrace, path: P) -> Result<(), SignalError> {
    if trace.n_channels() == 0 {
        return Err(SignalError::InvalidTrace("no channels".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "t")?;
    for l in trace.channel_labels() {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    for i in 0..trace.n_samples() {
        write!(w, "{}", trace.time_at(i))?;
        for ch in trace.channels() {
            write!(w, ",{}", ch[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a `t,hr,spo2,rr` label CSV. Empty cells are absent values; missing
/// vital columns are treated as entirely absent.
pub fn read_labels_csv<P: AsRef<Path>>(path: P) -> Result<LabelSeries, SignalError> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    let headers = rdr.headers()?.clone();
    let pos = |name: &str| headers.iter().position(|h| h.trim() == name);
    let ti = pos("t").ok_or_else(|| SignalError::MissingColumn("t".into()))?;
    let cols = [pos("hr"), pos("spo2"), pos("rr")];
    let mut out = LabelSeries::default();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        out.times_s
            .push(parse_cell(rec.get(ti).unwrap_or(""), row, "t")?);
        let mut vals = [None; 3];
        for (k, (c, name)) in cols.iter().zip(["hr", "spo2", "rr"]).enumerate() {
            if let Some(ci) = c {
                let cell = rec.get(*ci).unwrap_or("").trim();
                if !cell.is_empty() {
                    vals[k] = Some(parse_cell(cell, row, name)?);
                }
            }
        }
        out.hr_bpm.push(vals[0]);
        out.spo2_pct.push(vals[1]);
        out.rr_rpm.push(vals[2]);
    }
    if out.is_empty() {
        return Err(SignalError::EmptyFile);
    }
    out.validate()?;
    Ok(out)
}

pub fn write_labels_csv<P: AsRef<Path>>(labels: &LabelSeries, path: P) -> Result<(), SignalError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,hr,spo2,rr")?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for i in 0..labels.len() {
        writeln!(
            w,
            "{},{},{},{}",
            labels.times_s[i],
            cell(labels.hr_bpm[i]),
            cell(labels.spo2_pct[i]),
            cell(labels.rr_rpm[i])
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Linear interpolation onto a uniform grid at `target_hz` starting at the
/// first sample. The grid covers the original span; a final grid point past
/// the last input sample holds that sample's value, so first and last values
/// are preserved exactly.
pub fn resample(trace: &SignalTrace, target_hz: f64) -> Result<SignalTrace, SignalError> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(SignalError::InvalidTrace(format!(
            "target rate {target_hz} must be positive"
        )));
    }
    let n = trace.n_samples();
    if n < 2 {
        return Err(SignalError::DegenerateTrace);
    }
    let src_rate = trace.sample_rate_hz();
    let span = (n - 1) as f64 / src_rate;
    let n_out = (span * target_hz - 1e-9).ceil().max(0.0) as usize + 1;
    let last = (n - 1) as f64;
    let channels = trace
        .channels()
        .iter()
        .map(|x| {
            (0..n_out)
                .map(|j| {
                    let pos = (j as f64 * src_rate / target_hz).min(last);
                    interp_at(x, pos)
                })
                .collect()
        })
        .collect();
    SignalTrace::new(
        channels,
        target_hz,
        trace.channel_labels().to_vec(),
        trace.t0_s(),
    )
}

/// Linear interpolation of `x` at fractional index `pos` in `[0, len-1]`.
pub fn interp_at(x: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    if i + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let frac = pos - i as f64;
    if frac == 0.0 {
        x[i]
    } else {
        x[i] + frac * (x[i + 1] - x[i])
    }
}

/// Resample `x` to exactly `len` points spanning `[0, x.len()-1]`.
pub fn resample_to_len(x: &[f64], len: usize) -> Vec<f64> {
    if len == 1 || x.len() == 1 {
        return vec![x[0]; len];
    }
    let scale = (x.len() - 1) as f64 / (len - 1) as f64;
    (0..len).map(|j| interp_at(x, j as f64 * scale)).collect()
}

fn mean_in(times: &[f64], vals: &[Option<f64>], lo: f64, hi: f64) -> Option<f64> {
    let (sum, n) = times
        .iter()
        .zip(vals)
        .filter(|(t, _)| **t >= lo && **t < hi)
        .filter_map(|(_, v)| *v)
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Cut full-length windows and reduce the labels whose timestamps fall in
/// `[start, end)`. Trailing partial windows are dropped.
pub fn windows(
    trace: &SignalTrace,
    labels: &LabelSeries,
    spec: &WindowSpec,
) -> Result<Vec<(SignalTrace, VitalsEstimate)>, SignalError> {
    let rate = trace.sample_rate_hz();
    let len = spec.len_samples(rate);
    let mut out = Vec::new();
    for start in spec.starts(trace.n_samples(), rate) {
        let lo = trace.time_at(start);
        let hi = lo + spec.length_s;
        let covered = labels.times_s.iter().any(|t| *t >= lo && *t < hi);
        if !covered {
            return Err(SignalError::LabelsDoNotCover(lo));
        }
        let est = VitalsEstimate {
            hr_bpm: mean_in(&labels.times_s, &labels.hr_bpm, lo, hi),
            spo2_pct: mean_in(&labels.times_s, &labels.spo2_pct, lo, hi),
            rr_rpm: mean_in(&labels.times_s, &labels.rr_rpm, lo, hi),
            window_start_s: lo,
            window_len_s: spec.length_s,
        };
        out.push((trace.slice(start, len)?, est));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_three_row_csv() {
        let f = tmp_csv("t,ppg\n0,0.1\n0.008,0.2\n0.016,0.3\n");
        let t = read_trace_csv(f.path(), 125.0, &["ppg"]).unwrap();
        assert_eq!(t.n_samples(), 3);
        assert_eq!(t.n_channels(), 1);
        assert_eq!(t.channel(0), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn reads_two_channel_bidmc_layout() {
        let f = tmp_csv("t,ppg,ecg\n0,0.5,0.1\n0.008,0.6,0.9\n");
        let t = read_trace_csv(f.path(), 125.0, &["ppg", "ecg"]).unwrap();
        assert_eq!(t.n_channels(), 2);
        assert_eq!(t.channel_by_label("ecg").unwrap(), &[0.1, 0.9]);
    }

    #[test]
    fn rejects_nan_missing_and_empty() {
        let f = tmp_csv("t,ppg\n0,0.1\n0.008,NaN\n");
        assert!(matches!(
            read_trace_csv(f.path(), 125.0, &["ppg"]),
            Err(SignalError::NonNumericCell { row: 1, .. })
        ));
        let f = tmp_csv("t,ppg\n0,abc\n");
        assert!(matches!(
            read_trace_csv(f.path(), 125.0, &["ppg"]),
            Err(SignalError::NonNumericCell { row: 0, .. })
        ));
        let f = tmp_csv("t,ppg\n0,0.1\n");
        assert!(matches!(
            read_trace_csv(f.path(), 125.0, &["ecg"]),
            Err(SignalError::MissingColumn(_))
        ));
        let f = tmp_csv("t,ppg\n");
        assert!(matches!(
            read_trace_csv(f.path(), 125.0, &["ppg"]),
            Err(SignalError::EmptyFile)
        ));
    }

    #[test]
    fn single_sample_writes_one_row() {
        let t = SignalTrace::mono(vec![0.25], 30.0, "g").unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_trace_csv(&t, f.path()).unwrap();
        let body = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(body, "t,g\n0,0.25\n");
    }

    #[test]
    fn empty_channel_list_is_invalid() {
        assert!(matches!(
            SignalTrace::new(vec![], 30.0, vec![], 0.0),
            Err(SignalError::InvalidTrace(_))
        ));
        assert!(SignalTrace::new(vec![vec![]], 30.0, vec!["a".into()], 0.0).is_err());
    }

    #[test]
    fn label_csv_with_empty_cells() {
        let f = tmp_csv("t,hr,spo2,rr\n0,70,,12\n1,72,98,\n");
        let l = read_labels_csv(f.path()).unwrap();
        assert_eq!(l.hr_bpm, vec![Some(70.0), Some(72.0)]);
        assert_eq!(l.spo2_pct, vec![None, Some(98.0)]);
        assert_eq!(l.rr_rpm, vec![Some(12.0), None]);
        let g = tempfile::NamedTempFile::new().unwrap();
        write_labels_csv(&l, g.path()).unwrap();
        assert_eq!(read_labels_csv(g.path()).unwrap(), l);
    }

    #[test]
    fn resample_constant_and_ramp() {
        let c = SignalTrace::mono(vec![0.7; 90], 30.0, "x").unwrap();
        let r = resample(&c, 125.0).unwrap();
        assert_eq!(r.sample_rate_hz(), 125.0);
        assert!(r.channel(0).iter().all(|v| (v - 0.7).abs() < 1e-15));

        let ramp: Vec<f64> = (0..=30).map(|i| i as f64 / 30.0).collect();
        let t = SignalTrace::mono(ramp, 30.0, "x").unwrap();
        let r = resample(&t, 125.0).unwrap();
        assert_eq!(r.n_samples(), 126);
        let dev = r
            .channel(0)
            .iter()
            .enumerate()
            .map(|(j, v)| (v - j as f64 / 125.0).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-12, "{dev}");
    }

    #[test]
    fn resample_sine_rms() {
        let f0 = 1.25;
        let x: Vec<f64> = (0..300)
            .map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / 30.0).sin())
            .collect();
        let t = SignalTrace::mono(x, 30.0, "x").unwrap();
        let r = resample(&t, 125.0).unwrap();
        let span = 299.0 / 30.0;
        let (mut se, mut n) = (0.0, 0);
        for (j, v) in r.channel(0).iter().enumerate() {
            let tj = j as f64 / 125.0;
            if tj > span {
                continue;
            }
            let e = v - (2.0 * std::f64::consts::PI * f0 * tj).sin();
            se += e * e;
            n += 1;
        }
        let rms = (se / n as f64).sqrt();
        assert!(rms <= 0.01, "{rms}");
    }

    #[test]
    fn resample_rejects_one_sample() {
        let t = SignalTrace::mono(vec![1.0], 30.0, "x").unwrap();
        assert!(matches!(resample(&t, 125.0), Err(SignalError::DegenerateTrace)));
    }

    fn labels_1hz(n: usize, hr: impl Fn(usize) -> f64) -> LabelSeries {
        LabelSeries::new(
            (0..n).map(|i| i as f64).collect(),
            (0..n).map(|i| Some(hr(i))).collect(),
            vec![Some(98.0); n],
            vec![None; n],
        )
        .unwrap()
    }

    #[test]
    fn one_ten_second_window_averages_ten_labels() {
        let t = SignalTrace::mono(vec![0.0; 1250], 125.0, "g").unwrap();
        let l = labels_1hz(10, |i| 60.0 + i as f64);
        let w = windows(&t, &l, &WindowSpec::new(10.0, 1.0).unwrap()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].0.n_samples(), 1250);
        assert!((w[0].1.hr_bpm.unwrap() - 64.5).abs() < 1e-12);
        assert_eq!(w[0].1.rr_rpm, None);
    }

    #[test]
    fn twelve_seconds_four_second_windows() {
        let t = SignalTrace::mono(vec![0.0; 12 * 125], 125.0, "g").unwrap();
        let l = labels_1hz(12, |_| 75.0);
        let w = windows(&t, &l, &WindowSpec::new(4.0, 1.0).unwrap()).unwrap();
        assert_eq!(w.len(), 9);
        assert!(w.iter().all(|(s, e)| s.n_samples() == 500 && e.hr_bpm == Some(75.0)));
    }

    #[test]
    fn uncovered_window_errors() {
        let t = SignalTrace::mono(vec![0.0; 12 * 125], 125.0, "g").unwrap();
        let l = labels_1hz(5, |_| 75.0);
        assert!(matches!(
            windows(&t, &l, &WindowSpec::new(4.0, 1.0).unwrap()),
            Err(SignalError::LabelsDoNotCover(_))
        ));
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 1..50)) {
            let t = SignalTrace::new(vec![vals.clone(), vals.iter().map(|v| v * 1e-7).collect()],
                125.0, vec!["a".into(), "b".into()], 0.0).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_trace_csv(&t, f.path()).unwrap();
            let r = read_trace_csv(f.path(), 125.0, &["a", "b"]).unwrap();
            for (x, y) in t.channels().iter().flatten().zip(r.channels().iter().flatten()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn window_count_formula(n_s in 1usize..200, w in 1usize..40, stride in 1usize..8) {
            // integer-second geometry at 10 Hz
            prop_assume!(n_s >= w);
            let rate = 10.0;
            let spec = WindowSpec::new(w as f64, stride as f64).unwrap();
            let starts = spec.starts(n_s * 10, rate);
            prop_assert_eq!(starts.len(), (n_s - w) / stride + 1);
        }

        #[test]
        fn window_count_fractional(t in 1.0f64..300.0, w in 0.5f64..40.0, stride in 0.25f64..5.0) {
            prop_assume!(t >= w);
            let spec = WindowSpec::new(w, stride).unwrap();
            prop_assert_eq!(spec.count(t), ((t - w) / stride + 1e-9).floor() as usize + 1);
        }

        #[test]
        fn resample_keeps_endpoints(vals in proptest::collection::vec(-10f64..10.0, 2..200),
                                    target in 5.0f64..300.0) {
            let t = SignalTrace::mono(vals.clone(), 30.0, "x").unwrap();
            let r = resample(&t, target).unwrap();
            prop_assert_eq!(r.channel(0)[0], vals[0]);
            prop_assert_eq!(*r.channel(0).last().unwrap(), *vals.last().unwrap());
        }
    }
}
