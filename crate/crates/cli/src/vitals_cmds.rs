use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pulseforge_core::exec::Exec;
use pulseforge_core::nn::TrainConfig;
use pulseforge_core::signal::{read_labels_csv, windows, LabelSeries, WindowSpec};
use pulseforge_core::vitals::{
    estimate_series, evaluate_vitals, train_vitals_head, HeadConfig, SpO2Calibration, VitalTarget, VitalsConfig,
    VitalsHead, HR_WINDOW_S, RR_WINDOW_S,
};
use pulseforge_core::SignalTrace;

use crate::error::CliError;
use crate::io::{self, read_trace, Out, LABELS_FILE, PPG_FILE};
use crate::plot::LinePlot;
use crate::Common;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Hr,
    Spo2,
    Rr,
}

impl From<Target> for VitalTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::Hr => VitalTarget::Hr,
            Target::Spo2 => VitalTarget::Spo2,
            Target::Rr => VitalTarget::Rr,
        }
    }
}

#[derive(Args, Debug)]
pub struct VitalsArgs {
    /// Multi-channel PPG trace CSV
    pub input: PathBuf,
    /// Sample rate in Hz [default: from the t column]
    #[arg(long)]
    pub rate: Option<f64>,
    /// Channel for HR and RR
    #[arg(long, default_value = "green")]
    pub channel: String,
    /// HR and SpO2 window in seconds
    #[arg(long, default_value_t = HR_WINDOW_S)]
    pub hr_window: f64,
    /// RR window in seconds
    #[arg(long, default_value_t = RR_WINDOW_S)]
    pub rr_window: f64,
    /// Window stride in seconds
    #[arg(long, default_value_t = 1.0)]
    pub stride: f64,
    /// SpO2 calibration intercept a in SpO2 = a - b R
    #[arg(long, default_value_t = 110.0)]
    pub cal_a: f64,
    /// SpO2 calibration slope b in SpO2 = a - b R
    #[arg(long, default_value_t = 25.0)]
    pub cal_b: f64,
    /// Trained heads from train-vitals replacing the classical estimate of their vital [default: none]
    #[arg(long, value_delimiter = ',')]
    pub head: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

fn window_spec(len: f64, stride: f64) -> Result<WindowSpec, CliError> {
    WindowSpec::new(len, stride).map_err(|e| CliError::Usage(e.to_string()))
}

/// Apply a head to the windows behind each output row. HR and SpO2 heads
/// read the short window; RR heads read the long window sharing its centre.
fn head_values(
    head: &VitalsHead,
    trace: &SignalTrace,
    starts_s: &[f64],
    short_s: f64,
    long_s: f64,
) -> Result<Vec<Option<f64>>, CliError> {
    let rate = trace.sample_rate_hz();
    let len_s = if head.target == VitalTarget::Rr { long_s } else { short_s };
    let len = (len_s * rate).round() as usize;
    let mut idx = Vec::new();
    let mut wins = Vec::new();
    for (row, s) in starts_s.iter().enumerate() {
        let centre = s + short_s / 2.0;
        let start = ((centre - len_s / 2.0 - trace.t0_s()) * rate).round();
        if start >= 0.0 && start as usize + len <= trace.n_samples() {
            idx.push(row);
            wins.push(trace.slice(start as usize, len)?);
        }
    }
    let pred = head.predict(&wins, Exec::auto())?;
    let mut out = vec![None; starts_s.len()];
    for (row, v) in idx.into_iter().zip(pred) {
        out[row] = Some(v);
    }
    Ok(out)
}

pub fn vitals(a: &VitalsArgs) -> Result<(), CliError> {
    let trace = read_trace(&a.input, a.rate)?;
    let cfg = VitalsConfig {
        hr_window: window_spec(a.hr_window, a.stride)?,
        rr_window: window_spec(a.rr_window, a.stride)?,
        hr_channel: a.channel.clone(),
        calibration: SpO2Calibration { a: a.cal_a, b: a.cal_b },
    };
    let rows = estimate_series(&trace, &cfg, Exec::auto())?;
    let starts: Vec<f64> = rows.iter().map(|r| r.estimate.window_start_s).collect();
    let mut hr: Vec<Option<f64>> = rows.iter().map(|r| r.estimate.hr_bpm).collect();
    let mut spo2: Vec<Option<f64>> = rows.iter().map(|r| r.estimate.spo2_pct).collect();
    let mut rr: Vec<Option<f64>> = rows.iter().map(|r| r.estimate.rr_rpm).collect();
    for path in &a.head {
        let head = VitalsHead::load(path)?;
        let vals = head_values(&head, &trace, &starts, a.hr_window, a.rr_window)?;
        match head.target {
            VitalTarget::Hr => hr = vals,
            VitalTarget::Spo2 => spo2 = vals,
            VitalTarget::Rr => rr = vals,
        }
    }

    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let out_dir = &a.common.out;
    let mut out = Out::create(&out_dir.join("vitals.csv"))?;
    out.line("t,hr,spo2,rr,flags")?;
    for (i, r) in rows.iter().enumerate() {
        out.line(format!(
            "{},{},{},{},{}",
            starts[i],
            cell(hr[i]),
            cell(spo2[i]),
            cell(rr[i]),
            r.flags.render()
        ))?;
    }
    out.finish()?;
    let pts = |vs: &[Option<f64>]| -> Vec<(f64, f64)> {
        starts.iter().zip(vs).filter_map(|(t, v)| v.map(|v| (*t, v))).collect()
    };
    LinePlot::new("Vitals", "window start (s)", "bpm / % / rpm")
        .series("HR", pts(&hr))
        .series("SpO2", pts(&spo2))
        .series("RR", pts(&rr))
        .save(&out_dir.join("vitals.svg"))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct VitalsEvalArgs {
    /// vitals.csv files, one table row each
    #[arg(required = true)]
    pub estimates: Vec<PathBuf>,
    /// Label CSV with t,hr,spo2,rr
    #[arg(long)]
    pub labels: PathBuf,
    /// HR and SpO2 window the estimates were made on, in seconds
    #[arg(long, default_value_t = HR_WINDOW_S)]
    pub hr_window: f64,
    /// RR window the estimates were made on, in seconds
    #[arg(long, default_value_t = RR_WINDOW_S)]
    pub rr_window: f64,
    #[command(flatten)]
    pub common: Common,
}

fn mean_label(labels: &LabelSeries, vals: &[Option<f64>], lo: f64, hi: f64) -> Option<f64> {
    let inside: Vec<f64> = labels
        .times_s
        .iter()
        .zip(vals)
        .filter(|(t, _)| **t >= lo && **t < hi)
        .filter_map(|(_, v)| *v)
        .collect();
    (!inside.is_empty()).then(|| inside.iter().sum::<f64>() / inside.len() as f64)
}

type Column = [Option<f64>];

/// Window start times and the hr, spo2, rr columns.
type Estimates = (Vec<f64>, [Vec<Option<f64>>; 3]);

fn read_estimates(path: &Path) -> Result<Estimates, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io::io_err(path, e))?;
    let headers = rdr.headers().map_err(|e| io::io_err(path, e))?.clone();
    let pos = |n: &str| {
        headers
            .iter()
            .position(|h| h.trim() == n)
            .ok_or_else(|| io::io_err(path, format!("missing column `{n}`")))
    };
    let cols = [pos("t")?, pos("hr")?, pos("spo2")?, pos("rr")?];
    let mut t = Vec::new();
    let mut vals: [Vec<Option<f64>>; 3] = Default::default();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io::io_err(path, e))?;
        let parse = |c: usize| -> Result<Option<f64>, CliError> {
            let s = rec.get(c).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|e| io::io_err(path, format!("row {}: {e}", row + 1)))
        };
        t.push(parse(cols[0])?.ok_or_else(|| io::io_err(path, format!("row {}: empty t", row + 1)))?);
        for k in 0..3 {
            vals[k].push(parse(cols[k + 1])?);
        }
    }
    Ok((t, vals))
}

/// `(mu, sigma, n)` of absolute error for one vital; windows without an
/// estimate or without labels are skipped.
fn score(est: &Column, labels: &LabelSeries, truth: &Column, bounds: impl Fn(usize) -> (f64, f64)) -> Result<Option<(f64, f64, usize)>, CliError> {
    let mut e = Vec::new();
    let mut l = Vec::new();
    for (i, v) in est.iter().enumerate() {
        let (lo, hi) = bounds(i);
        if let (Some(v), Some(t)) = (v, mean_label(labels, truth, lo, hi)) {
            e.push(*v);
            l.push(t);
        }
    }
    if e.is_empty() {
        return Ok(None);
    }
    let (mu, sigma) = evaluate_vitals(&e, &l)?;
    Ok(Some((mu, sigma, e.len())))
}

pub fn vitals_eval(a: &VitalsEvalArgs) -> Result<(), CliError> {
    let labels = read_labels_csv(&a.labels)?;
    let names = io::display_names(&a.estimates);
    let truth = [&labels.hr_bpm, &labels.spo2_pct, &labels.rr_rpm];
    let mut md = String::from(
        "# Vitals error\n\n| Model | HR μ | HR σ | SpO2 μ | SpO2 σ | RR μ | RR σ |\n|---|---|---|---|---|---|---|\n",
    );
    let mut out = Out::create(&a.common.out.join("vitals_eval.csv"))?;
    out.line("model,hr_mu,hr_sigma,hr_n,spo2_mu,spo2_sigma,spo2_n,rr_mu,rr_sigma,rr_n")?;
    for (name, path) in names.iter().zip(&a.estimates) {
        let (t, est) = read_estimates(path)?;
        let short = |i: usize| (t[i], t[i] + a.hr_window);
        let long = |i: usize| {
            let c = t[i] + a.hr_window / 2.0;
            (c - a.rr_window / 2.0, c + a.rr_window / 2.0)
        };
        let scores = [
            score(&est[0], &labels, truth[0], short)?,
            score(&est[1], &labels, truth[1], short)?,
            score(&est[2], &labels, truth[2], long)?,
        ];
        md += &format!("| {name} |");
        let mut row = name.clone();
        for s in &scores {
            match s {
                Some((mu, sd, n)) => {
                    md += &format!(" {mu:.2} | {sd:.2} |");
                    row += &format!(",{mu},{sd},{n}");
                }
                None => {
                    md += " - | - |";
                    row += ",,,0";
                }
            }
        }
        md.push('\n');
        out.line(row)?;
    }
    out.finish()?;
    io::write_string(&a.common.out.join("vitals_eval.md"), &md)
}

#[derive(Args, Debug)]
pub struct TrainVitalsArgs {
    /// Record directories holding ppg.csv and labels.csv
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Vital to regress
    #[arg(long, value_enum, default_value_t = Target::Hr)]
    pub target: Target,
    /// Window length in seconds [default: 4 for hr and spo2, 32 for rr]
    #[arg(long)]
    pub window: Option<f64>,
    /// Window stride in seconds
    #[arg(long, default_value_t = 1.0)]
    pub stride: f64,
    /// STFT window in seconds
    #[arg(long, default_value_t = 2.0)]
    pub stft_window: f64,
    /// STFT hop in seconds
    #[arg(long, default_value_t = 0.5)]
    pub stft_hop: f64,
    /// Share of windows held out for early stopping and the reported error
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Maximum training epochs
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    /// Minibatch size
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 25)]
    pub patience: usize,
    #[command(flatten)]
    pub common: Common,
}

pub fn train_vitals(a: &TrainVitalsArgs) -> Result<(), CliError> {
    let default_window = if a.target == Target::Rr { RR_WINDOW_S } else { HR_WINDOW_S };
    let spec = window_spec(a.window.unwrap_or(default_window), a.stride)?;
    let target: VitalTarget = a.target.into();
    let mut data = Vec::new();
    for dir in &a.inputs {
        let trace = read_trace(&dir.join(PPG_FILE), None)?;
        let labels = read_labels_csv(dir.join(LABELS_FILE))?;
        for (w, est) in windows(&trace, &labels, &spec)? {
            let y = match target {
                VitalTarget::Hr => est.hr_bpm,
                VitalTarget::Spo2 => est.spo2_pct,
                VitalTarget::Rr => est.rr_rpm,
            };
            if let Some(y) = y {
                data.push((w, y));
            }
        }
    }
    let cfg = HeadConfig {
        stft_window_s: a.stft_window,
        stft_hop_s: a.stft_hop,
        holdout_frac: a.holdout,
        train: TrainConfig {
            batch_size: a.batch_size,
            max_epochs: a.epochs,
            lr0: a.lr,
            patience: a.patience,
            seed: a.common.seed,
            ..TrainConfig::default()
        },
        ..HeadConfig::default()
    };
    let trained = train_vitals_head(&data, target, &cfg, Exec::auto())?;
    let out = &a.common.out;
    trained.head.save(&out.join("head.p2em"))?;
    io::save_history(&trained.history, out)?;
    let finite = |v: f64| if v.is_finite() { serde_json::json!(v) } else { serde_json::Value::Null };
    let summary = serde_json::json!({
        "target": target.as_str(),
        "windows": data.len(),
        "window_s": spec.length_s,
        "holdout_size": trained.holdout_size,
        "holdout_mu": finite(trained.holdout_mu),
        "holdout_sigma": finite(trained.holdout_sigma),
        "best_epoch": trained.history.best_epoch,
        "epochs_run": trained.history.train_loss.len(),
    });
    io::write_string(&out.join("train.json"), &serde_json::to_string_pretty(&summary)?)?;
    log::info!(
        "{} windows, held-out error {:.3} +- {:.3}",
        data.len(),
        trained.holdout_mu,
        trained.holdout_sigma
    );
    Ok(())
}
