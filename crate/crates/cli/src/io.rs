//! File helpers: trace and record loading, cycle-pair CSVs, plain writes.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pulseforge_core::cycles::{CardiacCyclePair, CycleConfig};
use pulseforge_core::exec::Exec;
use pulseforge_core::nn::History;
use pulseforge_core::p2e::record_pairs;
use pulseforge_core::signal::{infer_rate_csv, read_trace_csv, trace_csv_channels};
use pulseforge_core::SignalTrace;

use crate::error::CliError;
use crate::plot::LinePlot;

pub const PPG_FILE: &str = "ppg.csv";
pub const ECG_FILE: &str = "ecg.csv";
pub const LABELS_FILE: &str = "labels.csv";

pub fn io_err(path: &Path, e: impl Display) -> CliError {
    CliError::Domain(format!("io: {}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn write_string(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Buffered writer plus the path it writes, for error messages.
pub struct Out {
    w: BufWriter<File>,
    path: PathBuf,
}

impl Out {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let f = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(Self {
            w: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub fn line(&mut self, s: impl Display) -> Result<(), CliError> {
        writeln!(self.w, "{s}").map_err(|e| io_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush().map_err(|e| io_err(&self.path, e))
    }
}

/// Comma-joined shortest round-trip decimals.
pub fn join(xs: impl IntoIterator<Item = f64>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// All non-`t` columns of a trace CSV. The rate comes from the `t` column
/// unless given.
pub fn read_trace(path: &Path, rate: Option<f64>) -> Result<SignalTrace, CliError> {
    let cols = trace_csv_channels(path)?;
    let rate = match rate {
        Some(r) => r,
        None => infer_rate_csv(path)?,
    };
    let names: Vec<&str> = cols.iter().map(String::as_str).collect();
    Ok(read_trace_csv(path, rate, &names)?)
}

pub fn write_pairs_csv(pairs: &[CardiacCyclePair], cycle_len: usize, path: &Path) -> Result<(), CliError> {
    let mut out = Out::create(path)?;
    let mut header: Vec<String> = (0..cycle_len).map(|i| format!("ppg_{i}")).collect();
    header.extend((0..cycle_len).map(|i| format!("ecg_{i}")));
    header.push("rr_s".into());
    out.line(header.join(","))?;
    for p in pairs {
        out.line(format!("{},{},{}", join(p.ppg.iter().copied()), join(p.ecg.iter().copied()), p.rr_interval_s))?;
    }
    out.finish()
}

pub fn is_pairs_csv(path: &Path) -> Result<bool, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?;
    Ok(headers.iter().next() == Some("ppg_0"))
}

/// Read a pairs CSV written by `segment`. Source ranges are not stored and
/// come back as `(0, 0)`.
pub fn read_pairs_csv(path: &Path) -> Result<Vec<CardiacCyclePair>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let width = rdr.headers().map_err(|e| io_err(path, e))?.len();
    if width < 5 || width % 2 == 0 {
        return Err(io_err(path, "not a cycle-pair CSV (ppg_*, ecg_*, rr_s)"));
    }
    let l = (width - 1) / 2;
    let mut pairs = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| io_err(path, format!("row {}: {e}", row + 1)))?;
        pairs.push(CardiacCyclePair {
            ppg: vals[..l].to_vec(),
            ecg: vals[l..2 * l].to_vec(),
            src_ppg_range: (0, 0),
            src_ecg_range: (0, 0),
            rr_interval_s: vals[2 * l],
        });
    }
    Ok(pairs)
}

/// Cycle pairs of one record: a directory holding `ppg.csv` and `ecg.csv`,
/// or a pairs CSV.
pub fn load_pairs(input: &Path, cfg: &CycleConfig, exec: Exec) -> Result<Vec<CardiacCyclePair>, CliError> {
    if input.is_dir() {
        let ppg = read_trace(&input.join(PPG_FILE), None)?;
        let ecg = read_trace(&input.join(ECG_FILE), None)?;
        let (report, pairs) = record_pairs(&ppg, &ecg, cfg, exec)?;
        log::info!(
            "{}: {} pairs, {} beats dropped, lag {:.3} s",
            input.display(),
            report.paired,
            report.dropped,
            report.lag_s
        );
        return Ok(pairs);
    }
    let pairs = read_pairs_csv(input)?;
    if pairs.first().is_some_and(|p| p.ppg.len() != cfg.cycle_len) {
        return Err(CliError::Domain(format!(
            "cycles: {} holds {}-sample cycles, expected {}",
            input.display(),
            pairs[0].ppg.len(),
            cfg.cycle_len
        )));
    }
    Ok(pairs)
}

/// One pair list per input, loaded in parallel.
pub fn load_records(inputs: &[PathBuf], cfg: &CycleConfig, exec: Exec) -> Result<Vec<Vec<CardiacCyclePair>>, CliError> {
    exec.try_map(inputs, |p| load_pairs(p, cfg, Exec::Sequential))
}

/// Short unique labels for files: the stem, or the parent directory name
/// when the stem is a generic `model`, `vitals` or `head`.
pub fn display_names(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let parent = p
                .parent()
                .and_then(|d| d.file_name())
                .map(|s| s.to_string_lossy().into_owned());
            let base = match parent {
                Some(d) if ["model", "vitals", "head"].contains(&stem.as_str()) => d,
                _ => stem,
            };
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}_{n}")
            }
        })
        .collect()
}

pub fn save_history(h: &History, dir: &Path) -> Result<(), CliError> {
    let mut out = Out::create(&dir.join("history.csv"))?;
    out.line("epoch,train_loss,val_loss,lr")?;
    for (e, t) in h.train_loss.iter().enumerate() {
        let v = h.val_loss.get(e).map(|v| v.to_string()).unwrap_or_default();
        let lr = h.lr.get(e).map(|v| v.to_string()).unwrap_or_default();
        out.line(format!("{e},{t},{v},{lr}"))?;
    }
    out.finish()?;
    let pts = |xs: &[f64]| xs.iter().enumerate().map(|(e, v)| (e as f64, *v)).collect::<Vec<_>>();
    let mut plot = LinePlot::new("Training loss", "epoch", "MAE (standardized)").series("train", pts(&h.train_loss));
    if !h.val_loss.is_empty() {
        plot = plot.series("validation", pts(&h.val_loss));
    }
    plot.save(&dir.join("loss.svg"))
}
