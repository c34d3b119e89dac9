use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use pulseforge_core::cycles::CycleConfig;
use pulseforge_core::exec::Exec;
use pulseforge_core::metrics::{DirichletMode, ReconstructionReport};
use pulseforge_core::nn::TrainConfig;
use pulseforge_core::nn::Activation;
use pulseforge_core::p2e::{self, record_ppg_cycles, split_records, P2eConfig, P2eMode, P2eModel};
use pulseforge_core::peaks::FiducialKind;
use pulseforge_core::signal::resample_to_len;

use crate::error::CliError;
use crate::io::{self, join, load_records, read_trace, Out, PPG_FILE};
use crate::plot::LinePlot;
use crate::Common;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Ridge,
    Ffnn,
}

impl From<Mode> for P2eMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Ridge => P2eMode::Ridge,
            Mode::Ffnn => P2eMode::Ffnn,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Dirichlet {
    /// Max pointwise distance under index alignment
    Aligned,
    /// Discrete Frechet distance over monotone couplings
    Frechet,
}

impl From<Dirichlet> for DirichletMode {
    fn from(d: Dirichlet) -> Self {
        match d {
            Dirichlet::Aligned => DirichletMode::Aligned,
            Dirichlet::Frechet => DirichletMode::Frechet,
        }
    }
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    Activation::parse(s).ok_or_else(|| format!("unknown activation `{s}` (linear, tanh, selu, gelu)"))
}

fn parse_hidden(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected two widths like 256,256, got `{s}`");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Translator and segmentation settings shared by training and sweeps.
#[derive(Args, Debug, Clone)]
pub struct P2eFlags {
    /// Retained PPG DCT coefficients
    #[arg(long, default_value_t = 150)]
    pub k_ppg: usize,
    /// Retained ECG DCT coefficients
    #[arg(long, default_value_t = 150)]
    pub k_ecg: usize,
    /// Samples per normalized cycle
    #[arg(long, default_value_t = 300)]
    pub cycle_len: usize,
    /// PPG channel used for beat detection
    #[arg(long, default_value = "green")]
    pub ppg_channel: String,
    /// Ridge penalty
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Pick the ridge penalty from 1e-3..1e3 by validation MAE [default: off]
    #[arg(long)]
    pub lambda_grid: bool,
    /// FFNN hidden layer widths
    #[arg(long, default_value = "256,256", value_parser = parse_hidden)]
    pub hidden: (usize, usize),
    /// FFNN hidden activation: linear, tanh, selu or gelu
    #[arg(long, default_value = "tanh", value_parser = parse_activation)]
    pub activation: Activation,
    /// L1 weight penalty on hidden layers
    #[arg(long, default_value_t = 1e-6)]
    pub l1: f64,
    /// Dropout probability on hidden layers
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Maximum training epochs
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    /// Minibatch size
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 25)]
    pub patience: usize,
    /// Share of each training record's cycles used for fitting, the rest validate
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
}

impl P2eFlags {
    fn config(&self, mode: Mode, seed: u64) -> P2eConfig {
        P2eConfig {
            k_ppg: self.k_ppg,
            k_ecg: self.k_ecg,
            cycle_len: self.cycle_len,
            mode: mode.into(),
            ridge_lambda: self.lambda,
            ridge_grid: self.lambda_grid,
            ffnn_hidden: self.hidden,
            ffnn_activation: self.activation,
            ffnn_l1: self.l1,
            ffnn_dropout: self.dropout,
            train: TrainConfig {
                batch_size: self.batch_size,
                max_epochs: self.epochs,
                lr0: self.lr,
                patience: self.patience,
                seed,
                ..TrainConfig::default()
            },
        }
    }

    fn cycles(&self) -> CycleConfig {
        CycleConfig {
            cycle_len: self.cycle_len,
            ppg_channel: Some(self.ppg_channel.clone()),
            ..CycleConfig::default()
        }
    }
}

fn report_json(r: &ReconstructionReport) -> serde_json::Value {
    let peaks: BTreeMap<&str, _> = r
        .per_peak
        .iter()
        .map(|(k, e)| (k.as_str(), serde_json::json!({"mmae": e.mmae, "msae": e.msae})))
        .collect();
    serde_json::json!({"mae": r.mae, "pearson": r.pearson, "dirichlet": r.dirichlet, "per_peak": peaks})
}

#[derive(Args, Debug)]
pub struct TrainP2eArgs {
    /// Records: directories with ppg.csv and ecg.csv, or pairs CSVs from `segment`
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Translator family
    #[arg(long, value_enum, default_value_t = Mode::Ffnn)]
    pub mode: Mode,
    /// Whole records withheld from training and scored afterwards
    #[arg(long, default_value_t = 0)]
    pub held_out: usize,
    #[command(flatten)]
    pub p2e: P2eFlags,
    #[command(flatten)]
    pub common: Common,
}

pub fn train(a: &TrainP2eArgs) -> Result<(), CliError> {
    let cfg = a.p2e.config(a.mode, a.common.seed);
    cfg.validate()?;
    let records = load_records(&a.inputs, &a.p2e.cycles(), Exec::auto())?;
    let split = split_records(&records, a.p2e.train_frac, a.held_out, a.common.seed)?;
    log::info!("{} training pairs, {} validation pairs", split.train.len(), split.val.len());
    let trained = p2e::train(&split.train, &split.val, &cfg)?;
    let out = &a.common.out;
    trained.model.save(&out.join("model.p2em"))?;

    let name = |i: &usize| a.inputs[*i].display().to_string();
    let train_ids: Vec<String> = (0..a.inputs.len())
        .filter(|i| !split.held_out_ids.contains(i))
        .map(|i| name(&i))
        .collect();
    let mut summary = serde_json::json!({
        "mode": a.mode.to_possible_value().expect("not skipped").get_name(),
        "train_records": train_ids,
        "held_out_records": split.held_out_ids.iter().map(name).collect::<Vec<_>>(),
        "train_pairs": split.train.len(),
        "val_pairs": split.val.len(),
    });
    if let Some(lambda) = trained.model.ridge_lambda {
        summary["lambda"] = lambda.into();
    }
    if !split.val.is_empty() {
        let r = p2e::evaluate(&trained.model, std::slice::from_ref(&split.val), DirichletMode::Aligned)?;
        summary["validation"] = report_json(&r);
    }
    if split.held_out.iter().any(|r| !r.is_empty()) {
        let r = p2e::evaluate(&trained.model, &split.held_out, DirichletMode::Aligned)?;
        summary["held_out"] = report_json(&r);
    }
    io::write_string(&out.join("train.json"), &serde_json::to_string_pretty(&summary)?)?;

    if let Some(h) = &trained.history {
        io::save_history(h, out)?;
    }
    if !trained.lambda_scores.is_empty() {
        let mut w = Out::create(&out.join("lambda.csv"))?;
        w.line("lambda,val_mae")?;
        for (l, s) in &trained.lambda_scores {
            w.line(join([*l, *s]))?;
        }
        w.finish()?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct InferP2eArgs {
    /// PPG trace CSV, record directory (its ppg.csv is used) or pairs CSV
    pub input: PathBuf,
    /// Model file from train-p2e
    #[arg(long)]
    pub model: PathBuf,
    /// PPG channel used for beat detection
    #[arg(long, default_value = "green")]
    pub ppg_channel: String,
    #[command(flatten)]
    pub common: Common,
}

/// Translate every onset-to-onset PPG cycle. Writes the per-cycle ECG and,
/// for traces, a continuous ECG with each cycle stretched over its PPG
/// cycle (samples outside any cycle are 0, the normalized baseline).
pub fn infer(a: &InferP2eArgs) -> Result<(), CliError> {
    let model = P2eModel::load(&a.model)?;
    let out_dir = &a.common.out;
    let l = model.cycle_len;
    let mut header = vec!["start_s".to_string(), "end_s".to_string()];
    header.extend((0..l).map(|i| format!("ecg_{i}")));
    let mut out = Out::create(&out_dir.join("ecg_cycles.csv"))?;
    out.line(header.join(","))?;

    if a.input.is_file() && io::is_pairs_csv(&a.input)? {
        let pairs = io::read_pairs_csv(&a.input)?;
        let rec = model.translate_pairs(&pairs)?;
        for r in &rec {
            out.line(format!(",,{}", join(r.iter().copied())))?;
        }
        out.finish()?;
        if let (Some(p), Some(r)) = (pairs.first(), rec.first()) {
            let u = 1.0 / (l - 1) as f64;
            LinePlot::new("First reconstructed cycle", "cycle phase", "normalized amplitude")
                .uniform("reference", 0.0, u, &p.ecg)
                .uniform("reconstructed", 0.0, u, r)
                .save(&out_dir.join("reconstruction.svg"))?;
        }
        return Ok(());
    }

    let path = if a.input.is_dir() { a.input.join(PPG_FILE) } else { a.input.clone() };
    let ppg = read_trace(&path, None)?;
    let cfg = CycleConfig {
        cycle_len: l,
        ppg_channel: Some(a.ppg_channel.clone()),
        ..CycleConfig::default()
    };
    let cycles = record_ppg_cycles(&ppg, &cfg, Exec::auto())?;
    let inputs: Vec<&[f64]> = cycles.iter().map(|c| c.cycle.as_slice()).collect();
    let rec = model.translate_many(&inputs)?;
    let mut ecg = vec![0.0; ppg.n_samples()];
    for (c, r) in cycles.iter().zip(&rec) {
        let (s, e) = c.range;
        out.line(format!("{},{},{}", ppg.time_at(s), ppg.time_at(e), join(r.iter().copied())))?;
        ecg[s..e].copy_from_slice(&resample_to_len(r, e - s));
    }
    out.finish()?;
    let mut w = Out::create(&out_dir.join("ecg_reconstructed.csv"))?;
    w.line("t,ecg")?;
    for (i, v) in ecg.iter().enumerate() {
        w.line(join([ppg.time_at(i), *v]))?;
    }
    w.finish()?;
    let n = ((10.0 * ppg.sample_rate_hz()) as usize).min(ecg.len());
    LinePlot::new("Reconstructed ECG", "time (s)", "normalized amplitude")
        .uniform("ecg", ppg.t0_s(), 1.0 / ppg.sample_rate_hz(), &ecg[..n])
        .save(&out_dir.join("reconstruction.svg"))?;
    log::info!("{} cycles translated", cycles.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepKArgs {
    /// Records: directories with ppg.csv and ecg.csv, or pairs CSVs
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Coefficient counts, applied to both PPG and ECG
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,150,300")]
    pub k: Vec<usize>,
    /// Translator family
    #[arg(long, value_enum, default_value_t = Mode::Ridge)]
    pub mode: Mode,
    /// Whole records scored after training
    #[arg(long, default_value_t = 5)]
    pub held_out: usize,
    /// Dirichlet distance variant
    #[arg(long, value_enum, default_value_t = Dirichlet::Aligned)]
    pub dirichlet: Dirichlet,
    #[command(flatten)]
    pub p2e: P2eFlags,
    #[command(flatten)]
    pub common: Common,
}

pub fn sweep(a: &SweepKArgs) -> Result<(), CliError> {
    let cfg = a.p2e.config(a.mode, a.common.seed);
    let records = load_records(&a.inputs, &a.p2e.cycles(), Exec::auto())?;
    let split = split_records(&records, a.p2e.train_frac, a.held_out, a.common.seed)?;
    let rows = p2e::sweep_k(&split, &a.k, &cfg, a.dirichlet.into(), Exec::auto())?;
    let out = &a.common.out;
    let path = out.join("sweep.csv");
    let file = std::fs::File::create(&path).map_err(|e| io::io_err(&path, e))?;
    p2e::write_sweep_csv(&rows, file).map_err(|e| io::io_err(&path, e))?;
    let pts = |f: fn(&p2e::SweepRow) -> f64| rows.iter().map(|r| (r.k as f64, f(r))).collect::<Vec<_>>();
    LinePlot::new("Held-out error against coefficient count", "k", "value")
        .series("MAE", pts(|r| r.mae))
        .series("Dirichlet", pts(|r| r.dirichlet))
        .series("Pearson", pts(|r| r.pearson))
        .save(&out.join("sweep.svg"))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Records: directories with ppg.csv and ecg.csv, or pairs CSVs
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Model files, one report column pair each (repeat or comma-separate)
    #[arg(long, required = true, value_delimiter = ',')]
    pub model: Vec<PathBuf>,
    /// Dirichlet distance variant
    #[arg(long, value_enum, default_value_t = Dirichlet::Aligned)]
    pub dirichlet: Dirichlet,
    /// PPG channel used for beat detection
    #[arg(long, default_value = "green")]
    pub ppg_channel: String,
    #[command(flatten)]
    pub common: Common,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let names = io::display_names(&a.model);
    let mut reports = Vec::new();
    let mut first_cycles: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for path in &a.model {
        let model = P2eModel::load(path)?;
        let cfg = CycleConfig {
            cycle_len: model.cycle_len,
            ppg_channel: Some(a.ppg_channel.clone()),
            ..CycleConfig::default()
        };
        let records = load_records(&a.inputs, &cfg, Exec::auto())?;
        reports.push(p2e::evaluate(&model, &records, a.dirichlet.into())?);
        if let Some(p) = records.iter().flatten().next() {
            first_cycles.push((p.ecg.clone(), model.translate(&p.ppg)?));
        }
    }

    let out = &a.common.out;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let mut md = String::from("# ECG reconstruction\n\n| Model | MAE | Pearson | Dirichlet |\n|---|---|---|---|\n");
    let mut summary = Out::create(&out.join("summary.csv"))?;
    summary.line("model,mae,pearson,dirichlet")?;
    for (n, r) in names.iter().zip(&reports) {
        md += &format!("| {n} | {:.4} | {:.4} | {:.4} |\n", r.mae, r.pearson, r.dirichlet);
        summary.line(format!("{n},{}", join([r.mae, r.pearson, r.dirichlet])))?;
    }
    summary.finish()?;

    md += "\n## Peaks and valleys\n\n| Fiducial |";
    let mut head = String::from("fiducial");
    for n in &names {
        md += &format!(" {n} MMAE | {n} MSAE |");
        head += &format!(",{n}_mmae,{n}_msae");
    }
    md += "\n|---|";
    md += &"---|---|".repeat(names.len());
    md.push('\n');
    let mut table = Out::create(&out.join("report.csv"))?;
    table.line(head)?;
    for kind in FiducialKind::ECG {
        md += &format!("| {} |", kind.as_str());
        let mut row = kind.as_str().to_string();
        for r in &reports {
            let e = r.per_peak.get(&kind);
            md += &format!(" {} | {} |", fmt(e.map(|e| e.mmae)), fmt(e.map(|e| e.msae)));
            row += &format!(
                ",{},{}",
                e.map(|e| e.mmae.to_string()).unwrap_or_default(),
                e.map(|e| e.msae.to_string()).unwrap_or_default()
            );
        }
        md.push('\n');
        table.line(row)?;
    }
    table.finish()?;
    io::write_string(&out.join("report.md"), &md)?;

    if let Some((reference, _)) = first_cycles.first() {
        let u = 1.0 / (reference.len() - 1) as f64;
        let mut plot = LinePlot::new("First cycle", "cycle phase", "normalized amplitude").uniform("reference", 0.0, u, reference);
        for (n, (_, rec)) in names.iter().zip(&first_cycles) {
            plot = plot.uniform(n, 0.0, u, rec);
        }
        plot.save(&out.join("evaluate.svg"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_widths_parse() {
        assert_eq!(parse_hidden("64, 32"), Ok((64, 32)));
        assert!(parse_hidden("64").is_err());
    }
}
