//! PPG-to-ECG translation in the DCT domain.
//!
//! Each aligned cycle pair becomes a row of truncated DCT-II coefficients.
//! Columns are standardized on the training rows, a ridge map or a small
//! FFNN predicts ECG coefficients from PPG coefficients, and the inverse DCT
//! returns a time-domain ECG cycle of the original length.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::cycles::{cycle_pairs, ppg_cycles, AlignmentReport, CardiacCyclePair, CycleConfig, PpgCycle};
use crate::signal::SignalTrace;
use crate::wavelet::WaveletPlan;
use crate::exec::Exec;
use crate::linalg::{cholesky, cholesky_solve, max_abs};
use crate::metrics::{cycle_scores, peak_error_table_with_rates, DirichletMode, MetricsError, ReconstructionReport};
use crate::model_io::{self, ModelIoError, NormStats, StoredModel};
use crate::nn::{fit, init_network, Activation, Batch, History, LayerSpec, Network, NnError, Standardizer, TrainConfig};
use crate::spectral::{dct2, idct, DctNorm, DctVector, SpectralError};

#[derive(Debug, Error)]
pub enum P2eError {
    #[error("no cycle pairs")]
    EmptyPairs,
    #[error("need at least {need} cycle pairs, got {got}")]
    TooFewPairs { got: usize, need: usize },
    #[error("expected a cycle of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("normal equations are singular (lambda = {lambda})")]
    SingularSystem { lambda: f64 },
    #[error("normal-equation residual {residual:e} exceeds {bound:e}")]
    ResidualTooLarge { residual: f64, bound: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
}

type Result<T> = std::result::Result<T, P2eError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum P2eMode {
    Ridge,
    Ffnn,
}

impl P2eMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ridge" => Some(Self::Ridge),
            "ffnn" => Some(Self::Ffnn),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ridge => "ridge",
            Self::Ffnn => "ffnn",
        }
    }
}

pub const LAMBDA_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2eConfig {
    pub k_ppg: usize,
    pub k_ecg: usize,
    pub cycle_len: usize,
    pub mode: P2eMode,
    pub ridge_lambda: f64,
    /// Pick lambda from [`LAMBDA_GRID`] by validation MAE.
    pub ridge_grid: bool,
    pub ffnn_hidden: (usize, usize),
    pub ffnn_activation: Activation,
    pub ffnn_l1: f64,
    pub ffnn_dropout: f64,
    pub train: TrainConfig,
}

impl Default for P2eConfig {
    fn default() -> Self {
        Self {
            k_ppg: 150,
            k_ecg: 150,
            cycle_len: 300,
            mode: P2eMode::Ffnn,
            ridge_lambda: 1.0,
            ridge_grid: false,
            ffnn_hidden: (256, 256),
            ffnn_activation: Activation::Tanh,
            ffnn_l1: 1e-6,
            ffnn_dropout: 0.0,
            train: TrainConfig::default(),
        }
    }
}

impl P2eConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(P2eError::InvalidConfig(m));
        if self.cycle_len < 2 {
            return bad(format!("cycle_len {} is too short", self.cycle_len));
        }
        for (name, k) in [("k_ppg", self.k_ppg), ("k_ecg", self.k_ecg)] {
            if k == 0 || k > self.cycle_len {
                return bad(format!("{name} = {k} must be in 1..={}", self.cycle_len));
            }
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be finite and >= 0".into());
        }
        if self.ffnn_hidden.0 == 0 || self.ffnn_hidden.1 == 0 {
            return bad("hidden widths must be positive".into());
        }
        if !matches!(self.ffnn_activation, Activation::Tanh | Activation::Selu) {
            return bad("ffnn_activation must be tanh or selu".into());
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn with_k(&self, k: usize) -> Self {
        Self {
            k_ppg: k,
            k_ecg: k,
            ..self.clone()
        }
    }
}

fn dct_rows(cycles: &[&[f64]], k: usize, len: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((cycles.len(), k));
    for (i, c) in cycles.iter().enumerate() {
        if c.len() != len {
            return Err(P2eError::LengthMismatch {
                expected: len,
                got: c.len(),
            });
        }
        let d = dct2(c, k)?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&d.coeffs));
    }
    Ok(out)
}

/// Unstandardized DCT coefficient matrices, one row per pair.
pub fn dct_features(pairs: &[CardiacCyclePair], cfg: &P2eConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    if pairs.is_empty() {
        return Err(P2eError::EmptyPairs);
    }
    let ppg: Vec<&[f64]> = pairs.iter().map(|p| p.ppg.as_slice()).collect();
    let ecg: Vec<&[f64]> = pairs.iter().map(|p| p.ecg.as_slice()).collect();
    Ok((
        dct_rows(&ppg, cfg.k_ppg, cfg.cycle_len)?,
        dct_rows(&ecg, cfg.k_ecg, cfg.cycle_len)?,
    ))
}

/// Standardized design and target matrices with the statistics that
/// produced them.
#[derive(Debug, Clone)]
pub struct Features {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub stats: NormStats,
}

pub fn featurize(pairs: &[CardiacCyclePair], cfg: &P2eConfig) -> Result<Features> {
    cfg.validate()?;
    let (x, y) = dct_features(pairs, cfg)?;
    let stats = NormStats {
        input: Standardizer::fit(x.view())?,
        target: Standardizer::fit(y.view())?,
    };
    Ok(Features {
        x: stats.input.transform(x.view())?,
        y: stats.target.transform(y.view())?,
        stats,
    })
}

/// Apply existing statistics to new pairs.
pub fn featurize_with(pairs: &[CardiacCyclePair], cfg: &P2eConfig, stats: &NormStats) -> Result<(Array2<f64>, Array2<f64>)> {
    let (x, y) = dct_features(pairs, cfg)?;
    Ok((stats.input.transform(x.view())?, stats.target.transform(y.view())?))
}

/// Closed-form ridge regression on a bias-augmented design.
///
/// Returns `W` of shape `[(k_in + 1), k_out]`; the last row is the bias and
/// is not penalized. Solved by Cholesky with one refinement step, then the
/// normal-equation residual is checked against `1e-8 * ||XᵀY||∞`.
pub fn train_ridge(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if x.nrows() != y.nrows() {
        return Err(P2eError::Nn(NnError::ShapeMismatch(x.dim(), y.dim())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(P2eError::InvalidConfig("lambda must be finite and >= 0".into()));
    }
    if x.nrows() < 2 {
        if lambda == 0.0 {
            return Err(P2eError::SingularSystem { lambda });
        }
        return Err(P2eError::TooFewPairs { got: x.nrows(), need: 2 });
    }
    let (n, k) = x.dim();
    let mut xa = Array2::ones((n, k + 1));
    xa.slice_mut(s![.., ..k]).assign(&x);
    let mut g = xa.t().dot(&xa);
    for i in 0..k {
        g[[i, i]] += lambda;
    }
    let b = xa.t().dot(&y);
    let l = cholesky(g.view()).ok_or(P2eError::SingularSystem { lambda })?;
    let mut w = cholesky_solve(&l, b.view());
    let r = &b - &g.dot(&w);
    w += &cholesky_solve(&l, r.view());
    let residual = max_abs((g.dot(&w) - &b).view());
    let bound = 1e-8 * max_abs(b.view());
    if !(residual <= bound) {
        return Err(P2eError::ResidualTooLarge { residual, bound });
    }
    Ok(w)
}

/// Apply a bias-augmented ridge map to standardized rows.
pub fn ridge_apply(w: &Array2<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let k = w.nrows() - 1;
    x.dot(&w.slice(s![..k, ..])) + w.row(k)
}

/// FFNN on standardized features: two hidden layers with batchnorm and the
/// configured activation, linear output.
pub fn ffnn_specs(cfg: &P2eConfig) -> Vec<LayerSpec> {
    let (h1, h2) = cfg.ffnn_hidden;
    let hidden = |i, o| {
        LayerSpec::new(i, o, cfg.ffnn_activation)
            .with_batchnorm()
            .with_l1(cfg.ffnn_l1)
            .with_dropout(cfg.ffnn_dropout)
    };
    vec![
        hidden(cfg.k_ppg, h1),
        hidden(h1, h2),
        LayerSpec::new(h2, cfg.k_ecg, Activation::Linear),
    ]
}

pub fn train_ffnn(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    val: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    cfg: &P2eConfig,
    train_cfg: &TrainConfig,
) -> Result<(Network, History)> {
    if x.nrows() == 0 {
        return Err(P2eError::Nn(NnError::EmptyDataset));
    }
    let mut net = init_network(&ffnn_specs(cfg), train_cfg.seed)?;
    let train = Batch::new(x.to_owned(), y.to_owned())?;
    let val = match val {
        Some((vx, vy)) if vx.nrows() > 0 => Some(Batch::new(vx.to_owned(), vy.to_owned())?),
        _ => None,
    };
    let fit_cfg = TrainConfig {
        seed: train_cfg.seed.wrapping_add(1),
        ..train_cfg.clone()
    };
    let history = fit(&mut net, &train, val.as_ref(), &fit_cfg)?;
    Ok((net, history))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Translator {
    Ridge(Array2<f64>),
    Ffnn(Network),
}

#[derive(Debug, Clone, PartialEq)]
pub struct P2eModel {
    pub translator: Translator,
    pub stats: NormStats,
    pub k_ppg: usize,
    pub k_ecg: usize,
    pub cycle_len: usize,
    pub seed: u64,
    pub ridge_lambda: Option<f64>,
}

impl P2eModel {
    pub fn mode(&self) -> P2eMode {
        match self.translator {
            Translator::Ridge(_) => P2eMode::Ridge,
            Translator::Ffnn(_) => P2eMode::Ffnn,
        }
    }

    /// Standardized-in, standardized-out prediction.
    fn predict_std(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(match &self.translator {
            Translator::Ridge(w) => ridge_apply(w, x),
            Translator::Ffnn(net) => net.predict(x)?,
        })
    }

    /// Raw PPG coefficients to raw ECG coefficients.
    pub fn predict_coeffs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.stats.input.transform(x)?;
        let out = self.predict_std(z.view())?;
        Ok(self.stats.target.inverse(out.view())?)
    }

    pub fn translate(&self, ppg_cycle: &[f64]) -> Result<Vec<f64>> {
        Ok(self.translate_many(&[ppg_cycle])?.remove(0))
    }

    pub fn translate_many(&self, cycles: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if cycles.is_empty() {
            return Ok(Vec::new());
        }
        let x = dct_rows(cycles, self.k_ppg, self.cycle_len)?;
        let c = self.predict_coeffs(x.view())?;
        Ok(c
            .axis_iter(Axis(0))
            .map(|row| {
                idct(&DctVector {
                    coeffs: row.to_vec(),
                    source_len: self.cycle_len,
                    norm: DctNorm::Orthonormal,
                })
            })
            .collect())
    }

    pub fn translate_pairs(&self, pairs: &[CardiacCyclePair]) -> Result<Vec<Vec<f64>>> {
        let cycles: Vec<&[f64]> = pairs.iter().map(|p| p.ppg.as_slice()).collect();
        self.translate_many(&cycles)
    }

    /// Upper bound on the Euclidean Lipschitz constant of a ridge
    /// `translate`: the DCT and its inverse are orthonormal, so only the
    /// standardization scales and the weight block contribute.
    pub fn ridge_lipschitz_bound(&self) -> Option<f64> {
        let Translator::Ridge(w) = &self.translator else {
            return None;
        };
        let k = w.nrows() - 1;
        let fro = w.slice(s![..k, ..]).iter().map(|v| v * v).sum::<f64>().sqrt();
        let min_in = self.stats.input.std.iter().copied().fold(f64::INFINITY, f64::min);
        let max_out = self.stats.target.std.iter().copied().fold(0.0, f64::max);
        Some(fro * max_out / min_in)
    }

    fn meta(&self) -> BTreeMap<String, serde_json::Value> {
        let mut m = BTreeMap::new();
        m.insert("k_ppg".into(), json!(self.k_ppg));
        m.insert("k_ecg".into(), json!(self.k_ecg));
        m.insert("cycle_len".into(), json!(self.cycle_len));
        if let Some(l) = self.ridge_lambda {
            m.insert("ridge_lambda".into(), json!(l));
        }
        m
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let (header, params) = match &self.translator {
            Translator::Ridge(wm) => model_io::encode_ridge(wm, &self.stats, self.seed, self.meta())?,
            Translator::Ffnn(net) => model_io::encode_network(net, &self.stats, self.seed, self.meta())?,
        };
        model_io::write_container(w, &header, &params)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(ModelIoError::from)?;
        Ok(())
    }

    pub fn read_from<R: std::io::Read>(r: R) -> Result<Self> {
        let (header, params) = model_io::read_container(r)?;
        let get = |key: &str| -> Result<usize> {
            header
                .meta
                .get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| ModelIoError::Invalid(format!("missing {key} in header")).into())
        };
        let (k_ppg, k_ecg, cycle_len) = (get("k_ppg")?, get("k_ecg")?, get("cycle_len")?);
        if header.norm_stats.input.dim() != k_ppg || header.norm_stats.target.dim() != k_ecg || k_ppg > cycle_len || k_ecg > cycle_len {
            return Err(ModelIoError::Invalid("DCT sizes disagree with the stored model".into()).into());
        }
        let translator = match model_io::decode(&header, &params)? {
            StoredModel::Ridge(w) => Translator::Ridge(w),
            StoredModel::Network(n) => Translator::Ffnn(n),
        };
        Ok(Self {
            translator,
            stats: header.norm_stats,
            k_ppg,
            k_ecg,
            cycle_len,
            seed: header.seed,
            ridge_lambda: header.meta.get("ridge_lambda").and_then(|v| v.as_f64()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(ModelIoError::from)?;
        Self::read_from(bytes.as_slice())
    }
}

/// Wavelet-clean both traces (PPG denoised and detrended, ECG detrended)
/// and cut them into aligned cycle pairs.
pub fn record_pairs(
    ppg: &SignalTrace,
    ecg: &SignalTrace,
    cycle_cfg: &CycleConfig,
    exec: Exec,
) -> std::result::Result<(AlignmentReport, Vec<CardiacCyclePair>), crate::Error> {
    let ppg = WaveletPlan::detrend(ppg.sample_rate_hz()).apply_trace(ppg, exec)?;
    let ecg = WaveletPlan::ecg_detrend(ecg.sample_rate_hz()).apply_trace(ecg, exec)?;
    Ok(cycle_pairs(&ppg, &ecg, cycle_cfg, exec)?)
}

/// PPG cycles of a record without ECG, preprocessed as in [`record_pairs`].
pub fn record_ppg_cycles(ppg: &SignalTrace, cycle_cfg: &CycleConfig, exec: Exec) -> std::result::Result<Vec<PpgCycle>, crate::Error> {
    let ppg = WaveletPlan::detrend(ppg.sample_rate_hz()).apply_trace(ppg, exec)?;
    Ok(ppg_cycles(&ppg, cycle_cfg)?)
}

#[derive(Debug, Clone)]
pub struct TrainedP2e {
    pub model: P2eModel,
    pub history: Option<History>,
    /// `(lambda, validation MAE)` for each grid point tried.
    pub lambda_scores: Vec<(f64, f64)>,
}

fn time_mae(model: &P2eModel, pairs: &[CardiacCyclePair]) -> Result<f64> {
    let rec = model.translate_pairs(pairs)?;
    let mut total = 0.0;
    for (p, r) in pairs.iter().zip(&rec) {
        total += crate::metrics::mae(&p.ecg, r)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Fit a translator on `train`; `val` drives the lambda grid and early
/// stopping when non-empty.
pub fn train(train: &[CardiacCyclePair], val: &[CardiacCyclePair], cfg: &P2eConfig) -> Result<TrainedP2e> {
    let feats = featurize(train, cfg)?;
    let base = |translator, lambda| P2eModel {
        translator,
        stats: feats.stats.clone(),
        k_ppg: cfg.k_ppg,
        k_ecg: cfg.k_ecg,
        cycle_len: cfg.cycle_len,
        seed: cfg.train.seed,
        ridge_lambda: lambda,
    };
    match cfg.mode {
        P2eMode::Ridge => {
            if cfg.ridge_grid && !val.is_empty() {
                let mut scores = Vec::new();
                let mut best: Option<(f64, P2eModel)> = None;
                for &lambda in &LAMBDA_GRID {
                    let w = train_ridge(feats.x.view(), feats.y.view(), lambda)?;
                    let m = base(Translator::Ridge(w), Some(lambda));
                    let score = time_mae(&m, val)?;
                    scores.push((lambda, score));
                    if best.as_ref().is_none_or(|(b, _)| score < *b) {
                        best = Some((score, m));
                    }
                }
                Ok(TrainedP2e {
                    model: best.expect("non-empty grid").1,
                    history: None,
                    lambda_scores: scores,
                })
            } else {
                let w = train_ridge(feats.x.view(), feats.y.view(), cfg.ridge_lambda)?;
                Ok(TrainedP2e {
                    model: base(Translator::Ridge(w), Some(cfg.ridge_lambda)),
                    history: None,
                    lambda_scores: Vec::new(),
                })
            }
        }
        P2eMode::Ffnn => {
            let val_feats = if val.is_empty() {
                None
            } else {
                Some(featurize_with(val, cfg, &feats.stats)?)
            };
            let (net, history) = train_ffnn(
                feats.x.view(),
                feats.y.view(),
                val_feats.as_ref().map(|(x, y)| (x.view(), y.view())),
                cfg,
                &cfg.train,
            )?;
            Ok(TrainedP2e {
                model: base(Translator::Ffnn(net), None),
                history: Some(history),
                lambda_scores: Vec::new(),
            })
        }
    }
}

/// Training, validation and held-out cycle pairs.
#[derive(Debug, Clone, Default)]
pub struct RecordSplit {
    pub train: Vec<CardiacCyclePair>,
    pub val: Vec<CardiacCyclePair>,
    /// Whole records excluded from training, kept per record.
    pub held_out: Vec<Vec<CardiacCyclePair>>,
    pub held_out_ids: Vec<usize>,
}

/// Hold out `n_held_out` whole records chosen by a seeded shuffle, then split
/// every remaining record chronologically into its first `train_frac` of
/// cycles (training) and the rest (validation).
pub fn split_records(records: &[Vec<CardiacCyclePair>], train_frac: f64, n_held_out: usize, seed: u64) -> Result<RecordSplit> {
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(P2eError::InvalidConfig("train_frac must be in (0, 1]".into()));
    }
    if n_held_out >= records.len() {
        return Err(P2eError::InvalidConfig(format!(
            "cannot hold out {n_held_out} of {} records",
            records.len()
        )));
    }
    let mut ids: Vec<usize> = (0..records.len()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held: Vec<usize> = ids[..n_held_out].to_vec();
    held.sort_unstable();
    let mut split = RecordSplit {
        held_out_ids: held.clone(),
        ..RecordSplit::default()
    };
    for (i, rec) in records.iter().enumerate() {
        if held.binary_search(&i).is_ok() {
            split.held_out.push(rec.clone());
        } else {
            let cut = (rec.len() as f64 * train_frac).floor() as usize;
            split.train.extend_from_slice(&rec[..cut]);
            split.val.extend_from_slice(&rec[cut..]);
        }
    }
    if split.train.is_empty() {
        return Err(P2eError::EmptyPairs);
    }
    Ok(split)
}

/// Cycle metrics over all pairs plus the per-fiducial table with one entry
/// per record.
pub fn evaluate(model: &P2eModel, records: &[Vec<CardiacCyclePair>], mode: DirichletMode) -> Result<ReconstructionReport> {
    let records: Vec<&Vec<CardiacCyclePair>> = records.iter().filter(|r| !r.is_empty()).collect();
    if records.is_empty() {
        return Err(P2eError::EmptyPairs);
    }
    let mut refs = Vec::new();
    let mut recs = Vec::new();
    let mut rates = Vec::new();
    for rec in records {
        refs.push(rec.iter().map(|p| p.ecg.clone()).collect::<Vec<_>>());
        recs.push(model.translate_pairs(rec)?);
        rates.push(rec.iter().map(|p| p.ecg_cycle_rate_hz()).collect::<Vec<_>>());
    }
    let flat_ref: Vec<Vec<f64>> = refs.iter().flatten().cloned().collect();
    let flat_rec: Vec<Vec<f64>> = recs.iter().flatten().cloned().collect();
    let (mae, pearson, dirichlet) = cycle_scores(&flat_ref, &flat_rec, mode)?;
    let per_peak = peak_error_table_with_rates(&refs, &recs, &rates)?;
    Ok(ReconstructionReport {
        mae,
        pearson,
        dirichlet,
        per_peak,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub mae: f64,
    pub pearson: f64,
    pub dirichlet: f64,
}

/// Train one model per `k` (used for both PPG and ECG) and score it on the
/// held-out records, or on the validation pairs when none are held out.
pub fn sweep_k(split: &RecordSplit, k_values: &[usize], cfg: &P2eConfig, mode: DirichletMode, exec: Exec) -> Result<Vec<SweepRow>> {
    for &k in k_values {
        cfg.with_k(k).validate()?;
    }
    let eval_set: Vec<Vec<CardiacCyclePair>> = if split.held_out.iter().any(|r| !r.is_empty()) {
        split.held_out.clone()
    } else {
        vec![split.val.clone()]
    };
    exec.try_map(k_values, |&k| {
        let c = cfg.with_k(k);
        let trained = train(&split.train, &split.val, &c)?;
        let recs: Vec<CardiacCyclePair> = eval_set.iter().flatten().cloned().collect();
        let rec = trained.model.translate_pairs(&recs)?;
        let refs: Vec<Vec<f64>> = recs.iter().map(|p| p.ecg.clone()).collect();
        let (mae, pearson, dirichlet) = cycle_scores(&refs, &rec, mode)?;
        Ok(SweepRow { k, mae, pearson, dirichlet })
    })
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> std::result::Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "mae", "pearson", "dirichlet"])?;
    for r in rows {
        out.write_record([r.k.to_string(), r.mae.to_string(), r.pearson.to_string(), r.dirichlet.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
    }

    /// Smooth random cycles built from a few low-order cosines.
    fn smooth_cycle(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        let amps: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        (0..len)
            .map(|i| {
                let t = i as f64 / len as f64;
                amps.iter()
                    .enumerate()
                    .map(|(j, a)| a * (std::f64::consts::PI * (j + 1) as f64 * t).cos())
                    .sum()
            })
            .collect()
    }

    fn pair(ppg: Vec<f64>, ecg: Vec<f64>) -> CardiacCyclePair {
        CardiacCyclePair {
            ppg,
            ecg,
            src_ppg_range: (0, 0),
            src_ecg_range: (0, 0),
            rr_interval_s: 0.8,
        }
    }

    #[test]
    fn ridge_recovers_planted_map() {
        let mut r = rng(1);
        let x = random_matrix(&mut r, 400, 12);
        let a = random_matrix(&mut r, 12, 5);
        let y = x.dot(&a);
        let w = train_ridge(x.view(), y.view(), 0.0).unwrap();
        assert!(max_abs((&w.slice(s![..12, ..]) - &a).view()) <= 1e-6);
        assert!(w.row(12).iter().all(|b| b.abs() <= 1e-6));
    }

    #[test]
    fn ridge_limit_is_column_means() {
        let mut r = rng(2);
        let x = random_matrix(&mut r, 200, 6);
        let y = random_matrix(&mut r, 200, 3) + 0.5;
        let w = train_ridge(x.view(), y.view(), 1e12).unwrap();
        assert!(max_abs(w.slice(s![..6, ..])) <= 1e-6);
        let means = y.mean_axis(Axis(0)).unwrap();
        for (b, m) in w.row(6).iter().zip(&means) {
            assert!((b - m).abs() <= 1e-6);
        }
    }

    #[test]
    fn ridge_singular_cases() {
        let x = Array2::from_elem((1, 3), 1.0);
        let y = Array2::from_elem((1, 2), 1.0);
        assert!(matches!(train_ridge(x.view(), y.view(), 0.0), Err(P2eError::SingularSystem { .. })));
        // duplicated column, no penalty
        let mut r = rng(3);
        let mut x = random_matrix(&mut r, 50, 4);
        let c0 = x.column(0).to_owned();
        x.column_mut(1).assign(&c0);
        let y = random_matrix(&mut r, 50, 2);
        assert!(matches!(train_ridge(x.view(), y.view(), 0.0), Err(P2eError::SingularSystem { .. })));
        assert!(train_ridge(x.view(), y.view(), 1e-3).is_ok());
    }

    #[test]
    fn featurize_standardizes() {
        let mut r = rng(4);
        let pairs: Vec<_> = (0..40).map(|_| pair(smooth_cycle(&mut r, 300), smooth_cycle(&mut r, 300))).collect();
        let f = featurize(&pairs, &P2eConfig::default()).unwrap();
        assert_eq!(f.x.dim(), (40, 150));
        assert_eq!(f.y.dim(), (40, 150));
        for col in f.x.columns().into_iter().take(6) {
            let m = col.mean().unwrap();
            let sd = col.mapv(|v| (v - m).powi(2)).mean().unwrap().sqrt();
            assert!(m.abs() <= 1e-10 && (sd - 1.0).abs() <= 1e-9);
        }
        let zeros = featurize(&[pair(vec![0.0; 300], vec![0.0; 300])], &P2eConfig::default()).unwrap();
        assert!(zeros.x.iter().all(|v| *v == 0.0));
        assert!(matches!(featurize(&[], &P2eConfig::default()), Err(P2eError::EmptyPairs)));
    }

    #[test]
    fn identity_ridge_truncates() {
        let mut r = rng(5);
        let cycles: Vec<Vec<f64>> = (0..300).map(|_| {
            let mut c = smooth_cycle(&mut r, 120);
            for v in c.iter_mut() {
                *v += r.random_range(-0.05..0.05);
            }
            c
        }).collect();
        let pairs: Vec<_> = cycles.iter().map(|c| pair(c.clone(), c.clone())).collect();
        let cfg = P2eConfig {
            k_ppg: 40,
            k_ecg: 40,
            cycle_len: 120,
            mode: P2eMode::Ridge,
            ridge_lambda: 0.0,
            ..P2eConfig::default()
        };
        let model = train(&pairs, &[], &cfg).unwrap().model;
        let probe = smooth_cycle(&mut r, 120);
        let out = model.translate(&probe).unwrap();
        let truncated = idct(&dct2(&probe, 40).unwrap());
        for (a, b) in out.iter().zip(&truncated) {
            assert!((a - b).abs() <= 1e-6, "{a} {b}");
        }
        assert!(matches!(model.translate(&probe[..100]), Err(P2eError::LengthMismatch { expected: 120, got: 100 })));
    }

    #[test]
    fn ridge_translate_is_lipschitz() {
        let mut r = rng(6);
        let pairs: Vec<_> = (0..200)
            .map(|_| {
                let p = smooth_cycle(&mut r, 100);
                let e: Vec<f64> = p.iter().map(|v| (2.0 * v).tanh()).collect();
                pair(p, e)
            })
            .collect();
        let cfg = P2eConfig {
            k_ppg: 30,
            k_ecg: 30,
            cycle_len: 100,
            mode: P2eMode::Ridge,
            ..P2eConfig::default()
        };
        let model = train(&pairs, &[], &cfg).unwrap().model;
        let c = model.ridge_lipschitz_bound().unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..50 {
            let a = smooth_cycle(&mut r, 100);
            let b: Vec<f64> = a.iter().map(|v| v + r.random_range(-0.3..0.3)).collect();
            let d_in: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let ta = model.translate(&a).unwrap();
            let tb = model.translate(&b).unwrap();
            let d_out: Vec<f64> = ta.iter().zip(&tb).map(|(x, y)| x - y).collect();
            assert!(norm(&d_out) <= c * norm(&d_in) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn ffnn_tracks_ridge_on_linear_data() {
        let mut r = rng(7);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let a = random_matrix(&mut r, 8, 6) * 0.5;
        let mk = |r: &mut ChaCha8Rng, n| {
            let x = random_matrix(r, n, 8);
            let y = x.dot(&a) + Array2::from_shape_fn((n, 6), |_| noise.sample(r));
            (x, y)
        };
        let (x, y) = mk(&mut r, 1500);
        let (vx, vy) = mk(&mut r, 300);
        let (tx, ty) = mk(&mut r, 500);
        let cfg = P2eConfig {
            k_ppg: 8,
            k_ecg: 6,
            cycle_len: 16,
            ffnn_hidden: (32, 32),
            ffnn_l1: 0.0,
            ..P2eConfig::default()
        };
        let tc = TrainConfig {
            max_epochs: 300,
            seed: 3,
            ..TrainConfig::default()
        };
        let w = train_ridge(x.view(), y.view(), 1.0).unwrap();
        let ridge_mae = crate::nn::mae_loss(ridge_apply(&w, tx.view()).view(), ty.view()).unwrap();
        let (net, _) = train_ffnn(x.view(), y.view(), Some((vx.view(), vy.view())), &cfg, &tc).unwrap();
        let ffnn_mae = crate::nn::mae_loss(net.predict(tx.view()).unwrap().view(), ty.view()).unwrap();
        assert!(ffnn_mae <= 2.0 * ridge_mae, "{ffnn_mae} vs {ridge_mae}");
        let empty = Array2::<f64>::zeros((0, 8));
        assert!(matches!(
            train_ffnn(empty.view(), Array2::<f64>::zeros((0, 6)).view(), None, &cfg, &tc),
            Err(P2eError::Nn(NnError::EmptyDataset))
        ));
    }

    fn small_ffnn_cfg() -> P2eConfig {
        P2eConfig {
            k_ppg: 20,
            k_ecg: 20,
            cycle_len: 64,
            ffnn_hidden: (16, 16),
            train: TrainConfig {
                max_epochs: 15,
                batch_size: 16,
                seed: 11,
                ..TrainConfig::default()
            },
            ..P2eConfig::default()
        }
    }

    #[test]
    fn model_files_are_deterministic_and_round_trip() {
        let mut r = rng(8);
        let pairs: Vec<_> = (0..80).map(|_| pair(smooth_cycle(&mut r, 64), smooth_cycle(&mut r, 64))).collect();
        let cfg = small_ffnn_cfg();
        let a = train(&pairs[..60], &pairs[60..], &cfg).unwrap().model;
        let b = train(&pairs[..60], &pairs[60..], &cfg).unwrap().model;
        let bytes = a.to_bytes().unwrap();
        assert_eq!(bytes, b.to_bytes().unwrap());
        let back = P2eModel::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, a);
        let probe = &pairs[70].ppg;
        assert_eq!(back.translate(probe).unwrap(), a.translate(probe).unwrap());

        let ridge_cfg = P2eConfig { mode: P2eMode::Ridge, ..cfg };
        let m = train(&pairs, &[], &ridge_cfg).unwrap().model;
        let back = P2eModel::read_from(m.to_bytes().unwrap().as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn record_split_protocol() {
        let mut r = rng(9);
        let records: Vec<Vec<CardiacCyclePair>> = (0..10)
            .map(|i| {
                (0..10)
                    .map(|j| {
                        let mut p = pair(smooth_cycle(&mut r, 16), smooth_cycle(&mut r, 16));
                        p.src_ppg_range = (i, j);
                        p
                    })
                    .collect()
            })
            .collect();
        let s = split_records(&records, 0.8, 3, 4).unwrap();
        assert_eq!(s.held_out.len(), 3);
        assert_eq!(s.train.len(), 7 * 8);
        assert_eq!(s.val.len(), 7 * 2);
        for p in &s.train {
            assert!(!s.held_out_ids.contains(&p.src_ppg_range.0) && p.src_ppg_range.1 < 8);
        }
        assert!(s.val.iter().all(|p| p.src_ppg_range.1 >= 8));
        assert_eq!(split_records(&records, 0.8, 3, 4).unwrap().held_out_ids, s.held_out_ids);
        assert!(split_records(&records, 0.8, 10, 4).is_err());
    }

    #[test]
    fn sweep_k_rows_and_extremes() {
        let mut r = rng(10);
        let len = 64;
        // planted linear map in the time domain
        let mix = random_matrix(&mut r, len, len) * (1.0 / len as f64).sqrt();
        let mk = |r: &mut ChaCha8Rng| {
            let p: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
            let e = mix.t().dot(&ndarray::ArrayView1::from(&p)).to_vec();
            pair(p, e)
        };
        let records: Vec<Vec<_>> = (0..6).map(|_| (0..200).map(|_| mk(&mut r)).collect()).collect();
        let split = split_records(&records, 0.8, 1, 0).unwrap();
        let cfg = P2eConfig {
            cycle_len: len,
            mode: P2eMode::Ridge,
            ridge_lambda: 1e-9,
            ..P2eConfig::default()
        };
        let rows = sweep_k(&split, &[1, 16, len], &cfg, DirichletMode::Aligned, Exec::auto()).unwrap();
        assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 16, len]);
        assert!(rows[2].mae <= 1e-4, "{:?}", rows);
        assert!(rows[0].mae > rows[2].mae);
        let seq = sweep_k(&split, &[1, 16, len], &cfg, DirichletMode::Aligned, Exec::Sequential).unwrap();
        assert_eq!(seq, rows);
        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("k,mae,pearson,dirichlet\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
