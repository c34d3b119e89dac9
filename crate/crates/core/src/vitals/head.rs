//! Learned vitals regressor on short-time spectra.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{evaluate_vitals, VitalsError};
use crate::exec::Exec;
use crate::model_io::{self, ModelIoError, NormStats, StoredModel};
use crate::nn::{fit, init_network, Activation, Batch, History, LayerSpec, Network, Standardizer, TrainConfig};
use crate::signal::SignalTrace;
use crate::spectral::stft;

pub const MIN_WINDOWS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VitalTarget {
    Hr,
    Spo2,
    Rr,
}

impl VitalTarget {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hr" => Some(Self::Hr),
            "spo2" => Some(Self::Spo2),
            "rr" => Some(Self::Rr),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hr => "hr",
            Self::Spo2 => "spo2",
            Self::Rr => "rr",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub stft_window_s: f64,
    pub stft_hop_s: f64,
    pub hidden: (usize, usize),
    /// Share of windows held out for early stopping and the reported error.
    pub holdout_frac: f64,
    pub train: TrainConfig,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            stft_window_s: 2.0,
            stft_hop_s: 0.5,
            hidden: (64, 32),
            holdout_frac: 0.2,
            train: TrainConfig {
                batch_size: 128,
                ..TrainConfig::default()
            },
        }
    }
}

/// Flattened STFT magnitudes of every channel, each channel first divided
/// by its mean so the spectra carry relative (AC/DC) amplitude.
pub fn stft_features(window: &SignalTrace, stft_window_s: f64, stft_hop_s: f64) -> Result<Vec<f64>, VitalsError> {
    let rate = window.sample_rate_hz();
    let mut out = Vec::new();
    for (c, label) in window.channels().iter().zip(window.channel_labels()) {
        let dc = c.iter().sum::<f64>() / c.len() as f64;
        if !(dc > 0.0) {
            return Err(VitalsError::NonPositiveDc(label.clone()));
        }
        let rel: Vec<f64> = c.iter().map(|v| v / dc - 1.0).collect();
        out.extend(stft(&rel, rate, stft_window_s, stft_hop_s)?.flatten());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitalsHead {
    pub target: VitalTarget,
    pub net: Network,
    pub stats: NormStats,
    pub stft_window_s: f64,
    pub stft_hop_s: f64,
    pub seed: u64,
}

impl VitalsHead {
    pub fn predict(&self, windows: &[SignalTrace], exec: Exec) -> Result<Vec<f64>, VitalsError> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let x = feature_matrix(windows, self.stft_window_s, self.stft_hop_s, exec)?;
        let z = self.stats.input.transform(x.view())?;
        let out = self.net.predict(z.view())?;
        Ok(self.stats.target.inverse(out.view())?.column(0).to_vec())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelIoError> {
        let mut meta = BTreeMap::new();
        meta.insert("task".into(), json!("vitals"));
        meta.insert("target".into(), json!(self.target.as_str()));
        meta.insert("stft_window_s".into(), json!(self.stft_window_s));
        meta.insert("stft_hop_s".into(), json!(self.stft_hop_s));
        let (h, p) = model_io::encode_network(&self.net, &self.stats, self.seed, meta)?;
        let mut out = Vec::new();
        model_io::write_container(&mut out, &h, &p)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelIoError> {
        let (h, p) = model_io::load(path)?;
        let invalid = |m: &str| ModelIoError::Invalid(m.into());
        if h.meta.get("task").and_then(|v| v.as_str()) != Some("vitals") {
            return Err(invalid("not a vitals model"));
        }
        let target = h
            .meta
            .get("target")
            .and_then(|v| v.as_str())
            .and_then(VitalTarget::parse)
            .ok_or_else(|| invalid("missing target"))?;
        let f = |k: &str| h.meta.get(k).and_then(|v| v.as_f64()).ok_or_else(|| invalid(k));
        let (stft_window_s, stft_hop_s) = (f("stft_window_s")?, f("stft_hop_s")?);
        let StoredModel::Network(net) = model_io::decode(&h, &p)? else {
            return Err(invalid("vitals model must be a network"));
        };
        Ok(Self {
            target,
            net,
            stats: h.norm_stats,
            stft_window_s,
            stft_hop_s,
            seed: h.seed,
        })
    }
}

fn feature_matrix(windows: &[SignalTrace], win_s: f64, hop_s: f64, exec: Exec) -> Result<Array2<f64>, VitalsError> {
    let rows = exec.try_map(windows, |w| stft_features(w, win_s, hop_s))?;
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(VitalsError::LengthMismatch(bad.len(), d));
    }
    Ok(Array2::from_shape_vec((rows.len(), d), rows.concat()).expect("rows have equal length"))
}

#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub head: VitalsHead,
    pub history: History,
    /// Mean and population std of absolute error on the held-out windows.
    pub holdout_mu: f64,
    pub holdout_sigma: f64,
    pub holdout_size: usize,
}

/// Fit an MLP (features -> 64 -> 32 -> 1, GELU with batchnorm) on labelled
/// windows. A seeded share of the windows is held out for early stopping
/// and for the reported error.
pub fn train_vitals_head(
    windows: &[(SignalTrace, f64)],
    target: VitalTarget,
    cfg: &HeadConfig,
    exec: Exec,
) -> Result<TrainedHead, VitalsError> {
    if windows.len() < MIN_WINDOWS {
        return Err(VitalsError::TooFewWindows {
            got: windows.len(),
            need: MIN_WINDOWS,
        });
    }
    if !(0.0..1.0).contains(&cfg.holdout_frac) {
        return Err(VitalsError::Nn(crate::nn::NnError::InvalidConfig("holdout_frac must be in [0, 1)".into())));
    }
    let traces: Vec<SignalTrace> = windows.iter().map(|w| w.0.clone()).collect();
    let x = feature_matrix(&traces, cfg.stft_window_s, cfg.stft_hop_s, exec)?;
    let y = Array2::from_shape_fn((windows.len(), 1), |(i, _)| windows[i].1);

    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.train.seed));
    let n_hold = (windows.len() as f64 * cfg.holdout_frac).round() as usize;
    let (hold, train_idx) = order.split_at(n_hold);

    let xt = x.select(Axis(0), train_idx);
    let yt = y.select(Axis(0), train_idx);
    let stats = NormStats {
        input: Standardizer::fit(xt.view())?,
        target: Standardizer::fit(yt.view())?,
    };
    let train = Batch::new(stats.input.transform(xt.view())?, stats.target.transform(yt.view())?)?;
    let val = if hold.is_empty() {
        None
    } else {
        let xv = x.select(Axis(0), hold);
        let yv = y.select(Axis(0), hold);
        Some(Batch::new(stats.input.transform(xv.view())?, stats.target.transform(yv.view())?)?)
    };
    let (h1, h2) = cfg.hidden;
    let specs = [
        LayerSpec::new(x.ncols(), h1, Activation::Gelu).with_batchnorm(),
        LayerSpec::new(h1, h2, Activation::Gelu).with_batchnorm(),
        LayerSpec::new(h2, 1, Activation::Linear),
    ];
    let mut net = init_network(&specs, cfg.train.seed)?;
    let fit_cfg = TrainConfig {
        seed: cfg.train.seed.wrapping_add(1),
        ..cfg.train.clone()
    };
    let history = fit(&mut net, &train, val.as_ref(), &fit_cfg)?;
    let head = VitalsHead {
        target,
        net,
        stats,
        stft_window_s: cfg.stft_window_s,
        stft_hop_s: cfg.stft_hop_s,
        seed: cfg.train.seed,
    };
    let (holdout_mu, holdout_sigma) = if hold.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let hold_traces: Vec<SignalTrace> = hold.iter().map(|&i| traces[i].clone()).collect();
        let pred = head.predict(&hold_traces, exec)?;
        let labels: Vec<f64> = hold.iter().map(|&i| windows[i].1).collect();
        evaluate_vitals(&pred, &labels)?
    };
    Ok(TrainedHead {
        head,
        history,
        holdout_mu,
        holdout_sigma,
        holdout_size: hold.len(),
    })
}
