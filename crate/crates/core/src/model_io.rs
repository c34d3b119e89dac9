//! The "P2EM" v1 model container.
//!
//! Layout: 4-byte magic `P2EM`, little-endian u32 header length, UTF-8 JSON
//! header, then every parameter as a little-endian f64. Networks store, per
//! layer, W (row-major `[in, out]`), b, γ, β, running mean and running
//! variance. Ridge models store their weight matrix as one block.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Layer, LayerSpec, Network, Standardizer};

pub const MAGIC: &[u8; 4] = b"P2EM";
pub const FORMAT: &str = "f64le";
pub const VERSION: u32 = 1;
const MAX_HEADER: u32 = 64 << 20;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported parameter format {0:?}")]
    UnsupportedFormat(String),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("header length {0} is implausible")]
    HeaderTooLarge(u32),
    #[error("expected {expected} parameters, found {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("truncated parameter block")]
    Truncated,
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Input and target standardization shipped with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input: Standardizer,
    pub target: Standardizer,
}

impl NormStats {
    pub fn identity(n_in: usize, n_out: usize) -> Self {
        Self {
            input: Standardizer::identity(n_in),
            target: Standardizer::identity(n_out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ffnn,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub version: u32,
    pub mode: ModelKind,
    pub layers: Vec<LayerSpec>,
    /// `[rows, cols]` of the ridge weight block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge_shape: Option<[usize; 2]>,
    pub norm_stats: NormStats,
    pub seed: u64,
    pub format: String,
    /// Free-form settings of the producer (DCT sizes, cycle length, ...).
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ModelHeader {
    pub fn param_count(&self) -> usize {
        match self.mode {
            ModelKind::Ffnn => self.layers.iter().map(|l| l.in_dim * l.out_dim + 5 * l.out_dim).sum(),
            ModelKind::Ridge => self.ridge_shape.map_or(0, |[r, c]| r * c),
        }
    }
}

/// Decoded model file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Network(Network),
    Ridge(Array2<f64>),
}

pub fn write_container<W: Write>(mut w: W, header: &ModelHeader, params: &[f64]) -> Result<(), ModelIoError> {
    if params.len() != header.param_count() {
        return Err(ModelIoError::ParamCount {
            expected: header.param_count(),
            got: params.len(),
        });
    }
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| ModelIoError::HeaderTooLarge(u32::MAX))?;
    w.write_all(MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<(ModelHeader, Vec<f64>), ModelIoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| ModelIoError::BadMagic)?;
    if &magic != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| ModelIoError::Truncated)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(ModelIoError::HeaderTooLarge(len));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|_| ModelIoError::Truncated)?;
    let header: ModelHeader = serde_json::from_slice(&json)?;
    if header.version != VERSION {
        return Err(ModelIoError::UnsupportedVersion(header.version));
    }
    if header.format != FORMAT {
        return Err(ModelIoError::UnsupportedFormat(header.format.clone()));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(ModelIoError::Truncated);
    }
    let params: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if params.len() != header.param_count() {
        return Err(ModelIoError::ParamCount {
            expected: header.param_count(),
            got: params.len(),
        });
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ModelIoError::Invalid("non-finite parameter".into()));
    }
    Ok((header, params))
}

/// Every stored value of a network, in file order.
pub fn network_params(net: &Network) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &net.layers {
        out.extend(l.w.iter());
        out.extend(l.b.iter());
        out.extend(l.gamma.iter());
        out.extend(l.beta.iter());
        out.extend(l.running_mean.iter());
        out.extend(l.running_var.iter());
    }
    out
}

pub fn network_from_params(specs: &[LayerSpec], params: &[f64]) -> Result<Network, ModelIoError> {
    if specs.is_empty() {
        return Err(ModelIoError::Invalid("no layers".into()));
    }
    for w in specs.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(ModelIoError::Invalid("layer dimensions do not chain".into()));
        }
    }
    let expected: usize = specs.iter().map(|l| l.in_dim * l.out_dim + 5 * l.out_dim).sum();
    if params.len() != expected {
        return Err(ModelIoError::ParamCount {
            expected,
            got: params.len(),
        });
    }
    let mut pos = 0;
    let mut take = |n: usize| {
        let s = &params[pos..pos + n];
        pos += n;
        s.to_vec()
    };
    let layers = specs
        .iter()
        .map(|s| {
            let w = Array2::from_shape_vec((s.in_dim, s.out_dim), take(s.in_dim * s.out_dim)).expect("sized");
            Layer {
                spec: *s,
                w,
                b: Array1::from(take(s.out_dim)),
                gamma: Array1::from(take(s.out_dim)),
                beta: Array1::from(take(s.out_dim)),
                running_mean: Array1::from(take(s.out_dim)),
                running_var: Array1::from(take(s.out_dim)),
            }
        })
        .collect();
    Ok(Network { layers })
}

fn check_stats(stats: &NormStats, n_in: usize, n_out: usize) -> Result<(), ModelIoError> {
    if stats.input.dim() != n_in || stats.target.dim() != n_out {
        return Err(ModelIoError::Invalid(format!(
            "norm stats are {}->{}, model is {n_in}->{n_out}",
            stats.input.dim(),
            stats.target.dim()
        )));
    }
    Ok(())
}

pub fn encode_network(
    net: &Network,
    stats: &NormStats,
    seed: u64,
    meta: BTreeMap<String, serde_json::Value>,
) -> Result<(ModelHeader, Vec<f64>), ModelIoError> {
    check_stats(stats, net.in_dim(), net.out_dim())?;
    let header = ModelHeader {
        version: VERSION,
        mode: ModelKind::Ffnn,
        layers: net.specs(),
        ridge_shape: None,
        norm_stats: stats.clone(),
        seed,
        format: FORMAT.into(),
        meta,
    };
    Ok((header, network_params(net)))
}

pub fn encode_ridge(
    w: &Array2<f64>,
    stats: &NormStats,
    seed: u64,
    meta: BTreeMap<String, serde_json::Value>,
) -> Result<(ModelHeader, Vec<f64>), ModelIoError> {
    // one bias row on top of the input dimension
    check_stats(stats, w.nrows().saturating_sub(1), w.ncols())?;
    let header = ModelHeader {
        version: VERSION,
        mode: ModelKind::Ridge,
        layers: Vec::new(),
        ridge_shape: Some([w.nrows(), w.ncols()]),
        norm_stats: stats.clone(),
        seed,
        format: FORMAT.into(),
        meta,
    };
    Ok((header, w.iter().copied().collect()))
}

pub fn decode(header: &ModelHeader, params: &[f64]) -> Result<StoredModel, ModelIoError> {
    match header.mode {
        ModelKind::Ffnn => {
            let net = network_from_params(&header.layers, params)?;
            check_stats(&header.norm_stats, net.in_dim(), net.out_dim())?;
            Ok(StoredModel::Network(net))
        }
        ModelKind::Ridge => {
            let [r, c] = header
                .ridge_shape
                .ok_or_else(|| ModelIoError::Invalid("ridge model without ridge_shape".into()))?;
            if r < 2 || c == 0 {
                return Err(ModelIoError::Invalid("empty ridge block".into()));
            }
            check_stats(&header.norm_stats, r - 1, c)?;
            let w = Array2::from_shape_vec((r, c), params.to_vec())
                .map_err(|e| ModelIoError::Invalid(e.to_string()))?;
            Ok(StoredModel::Ridge(w))
        }
    }
}

pub fn save(path: &Path, header: &ModelHeader, params: &[f64]) -> Result<(), ModelIoError> {
    write_container(BufWriter::new(File::create(path)?), header, params)
}

pub fn load(path: &Path) -> Result<(ModelHeader, Vec<f64>), ModelIoError> {
    read_container(BufReader::new(File::open(path)?))
}
