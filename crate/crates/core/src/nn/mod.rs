//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! A layer is `dense -> [batchnorm] -> activation -> [dropout]`. Weights are
//! stored `[in, out]` so a batch `X [B, in]` maps to `X W + b`.

mod train;

pub use train::{backward_and_step, fit, Adam, EpochStop, History, TrainConfig};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid layer or training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Selu,
    Gelu,
}

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Linear => x,
            Self::Tanh => x.tanh(),
            Self::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            // tanh approximation
            Self::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Self::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Self::Gelu => {
                let u = GELU_C * (x + GELU_K * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
            }
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Self::Linear),
            "tanh" => Some(Self::Tanh),
            "selu" => Some(Self::Selu),
            "gelu" => Some(Self::Gelu),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Tanh => "tanh",
            Self::Selu => "selu",
            Self::Gelu => "gelu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub activation: Activation,
    pub batchnorm: bool,
    #[serde(rename = "dropout")]
    pub dropout_p: f64,
    pub l1: f64,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            batchnorm: false,
            dropout_p: 0.0,
            l1: 0.0,
        }
    }

    pub fn with_batchnorm(mut self) -> Self {
        self.batchnorm = true;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn with_l1(mut self, l1: f64) -> Self {
        self.l1 = l1;
        self
    }
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl Layer {
    /// Trainable tensors in storage order: W, b, then γ, β with batchnorm.
    fn params(&self) -> Vec<&[f64]> {
        let mut v = vec![
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ];
        if self.spec.batchnorm {
            v.push(self.gamma.as_slice().expect("standard layout"));
            v.push(self.beta.as_slice().expect("standard layout"));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let bn = self.spec.batchnorm;
        let mut v = vec![
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ];
        if bn {
            v.push(self.gamma.as_slice_mut().expect("standard layout"));
            v.push(self.beta.as_slice_mut().expect("standard layout"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer intermediates kept for the backward pass.
struct Cache {
    input: Array2<f64>,
    /// Batchnorm-normalized pre-activation (before γ, β).
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    /// Activation input.
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

/// Gradients shaped like the trainable tensors of each layer.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().flatten().all(|v| v.is_finite())
    }
}

/// Batch statistics observed in a train-mode pass, per batchnorm layer.
pub type BatchStats = Vec<Option<(Array1<f64>, Array1<f64>)>>;

pub fn init_network(specs: &[LayerSpec], seed: u64) -> Result<Network, NnError> {
    if specs.is_empty() {
        return Err(NnError::InvalidConfig("no layers".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(NnError::InvalidConfig(format!("layer {i} has a zero dimension")));
        }
        if !(0.0..1.0).contains(&s.dropout_p) || !(s.l1 >= 0.0) {
            return Err(NnError::InvalidConfig(format!("layer {i}: dropout in [0,1), l1 >= 0")));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(NnError::DimMismatch(format!(
                "layer {i} outputs {} but layer {} takes {}",
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|s| {
            let bound = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
            let w = Array2::from_shape_fn((s.in_dim, s.out_dim), |_| rng.random_range(-bound..=bound));
            let n = s.out_dim;
            Layer {
                spec: *s,
                w,
                b: Array1::zeros(n),
                gamma: Array1::ones(n),
                beta: Array1::zeros(n),
                running_mean: Array1::zeros(n),
                running_var: Array1::ones(n),
            }
        })
        .collect();
    Ok(Network { layers })
}

impl Network {
    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.in_dim() {
            return Err(NnError::DimMismatch(format!(
                "input has {} features, network takes {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Inference with running statistics and no dropout.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.w) + &l.b;
            if l.spec.batchnorm {
                let inv = l.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                z = (z - &l.running_mean) * &inv * &l.gamma + &l.beta;
            }
            let act = l.spec.activation;
            z.mapv_inplace(|v| act.apply(v));
            h = z;
        }
        Ok(h)
    }

    /// Forward pass in either mode. Train mode uses batch statistics, samples
    /// dropout masks from `rng` and updates the running statistics.
    pub fn forward(&mut self, x: ArrayView2<f64>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Array2<f64>, NnError> {
        match mode {
            Mode::Eval => self.predict(x),
            Mode::Train => {
                let (out, _, stats) = self.forward_train(x, rng)?;
                self.update_running(&stats);
                Ok(out)
            }
        }
    }

    fn forward_train(
        &self,
        x: ArrayView2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, Vec<Cache>, BatchStats), NnError> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let input = h;
            let mut z = input.dot(&l.w) + &l.b;
            let (xhat, inv_std) = if l.spec.batchnorm {
                let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                let centred = &z - &mean;
                let var = centred.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                let inv = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let xhat = centred * &inv;
                z = &xhat * &l.gamma + &l.beta;
                stats.push(Some((mean, var)));
                (Some(xhat), Some(inv))
            } else {
                stats.push(None);
                (None, None)
            };
            let act = l.spec.activation;
            let mut a = z.mapv(|v| act.apply(v));
            let mask = if l.spec.dropout_p > 0.0 {
                let keep = 1.0 - l.spec.dropout_p;
                let m = Array2::from_shape_fn(a.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                a *= &m;
                Some(m)
            } else {
                None
            };
            caches.push(Cache {
                input,
                xhat,
                inv_std,
                pre: z,
                mask,
            });
            h = a;
        }
        Ok((h, caches, stats))
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        for (l, s) in self.layers.iter_mut().zip(stats) {
            if let Some((mean, var)) = s {
                l.running_mean = &l.running_mean * BN_MOMENTUM + mean * (1.0 - BN_MOMENTUM);
                l.running_var = &l.running_var * BN_MOMENTUM + var * (1.0 - BN_MOMENTUM);
            }
        }
    }

    /// L1 penalty over all weight matrices.
    pub fn l1_penalty(&self) -> f64 {
        self.layers
            .iter()
            .filter(|l| l.spec.l1 > 0.0)
            .map(|l| l.spec.l1 * l.w.iter().map(|v| v.abs()).sum::<f64>())
            .sum()
    }

    /// Train-mode objective (MAE + L1) and its exact gradient, without
    /// touching the network. Dropout masks come from `rng`.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Gradients, BatchStats), NnError> {
        let (out, caches, stats) = self.forward_train(x, rng)?;
        let loss = mae_loss(out.view(), y)? + self.l1_penalty();
        let scale = 1.0 / out.len() as f64;
        let mut d = Array2::from_shape_fn(out.raw_dim(), |ij| sign(out[ij] - y[ij]) * scale);
        let mut grads = vec![Vec::new(); self.layers.len()];
        for (li, (l, c)) in self.layers.iter().zip(&caches).enumerate().rev() {
            if let Some(m) = &c.mask {
                d *= m;
            }
            let act = l.spec.activation;
            d.zip_mut_with(&c.pre, |g, z| *g *= act.derivative(*z));
            let mut layer_grads = Vec::with_capacity(4);
            let (dgamma, dbeta) = if let (Some(xhat), Some(inv)) = (&c.xhat, &c.inv_std) {
                let dgamma = (&d * xhat).sum_axis(Axis(0));
                let dbeta = d.sum_axis(Axis(0));
                let bsz = d.nrows() as f64;
                let dxhat = &d * &l.gamma;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                d = (dxhat * bsz - &sum_dxhat - xhat * &sum_dxhat_xhat) * &(inv / bsz);
                (Some(dgamma), Some(dbeta))
            } else {
                (None, None)
            };
            let mut dw = c.input.t().dot(&d);
            if l.spec.l1 > 0.0 {
                dw.zip_mut_with(&l.w, |g, w| *g += l.spec.l1 * sign(*w));
            }
            let db = d.sum_axis(Axis(0));
            layer_grads.push(dw.iter().copied().collect::<Vec<f64>>());
            layer_grads.push(db.to_vec());
            if let (Some(g), Some(b)) = (dgamma, dbeta) {
                layer_grads.push(g.to_vec());
                layer_grads.push(b.to_vec());
            }
            grads[li] = layer_grads;
            if li > 0 {
                d = d.dot(&l.w.t());
            }
        }
        Ok((loss, Gradients { layers: grads }, stats))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params().iter().map(|p| p.len()).sum::<usize>()).sum()
    }

    /// All trainable values, layer by layer in storage order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().flatten().copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for l in &mut self.layers {
            for p in l.params_mut() {
                for v in p.iter_mut() {
                    *v = *it.next().expect("enough values");
                }
            }
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute elementwise error.
pub fn mae_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64, NnError> {
    if pred.dim() != target.dim() {
        return Err(NnError::ShapeMismatch(pred.dim(), target.dim()));
    }
    if pred.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let s: f64 = pred.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Inputs and targets with matching row counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self, NnError> {
        if inputs.nrows() != targets.nrows() {
            return Err(NnError::ShapeMismatch(inputs.dim(), targets.dim()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn rows(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
        }
    }
}

/// Per-column affine standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Column means and population standard deviations, floored at 1e-8.
    pub fn fit(x: ArrayView2<f64>) -> Result<Self, NnError> {
        if x.nrows() == 0 {
            return Err(NnError::EmptyDataset);
        }
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(v.sqrt().max(STD_FLOOR));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, cols: usize) -> Result<(), NnError> {
        if cols != self.dim() {
            return Err(NnError::DimMismatch(format!(
                "standardizer has {} columns, data has {cols}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check(x.ncols())?;
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, z: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check(z.ncols())?;
        let mut out = z.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }
}
