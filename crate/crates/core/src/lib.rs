//! Signal processing and learning toolkit for smartphone photoplethysmography.
//!
//! The crate turns fingertip-video or recorded PPG into vital-sign estimates
//! (heart rate, SpO2, respiratory rate) and synthesizes a single-lead ECG by
//! mapping cardiac cycles through a DCT-domain regressor.
//!
//! Module map:
//!
//! - [`signal`]: trace and label types, CSV I/O, resampling, windowing
//! - [`video`]: `PFS1` raw frame streams and pixel-averaged PPG extraction
//! - [`wavelet`]: Daubechies DWT and the denoise / detrend filters
//! - [`peaks`]: TERMA event detection and ECG/PPG fiducials
//! - [`cycles`]: PPG/ECG alignment and per-beat cycle pairs
//! - [`spectral`]: FFT, DCT-II/III, STFT, dominant frequency
//! - [`nn`]: dense network engine with exact backpropagation and Adam
//! - [`p2e`]: ridge and FFNN PPG-to-ECG translators
//! - [`vitals`]: HR / SpO2 / RR estimators and the STFT regression head
//! - [`metrics`]: MAE, Pearson, Dirichlet distance, per-fiducial errors
//! - [`synth`]: deterministic synthetic PPG/ECG generator with ground truth
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cycles;
pub mod error;
pub mod exec;
pub mod filter;
pub mod linalg;
pub mod metrics;
pub mod model_io;
pub mod nn;
pub mod p2e;
pub mod peaks;
pub mod signal;
pub mod spectral;
pub mod synth;
pub mod video;
pub mod vitals;
pub mod wavelet;

pub use error::{Error, Result};
pub use signal::{LabelSeries, SignalTrace, WindowSpec};
