use thiserror::Error;

use crate::{
    cycles::CycleError, metrics::MetricsError, model_io::ModelIoError, nn::NnError,
    p2e::P2eError, peaks::PeakError, signal::SignalError, spectral::SpectralError,
    synth::SynthError, video::VideoError, vitals::VitalsError, wavelet::WaveletError,
};

/// Crate-level error, one variant per module so messages carry their origin.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal: {0}")]
    Signal(#[from] SignalError),
    #[error("video: {0}")]
    Video(#[from] VideoError),
    #[error("preprocess: {0}")]
    Wavelet(#[from] WaveletError),
    #[error("peaks: {0}")]
    Peaks(#[from] PeakError),
    #[error("cycles: {0}")]
    Cycles(#[from] CycleError),
    #[error("spectral: {0}")]
    Spectral(#[from] SpectralError),
    #[error("nnkit: {0}")]
    Nn(#[from] NnError),
    #[error("p2e: {0}")]
    P2e(#[from] P2eError),
    #[error("vitals: {0}")]
    Vitals(#[from] VitalsError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
    #[error("model file: {0}")]
    ModelIo(#[from] ModelIoError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
