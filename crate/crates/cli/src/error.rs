use std::fmt;

use pulseforge_core::{
    cycles::CycleError, metrics::MetricsError, model_io::ModelIoError, nn::NnError, p2e::P2eError,
    peaks::PeakError, signal::SignalError, spectral::SpectralError, synth::SynthError,
    video::VideoError, vitals::VitalsError, wavelet::WaveletError, Error,
};

#[derive(Debug)]
pub enum CliError {
    /// Argument parsing failures, help and version output.
    Clap(clap::Error),
    Usage(String),
    /// Module-qualified message from the core crate or file I/O.
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) | CliError::Clap(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Clap(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}\n\nFor more information, try '--help'."),
            CliError::Domain(m) => write!(f, "{m}"),
        }
    }
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        CliError::Clap(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

macro_rules! via_core_error {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        })*
    };
}

via_core_error!(
    CycleError,
    MetricsError,
    ModelIoError,
    NnError,
    P2eError,
    PeakError,
    SignalError,
    SpectralError,
    SynthError,
    VideoError,
    VitalsError,
    WaveletError,
);

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Domain(format!("json: {e}"))
    }
}
