//! `pulseforge`: reproducible pipelines over pulseforge-core.
//!
//! Every subcommand writes its outputs as files under `--out` and echoes
//! the fully resolved flag set into `run.resolved.cfg` there. Exit codes:
//! 0 success, 1 domain error, 2 usage error.

mod config;
mod error;
mod io;
mod p2e_cmds;
mod plot;
mod signal_cmds;
mod vitals_cmds;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "pulseforge", version, about = "PPG vitals and PPG-to-ECG translation pipelines")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a synthetic PPG/ECG record with ground truth
    Synth(signal_cmds::SynthArgs),
    /// Pixel-average a PFS1 frame stream into a red/green/blue PPG trace
    Extract(signal_cmds::ExtractArgs),
    /// Wavelet denoise and detrend a trace
    Preprocess(signal_cmds::PreprocessArgs),
    /// Detect R/P/Q/S/T or systolic/onset fiducials
    Peaks(signal_cmds::PeaksArgs),
    /// Align a PPG/ECG record and cut per-beat cycle pairs
    Segment(signal_cmds::SegmentArgs),
    /// Train a ridge or FFNN PPG-to-ECG translator
    TrainP2e(p2e_cmds::TrainP2eArgs),
    /// Translate PPG cycles into ECG cycles with a trained model
    InferP2e(p2e_cmds::InferP2eArgs),
    /// Held-out reconstruction error against the DCT coefficient count
    SweepK(p2e_cmds::SweepKArgs),
    /// Reconstruction report (MAE, Pearson, Dirichlet, per-fiducial MMAE/MSAE)
    Evaluate(p2e_cmds::EvaluateArgs),
    /// Windowed HR, SpO2 and RR estimates
    Vitals(vitals_cmds::VitalsArgs),
    /// Mean and std of absolute vitals error against labels
    VitalsEval(vitals_cmds::VitalsEvalArgs),
    /// Train an STFT regression head for one vital
    TrainVitals(vitals_cmds::TrainVitalsArgs),
    /// Magnitude spectrum of one channel
    Spectrum(signal_cmds::SpectrumArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// key = value file of flag values; explicit flags take precedence [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Log level: off, error, warn, info, debug or trace
    #[arg(long, default_value = "warn")]
    pub log_level: log::LevelFilter,
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Synth(a) => &a.common,
            Cmd::Extract(a) => &a.common,
            Cmd::Preprocess(a) => &a.common,
            Cmd::Peaks(a) => &a.common,
            Cmd::Segment(a) => &a.common,
            Cmd::TrainP2e(a) => &a.common,
            Cmd::InferP2e(a) => &a.common,
            Cmd::SweepK(a) => &a.common,
            Cmd::Evaluate(a) => &a.common,
            Cmd::Vitals(a) => &a.common,
            Cmd::VitalsEval(a) => &a.common,
            Cmd::TrainVitals(a) => &a.common,
            Cmd::Spectrum(a) => &a.common,
        }
    }

    fn run(&self) -> Result<(), CliError> {
        match self {
            Cmd::Synth(a) => signal_cmds::synth(a),
            Cmd::Extract(a) => signal_cmds::extract(a),
            Cmd::Preprocess(a) => signal_cmds::preprocess(a),
            Cmd::Peaks(a) => signal_cmds::peaks(a),
            Cmd::Segment(a) => signal_cmds::segment(a),
            Cmd::TrainP2e(a) => p2e_cmds::train(a),
            Cmd::InferP2e(a) => p2e_cmds::infer(a),
            Cmd::SweepK(a) => p2e_cmds::sweep(a),
            Cmd::Evaluate(a) => p2e_cmds::evaluate(a),
            Cmd::Vitals(a) => vitals_cmds::vitals(a),
            Cmd::VitalsEval(a) => vitals_cmds::vitals_eval(a),
            Cmd::TrainVitals(a) => vitals_cmds::train_vitals(a),
            Cmd::Spectrum(a) => signal_cmds::spectrum(a),
        }
    }
}

fn set_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PULSEFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("PULSEFORGE_THREADS must be a positive integer, got {raw:?}")))?;
    pulseforge_core::exec::set_worker_threads(n);
    Ok(())
}

fn run(argv: Vec<OsString>) -> Result<(), CliError> {
    set_threads()?;
    let (cli, sub_name, sub_matches) = config::parse(argv)?;
    let common = cli.cmd.common();
    env_logger::Builder::new()
        .filter_level(common.log_level)
        .format_timestamp(None)
        .try_init()
        .ok();
    io::create_dir(&common.out)?;
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(&sub_name).expect("parsed subcommand exists");
    config::write_resolved(sub, &sub_matches, &common.out.join("run.resolved.cfg"))?;
    cli.cmd.run()
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            ExitCode::from(if e.use_stderr() { 2 } else { 0 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl Cli {
    fn from_matches(m: &clap::ArgMatches) -> Result<Self, clap::Error> {
        <Self as FromArgMatches>::from_arg_matches(m)
    }
}
