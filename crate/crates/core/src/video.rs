//! `PFS1` raw frame streams and pixel-averaged PPG extraction.
//!
//! Layout: little-endian header (magic `PFS1`, then u32 width, height,
//! fps_num, fps_den, frame_count, channels) followed by `frame_count` frames
//! of `width * height * channels` bytes, row-major, channel-interleaved RGB.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::signal::SignalTrace;

pub const MAGIC: &[u8; 4] = b"PFS1";
const CHANNELS: u32 = 3;
const LABELS: [&str; 3] = ["red", "green", "blue"];

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("not a PFS1 stream")]
    BadMagic,
    #[error("payload holds {got} of {expected} frames")]
    TruncatedPayload { expected: u32, got: u32 },
    #[error("payload has bytes beyond the declared frames")]
    TrailingBytes,
    #[error("stream has no frames")]
    ZeroFrames,
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("crop fraction {0} outside (0, 1]")]
    InvalidCrop(f64),
    #[error("sample value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("trace must have 3 channels, got {0}")]
    ChannelCount(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameStreamHeader {
    pub width: u32,
    pub height: u32,
    pub fps_num: u32,
    pub fps_den: u32,
    pub frame_count: u32,
    pub channels: u32,
}

impl FrameStreamHeader {
    pub fn frame_bytes(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }

    pub fn rate_hz(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    fn validate(&self) -> Result<(), VideoError> {
        let bad = |m: &str| Err(VideoError::InvalidHeader(m.into()));
        if self.width == 0 || self.height == 0 {
            return bad("zero frame dimension");
        }
        if self.fps_num == 0 || self.fps_den == 0 {
            return bad("zero frame rate term");
        }
        if self.channels != CHANNELS {
            return bad("channels must be 3");
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, VideoError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| VideoError::BadMagic)?;
        if &magic != MAGIC {
            return Err(VideoError::BadMagic);
        }
        let mut words = [0u32; 6];
        for w in words.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| VideoError::InvalidHeader("header ends early".into()))?;
            *w = u32::from_le_bytes(b);
        }
        let h = Self {
            width: words[0],
            height: words[1],
            fps_num: words[2],
            fps_den: words[3],
            frame_count: words[4],
            channels: words[5],
        };
        h.validate()?;
        Ok(h)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            self.width,
            self.height,
            self.fps_num,
            self.fps_den,
            self.frame_count,
            self.channels,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Centred crop covering `fraction` of each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    pub fraction: f64,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self { fraction: 0.5 }
    }
}

impl CropSpec {
    /// `(start, len)` along an axis of `n` pixels.
    fn span(&self, n: u32) -> (usize, usize) {
        let len = ((self.fraction * n as f64).round() as usize).clamp(1, n as usize);
        ((n as usize - len) / 2, len)
    }
}

/// Mean of the cropped pixels per channel, scaled to [0, 1].
pub fn extract_ppg<R: Read>(mut reader: R, crop: CropSpec) -> Result<SignalTrace, VideoError> {
    if !(crop.fraction > 0.0 && crop.fraction <= 1.0) {
        return Err(VideoError::InvalidCrop(crop.fraction));
    }
    let h = FrameStreamHeader::read_from(&mut reader)?;
    if h.frame_count == 0 {
        return Err(VideoError::ZeroFrames);
    }
    let (x0, cw) = crop.span(h.width);
    let (y0, ch) = crop.span(h.height);
    let denom = (cw * ch) as f64 * 255.0;
    let row = h.width as usize * 3;
    let mut frame = vec![0u8; h.frame_bytes()];
    let mut out: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(h.frame_count as usize));
    for got in 0..h.frame_count {
        reader.read_exact(&mut frame).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => VideoError::TruncatedPayload {
                expected: h.frame_count,
                got,
            },
            _ => VideoError::Io(e),
        })?;
        let mut sums = [0u64; 3];
        for y in y0..y0 + ch {
            let line = &frame[y * row + x0 * 3..y * row + (x0 + cw) * 3];
            for px in line.chunks_exact(3) {
                for c in 0..3 {
                    sums[c] += px[c] as u64;
                }
            }
        }
        for c in 0..3 {
            out[c].push(sums[c] as f64 / denom);
        }
    }
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(VideoError::TrailingBytes);
    }
    Ok(SignalTrace::new(
        out.into(),
        h.rate_hz(),
        LABELS.iter().map(|s| s.to_string()).collect(),
        0.0,
    )
    .expect("pixel means are finite"))
}

pub fn extract_ppg_file<P: AsRef<Path>>(path: P, crop: CropSpec) -> Result<SignalTrace, VideoError> {
    extract_ppg(BufReader::new(File::open(path)?), crop)
}

/// Frame rate as a rational with denominator 1000 (or 1 for whole rates).
fn rate_fraction(rate_hz: f64) -> (u32, u32) {
    if rate_hz.fract() == 0.0 {
        (rate_hz as u32, 1)
    } else {
        ((rate_hz * 1000.0).round() as u32, 1000)
    }
}

/// Encode a 3-channel trace in [0, 1] as uniform-colour frames.
pub fn write_frames<W: Write>(trace: &SignalTrace, width: u32, height: u32, mut w: W) -> Result<(), VideoError> {
    if trace.n_channels() != 3 {
        return Err(VideoError::ChannelCount(trace.n_channels()));
    }
    let order: Vec<&[f64]> = if LABELS.iter().all(|l| trace.channel_index(l).is_some()) {
        LABELS.iter().map(|l| trace.channel_by_label(l).unwrap()).collect()
    } else {
        (0..3).map(|c| trace.channel(c)).collect()
    };
    if let Some(v) = order.iter().flat_map(|c| c.iter()).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(VideoError::ValueOutOfRange(*v));
    }
    let (fps_num, fps_den) = rate_fraction(trace.sample_rate_hz());
    let h = FrameStreamHeader {
        width,
        height,
        fps_num,
        fps_den,
        frame_count: trace.n_samples() as u32,
        channels: CHANNELS,
    };
    h.validate()?;
    h.write_to(&mut w)?;
    let mut frame = vec![0u8; h.frame_bytes()];
    for i in 0..trace.n_samples() {
        let px: Vec<u8> = order.iter().map(|c| (c[i] * 255.0).round() as u8).collect();
        for chunk in frame.chunks_exact_mut(3) {
            chunk.copy_from_slice(&px);
        }
        w.write_all(&frame)?;
    }
    w.flush()?;
    Ok(())
}

pub fn synthesize_frames<P: AsRef<Path>>(trace: &SignalTrace, width: u32, height: u32, path: P) -> Result<(), VideoError> {
    if trace.n_samples() == 0 {
        return Err(VideoError::ZeroFrames);
    }
    write_frames(trace, width, height, BufWriter::new(File::create(path)?))
}
