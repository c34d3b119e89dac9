//! FFT-backed kernels: orthonormal DCT-II/III, Hann STFT, dominant frequency.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::exec::Exec;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("coefficient count {k} must be in 1..={len}")]
    BadK { k: usize, len: usize },
    #[error("window of {window} samples does not fit in {len} samples")]
    WindowTooLong { window: usize, len: usize },
    #[error("band [{lo}, {hi}] Hz holds no frequency bin below Nyquist")]
    EmptyBand { lo: f64, hi: f64 },
    #[error("empty input")]
    EmptyInput,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Forward complex FFT, unnormalized.
pub fn fft(buf: &mut [Complex64]) {
    if !buf.is_empty() {
        plan(buf.len(), false).process(buf);
    }
}

/// Inverse complex FFT scaled by `1/n`.
pub fn ifft(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    plan(buf.len(), true).process(buf);
    let s = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= s;
    }
}

/// Magnitudes of the first `n_fft/2 + 1` bins of the real signal `x`
/// zero-padded (or truncated) to `n_fft`.
pub fn rfft_magnitude(x: &[f64], n_fft: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n_fft)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fft(&mut buf);
    buf[..n_fft / 2 + 1].iter().map(|c| c.norm()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DctNorm {
    #[default]
    Orthonormal,
}

/// Leading DCT-II coefficients of a length-`source_len` signal.
#[derive(Debug, Clone, PartialEq)]
pub struct DctVector {
    pub coeffs: Vec<f64>,
    pub source_len: usize,
    pub norm: DctNorm,
}

fn dct_scale(k: usize, n: usize) -> f64 {
    let s = (2.0 / n as f64).sqrt();
    if k == 0 {
        s / 2f64.sqrt()
    } else {
        s
    }
}

/// Orthonormal DCT-II truncated to the first `k` coefficients.
///
/// Uses the even/odd reordering that turns the DCT into one length-`n`
/// complex FFT.
pub fn dct2(x: &[f64], k: usize) -> Result<DctVector, SpectralError> {
    let n = x.len();
    if k == 0 || k > n {
        return Err(SpectralError::BadK { k, len: n });
    }
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n.div_ceil(2) {
        v[i].re = x[2 * i];
    }
    for i in 0..n / 2 {
        v[n - 1 - i].re = x[2 * i + 1];
    }
    fft(&mut v);
    let coeffs = (0..k)
        .map(|j| {
            let w = Complex64::from_polar(1.0, -PI * j as f64 / (2.0 * n as f64));
            (v[j] * w).re * dct_scale(j, n)
        })
        .collect();
    Ok(DctVector {
        coeffs,
        source_len: n,
        norm: DctNorm::Orthonormal,
    })
}

/// Orthonormal DCT-III of the zero-padded coefficients; exact inverse of
/// [`dct2`] when no coefficients were dropped.
pub fn idct(c: &DctVector) -> Vec<f64> {
    let n = c.source_len;
    if n == 0 {
        return Vec::new();
    }
    // unnormalized DCT-II values Y[j]
    let y = |j: usize| -> f64 {
        if j < c.coeffs.len() && j < n {
            c.coeffs[j] / dct_scale(j, n)
        } else {
            0.0
        }
    };
    let mut v: Vec<Complex64> = (0..n)
        .map(|j| {
            let w = Complex64::from_polar(1.0, PI * j as f64 / (2.0 * n as f64));
            let im = if j == 0 { 0.0 } else { y(n - j) };
            w * Complex64::new(y(j), -im)
        })
        .collect();
    ifft(&mut v);
    let mut out = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        out[2 * i] = v[i].re;
    }
    for i in 0..n / 2 {
        out[2 * i + 1] = v[n - 1 - i].re;
    }
    out
}

/// Magnitude spectrogram, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Vec<Vec<f64>>,
    pub frame_hop_s: f64,
    pub window_s: f64,
    pub rate_hz: f64,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn n_bins(&self) -> usize {
        self.magnitudes.first().map_or(0, Vec::len)
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        let win = (self.window_s * self.rate_hz).round();
        bin as f64 * self.rate_hz / win
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.magnitudes.iter().flatten().copied().collect()
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed short-time magnitude spectrum, frames computed via `exec`.
pub fn stft_with(
    signal: &[f64],
    rate_hz: f64,
    window_s: f64,
    hop_s: f64,
    exec: Exec,
) -> Result<Spectrogram, SpectralError> {
    let win = (window_s * rate_hz).round() as usize;
    let hop = ((hop_s * rate_hz).round() as usize).max(1);
    if win == 0 || win > signal.len() {
        return Err(SpectralError::WindowTooLong {
            window: win,
            len: signal.len(),
        });
    }
    let n_frames = (signal.len() - win) / hop + 1;
    let w = hann(win);
    let magnitudes = exec.map_range(n_frames, |f| {
        let seg: Vec<f64> = signal[f * hop..f * hop + win]
            .iter()
            .zip(&w)
            .map(|(x, w)| x * w)
            .collect();
        rfft_magnitude(&seg, win)
    });
    Ok(Spectrogram {
        magnitudes,
        frame_hop_s: hop_s,
        window_s,
        rate_hz,
    })
}

pub fn stft(
    signal: &[f64],
    rate_hz: f64,
    window_s: f64,
    hop_s: f64,
) -> Result<Spectrogram, SpectralError> {
    stft_with(signal, rate_hz, window_s, hop_s, Exec::Sequential)
}

/// Strongest in-band spectral component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPeak {
    pub freq_hz: f64,
    pub magnitude: f64,
    /// Peak power over mean in-band power.
    pub prominence: f64,
}

/// Zero-padding factor used by [`dominant_frequency`].
pub const PAD_FACTOR: usize = 4;

/// Mean-removed, Hann-windowed, 4x zero-padded spectrum; argmax within
/// `[band_lo, band_hi]` refined by a parabola through the log-magnitudes of
/// the peak bin and its neighbours.
pub fn spectral_peak(
    signal: &[f64],
    rate_hz: f64,
    band_lo: f64,
    band_hi: f64,
) -> Result<SpectralPeak, SpectralError> {
    let n = signal.len();
    if n < 2 {
        return Err(SpectralError::EmptyInput);
    }
    let nyq = rate_hz / 2.0;
    let n_fft = PAD_FACTOR * n;
    let df = rate_hz / n_fft as f64;
    let lo_bin = (band_lo.max(0.0) / df).ceil() as usize;
    let hi_bin = ((band_hi.min(nyq)) / df).floor() as usize;
    if band_lo > band_hi || lo_bin > hi_bin || band_lo >= nyq {
        return Err(SpectralError::EmptyBand {
            lo: band_lo,
            hi: band_hi,
        });
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let w = hann(n);
    let x: Vec<f64> = signal
        .iter()
        .zip(&w)
        .map(|(v, w)| (v - mean) * w)
        .collect();
    let mag = rfft_magnitude(&x, n_fft);
    let (peak, &pmag) = mag[lo_bin..=hi_bin]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, m)| (i + lo_bin, m))
        .expect("band is non-empty");
    let mut offset = 0.0;
    if peak > 0 && peak + 1 < mag.len() && pmag > 0.0 {
        let floor = pmag * 1e-300_f64.max(f64::MIN_POSITIVE);
        let l = mag[peak - 1].max(floor).ln();
        let c = pmag.ln();
        let r = mag[peak + 1].max(floor).ln();
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            offset = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    let band = &mag[lo_bin..=hi_bin];
    let mean_pow = band.iter().map(|m| m * m).sum::<f64>() / band.len() as f64;
    let prominence = if mean_pow > 0.0 {
        pmag * pmag / mean_pow
    } else {
        0.0
    };
    Ok(SpectralPeak {
        freq_hz: (peak as f64 + offset) * df,
        magnitude: pmag,
        prominence,
    })
}

pub fn dominant_frequency(
    signal: &[f64],
    rate_hz: f64,
    band_lo: f64,
    band_hi: f64,
) -> Result<f64, SpectralError> {
    spectral_peak(signal, rate_hz, band_lo, band_hi).map(|p| p.freq_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(n k) DCT-II, the oracle for the FFT route.
    fn dct2_direct(x: &[f64], k: usize) -> Vec<f64> {
        let n = x.len();
        (0..k)
            .map(|j| {
                let s: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * (2 * i + 1) as f64 * j as f64 / (2.0 * n as f64)).cos())
                    .sum();
                s * dct_scale(j, n)
            })
            .collect()
    }

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn dct_of_ones_is_dc_only() {
        let c = dct2(&[1.0; 8], 8).unwrap();
        assert!((c.coeffs[0] - 8f64.sqrt()).abs() < 1e-12);
        assert!(c.coeffs[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dct_basis_vector_hits_one_coefficient() {
        let l = 32;
        let x: Vec<f64> = (0..l)
            .map(|n| (PI * (2 * n + 1) as f64 * 3.0 / (2.0 * l as f64)).cos())
            .collect();
        let c = dct2(&x, l).unwrap();
        for (j, v) in c.coeffs.iter().enumerate() {
            if j == 3 {
                assert!((v - (l as f64 / 2.0).sqrt()).abs() < 1e-10);
            } else {
                assert!(v.abs() < 1e-10, "coeff {j} = {v}");
            }
        }
    }

    #[test]
    fn dct_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 3, 7, 8, 120, 300, 301] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = n.div_ceil(2);
            let fast = dct2(&x, k).unwrap().coeffs;
            let slow = dct2_direct(&x, k);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10, "n={n}");
            }
        }
    }

    #[test]
    fn idct_edge_cases() {
        let z = DctVector {
            coeffs: vec![0.0; 5],
            source_len: 10,
            norm: DctNorm::Orthonormal,
        };
        assert!(idct(&z).iter().all(|v| *v == 0.0));
        let one = DctVector {
            coeffs: vec![10f64.sqrt()],
            source_len: 10,
            norm: DctNorm::Orthonormal,
        };
        assert!(idct(&one).iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bad_k() {
        assert_eq!(
            dct2(&[1.0, 2.0], 3),
            Err(SpectralError::BadK { k: 3, len: 2 })
        );
        assert!(dct2(&[1.0], 0).is_err());
    }

    #[test]
    fn stft_tone_peak_and_frame_count() {
        let rate = 125.0;
        let x: Vec<f64> = (0..1500)
            .map(|i| (2.0 * PI * 1.25 * i as f64 / rate).sin())
            .collect();
        let s = stft(&x, rate, 2.0, 0.5).unwrap();
        assert_eq!(s.n_bins(), 126);
        let bw = rate / 250.0;
        for frame in &s.magnitudes {
            let b = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!((s.bin_hz(b) - 1.25).abs() <= bw / 2.0 + 1e-12);
        }
        let s = stft(&x, rate, 4.0, 1.0).unwrap();
        assert_eq!(s.n_frames(), 9);
        let z = stft(&[0.0; 1500], rate, 4.0, 1.0).unwrap();
        assert!(z.flatten().iter().all(|v| *v == 0.0));
        assert!(matches!(
            stft(&x, rate, 20.0, 1.0),
            Err(SpectralError::WindowTooLong { .. })
        ));
    }

    #[test]
    fn dominant_frequency_of_tone() {
        let rate = 125.0;
        let x: Vec<f64> = (0..1250)
            .map(|i| (2.0 * PI * 1.3 * i as f64 / rate).sin())
            .collect();
        let f = dominant_frequency(&x, rate, 0.7, 3.5).unwrap();
        assert!((f - 1.3).abs() <= 0.01, "{f}");
    }

    #[test]
    fn dominant_frequency_noise_and_empty_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = dominant_frequency(&x, 125.0, 2.0, 2.2).unwrap();
        assert!((2.0 - 0.1..=2.2 + 0.1).contains(&f));
        assert!(matches!(
            dominant_frequency(&x, 125.0, 70.0, 80.0),
            Err(SpectralError::EmptyBand { .. })
        ));
    }

    proptest! {
        #[test]
        fn dct_parseval_and_inverse(x in proptest::collection::vec(-5f64..5.0, 1..400)) {
            let c = dct2(&x, x.len()).unwrap();
            prop_assert!((norm(&c.coeffs) - norm(&x)).abs() <= 1e-9 * norm(&x).max(1.0));
            let back = idct(&c);
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn truncation_error_non_increasing(x in proptest::collection::vec(-5f64..5.0, 8..64)) {
            let mut prev = f64::INFINITY;
            for k in 1..=x.len() {
                let r = idct(&dct2(&x, k).unwrap());
                let e = norm(&r.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
                prop_assert!(e <= prev + 1e-9);
                prev = e;
            }
        }

        #[test]
        fn stft_scales_linearly(a in -10f64..10.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let s1 = stft(&x, 30.0, 2.0, 0.5).unwrap().flatten();
            let s2 = stft(&ax, 30.0, 2.0, 0.5).unwrap().flatten();
            for (p, q) in s1.iter().zip(&s2) {
                prop_assert!((p * a.abs() - q).abs() <= 1e-9 * (1.0 + q.abs()));
            }
        }

        #[test]
        fn dominant_frequency_within_two_padded_bins(f0 in 0.8f64..3.3, n in 500usize..2000) {
            let rate = 125.0;
            let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f0 * i as f64 / rate).sin()).collect();
            let f = dominant_frequency(&x, rate, 0.7, 3.5).unwrap();
            prop_assert!((f - f0).abs() <= rate / (4.0 * n as f64) * 2.0);
        }
    }
}
