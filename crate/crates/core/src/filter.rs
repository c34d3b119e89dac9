//! Second-order IIR sections and zero-phase filtering.

use std::f64::consts::PI;

/// Normalized biquad coefficients (`a0 == 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Constant 0 dB peak-gain bandpass centred on the geometric mean of the
    /// band edges.
    pub fn bandpass(lo_hz: f64, hi_hz: f64, rate_hz: f64) -> Self {
        let f0 = (lo_hz * hi_hz).sqrt();
        let q = f0 / (hi_hz - lo_hz);
        let w0 = 2.0 * PI * f0 / rate_hz;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [1.0, -2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
        }
    }

    /// Direct form II transposed, zero initial state.
    pub fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut s1, mut s2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + s1;
                s1 = self.b[1] * v - self.a[1] * y + s2;
                s2 = self.b[2] * v - self.a[2] * y;
                y
            })
            .collect()
    }

    /// Forward-backward pass with odd-reflection padding of `pad` samples on
    /// each side. Zero phase, squared magnitude response.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.run(&ext);
        y.reverse();
        let mut y = self.run(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Zero-phase bandpass with padding of one period of the low edge.
pub fn bandpass_zero_phase(x: &[f64], lo_hz: f64, hi_hz: f64, rate_hz: f64) -> Vec<f64> {
    let pad = (rate_hz / lo_hz).ceil() as usize;
    Biquad::bandpass(lo_hz, hi_hz, rate_hz).filtfilt(x, pad)
}

/// Centred moving average of odd width `w` (shrinks at the edges).
pub fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let half = w / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}
