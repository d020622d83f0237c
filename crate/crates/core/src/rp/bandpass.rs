//! Zero-phase band-pass: a second-order Butterworth high-pass at the lower
//! edge cascaded with a second-order Butterworth low-pass at the upper edge
//! (two pole pairs, fourth order overall), run forward then backward.
//!
//! The signal is extended at both ends by odd reflection, and each section
//! starts from its steady state for the first sample, so a constant input
//! produces no start-up transient.

use std::f64::consts::{PI, SQRT_2};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// `a[0]` is normalized to 1 and omitted.
    pub a: [f64; 2],
}

impl Biquad {
    pub fn butterworth_lowpass(cutoff_hz: f64, fs: f64) -> Self {
        let k = (PI * cutoff_hz / fs).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        }
    }

    pub fn butterworth_highpass(cutoff_hz: f64, fs: f64) -> Self {
        let k = (PI * cutoff_hz / fs).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        Self {
            b: [norm, -2.0 * norm, norm],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        }
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// Magnitude response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0,
            self.b[1] * z1.1 + self.b[2] * z2.1,
        );
        let den = (
            1.0 + self.a[0] * z1.0 + self.a[1] * z2.0,
            self.a[0] * z1.1 + self.a[1] * z2.1,
        );
        num.0.hypot(num.1) / den.0.hypot(den.1)
    }

    /// Filter in place (transposed direct form II), starting from the steady
    /// state for a constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y0 = self.dc_gain() * x0;
        let mut z2 = b2 * x0 - a2 * y0;
        let mut z1 = y0 - b0 * x0;
        for v in x.iter_mut() {
            let xi = *v;
            let yi = b0 * xi + z1;
            z1 = b1 * xi - a1 * yi + z2;
            z2 = b2 * xi - a2 * yi;
            *v = yi;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandPass {
    pub sections: [Biquad; 2],
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
}

impl BandPass {
    pub fn new(low_hz: f64, high_hz: f64, fs: f64) -> Result<Self> {
        if !(low_hz > 0.0 && low_hz < high_hz) {
            return Err(Error::Precondition(format!(
                "band edges must satisfy 0 < low < high, got {low_hz}..{high_hz} Hz"
            )));
        }
        if !(fs > 0.0) {
            return Err(Error::Precondition(format!("sample rate must be positive, got {fs}")));
        }
        if high_hz >= fs / 2.0 {
            return Err(Error::AboveNyquist {
                high_hz,
                nyquist_hz: fs / 2.0,
            });
        }
        Ok(Self {
            sections: [
                Biquad::butterworth_highpass(low_hz, fs),
                Biquad::butterworth_lowpass(high_hz, fs),
            ],
            low_hz,
            high_hz,
            fs,
        })
    }

    /// Samples of reflection padding: one period of the lower band edge,
    /// limited by the signal length.
    pub fn pad_len(&self, n: usize) -> usize {
        ((self.fs / self.low_hz).round() as usize).min(n.saturating_sub(1))
    }

    /// Single-pass magnitude response; the zero-phase response is its square.
    pub fn gain_at(&self, freq_hz: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| s.gain_at(freq_hz, self.fs))
            .product()
    }

    fn run_once(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
    }

    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad_len(n);
        let (first, last) = (x[0], x[n - 1]);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| 2.0 * first - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| 2.0 * last - x[n - 1 - k]));

        self.run_once(&mut ext);
        ext.reverse();
        self.run_once(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}
