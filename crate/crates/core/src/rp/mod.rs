//! Respiration pattern extraction.
//!
//! The pattern is the unit vector `R` maximizing `‖F R‖²`, i.e. the top right
//! singular vector of the flow matrix, optionally band-passed to the
//! breathing band afterwards.

mod bandpass;
mod power;

use std::path::Path;

pub use bandpass::{BandPass, Biquad};
pub use power::{
    second_singular_ratio, top_singular_triplet, top_singular_triplet_with, SingularTriplet,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};

use crate::flow::FlowMatrix;
use crate::{format_sig, Error, Exec, Result};

pub const DEFAULT_LOW_BPM: f64 = 5.0;
pub const DEFAULT_HIGH_BPM: f64 = 30.0;

/// Deflated iterations spent estimating the spectral gap.
const GAP_ITERATIONS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct RespirationPattern {
    pub samples: Vec<f64>,
    pub fps: f64,
    pub filtered: bool,
}

impl RespirationPattern {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn norm(&self) -> f64 {
        power::norm(&self.samples)
    }

    /// CSV with header `index,time_s,value`, nine significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,time_s,value\n");
        for (i, v) in self.samples.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{}\n",
                format_sig(i as f64 / self.fps, 9),
                format_sig(*v, 9)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parse an RP CSV. Without `fps`, the rate is inferred from the time
    /// column (rounded to 1e-6 Hz), which needs at least two rows.
    pub fn from_csv(text: &str, fps: Option<f64>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["index", "time_s", "value"] {
            return Err(Error::parse("rp csv", format!("unexpected header {headers:?}")));
        }
        let mut samples = Vec::new();
        let mut last_time = 0.0;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(format!("rp csv row {}", row + 1), e))
            };
            if field(0)? as usize != row {
                return Err(Error::parse("rp csv", format!("row {} has index {}", row + 1, &rec[0])));
            }
            last_time = field(1)?;
            samples.push(field(2)?);
        }
        let fps = match fps {
            Some(f) => f,
            None if samples.len() >= 2 && last_time > 0.0 => {
                ((samples.len() - 1) as f64 / last_time * 1e6).round() / 1e6
            }
            None => return Err(Error::parse("rp csv", "cannot infer fps from fewer than 2 rows")),
        };
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rp csv"));
        }
        Ok(Self {
            samples,
            fps,
            filtered: false,
        })
    }

    pub fn read_csv(path: &Path, fps: Option<f64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, fps)
    }
}

/// Solver facts reported alongside an extracted pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct RpDiagnostics {
    pub sigma: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Estimated `σ₂ / σ₁`; values near 1 mean the dominant direction is
    /// poorly separated and the pattern may not be unique.
    pub gap_ratio: f64,
    pub sign_flipped: bool,
}

pub fn extract_rp(
    f: &FlowMatrix,
    fps: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<RespirationPattern> {
    extract_rp_with(f, fps, tol, max_iter, seed, Exec::default()).map(|(rp, _)| rp)
}

/// Top right singular vector of `F`, sign-fixed, plus solver diagnostics.
pub fn extract_rp_with(
    f: &FlowMatrix,
    fps: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
    exec: Exec,
) -> Result<(RespirationPattern, RpDiagnostics)> {
    if !(fps > 0.0) {
        return Err(Error::Precondition(format!("fps must be positive, got {fps}")));
    }
    let triplet = top_singular_triplet_with(f, tol, max_iter, seed, exec)?;
    let gap_ratio = second_singular_ratio(f, &triplet, GAP_ITERATIONS, seed, exec);
    let mut samples = triplet.v;
    let flip = sign_should_flip(&samples, &f.column_norms());
    if flip {
        samples.iter_mut().for_each(|v| *v = -*v);
    }
    Ok((
        RespirationPattern {
            samples,
            fps,
            filtered: false,
        },
        RpDiagnostics {
            sigma: triplet.sigma,
            iterations: triplet.iterations,
            residual: triplet.residual,
            gap_ratio,
            sign_flipped: flip,
        },
    ))
}

/// The pattern is oriented to correlate non-negatively with the running sum
/// of frame motion energy (column norms of `F`); when that correlation is
/// exactly zero, the first nonzero sample is made positive.
fn sign_should_flip(v: &[f64], column_norms: &[f64]) -> bool {
    let mut acc = 0.0;
    let cumulative: Vec<f64> = column_norms
        .iter()
        .map(|c| {
            acc += c;
            acc
        })
        .collect();
    let mean = cumulative.iter().sum::<f64>() / cumulative.len().max(1) as f64;
    let centered: Vec<f64> = cumulative.iter().map(|c| c - mean).collect();
    let stat: f64 = v.iter().zip(&centered).map(|(a, b)| a * b).sum();
    let scale = power::norm(&centered) * power::norm(v);
    if stat.abs() > 1e-12 * scale {
        return stat < 0.0;
    }
    v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
}

/// Zero-phase band-pass to `[low_bpm, high_bpm]` breaths per minute. The
/// output keeps the input length and is not renormalized.
pub fn bandpass(rp: &RespirationPattern, low_bpm: f64, high_bpm: f64) -> Result<RespirationPattern> {
    let filter = BandPass::new(low_bpm / 60.0, high_bpm / 60.0, rp.fps)?;
    let samples = filter.filtfilt(&rp.samples);
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("bandpass"));
    }
    Ok(RespirationPattern {
        samples,
        fps: rp.fps,
        filtered: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> FlowMatrix {
        FlowMatrix::from_row_major(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>() - 0.5).collect())
            .unwrap()
    }

    fn rp(samples: Vec<f64>, fps: f64) -> RespirationPattern {
        RespirationPattern { samples, fps, filtered: false }
    }

    /// Amplitude of the `freq` component of `y[range]` by least squares on
    /// `a sin + b cos + c`.
    fn fitted_amplitude(y: &[f64], freq: f64, fs: f64, range: std::ops::Range<usize>) -> f64 {
        let mut m = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for i in range {
            let t = 2.0 * PI * freq * i as f64 / fs;
            let basis = [t.sin(), t.cos(), 1.0];
            for r in 0..3 {
                rhs[r] += basis[r] * y[i];
                for c in 0..3 {
                    m[r][c] += basis[r] * basis[c];
                }
            }
        }
        // 3x3 Gaussian elimination
        for p in 0..3 {
            for r in p + 1..3 {
                let k = m[r][p] / m[p][p];
                for c in p..3 {
                    m[r][c] -= k * m[p][c];
                }
                rhs[r] -= k * rhs[p];
            }
        }
        let mut x = [0.0; 3];
        for p in (0..3).rev() {
            let s: f64 = (p + 1..3).map(|c| m[p][c] * x[c]).sum();
            x[p] = (rhs[p] - s) / m[p][p];
        }
        x[0].hypot(x[1])
    }

    #[test]
    fn rank_one_recovers_time_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut u0: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut r0: Vec<f64> = (0..7).map(|_| rng.gen::<f64>() - 0.5).collect();
        power::normalize(&mut u0);
        power::normalize(&mut r0);
        let data = u0.iter().flat_map(|a| r0.iter().map(move |b| a * b)).collect();
        let f = FlowMatrix::from_row_major(12, 7, data).unwrap();
        let out = extract_rp(&f, 30.0, 1e-12, 1000, 1).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-9);
        assert!(!out.filtered);
        let s = if out.samples[0] * r0[0] > 0.0 { 1.0 } else { -1.0 };
        for (a, b) in out.samples.iter().zip(&r0) {
            assert!((a * s - b).abs() < 1e-9);
        }
    }

    #[test]
    fn static_video_is_degenerate() {
        let f = FlowMatrix::from_row_major(8, 4, vec![0.0; 32]).unwrap();
        assert!(matches!(
            extract_rp(&f, 30.0, 1e-10, 100, 0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn maximizes_projected_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let f = random_matrix(30, 9, &mut rng);
        let r = extract_rp(&f, 30.0, DEFAULT_TOL, DEFAULT_MAX_ITER, 0).unwrap();
        let best = power::norm(&f.mul_vec(&r.samples, Exec::Sequential)).powi(2);
        for _ in 0..100 {
            let q = power::random_unit(9, rng.gen());
            let e = power::norm(&f.mul_vec(&q, Exec::Sequential)).powi(2);
            assert!(best >= e);
        }
    }

    #[test]
    fn sign_convention_tie_break() {
        // constant column norms still give an increasing cumulative sum, so the
        // correlation decides
        assert!(sign_should_flip(&[0.5, 0.0, -0.5], &[1.0, 1.0, 1.0]));
        assert!(!sign_should_flip(&[-0.5, 0.0, 0.5], &[1.0, 1.0, 1.0]));
        // zero motion energy leaves only the tie-break
        assert!(sign_should_flip(&[0.0, -1.0, 0.5], &[0.0, 0.0, 0.0]));
        assert!(!sign_should_flip(&[0.0, 1.0, -0.5], &[0.0, 0.0, 0.0]));
    }

    #[test]
    fn bandpass_passes_breathing_band() {
        let fs = 30.0;
        let n = 900;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 0.25 * i as f64 / fs).sin()).collect();
        let y = bandpass(&rp(x, fs), 5.0, 30.0).unwrap();
        assert!(y.filtered);
        assert_eq!(y.len(), n);
        let central = n / 4..3 * n / 4;
        let ratio = fitted_amplitude(&y.samples, 0.25, fs, central);
        assert!((0.9..=1.1).contains(&ratio), "in-band ratio {ratio}");
    }

    #[test]
    fn bandpass_rejects_out_of_band() {
        let fs = 30.0;
        let n = 900;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 2.0 * i as f64 / fs).sin()).collect();
        let y = bandpass(&rp(x, fs), 5.0, 30.0).unwrap();
        let ratio = fitted_amplitude(&y.samples, 2.0, fs, n / 4..3 * n / 4);
        assert!(20.0 * ratio.log10() <= -20.0, "attenuation {} dB", 20.0 * ratio.log10());
    }

    #[test]
    fn bandpass_removes_dc() {
        let y = bandpass(&rp(vec![0.7; 900], 30.0), 5.0, 30.0).unwrap();
        let max = y.samples[225..675].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1e-3 * 0.7);
    }

    #[test]
    fn bandpass_above_nyquist() {
        assert!(matches!(
            bandpass(&rp(vec![0.0; 50], 1.0), 5.0, 40.0),
            Err(Error::AboveNyquist { .. })
        ));
    }

    #[test]
    fn zero_phase_on_symmetric_pulse() {
        // Long enough that padding transients have decayed at the pulse.
        let (n, mid) = (3601, 1800);
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 - mid as f64) / 30.0;
                (-t * t / 2.0).exp()
            })
            .collect();
        let y = bandpass(&rp(x, 30.0), 5.0, 30.0).unwrap();
        let peak = y.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..900 {
            let d = (y.samples[mid - k] - y.samples[mid + k]).abs();
            assert!(d < 1e-9 * peak, "k={k} d={d}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = rp(vec![0.123456789123, -1.5, 2e-7], 30.0);
        let text = r.to_csv();
        assert!(text.starts_with("index,time_s,value\n0,0,0.123456789\n1,0.0333333333,-1.5\n"));
        let back = RespirationPattern::from_csv(&text, None).unwrap();
        assert_eq!(back.fps, 30.0);
        for (a, b) in back.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-9));
        }
        assert!(RespirationPattern::from_csv("a,b\n1,2\n", None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn scale_invariance(seed in 0u64..10_000, c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_matrix(20, 6, &mut rng);
            let a = extract_rp(&f, 30.0, 1e-12, 100_000, 1).unwrap();
            let b = extract_rp(&f.scaled(c), 30.0, 1e-12, 100_000, 1).unwrap();
            let s = a.samples.iter().zip(&b.samples).map(|(x, y)| x * y).sum::<f64>().signum();
            for (x, y) in a.samples.iter().zip(&b.samples) {
                prop_assert!((x - s * y).abs() < 1e-6);
            }
        }

        #[test]
        fn row_permutation_invariance(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_matrix(16, 5, &mut rng);
            let mut order: Vec<usize> = (0..16).collect();
            for i in (1..16).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let permuted: Vec<f64> = order.iter().flat_map(|&r| f.row(r).to_vec()).collect();
            let g = FlowMatrix::from_row_major(16, 5, permuted).unwrap();
            let a = extract_rp(&f, 30.0, 1e-12, 100_000, 2).unwrap();
            let b = extract_rp(&g, 30.0, 1e-12, 100_000, 2).unwrap();
            let s = a.samples.iter().zip(&b.samples).map(|(x, y)| x * y).sum::<f64>().signum();
            for (x, y) in a.samples.iter().zip(&b.samples) {
                prop_assert!((x - s * y).abs() < 1e-6);
            }
        }
    }
}
