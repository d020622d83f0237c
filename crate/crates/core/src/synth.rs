//! Synthetic data with known ground truth: breathing videos with a known
//! displacement curve, and labeled respiration datasets where speech
//! distorts the breathing waveform.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::derive_seed;
use crate::dataset::LabeledSequence;
use crate::rp::RespirationPattern;
use crate::video_io::{FrameSequence, Grid};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideoParams {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    /// Peak vertical displacement in pixels.
    pub amplitude: f64,
    pub freq_hz: f64,
    /// Gaussian blur sigma of the texture, in pixels.
    pub smoothness: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthVideoParams {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 900,
            fps: 30.0,
            amplitude: 1.5,
            freq_hz: 0.2,
            smoothness: 3.0,
            noise_sigma: 0.005,
            seed: 0,
        }
    }
}

/// Separable Gaussian blur with clamped borders.
fn blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let o = j as isize - r;
                    let (sx, sy) = if horizontal {
                        ((x as isize + o).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + o).clamp(0, h as isize - 1) as usize)
                    };
                    acc += kv * src[sy * w + sx];
                }
                out[y * w + x] = acc / total;
            }
        }
        out
    };
    pass(&pass(data, true), false)
}

/// Vertical displacement `A·sin(2πf·t/fps)` for every frame.
pub fn displacement(p: &SynthVideoParams) -> Vec<f64> {
    (0..p.frames)
        .map(|t| p.amplitude * (TAU * p.freq_hz * t as f64 / p.fps).sin())
        .collect()
}

/// A smooth random texture shifted vertically by [`displacement`], with
/// additive Gaussian noise. Returns the frames and the displacement curve.
pub fn synth_video(p: &SynthVideoParams) -> Result<(FrameSequence, Vec<f64>)> {
    if !(p.fps > 0.0 && p.freq_hz > 0.0 && p.freq_hz < p.fps / 2.0) {
        return Err(Error::Precondition(
            "synth_video: need 0 < freq_hz < fps / 2".into(),
        ));
    }
    if !(p.amplitude >= 0.0 && p.noise_sigma >= 0.0 && p.amplitude.is_finite()) {
        return Err(Error::Precondition(
            "synth_video: amplitude and noise must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let margin = p.amplitude.ceil() as usize + 2;
    let (tw, th) = (p.width, p.height + 2 * margin);
    let raw: Vec<f64> = (0..tw * th).map(|_| rng.gen::<f64>()).collect();
    let mut tex = blur(&raw, tw, th, p.smoothness);
    let lo = tex.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tex.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    tex.iter_mut().for_each(|v| *v = 0.1 + 0.8 * (*v - lo) / span);

    let d = displacement(p);
    let noise = Normal::new(0.0, p.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let frames = d
        .iter()
        .map(|&shift| {
            Grid::from_fn(p.width, p.height, |x, y| {
                let sy = (y + margin) as f64 + shift;
                let y0 = sy.floor();
                let frac = sy - y0;
                let y0 = y0 as usize;
                let v = (1.0 - frac) * tex[y0 * tw + x] + frac * tex[(y0 + 1) * tw + x];
                let n = if p.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                (v + n).clamp(0.0, 1.0)
            })
        })
        .collect();
    let seq = FrameSequence::new(p.width, p.height, p.fps, frames)?;
    Ok((seq, d))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthRpParams {
    pub speakers: usize,
    pub duration_s: f64,
    pub fps: f64,
    /// Per-speaker breathing frequency is drawn uniformly from this range (Hz).
    pub freq_range_hz: (f64, f64),
    /// Target fraction of samples labeled as speech.
    pub speech_fraction: f64,
    /// Episode durations are drawn uniformly from this range (seconds).
    pub episode_range_s: (f64, f64),
    /// 0 leaves speech segments undistorted.
    pub distortion: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthRpParams {
    fn default() -> Self {
        Self {
            speakers: 32,
            duration_s: 60.0,
            fps: 30.0,
            freq_range_hz: (0.15, 0.4),
            speech_fraction: 0.35,
            episode_range_s: (2.0, 15.0),
            distortion: 1.0,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthRpParams {
    fn validate(&self) -> Result<()> {
        let (f0, f1) = self.freq_range_hz;
        let (e0, e1) = self.episode_range_s;
        let ok = self.speakers > 0
            && self.fps > 0.0
            && 0.0 < f0
            && f0 <= f1
            && f1 < self.fps / 2.0
            && (0.0..1.0).contains(&self.speech_fraction)
            && 0.0 < e0
            && e0 <= e1
            && e1 <= self.duration_s
            && self.distortion >= 0.0
            && self.noise_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition("synth_rp_dataset: invalid parameters".into()))
        }
    }
}

/// Non-overlapping speech episodes (sample ranges) covering roughly
/// `fraction` of `n` samples. Episodes keep a one-second gap between them.
fn place_episodes(
    n: usize,
    fps: f64,
    fraction: f64,
    range_s: (f64, f64),
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let target = (fraction * n as f64).round() as usize;
    let min_len = (range_s.0 * fps).round() as usize;
    let gap = fps.round() as usize;
    let mut episodes: Vec<(usize, usize)> = Vec::new();
    let mut covered = 0;
    let mut attempts = 0;
    while covered + min_len <= target && attempts < 1000 {
        attempts += 1;
        let len = ((rng.gen_range(range_s.0..=range_s.1) * fps).round() as usize)
            .min(target - covered)
            .max(min_len);
        if len >= n {
            continue;
        }
        let start = rng.gen_range(0..=n - len);
        let end = start + len;
        let clash = episodes
            .iter()
            .any(|&(a, b)| start < b + gap && a < end + gap);
        if !clash {
            episodes.push((start, end));
            covered += len;
        }
    }
    episodes.sort_unstable();
    episodes
}

/// Labeled breathing signals, one per speaker (`spk00`, `spk01`, ...).
///
/// Outside speech the signal is a unit sinusoid at the speaker's breathing
/// rate. Inside speech episodes its amplitude drops by `0.4·s`, falling
/// (expiration) half-cycles are pulled toward a plateau, and a ripple at three
/// times the breathing rate is added, where `s` is the distortion strength.
pub fn synth_rp_dataset(p: &SynthRpParams) -> Result<Vec<LabeledSequence>> {
    p.validate()?;
    let n = (p.duration_s * p.fps).round() as usize;
    let noise = Normal::new(0.0, p.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    (0..p.speakers)
        .map(|k| {
            let id = format!("spk{k:02}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, &id));
            let f = rng.gen_range(p.freq_range_hz.0..=p.freq_range_hz.1);
            let phase = rng.gen_range(0.0..TAU);
            let episodes =
                place_episodes(n, p.fps, p.speech_fraction, p.episode_range_s, &mut rng);
            let mut labels = vec![0u8; n];
            for &(a, b) in &episodes {
                labels[a..b].fill(1);
            }
            let s = p.distortion;
            let samples = (0..n)
                .map(|i| {
                    let t = i as f64 / p.fps;
                    let arg = TAU * f * t + phase;
                    let mut v = arg.sin();
                    if labels[i] == 1 && s > 0.0 {
                        let amp = 1.0 - 0.4 * s;
                        v *= amp;
                        if arg.cos() < 0.0 {
                            let blend = (0.6 * s).min(1.0);
                            v = (1.0 - blend) * v + blend * 0.6 * amp;
                        }
                        v += 0.15 * s * (3.0 * arg).sin();
                    }
                    if p.noise_sigma > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    v
                })
                .collect();
            let rp = RespirationPattern {
                samples,
                fps: p.fps,
                filtered: false,
            };
            LabeledSequence::new(rp, labels, id)
        })
        .collect()
}
