//! Run configuration shared by the command-line stages.
//!
//! Every tunable default lives here so one `key = value` file can override
//! any of them and each run can record exactly what it used.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::ChunkMode;
use crate::kv::KvFile;
use crate::models::{Arch, DEFAULT_WINDOW};
use crate::{flow, rp, Error, Result};

/// 64-bit FNV-1a.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Sub-seed for a named stage: `splitmix64(seed ^ fnv1a64(stage))`.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(stage))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub low_bpm: f64,
    pub high_bpm: f64,
    pub w: usize,
    pub chunk_mode: ChunkMode,
    pub arch: Arch,
    pub width_divisor: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// 0 means no cap.
    pub max_chunks_per_epoch: usize,
    pub folds: usize,
    pub match_window_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            eps: flow::DEFAULT_EPS,
            tol: rp::DEFAULT_TOL,
            max_iter: rp::DEFAULT_MAX_ITER,
            low_bpm: rp::DEFAULT_LOW_BPM,
            high_bpm: rp::DEFAULT_HIGH_BPM,
            w: DEFAULT_WINDOW,
            chunk_mode: ChunkMode::Overlap,
            arch: Arch::ConvLstm,
            width_divisor: 1,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            max_chunks_per_epoch: 0,
            folds: 4,
            match_window_s: crate::eval::DEFAULT_MATCH_WINDOW_S,
        }
    }
}

fn set<T: FromStr>(slot: &mut T, key: &str, value: &str) -> Result<()> {
    *slot = value
        .parse()
        .map_err(|_| Error::parse("run config", format!("bad value {value:?} for `{key}`")))?;
    Ok(())
}

impl RunConfig {
    pub const KEYS: [&'static str; 16] = [
        "seed",
        "eps",
        "tol",
        "max_iter",
        "low_bpm",
        "high_bpm",
        "w",
        "chunk_mode",
        "arch",
        "width_divisor",
        "epochs",
        "batch_size",
        "lr",
        "max_chunks_per_epoch",
        "folds",
        "match_window_s",
    ];

    /// Override one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => set(&mut self.seed, key, value),
            "eps" => set(&mut self.eps, key, value),
            "tol" => set(&mut self.tol, key, value),
            "max_iter" => set(&mut self.max_iter, key, value),
            "low_bpm" => set(&mut self.low_bpm, key, value),
            "high_bpm" => set(&mut self.high_bpm, key, value),
            "w" => set(&mut self.w, key, value),
            "chunk_mode" => set(&mut self.chunk_mode, key, value),
            "arch" => set(&mut self.arch, key, value),
            "width_divisor" => set(&mut self.width_divisor, key, value),
            "epochs" => set(&mut self.epochs, key, value),
            "batch_size" => set(&mut self.batch_size, key, value),
            "lr" => set(&mut self.lr, key, value),
            "max_chunks_per_epoch" => set(&mut self.max_chunks_per_epoch, key, value),
            "folds" => set(&mut self.folds, key, value),
            "match_window_s" => set(&mut self.match_window_s, key, value),
            _ => Err(Error::parse("run config", format!("unknown key `{key}`"))),
        }
    }

    /// Apply every entry of `file` in order.
    pub fn apply(&mut self, file: &KvFile) -> Result<()> {
        for (k, v) in &file.entries {
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Precondition(format!("run config: {what}")));
        if !(self.eps > 0.0 && self.tol > 0.0) {
            return bad("eps and tol must be positive");
        }
        if !(0.0 < self.low_bpm && self.low_bpm < self.high_bpm) {
            return bad("need 0 < low_bpm < high_bpm");
        }
        if self.w == 0 || self.width_divisor == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("w, width_divisor, epochs and batch_size must be positive");
        }
        if self.max_iter == 0 || self.folds < 2 {
            return bad("max_iter must be positive and folds at least 2");
        }
        if !(self.lr > 0.0 && self.match_window_s > 0.0) {
            return bad("lr and match_window_s must be positive");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&KvFile::read(path)?)?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        let mut push = |k: &str, v: &dyn Display| kv.push(k, v.to_string());
        push("seed", &self.seed);
        push("eps", &self.eps);
        push("tol", &self.tol);
        push("max_iter", &self.max_iter);
        push("low_bpm", &self.low_bpm);
        push("high_bpm", &self.high_bpm);
        push("w", &self.w);
        push("chunk_mode", &self.chunk_mode);
        push("arch", &self.arch);
        push("width_divisor", &self.width_divisor);
        push("epochs", &self.epochs);
        push("batch_size", &self.batch_size);
        push("lr", &self.lr);
        push("max_chunks_per_epoch", &self.max_chunks_per_epoch);
        push("folds", &self.folds);
        push("match_window_s", &self.match_window_s);
        kv
    }

    pub fn train_config(&self, seed: u64, w_pos: f64, w_neg: f64) -> crate::models::TrainConfig {
        crate::models::TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
            w_pos,
            w_neg,
            mode: self.chunk_mode,
            max_chunks_per_epoch: (self.max_chunks_per_epoch > 0).then_some(self.max_chunks_per_epoch),
            exec: crate::Exec::Parallel,
        }
    }
}
