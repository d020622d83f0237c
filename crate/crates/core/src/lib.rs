//! Voice activity detection from respiration patterns extracted from video.
//!
//! The pipeline runs in two halves:
//!
//! 1. **Respiration extraction** ([`video_io`] → [`flow`] → [`rp`]): grayscale
//!    frames are turned into a matrix of normalized directional optical flow,
//!    whose dominant right singular vector is the respiration pattern. A
//!    zero-phase band-pass restricts it to the breathing band.
//! 2. **Speech detection** ([`dataset`] → [`models`] → [`eval`]): the pattern
//!    is windowed, fed to one of four sequence-to-sequence networks built on the
//!    small [`nn`] toolkit, and scored against speech labels.
//!
//! [`synth`] produces synthetic videos and labeled respiration datasets with
//! known ground truth, and [`config`] holds the reproducible run record used by
//! the command-line front end.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod flow;
pub mod kv;
pub mod models;
pub mod nn;
pub mod rp;
pub mod synth;
pub mod video_io;

mod numfmt;

pub use error::{Error, Result};
pub use exec::Exec;
pub use numfmt::format_sig;
