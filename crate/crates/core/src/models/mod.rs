//! Sequence-to-sequence VAD models: construction, training, inference and
//! checkpoints.

mod checkpoint;
mod nets;
mod train;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use nets::{Cnn1d, Mlp, Recurrent, CNN_REPEAT};
pub use train::{train, TrainConfig};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{chunk, reassemble_values, ChunkMode, LabeledSequence};
use crate::nn::{check_finite, sigmoid, Params, Tensor};
use crate::rp::RespirationPattern;
use crate::{Error, Exec, Result};
use nets::Network;

/// Default window width in samples.
pub const DEFAULT_WINDOW: usize = 100;

/// Probabilities at or above this are classified as speech.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Mlp,
    Cnn1d,
    BiLstm,
    ConvLstm,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Mlp, Arch::Cnn1d, Arch::BiLstm, Arch::ConvLstm];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::Cnn1d => "cnn1d",
            Arch::BiLstm => "bilstm",
            Arch::ConvLstm => "convlstm",
        }
    }

    fn tag(self) -> u32 {
        match self {
            Arch::Mlp => 1,
            Arch::Cnn1d => 2,
            Arch::BiLstm => 3,
            Arch::ConvLstm => 4,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.tag() == tag)
            .ok_or_else(|| Error::UnknownArch(format!("tag {tag}")))
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mlp" => Ok(Arch::Mlp),
            "cnn1d" | "1dcnn" | "cnn" => Ok(Arch::Cnn1d),
            "bilstm" => Ok(Arch::BiLstm),
            "convlstm" => Ok(Arch::ConvLstm),
            _ => Err(Error::UnknownArch(s.to_string())),
        }
    }
}

pub const MIN_LAYER_WIDTH: usize = 8;

/// Architecture, window width and a divisor applied to every layer width.
///
/// `width_divisor = 1` gives the full-size networks; larger values shrink
/// hidden layers (never below [`MIN_LAYER_WIDTH`] units) for quick experiments.
/// The floor keeps small ReLU layers from dying out entirely.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Arch,
    pub w: usize,
    pub width_divisor: usize,
}

impl ModelSpec {
    pub fn new(arch: Arch, w: usize) -> Self {
        Self {
            arch,
            w,
            width_divisor: 1,
        }
    }

    pub fn with_width_divisor(mut self, divisor: usize) -> Self {
        self.width_divisor = divisor;
        self
    }

    fn width(&self, full: usize) -> usize {
        (full / self.width_divisor).max(MIN_LAYER_WIDTH).min(full)
    }

    fn validate(&self) -> Result<()> {
        if self.w == 0 {
            return Err(Error::Precondition("window width must be at least 1".into()));
        }
        if self.width_divisor == 0 {
            return Err(Error::Precondition("width divisor must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Net {
    Mlp(Mlp),
    Cnn1d(Cnn1d),
    Recurrent(Recurrent),
}

/// Dispatch `$body` over the concrete network held by `$net`.
macro_rules! with_net {
    ($net:expr, $n:ident => $body:expr) => {
        match $net {
            Net::Mlp($n) => $body,
            Net::Cnn1d($n) => $body,
            Net::Recurrent($n) => $body,
        }
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    net: Net,
}

pub fn build_model(spec: ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = |n| spec.width(n);
    let w = spec.w;
    let net = match spec.arch {
        Arch::Mlp => Net::Mlp(Mlp::new(w, &[s(128), s(64), s(64), s(64)], &mut rng)),
        Arch::Cnn1d => Net::Cnn1d(Cnn1d::new(w, s(32), s(64), s(128), &mut rng)),
        Arch::BiLstm => Net::Recurrent(Recurrent::new(w, (0, 0, 0, 1), s(128), s(32), &mut rng)),
        Arch::ConvLstm => Net::Recurrent(Recurrent::new(
            w,
            (2, s(16), 5, 3),
            s(128),
            s(32),
            &mut rng,
        )),
    };
    Ok(Model { spec, net })
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn window(&self) -> usize {
        with_net!(&self.net, n => n.window())
    }

    /// Logits for one window, unchecked.
    pub(crate) fn logits_raw(&self, x: &[f64]) -> Vec<f64> {
        with_net!(&self.net, n => n.forward(x).0)
    }

    /// Speech probabilities for one length-`w` window.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.window() {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                expected: format!("{} samples", self.window()),
                found: format!("{} samples", x.len()),
            });
        }
        check_finite(x, "model_forward input")?;
        let mut p = self.logits_raw(x);
        sigmoid(&mut p);
        check_finite(&p, "model_forward")?;
        Ok(p)
    }

    /// Loss-weighted logit gradient callback: `dlogits(logits) -> (loss, dlogits)`.
    pub(crate) fn forward_backward(
        &self,
        x: &[f64],
        grad: &mut Model,
        dlogits: impl FnOnce(&[f64]) -> (f64, Vec<f64>),
    ) -> f64 {
        match (&self.net, &mut grad.net) {
            (Net::Mlp(n), Net::Mlp(g)) => run_backward(n, x, g, dlogits),
            (Net::Cnn1d(n), Net::Cnn1d(g)) => run_backward(n, x, g, dlogits),
            (Net::Recurrent(n), Net::Recurrent(g)) => run_backward(n, x, g, dlogits),
            _ => unreachable!("gradient buffer built from a different architecture"),
        }
    }

    /// A zeroed copy used as a gradient buffer.
    pub fn zeros_like(&self) -> Model {
        let mut g = self.clone();
        g.zero();
        g
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }
}

fn run_backward<N: Network>(
    net: &N,
    x: &[f64],
    grad: &mut N,
    dlogits: impl FnOnce(&[f64]) -> (f64, Vec<f64>),
) -> f64 {
    let (z, cache) = net.forward(x);
    let (loss, dz) = dlogits(&z);
    net.backward(x, &cache, &dz, grad);
    loss
}

impl Params for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        with_net!(&self.net, n => n.visit(prefix, f))
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        with_net!(&mut self.net, n => n.visit_mut(f))
    }
}

/// Per-sample speech probabilities for a whole recording.
///
/// The recording is cut into windows with `mode`, every window is evaluated,
/// and the results are mapped back (averaged where windows overlap).
pub fn predict_sequence(
    model: &Model,
    rp: &RespirationPattern,
    mode: ChunkMode,
    exec: Exec,
) -> Result<Vec<f64>> {
    let n = rp.len();
    let seq = LabeledSequence::new(rp.clone(), vec![0; n], "")?;
    let set = chunk(&seq, model.window(), mode)?;
    let probs = exec.map(set.chunks.len(), |i| model.forward(&set.chunks[i].input));
    let probs = probs.into_iter().collect::<Result<Vec<_>>>()?;
    reassemble_values(&set, &probs, n)
}

/// `index,time_s,probability,binary` rows.
pub fn predictions_to_csv(probs: &[f64], fps: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "time_s", "probability", "binary"])?;
    for (i, &p) in probs.iter().enumerate() {
        w.write_record([
            i.to_string(),
            (i as f64 / fps).to_string(),
            p.to_string(),
            u8::from(p >= THRESHOLD).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse("predictions", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parse a prediction CSV back into probabilities.
pub fn predictions_from_csv(text: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "probability")
        .ok_or_else(|| Error::parse("predictions", "missing `probability` column"))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let p: f64 = rec
            .get(col)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::parse("predictions", format!("row {}: bad probability", i + 1)))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::parse(
                "predictions",
                format!("row {}: probability {p} outside [0, 1]", i + 1),
            ));
        }
        out.push(p);
    }
    Ok(out)
}
