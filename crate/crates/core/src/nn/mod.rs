//! A small layer toolkit with hand-derived backward passes.
//!
//! Sequences are row-major `steps × features` buffers. Every layer exposes a
//! checked API on [`Tensor`]s and an unchecked slice API used by the models.
//! A layer's gradient is stored in a value of the layer's own type, so
//! parameter and gradient tensors can be walked in lockstep.

mod activation;
mod adam;
mod conv;
mod dense;
mod loss;
mod lstm;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, tanh, tanh_backward};
pub use adam::{Adam, AdamConfig};
pub use conv::Conv1d;
pub use dense::Dense;
pub(crate) use loss::bce_logits_sum;
pub use loss::{weighted_bce, weighted_bce_logits, PROB_CLAMP};
pub use lstm::{Bidirectional, BidirectionalCache, Lstm, LstmCache};

use rand::Rng;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                expected: format!("{shape:?} (positive dims)"),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sequence tensor of shape `[steps, features]`.
    pub fn sequence(steps: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[steps, features], data)
    }

    pub fn uniform(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-limit..=limit)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn seq_dims(&self, op: &'static str, features: usize) -> Result<usize> {
        match self.shape.as_slice() {
            [steps, f] if *f == features => Ok(*steps),
            _ => Err(Error::ShapeMismatch {
                op,
                expected: format!("[steps, {features}]"),
                found: format!("{:?}", self.shape),
            }),
        }
    }
}

/// Uniform parameter walk shared by layers, models and the optimizer.
pub trait Params {
    /// Visit every parameter tensor with a stable dotted name.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |t| t.fill(0.0));
    }

    /// All parameters concatenated in visit order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    fn unflatten(&mut self, values: &[f64]) {
        let mut pos = 0;
        self.visit_mut(&mut |t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[pos..pos + n]);
            pos += n;
        });
        assert_eq!(pos, values.len(), "parameter count mismatch");
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn check_finite(values: &[f64], op: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// `y += W x` for row-major `W` (`rows × x.len()`).
#[inline]
pub(crate) fn gemv_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *yi += s;
    }
}

/// `x += Wᵀ y` for row-major `W` (`y.len() × x.len()`).
#[inline]
pub(crate) fn gemv_t_acc(w: &[f64], y: &[f64], x: &mut [f64]) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if *yi != 0.0 {
            for (xj, a) in x.iter_mut().zip(row) {
                *xj += yi * a;
            }
        }
    }
}

/// `G += y xᵀ` for row-major `G` (`y.len() × x.len()`).
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if *yi != 0.0 {
            for (gj, b) in row.iter_mut().zip(x) {
                *gj += yi * b;
            }
        }
    }
}
