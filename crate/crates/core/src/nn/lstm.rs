use rand::Rng;

use super::activation::sigmoid_scalar;
use super::{check_finite, gemv_acc, gemv_t_acc, join, outer_acc, Params, Tensor};
use crate::{Error, Result};

/// LSTM layer with gate blocks stacked in the order input, forget, cell, output.
///
/// `w_input` is `4H × I`, `w_recurrent` is `4H × H`, `bias` is `4H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w_input: Tensor,
    pub w_recurrent: Tensor,
    pub bias: Tensor,
}

/// Activations saved by the forward pass for backpropagation through time.
#[derive(Clone, Debug, Default)]
pub struct LstmCache {
    steps: usize,
    /// Activated gates per step, `steps × 4H`.
    gates: Vec<f64>,
    cells: Vec<f64>,
    hidden: Vec<f64>,
}

impl LstmCache {
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }
}

impl Lstm {
    pub fn new(inputs: usize, units: usize, rng: &mut impl Rng) -> Self {
        let limit = 1.0 / (units as f64).sqrt();
        let mut bias = Tensor::zeros(&[4 * units]);
        bias.data_mut()[units..2 * units].fill(1.0);
        Self {
            w_input: Tensor::uniform(&[4 * units, inputs], limit, rng),
            w_recurrent: Tensor::uniform(&[4 * units, units], limit, rng),
            bias,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_input.shape()[1]
    }

    pub fn units(&self) -> usize {
        self.w_recurrent.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LstmCache)> {
        let steps = x.seq_dims("lstm_forward", self.inputs())?;
        let cache = self.forward_raw(x.data(), steps);
        check_finite(&cache.hidden, "lstm_forward")?;
        let h = Tensor::sequence(steps, self.units(), cache.hidden.clone())?;
        Ok((h, cache))
    }

    pub fn backward(
        &self,
        x: &Tensor,
        cache: &LstmCache,
        dh: &Tensor,
        grad: &mut Lstm,
    ) -> Result<Tensor> {
        let steps = x.seq_dims("lstm_backward", self.inputs())?;
        if dh.seq_dims("lstm_backward", self.units())? != steps || cache.steps != steps {
            return Err(Error::ShapeMismatch {
                op: "lstm_backward",
                expected: format!("{steps} steps"),
                found: format!("{:?}", dh.shape()),
            });
        }
        let dx = self.backward_raw(x.data(), cache, dh.data(), grad);
        check_finite(&dx, "lstm_backward")?;
        Tensor::sequence(steps, self.inputs(), dx)
    }

    pub(crate) fn forward_raw(&self, x: &[f64], steps: usize) -> LstmCache {
        let (ni, h) = (self.inputs(), self.units());
        let mut gates = vec![0.0; steps * 4 * h];
        let mut cells = vec![0.0; steps * h];
        let mut hidden = vec![0.0; steps * h];
        let zeros = vec![0.0; h];
        for t in 0..steps {
            let a = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            a.copy_from_slice(self.bias.data());
            gemv_acc(self.w_input.data(), &x[t * ni..(t + 1) * ni], a);
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&hidden[(t - 1) * h..t * h], &cells[(t - 1) * h..t * h])
            };
            gemv_acc(self.w_recurrent.data(), h_prev, a);
            let mut c_new = vec![0.0; h];
            let mut h_new = vec![0.0; h];
            for k in 0..h {
                let i = sigmoid_scalar(a[k]);
                let f = sigmoid_scalar(a[h + k]);
                let g = a[2 * h + k].tanh();
                let o = sigmoid_scalar(a[3 * h + k]);
                a[k] = i;
                a[h + k] = f;
                a[2 * h + k] = g;
                a[3 * h + k] = o;
                c_new[k] = f * c_prev[k] + i * g;
                h_new[k] = o * c_new[k].tanh();
            }
            cells[t * h..(t + 1) * h].copy_from_slice(&c_new);
            hidden[t * h..(t + 1) * h].copy_from_slice(&h_new);
        }
        LstmCache {
            steps,
            gates,
            cells,
            hidden,
        }
    }

    pub(crate) fn backward_raw(
        &self,
        x: &[f64],
        cache: &LstmCache,
        dh_out: &[f64],
        grad: &mut Lstm,
    ) -> Vec<f64> {
        let (ni, h, steps) = (self.inputs(), self.units(), cache.steps);
        let mut dx = vec![0.0; steps * ni];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        let zeros = vec![0.0; h];
        for t in (0..steps).rev() {
            let g = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
            let c = &cache.cells[t * h..(t + 1) * h];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (
                    &cache.hidden[(t - 1) * h..t * h],
                    &cache.cells[(t - 1) * h..t * h],
                )
            };
            for k in 0..h {
                let (i, f, cand, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let dh = dh_out[t * h + k] + dh_next[k];
                let tc = c[k].tanh();
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                da[k] = dc * cand * i * (1.0 - i);
                da[h + k] = dc * c_prev[k] * f * (1.0 - f);
                da[2 * h + k] = dc * i * (1.0 - cand * cand);
                da[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            for (b, d) in grad.bias.data_mut().iter_mut().zip(&da) {
                *b += d;
            }
            outer_acc(grad.w_input.data_mut(), &da, &x[t * ni..(t + 1) * ni]);
            outer_acc(grad.w_recurrent.data_mut(), &da, h_prev);
            gemv_t_acc(self.w_input.data(), &da, &mut dx[t * ni..(t + 1) * ni]);
            dh_next.fill(0.0);
            gemv_t_acc(self.w_recurrent.data(), &da, &mut dh_next);
        }
        dx
    }
}

impl Params for Lstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "w_input"), &self.w_input);
        f(join(prefix, "w_recurrent"), &self.w_recurrent);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.w_input);
        f(&mut self.w_recurrent);
        f(&mut self.bias);
    }
}

/// Two LSTMs reading the sequence in opposite directions. Output step `t` is
/// the forward hidden state followed by the backward hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct Bidirectional {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Clone, Debug, Default)]
pub struct BidirectionalCache {
    forward: LstmCache,
    backward: LstmCache,
    reversed_input: Vec<f64>,
}

fn reverse_steps(x: &[f64], steps: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for t in (0..steps).rev() {
        out.extend_from_slice(&x[t * width..(t + 1) * width]);
    }
    out
}

impl Bidirectional {
    pub fn new(inputs: usize, units: usize, rng: &mut impl Rng) -> Self {
        let forward = Lstm::new(inputs, units, rng);
        let backward = Lstm::new(inputs, units, rng);
        Self { forward, backward }
    }

    pub fn inputs(&self) -> usize {
        self.forward.inputs()
    }

    pub fn units(&self) -> usize {
        self.forward.units()
    }

    pub fn outputs(&self) -> usize {
        2 * self.units()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, BidirectionalCache)> {
        let steps = x.seq_dims("bidirectional_forward", self.inputs())?;
        let (y, cache) = self.forward_raw(x.data(), steps);
        check_finite(&y, "bidirectional_forward")?;
        Ok((Tensor::sequence(steps, self.outputs(), y)?, cache))
    }

    pub fn backward(
        &self,
        x: &Tensor,
        cache: &BidirectionalCache,
        dy: &Tensor,
        grad: &mut Bidirectional,
    ) -> Result<Tensor> {
        let steps = x.seq_dims("bidirectional_backward", self.inputs())?;
        if dy.seq_dims("bidirectional_backward", self.outputs())? != steps
            || cache.forward.steps != steps
        {
            return Err(Error::ShapeMismatch {
                op: "bidirectional_backward",
                expected: format!("{steps} steps"),
                found: format!("{:?}", dy.shape()),
            });
        }
        let dx = self.backward_raw(x.data(), cache, dy.data(), grad);
        check_finite(&dx, "bidirectional_backward")?;
        Tensor::sequence(steps, self.inputs(), dx)
    }

    pub(crate) fn forward_raw(&self, x: &[f64], steps: usize) -> (Vec<f64>, BidirectionalCache) {
        let h = self.units();
        let reversed_input = reverse_steps(x, steps, self.inputs());
        let fwd = self.forward.forward_raw(x, steps);
        let bwd = self.backward.forward_raw(&reversed_input, steps);
        let mut y = Vec::with_capacity(steps * 2 * h);
        for t in 0..steps {
            y.extend_from_slice(&fwd.hidden[t * h..(t + 1) * h]);
            let r = steps - 1 - t;
            y.extend_from_slice(&bwd.hidden[r * h..(r + 1) * h]);
        }
        let cache = BidirectionalCache {
            forward: fwd,
            backward: bwd,
            reversed_input,
        };
        (y, cache)
    }

    pub(crate) fn backward_raw(
        &self,
        x: &[f64],
        cache: &BidirectionalCache,
        dy: &[f64],
        grad: &mut Bidirectional,
    ) -> Vec<f64> {
        let (h, ni, steps) = (self.units(), self.inputs(), cache.forward.steps);
        let mut d_fwd = Vec::with_capacity(steps * h);
        let mut d_bwd = vec![0.0; steps * h];
        for t in 0..steps {
            let row = &dy[t * 2 * h..(t + 1) * 2 * h];
            d_fwd.extend_from_slice(&row[..h]);
            let r = steps - 1 - t;
            d_bwd[r * h..(r + 1) * h].copy_from_slice(&row[h..]);
        }
        let mut dx = self
            .forward
            .backward_raw(x, &cache.forward, &d_fwd, &mut grad.forward);
        let dx_rev = self.backward.backward_raw(
            &cache.reversed_input,
            &cache.backward,
            &d_bwd,
            &mut grad.backward,
        );
        for t in 0..steps {
            let r = steps - 1 - t;
            for (a, b) in dx[t * ni..(t + 1) * ni]
                .iter_mut()
                .zip(&dx_rev[r * ni..(r + 1) * ni])
            {
                *a += b;
            }
        }
        dx
    }
}

impl Params for Bidirectional {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.forward.visit(&join(prefix, "fwd"), f);
        self.backward.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.forward.visit_mut(f);
        self.backward.visit_mut(f);
    }
}
