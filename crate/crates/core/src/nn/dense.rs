use rand::Rng;

use super::{check_finite, gemv_acc, gemv_t_acc, join, outer_acc, Params, Tensor};
use crate::Result;

/// Fully connected layer, `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (3.0 / inputs as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[outputs, inputs], limit, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Apply to each row of a `steps × inputs` sequence.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let steps = x.seq_dims("dense_forward", self.inputs())?;
        let y = self.forward_raw(x.data(), steps);
        check_finite(&y, "dense_forward")?;
        Tensor::sequence(steps, self.outputs(), y)
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Dense) -> Result<Tensor> {
        let steps = x.seq_dims("dense_backward", self.inputs())?;
        if dy.seq_dims("dense_backward", self.outputs())? != steps {
            return Err(crate::Error::ShapeMismatch {
                op: "dense_backward",
                expected: format!("{steps} steps"),
                found: format!("{:?}", dy.shape()),
            });
        }
        let dx = self.backward_raw(x.data(), dy.data(), steps, grad);
        check_finite(&dx, "dense_backward")?;
        Tensor::sequence(steps, self.inputs(), dx)
    }

    pub(crate) fn forward_raw(&self, x: &[f64], steps: usize) -> Vec<f64> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let mut y = Vec::with_capacity(steps * n_out);
        for t in 0..steps {
            let start = y.len();
            y.extend_from_slice(self.bias.data());
            gemv_acc(
                self.weight.data(),
                &x[t * n_in..(t + 1) * n_in],
                &mut y[start..],
            );
        }
        y
    }

    pub(crate) fn backward_raw(
        &self,
        x: &[f64],
        dy: &[f64],
        steps: usize,
        grad: &mut Dense,
    ) -> Vec<f64> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let mut dx = vec![0.0; steps * n_in];
        for t in 0..steps {
            let d = &dy[t * n_out..(t + 1) * n_out];
            let xt = &x[t * n_in..(t + 1) * n_in];
            for (g, v) in grad.bias.data_mut().iter_mut().zip(d) {
                *g += v;
            }
            outer_acc(grad.weight.data_mut(), d, xt);
            gemv_t_acc(self.weight.data(), d, &mut dx[t * n_in..(t + 1) * n_in]);
        }
        dx
    }
}

impl Params for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
