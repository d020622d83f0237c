use rand::Rng;

use super::{check_finite, join, Params, Tensor};
use crate::{Error, Result};

/// 1-D convolution over the step axis with "same" zero padding.
///
/// `kernel` is `filters × taps × in_channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        filters: usize,
        taps: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (3.0 / (in_channels * taps) as f64).sqrt();
        Self {
            kernel: Tensor::uniform(&[filters, taps, in_channels], limit, rng),
            bias: Tensor::zeros(&[filters]),
            dilation: dilation.max(1),
        }
    }

    pub fn filters(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn taps(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    fn left_pad(&self) -> usize {
        (self.taps() - 1) * self.dilation / 2
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let steps = x.seq_dims("conv1d_forward", self.in_channels())?;
        let y = self.forward_raw(x.data(), steps);
        check_finite(&y, "conv1d_forward")?;
        Tensor::sequence(steps, self.filters(), y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Conv1d) -> Result<Tensor> {
        let steps = x.seq_dims("conv1d_backward", self.in_channels())?;
        if dy.seq_dims("conv1d_backward", self.filters())? != steps {
            return Err(Error::ShapeMismatch {
                op: "conv1d_backward",
                expected: format!("{steps} steps"),
                found: format!("{:?}", dy.shape()),
            });
        }
        let dx = self.backward_raw(x.data(), dy.data(), steps, grad);
        check_finite(&dx, "conv1d_backward")?;
        Tensor::sequence(steps, self.in_channels(), dx)
    }

    /// Input step feeding output step `t` through tap `j`, if inside the sequence.
    #[inline]
    fn source(&self, t: usize, j: usize, steps: usize) -> Option<usize> {
        let s = (t + j * self.dilation).checked_sub(self.left_pad())?;
        (s < steps).then_some(s)
    }

    pub(crate) fn forward_raw(&self, x: &[f64], steps: usize) -> Vec<f64> {
        let (nf, nk, nc) = (self.filters(), self.taps(), self.in_channels());
        let w = self.kernel.data();
        let mut y = vec![0.0; steps * nf];
        for t in 0..steps {
            let out = &mut y[t * nf..(t + 1) * nf];
            out.copy_from_slice(self.bias.data());
            for j in 0..nk {
                let Some(s) = self.source(t, j, steps) else {
                    continue;
                };
                let xs = &x[s * nc..(s + 1) * nc];
                for (f, o) in out.iter_mut().enumerate() {
                    let wk = &w[(f * nk + j) * nc..(f * nk + j + 1) * nc];
                    *o += wk.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        y
    }

    pub(crate) fn backward_raw(
        &self,
        x: &[f64],
        dy: &[f64],
        steps: usize,
        grad: &mut Conv1d,
    ) -> Vec<f64> {
        let (nf, nk, nc) = (self.filters(), self.taps(), self.in_channels());
        let w = self.kernel.data();
        let mut dx = vec![0.0; steps * nc];
        for t in 0..steps {
            let d = &dy[t * nf..(t + 1) * nf];
            for (g, v) in grad.bias.data_mut().iter_mut().zip(d) {
                *g += v;
            }
            for j in 0..nk {
                let Some(s) = self.source(t, j, steps) else {
                    continue;
                };
                for (f, &df) in d.iter().enumerate() {
                    if df == 0.0 {
                        continue;
                    }
                    let off = (f * nk + j) * nc;
                    let gk = &mut grad.kernel.data_mut()[off..off + nc];
                    for (g, xv) in gk.iter_mut().zip(&x[s * nc..(s + 1) * nc]) {
                        *g += df * xv;
                    }
                    for (dv, wv) in dx[s * nc..(s + 1) * nc].iter_mut().zip(&w[off..off + nc]) {
                        *dv += df * wv;
                    }
                }
            }
        }
        dx
    }
}

impl Params for Conv1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "kernel"), &self.kernel);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.kernel);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_err, numeric};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_padding_moving_sum() {
        let layer = Conv1d {
            kernel: Tensor::from_vec(&[1, 3, 1], vec![1.0; 3]).unwrap(),
            bias: Tensor::zeros(&[1]),
            dilation: 1,
        };
        let x = Tensor::sequence(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn identity_tap_and_zero_kernel() {
        let mut layer = Conv1d {
            kernel: Tensor::from_vec(&[1, 3, 1], vec![0.0, 1.0, 0.0]).unwrap(),
            bias: Tensor::zeros(&[1]),
            dilation: 1,
        };
        let x = Tensor::sequence(5, 1, vec![0.3, -1.0, 2.0, 7.0, 0.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
        layer.kernel.fill(0.0);
        layer.bias.fill(-0.25);
        assert!(layer.forward(&x).unwrap().data().iter().all(|&v| v == -0.25));
    }

    #[test]
    fn dilated_taps_skip_steps() {
        let layer = Conv1d {
            kernel: Tensor::from_vec(&[1, 3, 1], vec![1.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(&[1]),
            dilation: 2,
        };
        // left pad 2: y[t] = x[t-2] + x[t+2]
        let x = Tensor::sequence(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[3.0, 4.0, 6.0, 2.0, 3.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (taps, dilation) in [(3, 2), (3, 1), (5, 3), (2, 1)] {
            let layer = Conv1d::new(2, 4, taps, dilation, &mut rng);
            let steps = 12;
            let x: Vec<f64> = (0..steps * 2).map(|i| (i as f64 * 0.53).sin()).collect();
            let probe: Vec<f64> = (0..steps * 4).map(|i| (i as f64 * 0.29).cos()).collect();
            let loss = |l: &Conv1d, x: &[f64]| -> f64 {
                l.forward_raw(x, steps).iter().zip(&probe).map(|(a, b)| a * b).sum()
            };
            let mut grad = layer.clone();
            grad.zero();
            let dx = layer.backward_raw(&x, &probe, steps, &mut grad);
            let num_x = numeric(&x, 1e-5, |p| loss(&layer, p));
            assert!(max_rel_err(&dx, &num_x) <= 1e-6);
            let num_p = numeric(&layer.flatten(), 1e-5, |p| {
                let mut l = layer.clone();
                l.unflatten(p);
                loss(&l, &x)
            });
            assert!(max_rel_err(&grad.flatten(), &num_p) <= 1e-6);
        }
    }
}
