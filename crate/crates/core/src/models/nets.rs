//! The four network bodies. Each maps a length-`w` window to `w` logits.

use rand::Rng;

use crate::nn::{
    relu, relu_backward, tanh, tanh_backward, Bidirectional, BidirectionalCache, Conv1d, Dense,
    Params, Tensor,
};

/// Length of the repeated per-step feature vector in the 1-D CNN.
pub const CNN_REPEAT: usize = 30;

pub(crate) trait Network: Params + Clone + Send + Sync {
    type Cache: Send;

    fn window(&self) -> usize;
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Self::Cache);
    /// Accumulate parameter gradients for `dlogits` into `grad`.
    fn backward(&self, x: &[f64], cache: &Self::Cache, dlogits: &[f64], grad: &mut Self);
}

/// Dense stack over the whole window; every output step gets the same value.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Vec<Dense>,
    pub head: Dense,
}

impl Mlp {
    pub fn new(w: usize, widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut hidden = Vec::new();
        let mut prev = w;
        for &n in widths {
            hidden.push(Dense::new(prev, n, rng));
            prev = n;
        }
        Self {
            hidden,
            head: Dense::new(prev, 1, rng),
        }
    }
}

impl Network for Mlp {
    /// Post-ReLU activations of each hidden layer.
    type Cache = Vec<Vec<f64>>;

    fn window(&self) -> usize {
        self.hidden[0].inputs()
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, Self::Cache) {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let input = acts.last().map_or(x, |a| a.as_slice());
            let mut a = layer.forward_raw(input, 1);
            relu(&mut a);
            acts.push(a);
        }
        let z = self.head.forward_raw(acts.last().unwrap(), 1)[0];
        (vec![z; x.len()], acts)
    }

    fn backward(&self, x: &[f64], acts: &Self::Cache, dlogits: &[f64], grad: &mut Self) {
        let dz: f64 = dlogits.iter().sum();
        let mut d = self
            .head
            .backward_raw(acts.last().unwrap(), &[dz], 1, &mut grad.head);
        for i in (0..self.hidden.len()).rev() {
            relu_backward(&mut d, &acts[i]);
            let input = if i == 0 { x } else { &acts[i - 1] };
            d = self.hidden[i].backward_raw(input, &d, 1, &mut grad.hidden[i]);
        }
    }
}

impl Params for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, l) in self.hidden.iter().enumerate() {
            l.visit(&crate::nn::join(prefix, &format!("fc{}", i + 1)), f);
        }
        self.head.visit(&crate::nn::join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.hidden.iter_mut().for_each(|l| l.visit_mut(f));
        self.head.visit_mut(f);
    }
}

/// Per-step CNN: each step's scalar is repeated into a length-30 vector,
/// convolved twice, flattened and passed through a dense stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Cnn1d {
    pub w: usize,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub fc1: Dense,
    pub fc2: Dense,
    pub head: Dense,
}

pub struct Cnn1dCache {
    conv1: Vec<f64>,
    conv2: Vec<f64>,
    fc1: Vec<f64>,
    fc2: Vec<f64>,
}

impl Cnn1d {
    pub fn new(w: usize, filters: usize, fc1: usize, fc2: usize, rng: &mut impl Rng) -> Self {
        Self {
            w,
            conv1: Conv1d::new(1, filters, 3, 1, rng),
            conv2: Conv1d::new(filters, filters, 3, 1, rng),
            fc1: Dense::new(CNN_REPEAT * filters, fc1, rng),
            fc2: Dense::new(fc1, fc2, rng),
            head: Dense::new(fc2, 1, rng),
        }
    }
}

impl Network for Cnn1d {
    type Cache = Cnn1dCache;

    fn window(&self) -> usize {
        self.w
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, Cnn1dCache) {
        let width = CNN_REPEAT * self.conv2.filters();
        let mut conv1 = Vec::with_capacity(x.len() * width);
        let mut conv2 = Vec::with_capacity(x.len() * width);
        for &v in x {
            let mut a = self.conv1.forward_raw(&[v; CNN_REPEAT], CNN_REPEAT);
            tanh(&mut a);
            let mut b = self.conv2.forward_raw(&a, CNN_REPEAT);
            tanh(&mut b);
            conv1.extend_from_slice(&a);
            conv2.extend_from_slice(&b);
        }
        let mut fc1 = self.fc1.forward_raw(&conv2, x.len());
        relu(&mut fc1);
        let mut fc2 = self.fc2.forward_raw(&fc1, x.len());
        relu(&mut fc2);
        let z = self.head.forward_raw(&fc2, x.len());
        (z, Cnn1dCache { conv1, conv2, fc1, fc2 })
    }

    fn backward(&self, x: &[f64], c: &Cnn1dCache, dlogits: &[f64], grad: &mut Self) {
        let steps = x.len();
        let mut d = self.head.backward_raw(&c.fc2, dlogits, steps, &mut grad.head);
        relu_backward(&mut d, &c.fc2);
        let mut d = self.fc2.backward_raw(&c.fc1, &d, steps, &mut grad.fc2);
        relu_backward(&mut d, &c.fc1);
        let d_flat = self.fc1.backward_raw(&c.conv2, &d, steps, &mut grad.fc1);
        let width = CNN_REPEAT * self.conv2.filters();
        for (t, &v) in x.iter().enumerate() {
            let span = t * width..(t + 1) * width;
            let mut d2 = d_flat[span.clone()].to_vec();
            tanh_backward(&mut d2, &c.conv2[span.clone()]);
            let mut d1 = self
                .conv2
                .backward_raw(&c.conv1[span.clone()], &d2, CNN_REPEAT, &mut grad.conv2);
            tanh_backward(&mut d1, &c.conv1[span]);
            self.conv1
                .backward_raw(&[v; CNN_REPEAT], &d1, CNN_REPEAT, &mut grad.conv1);
        }
    }
}

impl Params for Cnn1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        use crate::nn::join;
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// Optional temporal convolutions, two stacked bidirectional LSTMs and a
/// per-step dense head. Without convolutions this is the plain BiLSTM model.
#[derive(Clone, Debug, PartialEq)]
pub struct Recurrent {
    pub w: usize,
    pub convs: Vec<Conv1d>,
    pub lstm1: Bidirectional,
    pub lstm2: Bidirectional,
    pub fc: Dense,
    pub head: Dense,
}

pub struct RecurrentCache {
    /// Post-tanh outputs of each convolution.
    convs: Vec<Vec<f64>>,
    lstm1_out: Vec<f64>,
    lstm1: BidirectionalCache,
    lstm2_out: Vec<f64>,
    lstm2: BidirectionalCache,
    fc: Vec<f64>,
}

impl Recurrent {
    /// `conv` is `(layers, filters, taps, dilation)`; `layers = 0` skips it.
    pub fn new(
        w: usize,
        conv: (usize, usize, usize, usize),
        units: usize,
        fc: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (layers, filters, taps, dilation) = conv;
        let mut convs = Vec::new();
        let mut width = 1;
        for _ in 0..layers {
            convs.push(Conv1d::new(width, filters, taps, dilation, rng));
            width = filters;
        }
        let lstm1 = Bidirectional::new(width, units, rng);
        let lstm2 = Bidirectional::new(2 * units, units, rng);
        Self {
            w,
            convs,
            lstm1,
            lstm2,
            fc: Dense::new(2 * units, fc, rng),
            head: Dense::new(fc, 1, rng),
        }
    }
}

impl Network for Recurrent {
    type Cache = RecurrentCache;

    fn window(&self) -> usize {
        self.w
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, RecurrentCache) {
        let steps = x.len();
        let mut convs: Vec<Vec<f64>> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let input = convs.last().map_or(x, |a| a.as_slice());
            let mut a = conv.forward_raw(input, steps);
            tanh(&mut a);
            convs.push(a);
        }
        let input = convs.last().map_or(x, |a| a.as_slice());
        let (lstm1_out, lstm1) = self.lstm1.forward_raw(input, steps);
        let (lstm2_out, lstm2) = self.lstm2.forward_raw(&lstm1_out, steps);
        let mut fc = self.fc.forward_raw(&lstm2_out, steps);
        relu(&mut fc);
        let z = self.head.forward_raw(&fc, steps);
        let cache = RecurrentCache {
            convs,
            lstm1_out,
            lstm1,
            lstm2_out,
            lstm2,
            fc,
        };
        (z, cache)
    }

    fn backward(&self, x: &[f64], c: &RecurrentCache, dlogits: &[f64], grad: &mut Self) {
        let steps = x.len();
        let mut d = self.head.backward_raw(&c.fc, dlogits, steps, &mut grad.head);
        relu_backward(&mut d, &c.fc);
        let d = self.fc.backward_raw(&c.lstm2_out, &d, steps, &mut grad.fc);
        let d = self
            .lstm2
            .backward_raw(&c.lstm1_out, &c.lstm2, &d, &mut grad.lstm2);
        let input = c.convs.last().map_or(x, |a| a.as_slice());
        let mut d = self.lstm1.backward_raw(input, &c.lstm1, &d, &mut grad.lstm1);
        for i in (0..self.convs.len()).rev() {
            tanh_backward(&mut d, &c.convs[i]);
            let input = if i == 0 { x } else { &c.convs[i - 1] };
            d = self.convs[i].backward_raw(input, &d, steps, &mut grad.convs[i]);
        }
    }
}

impl Params for Recurrent {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        use crate::nn::join;
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{}", i + 1)), f);
        }
        self.lstm1.visit(&join(prefix, "bilstm1"), f);
        self.lstm2.visit(&join(prefix, "bilstm2"), f);
        self.fc.visit(&join(prefix, "fc"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.convs.iter_mut().for_each(|c| c.visit_mut(f));
        self.lstm1.visit_mut(f);
        self.lstm2.visit_mut(f);
        self.fc.visit_mut(f);
        self.head.visit_mut(f);
    }
}
