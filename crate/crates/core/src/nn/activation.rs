//! Elementwise activations. Backward passes take the forward *output*.

pub fn relu(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn relu_backward(dy: &mut [f64], y: &[f64]) {
    for (d, &o) in dy.iter_mut().zip(y) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn tanh(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_backward(dy: &mut [f64], y: &[f64]) {
    for (d, &o) in dy.iter_mut().zip(y) {
        *d *= 1.0 - o * o;
    }
}

#[inline]
pub(crate) fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
}

pub fn sigmoid_backward(dy: &mut [f64], y: &[f64]) {
    for (d, &o) in dy.iter_mut().zip(y) {
        *d *= o * (1.0 - o);
    }
}
