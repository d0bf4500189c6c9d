//! Dense feed-forward networks with exact reverse-mode gradients and Adam.
//!
//! Batches are row-major: one sample per row. Hidden layers apply the
//! configured activation; the last layer is affine.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { w: Array2::zeros((n_in, n_out)), b: Array1::zeros(n_out) }
    }

    pub fn n_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Intermediate values of a forward pass, consumed by [`Mlp::backward`].
pub struct Tape {
    /// Input to each layer (the first is the network input).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`, weights drawn He/Glorot-style, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let std = match activation {
                    Activation::Relu => (2.0 / n_in as f64).sqrt(),
                    Activation::Tanh => (1.0 / n_in as f64).sqrt(),
                };
                let normal = Normal::new(0.0, std).expect("finite std");
                let w = Array2::from_shape_fn((n_in, n_out), |_| normal.sample(rng));
                Dense { w, b: Array1::zeros(n_out) }
            })
            .collect();
        Self { layers, activation }
    }

    /// All-zero network of the given shape.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers, activation }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim()];
        v.extend(self.layers.iter().map(|l| l.n_out()));
        v
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.n_out()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.n_in(), l.n_out())).collect(),
            activation: self.activation,
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w);
            z += &l.b;
            if i < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward(view).into_raw_vec_and_offset().0
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Tape {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w);
            z += &l.b;
            inputs.push(h);
            if i < last {
                let act = self.activation;
                let a = z.mapv(|v| act.apply(v));
                pre.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        Tape { inputs, pre, output: h }
    }

    /// Gradients of `sum(d_out ⊙ output)` with respect to every parameter
    /// and to the input batch.
    pub fn backward(&self, tape: &Tape, d_out: ArrayView2<f64>) -> (Mlp, Array2<f64>) {
        let mut grads = self.zeros_like();
        let mut delta = d_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let input = &tape.inputs[i];
            grads.layers[i].w = input.t().dot(&delta);
            grads.layers[i].b = delta.sum_axis(Axis(0));
            let mut d_in = delta.dot(&self.layers[i].w.t());
            if i > 0 {
                let act = self.activation;
                Zip::from(&mut d_in)
                    .and(&tape.pre[i - 1])
                    .and(&tape.inputs[i])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            }
            delta = d_in;
        }
        (grads, delta)
    }

    /// Gradient of `sum(d_out ⊙ output)` with respect to the input only.
    pub fn input_gradient(&self, tape: &Tape, d_out: ArrayView2<f64>) -> Array2<f64> {
        let mut delta = d_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let mut d_in = delta.dot(&self.layers[i].w.t());
            if i > 0 {
                let act = self.activation;
                Zip::from(&mut d_in)
                    .and(&tape.pre[i - 1])
                    .and(&tape.inputs[i])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            }
            delta = d_in;
        }
        delta
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend(l.w.iter());
            v.extend(l.b.iter());
        }
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter count mismatch");
        let mut k = 0;
        for l in &mut self.layers {
            for x in l.w.iter_mut() {
                *x = flat[k];
                k += 1;
            }
            for x in l.b.iter_mut() {
                *x = flat[k];
                k += 1;
            }
        }
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(&mut f);
            l.b.iter_mut().for_each(&mut f);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// `self ← (1 − tau) self + tau other`.
    pub fn soft_update(&mut self, other: &Mlp, tau: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            Zip::from(&mut a.w).and(&b.w).for_each(|x, &y| *x = (1.0 - tau) * *x + tau * y);
            Zip::from(&mut a.b).and(&b.b).for_each(|x, &y| *x = (1.0 - tau) * *x + tau * y);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        self.for_each_param_mut(|x| *x *= factor);
    }

    pub fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().chain(l.b.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
    step: u64,
    m: Mlp,
    v: Mlp,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: None, step: 0, m: net.zeros_like(), v: net.zeros_like() }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.max_grad_norm = Some(max_norm);
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Mlp) {
        self.step += 1;
        let scale = match self.max_grad_norm {
            Some(max) => {
                let n = grads.grad_norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        let eps = self.eps;
        for (((p, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.m.layers).zip(&mut self.v.layers) {
            let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                let g = g * scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            };
            Zip::from(&mut p.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|p, &g, m, v| upd(p, g, m, v));
            Zip::from(&mut p.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|p, &g, m, v| upd(p, g, m, v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let out = net.forward(x.view());
        0.5 * (&out - y).mapv(|v| v * v).sum()
    }

    fn check_gradients(activation: Activation) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::new(&[4, 6, 5, 3], activation, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let y = Array2::from_shape_fn((5, 3), |(i, j)| ((i + 2 * j) as f64 * 0.11).cos());
        let tape = net.forward_tape(x.view());
        let d_out = &tape.output - &y;
        let (grads, d_in) = net.backward(&tape, d_out.view());
        let analytic = grads.params_flat();
        let base = net.params_flat();
        let h = 1e-6;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            let mut up = net.clone();
            up.set_params_flat(&p);
            p[k] -= 2.0 * h;
            let mut dn = net.clone();
            dn.set_params_flat(&p);
            let fd = (loss(&up, &x, &y) - loss(&dn, &x, &y)) / (2.0 * h);
            let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-3);
            assert!(err < 1e-5, "param {k}: fd {fd} vs {}", analytic[k]);
        }
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&net, &xp, &y) - loss(&net, &xm, &y)) / (2.0 * h);
                assert!((fd - d_in[[i, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn relu_gradients_match_finite_differences() {
        check_gradients(Activation::Relu);
    }

    #[test]
    fn tanh_gradients_match_finite_differences() {
        check_gradients(Activation::Tanh);
    }

    #[test]
    fn input_gradient_agrees_with_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[3, 7, 2], Activation::Tanh, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        let tape = net.forward_tape(x.view());
        let d = Array2::from_shape_fn((4, 2), |(i, j)| 0.1 * (i + j) as f64 - 0.2);
        let (_, full) = net.backward(&tape, d.view());
        assert_eq!(net.input_gradient(&tape, d.view()), full);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 8, 2], Activation::Relu, &mut rng);
        let mut other = net.zeros_like();
        other.set_params_flat(&net.params_flat());
        assert_eq!(net, other);
        assert_eq!(net.num_params(), 3 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn adam_fits_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[2, 16, 1], Activation::Tanh, &mut rng);
        let mut opt = Adam::new(&net, 1e-2);
        let x = Array2::from_shape_fn((32, 2), |(i, j)| ((i * 3 + j) as f64 * 0.7).sin());
        let y = x.map_axis(Axis(1), |r| 0.5 * r[0] - 0.3 * r[1]).insert_axis(Axis(1));
        let before = loss(&net, &x, &y);
        for _ in 0..500 {
            let tape = net.forward_tape(x.view());
            let d = &tape.output - &y;
            let (g, _) = net.backward(&tape, d.view());
            opt.step(&mut net, &g);
        }
        assert!(loss(&net, &x, &y) < 0.01 * before);
    }

    #[test]
    fn soft_update_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mlp::new(&[2, 3, 1], Activation::Relu, &mut rng);
        let b = Mlp::new(&[2, 3, 1], Activation::Relu, &mut rng);
        let mut c = a.clone();
        c.soft_update(&b, 0.25);
        let (pa, pb, pc) = (a.params_flat(), b.params_flat(), c.params_flat());
        for k in 0..pa.len() {
            assert!((pc[k] - (0.75 * pa[k] + 0.25 * pb[k])).abs() < 1e-15);
        }
    }
}
