//! Minimal feed-forward network and optimizer shared by all controllers.
//!
//! Plain `Vec<f64>` storage with hand-rolled reverse-mode gradients; all
//! math is 64-bit for reproducible golden files. Forward is pure; updates
//! mutate the owned parameter set in place.

use rand::Rng;
use thiserror::Error;

use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("network needs at least an input and an output layer")]
    TooFewLayers,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Hidden-layer nonlinearity; the output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activated value.
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for v in w.iter_mut() {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[L]` is the network output.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

/// A fully connected network: affine layers with `activation` on hidden
/// layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    /// Row-major `(out x in)` weight matrices, one per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

impl Mlp {
    /// Glorot-uniform initialization from the given stream.
    pub fn new(layer_sizes: &[usize], activation: Activation, rng: &mut Stream) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::TooFewLayers);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let wmat: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
            weights.push(wmat);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, biases, activation })
    }

    /// All-zero parameters; handy for fixed-point style tests.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::TooFewLayers);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            weights.push(vec![0.0; w[0] * w[1]]);
            biases.push(vec![0.0; w[1]]);
        }
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, biases, activation })
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Deterministic forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut cache = self.forward_cached(input)?;
        Ok(cache.acts.pop().expect("cache holds at least the input"))
    }

    /// Forward pass that keeps per-layer activations for [`Mlp::backward`].
    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache, NnError> {
        if input.len() != self.input_len() {
            return Err(NnError::Dimension { expected: self.input_len(), got: input.len() });
        }
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(input.to_vec());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let last = acts.last().unwrap();
            let mut out = vec![0.0; n_out];
            let w = &self.weights[l];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = self.biases[l][o];
                for (wi, xi) in row.iter().zip(last.iter()) {
                    z += wi * xi;
                }
                out[o] = if l + 1 == self.n_layers() { z } else { self.activation.apply(z) };
            }
            acts.push(out);
        }
        Ok(ForwardCache { acts })
    }

    /// Exact reverse-mode gradients of `output . upstream` with respect to
    /// every parameter, given the cache of a prior forward pass.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients, NnError> {
        if upstream.len() != self.output_len() {
            return Err(NnError::Dimension { expected: self.output_len(), got: upstream.len() });
        }
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();

        // delta = dL/dz for the current layer, starting at the linear output.
        let mut delta = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let input = &cache.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                gb[l][o] = d;
                let row = &mut gw[l][o * n_in..(o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(input.iter()) {
                    *g = d * xi;
                }
            }
            if l > 0 {
                // Propagate into the previous layer, through its activation.
                let mut prev = vec![0.0; n_in];
                let w = &self.weights[l];
                for o in 0..n_out {
                    let d = delta[o];
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for (p, wi) in prev.iter_mut().zip(row.iter()) {
                        *p += d * wi;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input.iter()) {
                    *p *= self.activation.grad_from_output(*a);
                }
                delta = prev;
            }
        }
        Ok(Gradients { weights: gw, biases: gb })
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Serializes to a versioned text checkpoint (layer sizes header, then
    /// parameters as hex-encoded f64 bits for exact round-trips).
    pub fn save_checkpoint(&self) -> String {
        let mut out = String::from("gridsim-mlp v1\n");
        out.push_str(self.activation.tag());
        out.push('\n');
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        out.push_str(&sizes.join(" "));
        out.push('\n');
        for l in 0..self.n_layers() {
            for v in self.weights[l].iter().chain(self.biases[l].iter()) {
                out.push_str(&format!("{:016x}\n", v.to_bits()));
            }
        }
        out
    }

    pub fn load_checkpoint(text: &str) -> Result<Self, NnError> {
        let mut lines = text.lines();
        let magic = lines.next().ok_or_else(|| NnError::BadCheckpoint("empty".into()))?;
        if magic != "gridsim-mlp v1" {
            return Err(NnError::BadCheckpoint(format!("unknown header {magic:?}")));
        }
        let activation = match lines.next() {
            Some("tanh") => Activation::Tanh,
            Some("relu") => Activation::Relu,
            other => return Err(NnError::BadCheckpoint(format!("bad activation {other:?}"))),
        };
        let sizes: Vec<usize> = lines
            .next()
            .ok_or_else(|| NnError::BadCheckpoint("missing sizes".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| NnError::BadCheckpoint(format!("bad size {t:?}"))))
            .collect::<Result<_, _>>()?;
        let mut net = Mlp::zeros(&sizes, activation)?;
        for l in 0..net.n_layers() {
            let wlen = net.weights[l].len();
            for i in 0..wlen + net.biases[l].len() {
                let tok = lines
                    .next()
                    .ok_or_else(|| NnError::BadCheckpoint("truncated parameters".into()))?;
                let bits = u64::from_str_radix(tok.trim(), 16)
                    .map_err(|_| NnError::BadCheckpoint(format!("bad value {tok:?}")))?;
                let v = f64::from_bits(bits);
                if i < wlen {
                    net.weights[l][i] = v;
                } else {
                    net.biases[l][i - wlen] = v;
                }
            }
        }
        Ok(net)
    }
}

/// Gradient-descent flavor applied by [`apply_update`].
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        /// First/second moment estimates, lazily shaped on first use.
        m: Option<Gradients>,
        v: Option<Gradients>,
        t: u64,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: None, v: None, t: 0 }
    }
}

/// Applies one descent step of `grads` (the gradient of a loss to minimize)
/// to the network parameters.
pub fn apply_update(net: &mut Mlp, grads: &Gradients, opt: &mut Optimizer) {
    match opt {
        Optimizer::Sgd { lr } => {
            let lr = *lr;
            for l in 0..net.n_layers() {
                for (p, g) in net.weights[l].iter_mut().zip(&grads.weights[l]) {
                    *p -= lr * g;
                }
                for (p, g) in net.biases[l].iter_mut().zip(&grads.biases[l]) {
                    *p -= lr * g;
                }
            }
        }
        Optimizer::Adam { lr, beta1, beta2, eps, m, v, t } => {
            let (lr, b1, b2, eps) = (*lr, *beta1, *beta2, *eps);
            if m.is_none() {
                *m = Some(net.zero_gradients());
                *v = Some(net.zero_gradients());
            }
            *t += 1;
            let bc1 = 1.0 - b1.powi(*t as i32);
            let bc2 = 1.0 - b2.powi(*t as i32);
            let m = m.as_mut().unwrap();
            let v = v.as_mut().unwrap();
            let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            };
            for l in 0..net.n_layers() {
                for i in 0..net.weights[l].len() {
                    step(
                        &mut net.weights[l][i],
                        grads.weights[l][i],
                        &mut m.weights[l][i],
                        &mut v.weights[l][i],
                    );
                }
                for i in 0..net.biases[l].len() {
                    step(
                        &mut net.biases[l][i],
                        grads.biases[l][i],
                        &mut m.biases[l][i],
                        &mut v.biases[l][i],
                    );
                }
            }
        }
    }
}

/// Central finite-difference gradient of `output . upstream`, used as the
/// independent oracle for [`Mlp::backward`] in tests.
#[doc(hidden)]
pub fn finite_difference_gradients(net: &Mlp, input: &[f64], upstream: &[f64], h: f64) -> Gradients {
    let loss = |n: &Mlp| -> f64 {
        n.forward(input)
            .unwrap()
            .iter()
            .zip(upstream)
            .map(|(o, u)| o * u)
            .sum()
    };
    let mut grads = net.zero_gradients();
    let mut probe = net.clone();
    for l in 0..net.n_layers() {
        for i in 0..net.weights[l].len() {
            let orig = probe.weights[l][i];
            probe.weights[l][i] = orig + h;
            let up = loss(&probe);
            probe.weights[l][i] = orig - h;
            let down = loss(&probe);
            probe.weights[l][i] = orig;
            grads.weights[l][i] = (up - down) / (2.0 * h);
        }
        for i in 0..net.biases[l].len() {
            let orig = probe.biases[l][i];
            probe.biases[l][i] = orig + h;
            let up = loss(&probe);
            probe.biases[l][i] = orig - h;
            let down = loss(&probe);
            probe.biases[l][i] = orig;
            grads.biases[l][i] = (up - down) / (2.0 * h);
        }
    }
    grads
}

/// Smallest absolute hidden pre-activation over a forward pass. Inputs
/// that leave a ReLU unit within the finite-difference step of its kink
/// make central differences meaningless; checks use this to resample.
#[doc(hidden)]
pub fn min_hidden_preactivation(net: &Mlp, input: &[f64]) -> f64 {
    let mut margin = f64::INFINITY;
    let mut x = input.to_vec();
    for l in 0..net.n_layers() {
        let (n_in, n_out) = (net.layer_sizes[l], net.layer_sizes[l + 1]);
        let mut out = vec![0.0; n_out];
        for o in 0..n_out {
            let row = &net.weights[l][o * n_in..(o + 1) * n_in];
            let mut z = net.biases[l][o];
            for (wi, xi) in row.iter().zip(&x) {
                z += wi * xi;
            }
            if l + 1 < net.n_layers() {
                margin = margin.min(z.abs());
                out[o] = net.activation.apply(z);
            } else {
                out[o] = z;
            }
        }
        x = out;
    }
    margin
}

/// Maximum relative error between analytic and finite-difference gradients.
#[doc(hidden)]
pub fn gradient_check(net: &Mlp, input: &[f64], upstream: &[f64]) -> f64 {
    let cache = net.forward_cached(input).unwrap();
    let analytic = net.backward(&cache, upstream).unwrap();
    let numeric = finite_difference_gradients(net, input, upstream, 1e-5);
    let mut worst: f64 = 0.0;
    let cmp = |a: f64, b: f64| -> f64 { (a - b).abs() / a.abs().max(b.abs()).max(1e-3) };
    for l in 0..net.n_layers() {
        for (a, b) in analytic.weights[l].iter().zip(&numeric.weights[l]) {
            worst = worst.max(cmp(*a, *b));
        }
        for (a, b) in analytic.biases[l].iter().zip(&numeric.biases[l]) {
            worst = worst.max(cmp(*a, *b));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::zeros(&[2, 2], Activation::Tanh).unwrap();
        net.weights[0] = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(net.forward(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn fixed_221_tanh_matches_hand_computation() {
        // Hidden: z1 = 0.1*x1 + 0.2*x2 + 0.05, z2 = -0.3*x1 + 0.4*x2 - 0.1
        // Output: y = 0.7*tanh(z1) - 0.5*tanh(z2) + 0.25
        let mut net = Mlp::zeros(&[2, 2, 1], Activation::Tanh).unwrap();
        net.weights[0] = vec![0.1, 0.2, -0.3, 0.4];
        net.biases[0] = vec![0.05, -0.1];
        net.weights[1] = vec![0.7, -0.5];
        net.biases[1] = vec![0.25];
        let (x1, x2) = (0.6f64, -0.4f64);
        let z1 = 0.1 * x1 + 0.2 * x2 + 0.05;
        let z2 = -0.3 * x1 + 0.4 * x2 - 0.1;
        let expect = 0.7 * z1.tanh() - 0.5 * z2.tanh() + 0.25;
        let got = net.forward(&[x1, x2]).unwrap()[0];
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let net = Mlp::zeros(&[3, 2], Activation::Relu).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(NnError::Dimension { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = stream(1, "nn_test", 0);
        let net = Mlp::new(&[3, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2, 0.3]).unwrap();
        let g = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.weights.iter().flatten().all(|v| *v == 0.0));
        assert!(g.biases.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_1x1_gradients_are_analytic() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Tanh).unwrap();
        net.weights[0] = vec![0.5];
        let x = 1.7;
        let cache = net.forward_cached(&[x]).unwrap();
        let g = net.backward(&cache, &[1.0]).unwrap();
        assert!((g.weights[0][0] - x).abs() < 1e-15);
        assert!((g.biases[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_check_random_nets() {
        let mut rng = stream(7, "nn_gradcheck", 0);
        for case in 0..25 {
            let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Relu };
            let net = Mlp::new(&[4, 8, 6, 3], act, &mut rng).unwrap();
            // Central differences are invalid within the step of a ReLU
            // kink; resample such inputs.
            let input = loop {
                let candidate: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if act == Activation::Tanh || min_hidden_preactivation(&net, &candidate) > 1e-3 {
                    break candidate;
                }
            };
            let upstream: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let err = gradient_check(&net, &input, &upstream);
            assert!(err < 1e-4, "case {case}: relative error {err}");
        }
    }

    #[test]
    fn sgd_step() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Tanh).unwrap();
        let mut g = net.zero_gradients();
        g.weights[0][0] = 1.0;
        let mut opt = Optimizer::sgd(0.1);
        apply_update(&mut net, &g, &mut opt);
        assert!((net.weights[0][0] + 0.1).abs() < 1e-15);

        let zero = net.zero_gradients();
        let before = net.weights[0][0];
        apply_update(&mut net, &zero, &mut opt);
        assert_eq!(net.weights[0][0], before);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // Minimize p^2 for the single bias parameter of a 1-1 zero-weight net.
        let mut net = Mlp::zeros(&[1, 1], Activation::Tanh).unwrap();
        net.biases[0][0] = 1.0;
        let mut opt = Optimizer::adam(0.01);
        for _ in 0..500 {
            let mut g = net.zero_gradients();
            g.biases[0][0] = 2.0 * net.biases[0][0];
            apply_update(&mut net, &g, &mut opt);
        }
        assert!(net.biases[0][0].abs() < 1e-2, "p = {}", net.biases[0][0]);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut rng = stream(3, "nn_ckpt", 0);
        let net = Mlp::new(&[5, 16, 4], Activation::Relu, &mut rng).unwrap();
        let text = net.save_checkpoint();
        let back = Mlp::load_checkpoint(&text).unwrap();
        assert_eq!(net.layer_sizes, back.layer_sizes);
        assert_eq!(net.weights, back.weights);
        assert_eq!(net.biases, back.biases);
    }
}
