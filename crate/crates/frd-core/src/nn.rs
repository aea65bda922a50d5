//! Small dense networks and the optimizer that trains them.
//!
//! Everything is plain `f64` on flat `Vec`s: multi-layer perceptrons with
//! ReLU hidden layers and a linear output, reverse-mode gradients, softmax,
//! and Adam. Networks here are tiny (tens to low hundreds of units), so
//! clarity and determinism win over clever numerics: all iteration orders
//! are fixed, and no parallelism or blocking is used.
//!
//! Shape mismatches (wrong input length, mismatched gradient buffers) are
//! programmer errors and panic via `assert!`; data-level problems such as
//! non-finite gradients are reported as [`NeuralError`]s.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("non-finite gradient component at flat index {index}")]
    NonFiniteGradient { index: usize },
    #[error("shape fingerprint mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("snapshot holds {found} parameters but its widths imply {expected}")]
    BadSnapshot { expected: usize, found: usize },
    #[error("non-finite parameter at flat index {index}")]
    NonFiniteParam { index: usize },
}

/// Render widths like `4-24-24-2` for error messages and file headers.
pub fn fingerprint(widths: &[usize]) -> String {
    widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// One dense layer: `out_dim x in_dim` weights (row-major) plus biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn zeroed(in_dim: usize, out_dim: usize) -> Layer {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    /// He-uniform initialization: weights from ±sqrt(6 / fan_in), biases
    /// zero. Weights are drawn in row-major order, then biases, so the
    /// stream consumption is reproducible.
    fn he_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Layer {
        let limit = (6.0 / in_dim as f64).sqrt();
        let mut layer = Layer::zeroed(in_dim, out_dim);
        for w in layer.weights.iter_mut() {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    /// `out = W x + b`, written into `out`.
    fn affine(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (row, o) in out.iter_mut().enumerate() {
            let weights = &self.weights[row * self.in_dim..(row + 1) * self.in_dim];
            let mut acc = self.biases[row];
            for (w, x) in weights.iter().zip(input) {
                acc += w * x;
            }
            *o = acc;
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Shape + flat parameters of a network; the unit of weight exchange and
/// checkpointing. Parameters are listed layer by layer, weights (row-major)
/// before biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
}

impl NetSnapshot {
    pub fn param_count_for(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let expected = NetSnapshot::param_count_for(&self.widths);
        if expected != self.params.len() {
            return Err(NeuralError::BadSnapshot {
                expected,
                found: self.params.len(),
            });
        }
        if let Some(index) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(NeuralError::NonFiniteParam { index });
        }
        Ok(())
    }
}

/// A multi-layer perceptron with ReLU hidden activations and a linear
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer activations captured during a forward pass, for reuse by the
/// backward pass. `values[0]` is the input; `values[i]` is the output of
/// layer `i - 1` *after* its activation; the last entry is the network
/// output.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace always holds the input")
    }

    /// Per-layer values: input first, then each layer's post-activation
    /// output. Exposed so numeric differentiation can detect when a
    /// perturbation flips a hidden unit across its clip point (where the
    /// loss is not differentiable and finite differences are invalid).
    pub fn layer_values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

impl Mlp {
    /// Randomly initialized network with the given layer widths, e.g.
    /// `[4, 24, 24, 2]` for two hidden layers of 24 units.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Mlp {
        assert!(widths.len() >= 2, "need at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "zero-width layer");
        let layers = widths
            .windows(2)
            .map(|pair| Layer::he_uniform(pair[0], pair[1], rng))
            .collect();
        Mlp { layers }
    }

    /// All-zero network of the given shape (useful for handcrafted tests).
    pub fn zeroed(widths: &[usize]) -> Mlp {
        assert!(widths.len() >= 2, "need at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "zero-width layer");
        let layers = widths
            .windows(2)
            .map(|pair| Layer::zeroed(pair[0], pair[1]))
            .collect();
        Mlp { layers }
    }

    /// Network with explicit flat parameters (layer by layer, weights
    /// row-major then biases).
    pub fn with_params(widths: &[usize], params: &[f64]) -> Mlp {
        let mut net = Mlp::zeroed(widths);
        net.set_flat_params(params);
        net
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.layers.len() + 1);
        w.push(self.layers[0].in_dim);
        w.extend(self.layers.iter().map(|l| l.out_dim));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let mut current = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.affine(&current, &mut next);
            if i != last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            current = next;
        }
        current
    }

    /// Forward pass that keeps every layer's post-activation output.
    pub fn forward_trace(&self, input: &[f64]) -> Trace {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.affine(values.last().unwrap(), &mut next);
            if i != last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            values.push(next);
        }
        Trace { values }
    }

    /// Accumulate `d loss / d params` into `grads`, given the activations
    /// of a forward pass and `output_grad` = `d loss / d output`.
    ///
    /// ReLU uses the convention that the derivative at exactly zero is
    /// zero (the unit was inactive).
    pub fn backward_into(&self, trace: &Trace, output_grad: &[f64], grads: &mut Gradients) {
        assert_eq!(output_grad.len(), self.output_dim(), "output grad width mismatch");
        assert_eq!(grads.layers.len(), self.layers.len(), "gradient buffer shape mismatch");

        let mut delta = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.values[i];
            let grad = &mut grads.layers[i];
            debug_assert_eq!(grad.d_weights.len(), layer.weights.len());

            for (row, &d) in delta.iter().enumerate() {
                grad.d_biases[row] += d;
                let dw = &mut grad.d_weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                for (slot, x) in dw.iter_mut().zip(input) {
                    *slot += d * x;
                }
            }

            if i == 0 {
                break; // no need to propagate into the input
            }
            // delta for the previous layer: W^T delta, gated by its ReLU.
            let mut prev = vec![0.0; layer.in_dim];
            for (row, &d) in delta.iter().enumerate() {
                let weights = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                for (p, w) in prev.iter_mut().zip(weights) {
                    *p += w * d;
                }
            }
            for (p, &activation) in prev.iter_mut().zip(input) {
                if activation <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// Parameters in canonical flat order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.biases);
        }
        flat
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let mut cursor = 0;
        for layer in &mut self.layers {
            let weight_count = layer.weights.len();
            layer.weights.copy_from_slice(&params[cursor..cursor + weight_count]);
            cursor += weight_count;
            let bias_count = layer.biases.len();
            layer.biases.copy_from_slice(&params[cursor..cursor + bias_count]);
            cursor += layer.biases.len();
        }
    }

    pub fn snapshot(&self) -> NetSnapshot {
        NetSnapshot {
            widths: self.widths(),
            params: self.flat_params(),
        }
    }

    /// Replace this network's parameters from a snapshot with the same
    /// shape fingerprint.
    pub fn load_snapshot(&mut self, snapshot: &NetSnapshot) -> Result<(), NeuralError> {
        if snapshot.widths != self.widths() {
            return Err(NeuralError::ShapeMismatch {
                expected: fingerprint(&self.widths()),
                found: fingerprint(&snapshot.widths),
            });
        }
        snapshot.validate()?;
        self.set_flat_params(&snapshot.params);
        Ok(())
    }

    pub fn from_snapshot(snapshot: &NetSnapshot) -> Result<Mlp, NeuralError> {
        snapshot.validate()?;
        Ok(Mlp::with_params(&snapshot.widths, &snapshot.params))
    }
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone)]
struct LayerGradients {
    d_weights: Vec<f64>,
    d_biases: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Gradients {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    d_weights: vec![0.0; l.weights.len()],
                    d_biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            layer.d_weights.iter_mut().for_each(|g| *g = 0.0);
            layer.d_biases.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.d_weights.iter_mut().for_each(|g| *g *= factor);
            layer.d_biases.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Gradient components in the same canonical order as
    /// [`Mlp::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for layer in &self.layers {
            flat.extend_from_slice(&layer.d_weights);
            flat.extend_from_slice(&layer.d_biases);
        }
        flat
    }
}

/// Adam with the standard bias-corrected moment estimates
/// (beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8).
#[derive(Debug, Clone)]
pub struct AdamState {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    steps: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> AdamState {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.steps
    }

    /// Apply one update. Rejects non-finite gradients before touching any
    /// parameter, so a failed step leaves the network unchanged.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NeuralError> {
        assert_eq!(
            self.m.len(),
            net.param_count(),
            "optimizer sized for a different network"
        );
        assert_eq!(grads.layers.len(), net.layers.len(), "gradient shape mismatch");

        // Validate first: the update must be all-or-nothing.
        let mut index = 0;
        for layer in &grads.layers {
            for g in layer.d_weights.iter().chain(&layer.d_biases) {
                if !g.is_finite() {
                    return Err(NeuralError::NonFiniteGradient { index });
                }
                index += 1;
            }
        }

        self.steps += 1;
        let t = self.steps as i32;
        let m_correction = 1.0 - self.beta1.powi(t);
        let v_correction = 1.0 - self.beta2.powi(t);

        let mut cursor = 0;
        for (layer, grad) in net.layers.iter_mut().zip(&grads.layers) {
            for (param, &g) in layer
                .weights
                .iter_mut()
                .chain(layer.biases.iter_mut())
                .zip(grad.d_weights.iter().chain(&grad.d_biases))
            {
                let m = &mut self.m[cursor];
                let v = &mut self.v[cursor];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / m_correction;
                let v_hat = *v / v_correction;
                *param -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                cursor += 1;
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax (shifts by the max before exponentiating).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of empty slice");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_maps_everything_to_zero() {
        let net = Mlp::zeroed(&[4, 8, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer_reproduces_its_input() {
        // One linear layer with identity weights and zero biases.
        let mut params = vec![0.0; 4 * 4 + 4];
        for i in 0..4 {
            params[i * 4 + i] = 1.0;
        }
        let net = Mlp::with_params(&[4, 4], &params);
        let input = [0.3, -1.2, 2.5, 0.0];
        assert_eq!(net.forward(&input), input.to_vec());
    }

    #[test]
    fn hidden_layers_clip_negatives_and_output_stays_linear() {
        // Single hidden unit computing relu(x0), output = -relu(x0) - 1:
        // the output layer must pass negatives through unclipped.
        let net = Mlp::with_params(&[1, 1, 1], &[1.0, 0.0, -1.0, -1.0]);
        assert_eq!(net.forward(&[2.0]), vec![-3.0]);
        // Negative input is clipped by the hidden ReLU, not the output.
        assert_eq!(net.forward(&[-5.0]), vec![-1.0]);
    }

    /// Reference forward pass with independently ordered arithmetic.
    fn reference_forward(widths: &[usize], params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut offsets = Vec::new();
        let mut cursor = 0;
        for pair in widths.windows(2) {
            offsets.push(cursor);
            cursor += pair[0] * pair[1] + pair[1];
        }
        let mut current = input.to_vec();
        for (layer_index, pair) in widths.windows(2).enumerate() {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let base = offsets[layer_index];
            let bias_base = base + in_dim * out_dim;
            // Column-major accumulation, reversed input order: different
            // float op order from the implementation on purpose.
            let mut next = vec![0.0; out_dim];
            for col in (0..in_dim).rev() {
                for row in 0..out_dim {
                    next[row] += params[base + row * in_dim + col] * current[col];
                }
            }
            for row in 0..out_dim {
                next[row] += params[bias_base + row];
                if layer_index + 1 != widths.len() - 1 && next[row] < 0.0 {
                    next[row] = 0.0;
                }
            }
            current = next;
        }
        current
    }

    #[test]
    fn forward_matches_independent_matrix_arithmetic() {
        let mut r = rng(99);
        for case in 0..20 {
            let widths: Vec<usize> = match case % 4 {
                0 => vec![4, 24, 2],
                1 => vec![4, 24, 24, 2],
                2 => vec![4, 100, 1],
                _ => vec![4, 100, 100, 1],
            };
            let net = Mlp::new(&widths, &mut r);
            let params = net.flat_params();
            let input: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let got = net.forward(&input);
            let want = reference_forward(&widths, &params, &input);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn he_uniform_respects_fan_in_limits() {
        let mut r = rng(5);
        let net = Mlp::new(&[4, 24, 24, 2], &mut r);
        let widths = net.widths();
        assert_eq!(widths, vec![4, 24, 24, 2]);
        let mut cursor = 0;
        let params = net.flat_params();
        for pair in widths.windows(2) {
            let limit = (6.0 / pair[0] as f64).sqrt();
            let weight_count = pair[0] * pair[1];
            for &w in &params[cursor..cursor + weight_count] {
                assert!(w.abs() < limit);
            }
            for &b in &params[cursor + weight_count..cursor + weight_count + pair[1]] {
                assert_eq!(b, 0.0, "biases start at zero");
            }
            cursor += weight_count + pair[1];
        }
    }

    #[test]
    fn softmax_matches_hand_computed_two_logit_case() {
        let p = softmax(&[1.0, 0.0]);
        assert!((p[0] - 0.7310585786300049).abs() < 1e-15);
        assert!((p[1] - 0.2689414213699951).abs() < 1e-15);
    }

    #[test]
    fn softmax_handles_extreme_logits() {
        let p = softmax(&[1000.0, -1000.0]);
        assert!(p[0] > 0.999999);
        assert!(p.iter().all(|&x| x.is_finite() && x >= 0.0));
        let equal = softmax(&[300.0, 300.0]);
        assert_eq!(equal, vec![0.5, 0.5]);
    }

    #[test]
    fn backward_of_zero_upstream_is_zero() {
        let mut r = rng(3);
        let net = Mlp::new(&[4, 24, 2], &mut r);
        let trace = net.forward_trace(&[0.1, 0.2, 0.3, 0.4]);
        let mut grads = Gradients::zeros_like(&net);
        net.backward_into(&trace, &[0.0, 0.0], &mut grads);
        assert!(grads.flat().iter().all(|&g| g == 0.0));
    }

    /// Central finite differences of an arbitrary scalar loss over the
    /// network output, compared against backward_into.
    #[test]
    fn backward_matches_finite_differences_on_small_nets() {
        let mut r = rng(11);
        for _ in 0..5 {
            let widths = [3usize, 6, 5, 2];
            let net = Mlp::new(&widths, &mut r);
            let input: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            // loss = sum of squares of outputs
            let loss = |n: &Mlp| -> f64 { n.forward(&input).iter().map(|o| o * o).sum() };

            let trace = net.forward_trace(&input);
            let upstream: Vec<f64> = trace.output().iter().map(|o| 2.0 * o).collect();
            let mut grads = Gradients::zeros_like(&net);
            net.backward_into(&trace, &upstream, &mut grads);
            let analytic = grads.flat();

            let params = net.flat_params();
            let h = 1e-5;
            for i in 0..params.len() {
                let mut plus = params.clone();
                plus[i] += h;
                let mut minus = params.clone();
                minus[i] -= h;
                let net_plus = Mlp::with_params(&widths, &plus);
                let net_minus = Mlp::with_params(&widths, &minus);
                let numeric = (loss(&net_plus) - loss(&net_minus)) / (2.0 * h);
                let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
                assert!(
                    (analytic[i] - numeric).abs() / denom < 1e-6,
                    "param {i}: analytic {} vs numeric {numeric}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn adam_zero_gradient_changes_nothing_but_counts_the_step() {
        let mut r = rng(8);
        let mut net = Mlp::new(&[4, 8, 2], &mut r);
        let before = net.flat_params();
        let mut adam = AdamState::new(net.param_count(), 1e-3);
        let grads = Gradients::zeros_like(&net);
        adam.step(&mut net, &grads).unwrap();
        assert_eq!(net.flat_params(), before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_matches_bias_corrected_algebra() {
        // Single parameter w = 0.3, gradient g = 0.2, lr = 0.01.
        let mut net = Mlp::with_params(&[1, 1], &[0.3, 0.0]);
        let mut adam = AdamState::new(2, 0.01);
        let mut grads = Gradients::zeros_like(&net);
        let trace = net.forward_trace(&[1.0]);
        // upstream 0.2 gives d/dw = 0.2 * input = 0.2, d/db = 0.2
        net.backward_into(&trace, &[0.2], &mut grads);

        let (lr, b1, b2, eps, g): (f64, f64, f64, f64, f64) = (0.01, 0.9, 0.999, 1e-8, 0.2);
        let m_hat = ((1.0 - b1) * g) / (1.0 - b1);
        let v_hat = ((1.0 - b2) * g * g) / (1.0 - b2);
        let expected = 0.3 - lr * m_hat / (v_hat.sqrt() + eps);

        adam.step(&mut net, &grads).unwrap();
        let after = net.flat_params();
        assert!((after[0] - expected).abs() < 1e-15, "{} vs {expected}", after[0]);
        // First step moves by almost exactly -lr * sign(g).
        assert!((after[0] - (0.3 - lr)).abs() < 1e-7);
    }

    #[test]
    fn adam_rejects_non_finite_gradients_without_touching_params() {
        let mut net = Mlp::with_params(&[1, 1], &[0.3, 0.1]);
        let mut adam = AdamState::new(2, 0.01);
        let mut grads = Gradients::zeros_like(&net);
        let trace = net.forward_trace(&[1.0]);
        net.backward_into(&trace, &[f64::NAN], &mut grads);
        let err = adam.step(&mut net, &grads).unwrap_err();
        assert!(matches!(err, NeuralError::NonFiniteGradient { .. }));
        assert_eq!(net.flat_params(), vec![0.3, 0.1]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut r1 = rng(21);
        let mut r2 = rng(21);
        let mut net1 = Mlp::new(&[4, 16, 2], &mut r1);
        let mut net2 = Mlp::new(&[4, 16, 2], &mut r2);
        let mut adam1 = AdamState::new(net1.param_count(), 3e-3);
        let mut adam2 = AdamState::new(net2.param_count(), 3e-3);
        for step in 0..50 {
            let input = [0.1 * step as f64, -0.2, 0.3, 0.05];
            for (net, adam) in [(&mut net1, &mut adam1), (&mut net2, &mut adam2)] {
                let trace = net.forward_trace(&input);
                let upstream: Vec<f64> = trace.output().iter().map(|o| o - 1.0).collect();
                let mut grads = Gradients::zeros_like(net);
                net.backward_into(&trace, &upstream, &mut grads);
                adam.step(net, &grads).unwrap();
            }
        }
        assert_eq!(net1.flat_params(), net2.flat_params());
    }

    #[test]
    fn snapshot_round_trips_and_checks_shapes() {
        let mut r = rng(33);
        let net = Mlp::new(&[4, 24, 24, 2], &mut r);
        let snap = net.snapshot();
        assert_eq!(snap.widths, vec![4, 24, 24, 2]);
        assert_eq!(snap.params.len(), net.param_count());

        let restored = Mlp::from_snapshot(&snap).unwrap();
        assert_eq!(restored.flat_params(), net.flat_params());
        assert_eq!(restored.forward(&[0.1, 0.2, 0.3, 0.4]), net.forward(&[0.1, 0.2, 0.3, 0.4]));

        let mut other = Mlp::zeroed(&[4, 10, 2]);
        let err = other.load_snapshot(&snap).unwrap_err();
        assert_eq!(
            err,
            NeuralError::ShapeMismatch {
                expected: "4-10-2".into(),
                found: "4-24-24-2".into()
            }
        );

        let truncated = NetSnapshot {
            widths: snap.widths.clone(),
            params: snap.params[1..].to_vec(),
        };
        assert!(matches!(
            Mlp::from_snapshot(&truncated).unwrap_err(),
            NeuralError::BadSnapshot { .. }
        ));
    }

    proptest! {
        #[test]
        fn softmax_outputs_are_a_distribution(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..6)
        ) {
            let p = softmax(&logits);
            prop_assert_eq!(p.len(), logits.len());
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_is_shift_invariant(
            logits in proptest::collection::vec(-20.0f64..20.0, 2..5),
            shift in -30.0f64..30.0,
        ) {
            let base = softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let moved = softmax(&shifted);
            for (a, b) in base.iter().zip(&moved) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
