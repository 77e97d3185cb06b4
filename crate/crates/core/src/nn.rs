//! Two-layer perceptrons with hand-written reverse-mode gradients and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_HIDDEN: usize = 50;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_DECAY: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Identity,
}

/// Hidden-layer nonlinearity used by every model.
pub const HIDDEN_ACTIVATION: Activation = Activation::Sigmoid;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activated value `y = f(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Initial output-layer scale and bias, relative to fan-in scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Init {
    pub output_scale: f64,
    pub output_bias: f64,
}

impl Default for Init {
    fn default() -> Self {
        Self { output_scale: 1.0, output_bias: 0.0 }
    }
}

/// `y = W2 f(W1 x + b1) + b2`, parameters stored flat as `[W1, b1, W2, b2]`
/// with row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    input: usize,
    hidden: usize,
    output: usize,
    activation: Activation,
    params: Vec<f64>,
}

/// Hidden activations and outputs of a batch forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        let n = hidden * input + hidden + output * hidden + output;
        Self { input, hidden, output, activation, params: vec![0.0; n] }
    }

    /// Uniform fan-in initialisation: first layer in `±1/sqrt(input)`, second
    /// layer in `±output_scale/sqrt(hidden)`, output bias constant.
    pub fn new(input: usize, hidden: usize, output: usize, activation: Activation, init: Init, rng: &mut Rng) -> Self {
        let mut m = Self::zeros(input, hidden, output, activation);
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = init.output_scale / (hidden as f64).sqrt();
        let (w1, _, w2, b2) = m.offsets();
        // first-layer weights and biases share the fan-in range
        for p in &mut m.params[w1..w2] {
            *p = rng.uniform(-a1, a1);
        }
        for p in &mut m.params[w2..b2] {
            *p = rng.uniform(-a2, a2);
        }
        for p in &mut m.params[b2..] {
            *p = init.output_bias;
        }
        m
    }

    pub fn from_params(input: usize, hidden: usize, output: usize, activation: Activation, params: Vec<f64>) -> Result<Self> {
        let m = Self::zeros(input, hidden, output, activation);
        if params.len() != m.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        Ok(Self { params, ..m })
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (w1, b1, w2, b2)
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input {
            return Err(Error::Dimension(format!("input has {} entries, expected {}", x.len(), self.input)));
        }
        Ok(self.forward_batch(x, 1).output)
    }

    /// Forward `n` row-major inputs.
    pub fn forward_batch(&self, xs: &[f64], n: usize) -> MlpCache {
        debug_assert_eq!(xs.len(), n * self.input);
        let (w1, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut hidden = vec![0.0; n * self.hidden];
        let mut output = vec![0.0; n * self.output];
        for s in 0..n {
            let x = &xs[s * self.input..(s + 1) * self.input];
            let h = &mut hidden[s * self.hidden..(s + 1) * self.hidden];
            for (r, hv) in h.iter_mut().enumerate() {
                let row = &p[w1 + r * self.input..w1 + (r + 1) * self.input];
                let z: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + p[b1 + r];
                *hv = self.activation.apply(z);
            }
            let y = &mut output[s * self.output..(s + 1) * self.output];
            for (o, yv) in y.iter_mut().enumerate() {
                let row = &p[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
                *yv = row.iter().zip(h.iter()).map(|(w, h)| w * h).sum::<f64>() + p[b2 + o];
            }
        }
        MlpCache { hidden, output }
    }

    /// Accumulate parameter gradients into `grads` given upstream gradients
    /// on the batch outputs. Returns input gradients when `want_input` is set.
    pub fn backward_batch(
        &self,
        xs: &[f64],
        cache: &MlpCache,
        upstream: &[f64],
        n: usize,
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        debug_assert_eq!(grads.len(), self.params.len());
        let (w1, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut dx = want_input.then(|| vec![0.0; n * self.input]);
        let mut dz = vec![0.0; self.hidden];
        for s in 0..n {
            let x = &xs[s * self.input..(s + 1) * self.input];
            let h = &cache.hidden[s * self.hidden..(s + 1) * self.hidden];
            let g = &upstream[s * self.output..(s + 1) * self.output];
            dz.iter_mut().for_each(|v| *v = 0.0);
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grads[b2 + o] += go;
                let row = w2 + o * self.hidden;
                for r in 0..self.hidden {
                    grads[row + r] += go * h[r];
                    dz[r] += go * p[row + r];
                }
            }
            for r in 0..self.hidden {
                let d = dz[r] * self.activation.derivative_from_output(h[r]);
                dz[r] = d;
                if d == 0.0 {
                    continue;
                }
                grads[b1 + r] += d;
                let row = w1 + r * self.input;
                for c in 0..self.input {
                    grads[row + c] += d * x[c];
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[s * self.input..(s + 1) * self.input];
                for r in 0..self.hidden {
                    let row = w1 + r * self.input;
                    for c in 0..self.input {
                        dxs[c] += dz[r] * p[row + c];
                    }
                }
            }
        }
        dx
    }

    /// Single-sample gradient: `(parameter gradients, input gradient)`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.input || upstream.len() != self.output {
            return Err(Error::Dimension("backward shapes do not match the network".into()));
        }
        let cache = self.forward_batch(x, 1);
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward_batch(x, &cache, upstream, 1, &mut grads, true).unwrap_or_default();
        Ok((grads, dx))
    }
}

/// Adam with bias correction and per-epoch exponential learning-rate decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
    pub decay: f64,
}

impl AdamState {
    pub fn new(n: usize, learning_rate: f64, decay: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, learning_rate, decay }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn effective_rate(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi(epoch as i32)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], epoch: usize) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension("adam state, parameters and gradients differ in length".into()));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Optimization(format!("non-finite gradient at parameter {i}")));
        }
        self.step += 1;
        let lr = self.effective_rate(epoch);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
        // Straight-line re-evaluation from the documented layout.
        let (i, h, o) = (m.input, m.hidden, m.output);
        let p = &m.params;
        let mut hid = Vec::new();
        for r in 0..h {
            let mut z = p[h * i + r];
            for c in 0..i {
                z += p[r * i + c] * x[c];
            }
            hid.push(m.activation.apply(z));
        }
        let base = h * i + h;
        (0..o)
            .map(|k| {
                let mut y = p[base + o * h + k];
                for r in 0..h {
                    y += p[base + k * h + r] * hid[r];
                }
                y
            })
            .collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(4, DEFAULT_HIDDEN, 3, Activation::Sigmoid);
        assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn default_hidden_width() {
        let m = Mlp::new(10, DEFAULT_HIDDEN, 20, HIDDEN_ACTIVATION, Init::default(), &mut Rng::new(0));
        assert_eq!(m.hidden_dim(), 50);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = Rng::new(1);
        for act in [Activation::Sigmoid, Activation::Tanh, Activation::Identity] {
            let m = Mlp::new(5, 7, 3, act, Init { output_scale: 1.0, output_bias: 0.3 }, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let a = m.forward(&x).unwrap();
            let b = reference_forward(&m, &x);
            for (a, b) in a.iter().zip(&b) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let m = Mlp::zeros(3, 4, 2, Activation::Tanh);
        assert!(matches!(m.forward(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = Mlp::new(3, 6, 2, Activation::Tanh, Init::default(), &mut Rng::new(2));
        let (g, dx) = m.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(3);
        for probe in 0..100 {
            let act = if probe % 2 == 0 { Activation::Sigmoid } else { Activation::Tanh };
            let mut m = Mlp::new(4, 5, 3, act, Init { output_scale: 1.0, output_bias: 0.1 }, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.5, 1.5)).collect();
            let up: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let (g, dx) = m.backward(&x, &up).unwrap();
            let objective = |m: &Mlp, x: &[f64]| -> f64 {
                m.forward(x).unwrap().iter().zip(&up).map(|(y, u)| y * u).sum()
            };
            let h = 1e-5;
            for k in 0..m.params.len() {
                let orig = m.params[k];
                m.params[k] = orig + h;
                let fp = objective(&m, &x);
                m.params[k] = orig - h;
                let fm = objective(&m, &x);
                m.params[k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                assert!(rel_err(g[k], fd) < 1e-4, "probe {probe} param {k}: {} vs {fd}", g[k]);
            }
            for c in 0..4 {
                let mut xp = x.clone();
                xp[c] += h;
                let mut xm = x.clone();
                xm[c] -= h;
                let fd = (objective(&m, &xp) - objective(&m, &xm)) / (2.0 * h);
                assert!(rel_err(dx[c], fd) < 1e-4);
            }
        }
    }

    #[test]
    fn linear_net_weight_gradient_is_outer_product() {
        let mut rng = Rng::new(4);
        let m = Mlp::new(3, 4, 2, Activation::Identity, Init::default(), &mut rng);
        let x = [0.5, -1.0, 2.0];
        let up = [0.3, -0.7];
        let (g, _) = m.backward(&x, &up).unwrap();
        let cache = m.forward_batch(&x, 1);
        let (w1, _, w2, _) = m.offsets();
        // dW2 = up ⊗ hidden
        for o in 0..2 {
            for r in 0..4 {
                assert!((g[w2 + o * 4 + r] - up[o] * cache.hidden[r]).abs() < 1e-14);
            }
        }
        // dW1 = (W2ᵀ up) ⊗ x
        for r in 0..4 {
            let back: f64 = (0..2).map(|o| m.params[w2 + o * 4 + r] * up[o]).sum();
            for c in 0..3 {
                assert!((g[w1 + r * 3 + c] - back * x[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut a = AdamState::new(3, DEFAULT_LEARNING_RATE, DEFAULT_DECAY);
        a.step(&mut p, &[0.0; 3], 0).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for g in [0.5, -3.0, 120.0] {
            let mut p = vec![0.0];
            let mut a = AdamState::new(1, 1e-4, DEFAULT_DECAY);
            a.step(&mut p, &[g], 0).unwrap();
            // m_hat = g, v_hat = g^2 => step = lr * g / (|g| + eps)
            let expect = -1e-4 * g / (g.abs() + 1e-8);
            assert!((p[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn decayed_rate_at_epoch_100() {
        let a = AdamState::new(1, 1e-4, 0.995);
        assert!((a.effective_rate(100) - 6.0577e-5).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut a = AdamState::new(2, 1e-4, 0.995);
        let mut p = vec![0.0; 2];
        assert!(matches!(a.step(&mut p, &[1.0, f64::NAN], 0), Err(Error::Optimization(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = Rng::new(8);
            let mut m = Mlp::new(2, 6, 1, Activation::Sigmoid, Init::default(), &mut rng);
            let mut adam = AdamState::new(m.params.len(), 1e-2, 0.995);
            let xs = [0.0, 1.0, 1.0, 0.0, 0.5, 0.5];
            for epoch in 0..50 {
                let cache = m.forward_batch(&xs, 3);
                let up: Vec<f64> = cache.output.iter().map(|y| 2.0 * (y - 1.0)).collect();
                let mut g = vec![0.0; m.params.len()];
                m.backward_batch(&xs, &cache, &up, 3, &mut g, false);
                adam.step(&mut m.params, &g, epoch).unwrap();
            }
            m.params
        };
        assert_eq!(run(), run());
    }
}
