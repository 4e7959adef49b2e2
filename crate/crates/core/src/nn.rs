//! Small dense network with hand-written backpropagation, plus Adam.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! row-major (`out x in`) followed by its biases; hidden layers use `tanh`
//! and the output layer is affine.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trainable parameter count of a fully connected stack: `sum (|L_i| + 1) |L_{i+1}|`.
pub fn dnn_param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_trace`]; `layers[0]` is the input
/// and the last entry is the network output.
#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has at least the input layer")
    }
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Mlp> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Shape(format!("need at least two non-empty layers, got {layer_sizes:?}")));
        }
        Ok(Mlp { sizes: layer_sizes.to_vec(), params: vec![0.0; dnn_param_count(layer_sizes)] })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Mlp> {
        let mut mlp = Mlp::zeros(layer_sizes)?;
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for p in &mut mlp.params[offset..offset + fan_in * fan_out] {
                *p = dist.sample(rng);
            }
            offset += (fan_in + 1) * fan_out;
        }
        Ok(mlp)
    }

    pub fn from_params(layer_sizes: &[usize], params: Vec<f64>) -> Result<Mlp> {
        let mlp = Mlp::zeros(layer_sizes)?;
        if params.len() != mlp.params.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", mlp.params.len(), params.len())));
        }
        Ok(Mlp { params, ..mlp })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        let stored = self.params.len();
        debug_assert_eq!(stored, dnn_param_count(&self.sizes));
        stored
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Weight matrix and bias vector of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let offset: usize = self.sizes[..=l].windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
        (w, b)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::Shape(format!("input has {} features, network expects {}", input.len(), self.input_size())));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.layers.pop().unwrap())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let n_layers = self.sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers + 1);
        layers.push(input.to_vec());
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let x = &layers[l];
            let mut y: Vec<f64> = b
                .iter()
                .zip(w.chunks_exact(x.len()))
                .map(|(bias, row)| bias + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>())
                .collect();
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(y);
        }
        Ok(Trace { layers })
    }

    /// Gradient of `output_grad . output` with respect to every parameter.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64]) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_into(trace, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Mlp::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, trace: &Trace, output_grad: &[f64], grads: &mut [f64]) -> Result<()> {
        if output_grad.len() != self.output_size() {
            return Err(Error::Shape(format!("output gradient has {} entries, expected {}", output_grad.len(), self.output_size())));
        }
        if grads.len() != self.params.len() || trace.layers.len() != self.sizes.len() {
            return Err(Error::Shape("gradient buffer or trace does not match the network".into()));
        }
        let n_layers = self.sizes.len() - 1;
        let mut delta = output_grad.to_vec();
        let mut offset = self.params.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= (n_in + 1) * n_out;
            let x = &trace.layers[l];
            let (gw, gb) = grads[offset..offset + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let w = &self.params[offset..offset + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (o, d) in delta.iter().enumerate() {
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                // hidden activations are tanh outputs: d tanh = 1 - y^2
                for (p, y) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - y * y;
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Adam {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state has {} entries, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
