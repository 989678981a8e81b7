use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape, validation, Result};

/// `elu(x) = x` for `x > 0`, `exp(x) - 1` otherwise.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Affine layer `y = W x + b`, `W` stored row-major `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.bias)) {
            *o = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
    }
}

/// Feed-forward network with elu after every layer except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, reused by [`Mlp::vjp_with_tape`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// `inputs[k]` is the input of layer `k`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_dims)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(validation(format!("invalid layer dims {layer_dims:?}")));
        }
        Ok(Self { layers: layer_dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() })
    }

    /// Single affine layer with weight matrix `weights` (row-major) and `bias`.
    pub fn affine(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        Self::from_layers(vec![Dense { inputs, outputs, weights, bias }])
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::affine(dim, dim, weights, vec![0.0; dim]).expect("identity shapes are consistent")
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(validation("network needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(shape(format!("layer {k} has inconsistent parameter shapes")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(validation(format!("layer {k} has non-finite parameters")));
            }
        }
        if let Some(k) = layers.windows(2).position(|w| w[0].outputs != w[1].inputs) {
            return Err(shape(format!("layer {k} output does not match layer {} input", k + 1)));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(shape(format!("expected {} parameters, got {}", self.n_params(), flat.len())));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.forward_with_tape(x, &mut tape)?;
        Ok(tape.output().to_vec())
    }

    pub fn forward_with_tape(&self, x: &[f64], tape: &mut Tape) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(shape(format!("network input has length {}, expected {}", x.len(), self.input_dim())));
        }
        let n = self.layers.len();
        tape.inputs.resize_with(n, Vec::new);
        tape.pre.resize_with(n, Vec::new);
        tape.inputs[0].clear();
        tape.inputs[0].extend_from_slice(x);
        for (k, layer) in self.layers.iter().enumerate() {
            tape.pre[k].resize(layer.outputs, 0.0);
            let (inputs, pre) = (&tape.inputs[k], &mut tape.pre[k]);
            layer.apply(inputs, pre);
            if k + 1 < n {
                let next = &mut tape.inputs[k + 1];
                next.clear();
                next.extend(tape.pre[k].iter().map(|&v| elu(v)));
            }
        }
        Ok(())
    }

    /// Reverse-mode gradients of `<cotangent, forward(x)>`: `(parameter gradient, input gradient)`.
    pub fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::default();
        self.forward_with_tape(x, &mut tape)?;
        let mut grads = vec![0.0; self.n_params()];
        let input = self.vjp_with_tape(&tape, cotangent, &mut grads)?;
        Ok((grads, input))
    }

    /// Like [`Mlp::vjp`] for a recorded forward pass; parameter gradients are
    /// added into `param_grads`.
    pub fn vjp_with_tape(&self, tape: &Tape, cotangent: &[f64], param_grads: &mut [f64]) -> Result<Vec<f64>> {
        if cotangent.len() != self.output_dim() {
            return Err(shape(format!("cotangent has length {}, expected {}", cotangent.len(), self.output_dim())));
        }
        if param_grads.len() != self.n_params() {
            return Err(shape("parameter gradient buffer has the wrong length"));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for l in &self.layers {
            offsets.push(offset);
            offset += l.n_params();
        }

        let mut delta = cotangent.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if k + 1 < self.layers.len() {
                for (dv, &p) in delta.iter_mut().zip(&tape.pre[k]) {
                    *dv *= elu_grad(p);
                }
            }
            let input = &tape.inputs[k];
            let base = offsets[k];
            let (w_grad, rest) = param_grads[base..base + layer.n_params()].split_at_mut(layer.weights.len());
            for (o, &dv) in delta.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                for (g, &xi) in w_grad[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                    *g += dv * xi;
                }
                rest[o] += dv;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (row, &dv) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                if dv == 0.0 {
                    continue;
                }
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += w * dv;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }
}

pub fn mlp_forward(net: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    net.forward(x)
}

pub fn mlp_vjp(net: &Mlp, x: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    net.vjp(x, cotangent)
}
