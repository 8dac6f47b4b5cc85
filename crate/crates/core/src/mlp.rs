//! Small fully connected networks with hand-written backprop.
//!
//! Parameters are laid out layer by layer, each layer as its weight matrix
//! (row-major, `out x in`) followed by its bias vector. The same order is used
//! for the flat little-endian `f32` fixture files.

use std::path::Path;

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    /// `outputs x inputs`, row-major.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weight
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

/// Affine layers with ReLU between consecutive layers and no activation on
/// the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    /// Input of every layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every layer.
    pre: Vec<Vec<f64>>,
}

impl MlpTrace {
    /// Smallest |pre-activation| over hidden units; used to keep gradient
    /// checks away from ReLU kinks.
    pub fn min_hidden_margin(&self) -> f64 {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl Mlp {
    /// Zero-initialised network with the given layer widths
    /// (`dims[0]` inputs, `dims.last()` outputs).
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Dimension(format!("invalid MLP widths {dims:?}")));
        }
        Ok(Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Uniform `[-scale, scale]` initialisation.
    pub fn random(dims: &[usize], scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut mlp = Self::zeros(dims)?;
        let mut params = vec![0.0; mlp.num_params()];
        params.iter_mut().for_each(|p| *p = rng.random_range(-scale..=scale));
        mlp.set_params(&params)?;
        Ok(mlp)
    }

    pub fn from_params(dims: &[usize], params: &[f64]) -> Result<Self> {
        let mut mlp = Self::zeros(dims)?;
        mlp.set_params(params)?;
        Ok(mlp)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "{} parameters for an MLP with {}",
                params.len(),
                self.num_params()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite MLP parameter".into()));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weight.len());
            let (b, tail) = tail.split_at(l.bias.len());
            l.weight.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|&v| v == 0.0))
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if k != last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpTrace) {
        let mut trace = MlpTrace::default();
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut pre = Vec::new();
            layer.forward_into(&cur, &mut pre);
            trace.inputs.push(cur);
            cur = if k != last {
                pre.iter().map(|v| v.max(0.0)).collect()
            } else {
                pre.clone()
            };
            trace.pre.push(pre);
        }
        (cur, trace)
    }

    /// Back-propagate `grad_out` through the recorded activations. Parameter
    /// gradients are accumulated into `grad_params` (same layout as
    /// [`Mlp::params`]); the input gradient is returned.
    pub fn backward(&self, trace: &MlpTrace, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.num_params();
        }

        let mut grad = grad_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k != self.layers.len() - 1 {
                for (g, &z) in grad.iter_mut().zip(&trace.pre[k]) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let input = &trace.inputs[k];
            let base = offsets[k];
            let (gw, gb) = grad_params[base..base + layer.num_params()].split_at_mut(layer.weight.len());
            let mut grad_in = vec![0.0; layer.inputs];
            for (o, &g) in grad.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for j in 0..layer.inputs {
                    grow[j] += g * input[j];
                    grad_in[j] += g * row[j];
                }
            }
            grad = grad_in;
        }
        grad
    }

    /// Serialise parameters as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.params().iter().flat_map(|&p| (p as f32).to_le_bytes()).collect()
    }

    pub fn from_bytes(dims: &[usize], bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Dimension(format!(
                "parameter file length {} is not a multiple of 4",
                bytes.len()
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::from_params(dims, &params)
    }

    pub fn load(dims: &[usize], path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(dims, &bytes)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
