//! Minimal dense feed-forward network with exact backpropagation.
//!
//! Layers use tanh activations except the final projection, which is
//! linear. The layer list splits into a backbone and a projection head at
//! `head_start`; the trainer assigns each group its own learning rate.

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Self::Tanh => z.tanh(),
            Self::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - y * y,
            Self::Identity => 1.0,
        }
    }
}

/// Fully connected layer, weights stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl DenseLayer {
    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o];
            out.push(self.activation.apply(z));
        }
    }
}

/// Parameter gradients mirroring a network's layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }
}

/// Per-layer activations of one forward pass; `activations[0]` is the input
/// and `activations[L]` the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds the input")
    }
}

/// Feed-forward encoder: `input → hidden… → backbone_out → embed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    /// First head layer; everything before it is the backbone group.
    pub head_start: usize,
}

impl Mlp {
    /// Glorot-uniform initialization over the given layer widths. The final
    /// entry of `dims` is the embedding size; `head_layers` counts layers
    /// (from the end) that belong to the projection head.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], head_layers: usize, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "network needs at least input and output widths".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("zero-width layer".into()));
        }
        let n_layers = dims.len() - 1;
        if head_layers == 0 || head_layers >= n_layers {
            return Err(Error::InvalidConfig(format!(
                "head must take 1..{n_layers} layers, got {head_layers}"
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(DenseLayer {
                weights,
                bias: vec![0.0; fan_out],
                in_dim: fan_in,
                out_dim: fan_out,
                activation: if l + 1 == n_layers {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            });
        }
        Ok(Self {
            layers,
            head_start: n_layers - head_layers,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.activations.pop_last())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.in_dim() {
            return Err(Error::DimMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::new();
            layer.forward_into(activations.last().expect("nonempty"), &mut out);
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Exact chain-rule gradients for a batch: sums each sample's
    /// contribution (given its cached forward pass and the upstream gradient
    /// on its output) and adds `weight_decay · w` once per weight.
    pub fn backward(
        &self,
        caches: &[ForwardCache],
        upstreams: &[Vec<f64>],
        weight_decay: f64,
    ) -> Result<MlpGrads> {
        if caches.len() != upstreams.len() {
            return Err(Error::DimMismatch {
                expected: caches.len(),
                got: upstreams.len(),
            });
        }
        let mut grads = MlpGrads::zeros_like(self);
        for (cache, upstream) in caches.iter().zip(upstreams) {
            if upstream.len() != self.out_dim() {
                return Err(Error::DimMismatch {
                    expected: self.out_dim(),
                    got: upstream.len(),
                });
            }
            let mut delta = upstream.clone();
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input = &cache.activations[l];
                let (gw, gb) = &mut grads.layers[l];
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] += d;
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, v) in row.iter_mut().zip(input) {
                        *g += d * v;
                    }
                }
                if l > 0 {
                    let below = &self.layers[l - 1];
                    let mut next = vec![0.0; layer.in_dim];
                    for (o, &d) in delta.iter().enumerate() {
                        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (nx, w) in next.iter_mut().zip(row) {
                            *nx += d * w;
                        }
                    }
                    for (nx, y) in next.iter_mut().zip(input) {
                        *nx *= below.activation.derivative_from_output(*y);
                    }
                    delta = next;
                }
            }
        }
        if weight_decay != 0.0 {
            for (layer, (gw, _)) in self.layers.iter().zip(&mut grads.layers) {
                for (g, w) in gw.iter_mut().zip(&layer.weights) {
                    *g += weight_decay * w;
                }
            }
        }
        Ok(grads)
    }

    /// Flat parameter vector in layer order (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Load parameters from a flat vector produced by [`Self::flat_params`].
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}

trait PopLast {
    fn pop_last(self) -> Vec<f64>;
}

impl PopLast for Vec<Vec<f64>> {
    fn pop_last(mut self) -> Vec<f64> {
        self.pop().expect("forward caches are nonempty")
    }
}
