//! Adam optimizer over parameter groups with distinct learning rates.

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads};

/// Adam with bias correction; β₁ = 0.9, β₂ = 0.999, ε = 1e-8 unless
/// overridden. One instance owns the moment state of a single network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
    t: u64,
}

impl Adam {
    pub fn new(net: &Mlp) -> Self {
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = net
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update. Layers before `net.head_start` use `lr_backbone`, the
    /// projection head uses `lr_head`.
    pub fn step(
        &mut self,
        net: &mut Mlp,
        grads: &MlpGrads,
        lr_backbone: f64,
        lr_head: f64,
    ) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::DimMismatch {
                expected: net.layers.len(),
                got: grads.layers.len(),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);

        for (l, layer) in net.layers.iter_mut().enumerate() {
            let lr = if l < net.head_start {
                lr_backbone
            } else {
                lr_head
            };
            let (gw, gb) = &grads.layers[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            update_slice(
                &mut layer.weights,
                gw,
                mw,
                vw,
                lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
            update_slice(
                &mut layer.bias,
                gb,
                mb,
                vb,
                lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}
