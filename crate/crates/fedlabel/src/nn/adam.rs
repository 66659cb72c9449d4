//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::nn::backward::Gradients;
use crate::nn::network::Network;
use crate::nn::spec::ModelSpec;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerMoments {
    pub mw: Vec<f64>,
    pub vw: Vec<f64>,
    pub mb: Vec<f64>,
    pub vb: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AdamState {
    pub layers: Vec<LayerMoments>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(spec: &ModelSpec) -> AdamState {
        let layers = spec
            .dims()
            .iter()
            .map(|d| LayerMoments {
                mw: vec![0.0; d.weight_len()],
                vw: vec![0.0; d.weight_len()],
                mb: vec![0.0; d.bias_len()],
                vb: vec![0.0; d.bias_len()],
            })
            .collect();
        AdamState { layers, step: 0 }
    }
}

fn update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    m_corr: f64,
    v_corr: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / m_corr;
        let v_hat = v[i] / v_corr;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One Adam step over every parameter tensor; increments the step counter.
pub fn adam_step(net: &mut Network, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.layers.len() != net.params.len() {
        return Err(Error::Shape(format!(
            "gradient set has {} layers, network has {}",
            grads.layers.len(),
            net.params.len()
        )));
    }
    for (i, (p, g)) in net.params.iter().zip(&grads.layers).enumerate() {
        if p.w.len() != g.dw.len() || p.b.len() != g.db.len() {
            return Err(Error::Dimension {
                layer: i,
                detail: "gradient shape does not match parameter shape".into(),
            });
        }
    }
    net.adam.step += 1;
    let t = net.adam.step;
    let m_corr = 1.0 - ADAM_BETA1.powi(t as i32);
    let v_corr = 1.0 - ADAM_BETA2.powi(t as i32);
    for (p, (g, s)) in net
        .params
        .iter_mut()
        .zip(grads.layers.iter().zip(net.adam.layers.iter_mut()))
    {
        update(&mut p.w, &g.dw, &mut s.mw, &mut s.vw, lr, m_corr, v_corr);
        update(&mut p.b, &g.db, &mut s.mb, &mut s.vb, lr, m_corr, v_corr);
    }
    Ok(())
}
