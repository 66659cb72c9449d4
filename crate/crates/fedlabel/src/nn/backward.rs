//! Manual backpropagation of mean cross-entropy through the layer stack.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::loss::LOSS_EPS;
use crate::nn::network::Network;
use crate::nn::spec::{Activation, LayerDims};

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) layers: Vec<LayerGrads>,
}

impl Gradients {
    /// Flat gradient vector matching [`Network::params_flat`] ordering.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.dw);
            out.extend_from_slice(&l.db);
        }
        out
    }
}

/// Analytic gradients of `cross_entropy(forward(net, batch), targets)` with
/// respect to every parameter.
pub fn backward(net: &Network, batch: &Matrix, targets: &Matrix) -> Result<Gradients> {
    let cache = net.forward_cached(batch)?;
    let output = cache.activations.last().unwrap();
    if targets.rows() != output.rows() || targets.cols() != output.cols() {
        return Err(Error::Shape(format!(
            "targets {}x{} vs network output {}x{}",
            targets.rows(),
            targets.cols(),
            output.rows(),
            output.cols()
        )));
    }
    let n = batch.rows() as f64;
    let layer_count = net.params.len();

    // Delta w.r.t. the final pre-activation.
    let mut delta = match net.spec().final_activation() {
        Activation::Softmax => {
            // Combined softmax + cross-entropy shortcut.
            let mut d = output.clone();
            for r in 0..d.rows() {
                for (dv, &tv) in d.row_mut(r).iter_mut().zip(targets.row(r)) {
                    *dv = (*dv - tv) / n;
                }
            }
            d
        }
        act => {
            // d/ds of -t*ln(max(s, eps)) is -t/s above the floor, 0 below it.
            let mut d = Matrix::zeros(output.rows(), output.cols());
            for r in 0..d.rows() {
                for c in 0..d.cols() {
                    let s = output.get(r, c);
                    let t = targets.get(r, c);
                    if s > LOSS_EPS && t != 0.0 {
                        d.set(r, c, -t / s / n);
                    }
                }
            }
            if act == Activation::ReLU {
                let z = &cache.preacts[layer_count - 1];
                for r in 0..d.rows() {
                    for c in 0..d.cols() {
                        if z.get(r, c) <= 0.0 {
                            d.set(r, c, 0.0);
                        }
                    }
                }
            }
            d
        }
    };

    let mut grads: Vec<LayerGrads> = Vec::with_capacity(layer_count);
    for l in (0..layer_count).rev() {
        let dims = &net.spec().dims()[l];
        let input = &cache.activations[l];
        let p = &net.params[l];
        let (lg, dprev) = layer_backward(dims, &p.w, input, &delta, l > 0);
        grads.push(lg);
        if l > 0 {
            let mut d = dprev.expect("requested upstream delta");
            // Through the previous layer's activation.
            if net.spec().layers()[l - 1].activation() == Activation::ReLU {
                let z = &cache.preacts[l - 1];
                for r in 0..d.rows() {
                    for c in 0..d.cols() {
                        if z.get(r, c) <= 0.0 {
                            d.set(r, c, 0.0);
                        }
                    }
                }
            }
            delta = d;
        }
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

fn layer_backward(
    dims: &LayerDims,
    w: &[f64],
    input: &Matrix,
    delta: &Matrix,
    want_dprev: bool,
) -> (LayerGrads, Option<Matrix>) {
    match *dims {
        LayerDims::Dense { fan_in, fan_out } => {
            let mut dw = vec![0.0; fan_in * fan_out];
            let mut db = vec![0.0; fan_out];
            for r in 0..input.rows() {
                let a = input.row(r);
                let d = delta.row(r);
                for (bj, &dj) in db.iter_mut().zip(d) {
                    *bj += dj;
                }
                for (i, &ai) in a.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    let dst = &mut dw[i * fan_out..(i + 1) * fan_out];
                    for (dv, &dj) in dst.iter_mut().zip(d) {
                        *dv += ai * dj;
                    }
                }
            }
            let dprev = want_dprev.then(|| {
                let mut dp = Matrix::zeros(input.rows(), fan_in);
                for r in 0..input.rows() {
                    let d = delta.row(r);
                    let row = dp.row_mut(r);
                    for (i, slot) in row.iter_mut().enumerate() {
                        let wrow = &w[i * fan_out..(i + 1) * fan_out];
                        *slot = wrow.iter().zip(d).map(|(&wij, &dj)| wij * dj).sum();
                    }
                }
                dp
            });
            (LayerGrads { dw, db }, dprev)
        }
        LayerDims::Conv { in_channels, in_len, filters, kernel, out_len } => {
            let mut dw = vec![0.0; filters * in_channels * kernel];
            let mut db = vec![0.0; filters];
            let mut dprev = want_dprev.then(|| Matrix::zeros(input.rows(), in_channels * in_len));
            for r in 0..input.rows() {
                let a = input.row(r);
                let d = delta.row(r);
                for f in 0..filters {
                    let drow = &d[f * out_len..(f + 1) * out_len];
                    db[f] += drow.iter().sum::<f64>();
                    for c in 0..in_channels {
                        let arow = &a[c * in_len..(c + 1) * in_len];
                        let base = (f * in_channels + c) * kernel;
                        for k in 0..kernel {
                            let mut s = 0.0;
                            for (p, &dp_) in drow.iter().enumerate() {
                                s += dp_ * arow[p + k];
                            }
                            dw[base + k] += s;
                        }
                        if let Some(dp) = dprev.as_mut() {
                            let row = dp.row_mut(r);
                            let dst = &mut row[c * in_len..(c + 1) * in_len];
                            for k in 0..kernel {
                                let t = w[base + k];
                                if t == 0.0 {
                                    continue;
                                }
                                for (p, &dv) in drow.iter().enumerate() {
                                    dst[p + k] += t * dv;
                                }
                            }
                        }
                    }
                }
            }
            (LayerGrads { dw, db }, dprev)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::labels::LabelSet;
    use crate::nn::loss::cross_entropy;
    use crate::nn::spec::{LayerSpec, ModelSpec};
    use rand::Rng;

    fn labels(n: u32) -> LabelSet {
        LabelSet::new((0..n).collect()).unwrap()
    }

    #[test]
    fn stationary_residual_gives_zero_output_bias_gradient() {
        let spec = ModelSpec::ann(4, &[3], labels(3)).unwrap();
        let net = Network::new(spec, 17);
        let mut rng = crate::rng::rng_from_seed(18);
        let rows: Vec<Vec<f64>> =
            (0..5).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let batch = Matrix::from_rows(&rows).unwrap();
        let targets = net.forward(&batch).unwrap();
        let grads = backward(&net, &batch, &targets).unwrap();
        for &g in &grads.layers.last().unwrap().db {
            assert!(g.abs() < 1e-10);
        }
    }

    #[test]
    fn hand_computed_chain_rule_single_dense_layer() {
        // One sample x = 0.5 through Dense(2, softmax), weights (0.3, -0.2),
        // zero bias, target (1, 0). dL/dw_j = x * (s_j - t_j).
        let spec = ModelSpec::new(
            1,
            vec![LayerSpec::Dense { units: 2, activation: Activation::Softmax }],
            labels(2),
        )
        .unwrap();
        let mut net = Network::zeroed(spec);
        net.params[0].w[0] = 0.3;
        net.params[0].w[1] = -0.2;
        let x = 0.5;
        let batch = Matrix::from_rows(&[vec![x]]).unwrap();
        let targets = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();

        let z1 = x * 0.3;
        let z2 = x * -0.2;
        let s1 = 1.0 / (1.0 + (z2 - z1).exp());
        let s2 = 1.0 - s1;

        let grads = backward(&net, &batch, &targets).unwrap();
        assert!((grads.layers[0].dw[0] - x * (s1 - 1.0)).abs() < 1e-12);
        assert!((grads.layers[0].dw[1] - x * s2).abs() < 1e-12);
        assert!((grads.layers[0].db[0] - (s1 - 1.0)).abs() < 1e-12);
        assert!((grads.layers[0].db[1] - s2).abs() < 1e-12);
    }

    /// Central finite differences over the flat parameter vector.
    fn numeric_grads(net: &Network, batch: &Matrix, targets: &Matrix, h: f64) -> Vec<f64> {
        let theta = net.params_flat();
        let mut out = Vec::with_capacity(theta.len());
        let mut probe = net.clone();
        for i in 0..theta.len() {
            let mut up = theta.clone();
            up[i] += h;
            probe.set_params_flat(&up).unwrap();
            let lu = cross_entropy(&probe.forward(batch).unwrap(), targets).unwrap();
            let mut down = theta.clone();
            down[i] -= h;
            probe.set_params_flat(&down).unwrap();
            let ld = cross_entropy(&probe.forward(batch).unwrap(), targets).unwrap();
            out.push((lu - ld) / (2.0 * h));
        }
        out
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let spec = ModelSpec::ann(6, &[5], labels(3)).unwrap();
        let net = Network::new(spec, 23);
        let mut rng = crate::rng::rng_from_seed(24);
        let rows: Vec<Vec<f64>> =
            (0..4).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let batch = Matrix::from_rows(&rows).unwrap();
        let t_rows: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let targets = Matrix::from_rows(&t_rows).unwrap();

        let analytic = backward(&net, &batch, &targets).unwrap().flat();
        let numeric = numeric_grads(&net, &batch, &targets, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
            assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = ModelSpec::ann(4, &[], labels(2)).unwrap();
        let net = Network::new(spec, 1);
        let batch = Matrix::zeros(2, 4);
        let targets = Matrix::zeros(2, 3);
        assert!(backward(&net, &batch, &targets).is_err());
    }
}
