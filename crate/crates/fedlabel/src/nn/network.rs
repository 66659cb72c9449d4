//! Network realization: parameters, initialization, forward pass.

use rand::Rng;

use crate::data::labels::LabelSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::adam::AdamState;
use crate::nn::spec::{Activation, LayerDims, ModelSpec};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerParams {
    /// Dense: row-major `fan_in x fan_out`. Conv: `[filter][channel][tap]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    pub(crate) params: Vec<LayerParams>,
    pub(crate) adam: AdamState,
}

impl Network {
    /// He-uniform init for ReLU layers, Glorot-uniform otherwise, zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Network {
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::with_capacity(spec.dims().len());
        for (layer, dims) in spec.layers().iter().zip(spec.dims()) {
            let fan_in = dims.unit_fan_in() as f64;
            let fan_out = dims.unit_fan_out() as f64;
            let limit = match layer.activation() {
                Activation::ReLU => (6.0 / fan_in).sqrt(),
                Activation::Softmax | Activation::None => (6.0 / (fan_in + fan_out)).sqrt(),
            };
            let w = (0..dims.weight_len()).map(|_| rng.gen_range(-limit..limit)).collect();
            params.push(LayerParams { w, b: vec![0.0; dims.bias_len()] });
        }
        let adam = AdamState::zeros(&spec);
        Network { spec, params, adam }
    }

    /// All-zero parameters; useful as an untrained baseline.
    pub fn zeroed(spec: ModelSpec) -> Network {
        let params = spec
            .dims()
            .iter()
            .map(|d| LayerParams { w: vec![0.0; d.weight_len()], b: vec![0.0; d.bias_len()] })
            .collect();
        let adam = AdamState::zeros(&spec);
        Network { spec, params, adam }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn labels(&self) -> &LabelSet {
        self.spec.output_labels()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.w.len() + p.b.len()).sum()
    }

    /// Flat parameter vector (per layer: weights then biases).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(&p.w);
            out.extend_from_slice(&p.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let (wn, bn) = (p.w.len(), p.b.len());
            p.w.copy_from_slice(&flat[offset..offset + wn]);
            offset += wn;
            p.b.copy_from_slice(&flat[offset..offset + bn]);
            offset += bn;
        }
        Ok(())
    }

    pub fn params_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.w.iter().chain(p.b.iter()).all(|v| v.is_finite()))
    }

    /// Class scores for a batch: one row per sample, one column per output
    /// label, in label-set order.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(batch)?.activations.pop().expect("non-empty stack"))
    }

    pub(crate) fn forward_cached(&self, batch: &Matrix) -> Result<ForwardCache> {
        if batch.cols() != self.spec.input_dim() {
            return Err(Error::Dimension {
                layer: 0,
                detail: format!(
                    "batch has {} columns, model input dim is {}",
                    batch.cols(),
                    self.spec.input_dim()
                ),
            });
        }
        let mut activations = Vec::with_capacity(self.params.len() + 1);
        let mut preacts = Vec::with_capacity(self.params.len());
        activations.push(batch.clone());
        for ((layer, dims), p) in self.spec.layers().iter().zip(self.spec.dims()).zip(&self.params)
        {
            let z = layer_preactivation(dims, &p.w, &p.b, activations.last().unwrap());
            let a = apply_activation(layer.activation(), &z);
            preacts.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { activations, preacts })
    }
}

pub(crate) struct ForwardCache {
    /// `a_0 = input, a_1, ..., a_L`
    pub activations: Vec<Matrix>,
    /// `z_1, ..., z_L`
    pub preacts: Vec<Matrix>,
}

pub(crate) fn layer_preactivation(dims: &LayerDims, w: &[f64], b: &[f64], input: &Matrix) -> Matrix {
    match *dims {
        LayerDims::Dense { fan_in, fan_out } => {
            let mut z = Matrix::zeros(input.rows(), fan_out);
            for r in 0..input.rows() {
                let a = input.row(r);
                let out = z.row_mut(r);
                out.copy_from_slice(b);
                for (i, &ai) in a.iter().enumerate().take(fan_in) {
                    if ai == 0.0 {
                        continue;
                    }
                    let wrow = &w[i * fan_out..(i + 1) * fan_out];
                    for (o, &wij) in out.iter_mut().zip(wrow) {
                        *o += ai * wij;
                    }
                }
            }
            z
        }
        LayerDims::Conv { in_channels, in_len, filters, kernel, out_len } => {
            let mut z = Matrix::zeros(input.rows(), filters * out_len);
            for r in 0..input.rows() {
                let a = input.row(r);
                let out = z.row_mut(r);
                for f in 0..filters {
                    let dst = &mut out[f * out_len..(f + 1) * out_len];
                    dst.fill(b[f]);
                    for c in 0..in_channels {
                        let src = &a[c * in_len..(c + 1) * in_len];
                        let taps = &w[(f * in_channels + c) * kernel..(f * in_channels + c + 1) * kernel];
                        for (k, &t) in taps.iter().enumerate() {
                            for p in 0..out_len {
                                dst[p] += t * src[p + k];
                            }
                        }
                    }
                }
            }
            z
        }
    }
}

pub(crate) fn apply_activation(act: Activation, z: &Matrix) -> Matrix {
    match act {
        Activation::None => z.clone(),
        Activation::ReLU => {
            let mut a = z.clone();
            for r in 0..a.rows() {
                for v in a.row_mut(r) {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            a
        }
        Activation::Softmax => {
            let mut a = z.clone();
            for r in 0..a.rows() {
                let row = a.row_mut(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            a
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::LayerSpec;

    fn labels(n: u32) -> LabelSet {
        LabelSet::new((0..n).collect()).unwrap()
    }

    #[test]
    fn zero_dense_maps_to_zero() {
        let spec = ModelSpec::new(
            3,
            vec![LayerSpec::Dense { units: 1, activation: Activation::None }],
            LabelSet::new(vec![0]).unwrap(),
        )
        .unwrap();
        let net = Network::zeroed(spec);
        let batch = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![4.0, 4.0, 4.0]]).unwrap();
        let out = net.forward(&batch).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_logit_softmax_is_uniform() {
        let spec = ModelSpec::ann(5, &[], labels(4)).unwrap();
        let net = Network::zeroed(spec);
        let batch = Matrix::from_rows(&[vec![0.3, -1.0, 2.0, 0.0, 1.0]]).unwrap();
        let out = net.forward(&batch).unwrap();
        for &v in out.row(0) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    /// Straight-line scalar recomputation of matmul + ReLU + softmax.
    fn scalar_forward(net: &Network, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for ((layer, dims), p) in net.spec().layers().iter().zip(net.spec().dims()).zip(&net.params)
        {
            let mut z = Vec::new();
            match *dims {
                LayerDims::Dense { fan_in, fan_out } => {
                    for j in 0..fan_out {
                        let mut s = p.b[j];
                        for i in 0..fan_in {
                            s += a[i] * p.w[i * fan_out + j];
                        }
                        z.push(s);
                    }
                }
                LayerDims::Conv { in_channels, in_len, filters, kernel, out_len } => {
                    for f in 0..filters {
                        for pos in 0..out_len {
                            let mut s = p.b[f];
                            for c in 0..in_channels {
                                for k in 0..kernel {
                                    s += p.w[(f * in_channels + c) * kernel + k]
                                        * a[c * in_len + pos + k];
                                }
                            }
                            z.push(s);
                        }
                    }
                }
            }
            a = match layer.activation() {
                Activation::None => z,
                Activation::ReLU => z.into_iter().map(|v| v.max(0.0)).collect(),
                Activation::Softmax => {
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                    let sum: f64 = e.iter().sum();
                    e.into_iter().map(|v| v / sum).collect()
                }
            };
        }
        a
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let spec = ModelSpec::ann(6, &[5], labels(3)).unwrap();
        let net = Network::new(spec, 42);
        let mut rng = crate::rng::rng_from_seed(7);
        let rows: Vec<Vec<f64>> =
            (0..3).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let batch = Matrix::from_rows(&rows).unwrap();
        let out = net.forward(&batch).unwrap();
        for (r, row) in rows.iter().enumerate() {
            let expect = scalar_forward(&net, row);
            for (c, &e) in expect.iter().enumerate() {
                assert!((out.get(r, c) - e).abs() < 1e-10, "row {r} col {c}");
            }
        }
    }

    #[test]
    fn conv_forward_matches_scalar_loop_oracle() {
        let spec = ModelSpec::cnn(30, &[4, 3], 3, labels(2)).unwrap();
        let net = Network::new(spec, 9);
        let mut rng = crate::rng::rng_from_seed(8);
        let row: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batch = Matrix::from_rows(&[row.clone()]).unwrap();
        let out = net.forward(&batch).unwrap();
        let expect = scalar_forward(&net, &row);
        for (c, &e) in expect.iter().enumerate() {
            assert!((out.get(0, c) - e).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_on_paper_architectures() {
        let archs: Vec<ModelSpec> = vec![
            ModelSpec::cnn(150, &[16, 32], 3, labels(2)).unwrap(),
            ModelSpec::cnn(150, &[16, 16, 32], 3, labels(2)).unwrap(),
            ModelSpec::ann(150, &[16, 16, 32], labels(2)).unwrap(),
            ModelSpec::ann(150, &[8, 16], labels(2)).unwrap(),
            ModelSpec::cnn(150, &[16], 3, labels(2)).unwrap(),
            ModelSpec::cnn(150, &[8, 16, 16, 32], 3, labels(2)).unwrap(),
        ];
        let mut rng = crate::rng::rng_from_seed(5);
        for (i, spec) in archs.into_iter().enumerate() {
            let net = Network::new(spec, i as u64);
            let rows: Vec<Vec<f64>> =
                (0..4).map(|_| (0..150).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let out = net.forward(&Matrix::from_rows(&rows).unwrap()).unwrap();
            for r in 0..out.rows() {
                let sum: f64 = out.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(out.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn dimension_error_names_layer() {
        let spec = ModelSpec::ann(5, &[4], labels(2)).unwrap();
        let net = Network::new(spec, 0);
        let batch = Matrix::zeros(2, 7);
        match net.forward(&batch) {
            Err(Error::Dimension { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn conv_kernel_one_equals_positionwise_dense() {
        // A kernel-1 conv with f filters is a dense 3->f map applied at each
        // position. Build both from the same weights and compare.
        let in_len = 10;
        let filters = 4;
        let conv_spec = ModelSpec::new(
            30,
            vec![
                LayerSpec::Conv1D { filters, kernel: 1, activation: Activation::ReLU },
                LayerSpec::Dense { units: 2, activation: Activation::Softmax },
            ],
            labels(2),
        )
        .unwrap();
        let mut conv_net = Network::new(conv_spec, 3);

        let mut rng = crate::rng::rng_from_seed(11);
        let wconv: Vec<f64> = (0..filters * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bconv: Vec<f64> = (0..filters).map(|_| rng.gen_range(-0.5..0.5)).collect();
        conv_net.params[0].w.copy_from_slice(&wconv);
        conv_net.params[0].b.copy_from_slice(&bconv);

        let row: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batch = Matrix::from_rows(&[row.clone()]).unwrap();
        let cache = conv_net.forward_cached(&batch).unwrap();
        let conv_out = &cache.activations[1];

        // Position-wise dense oracle: out[f*L + p] = relu(b[f] + sum_c w[f][c] x[c*L + p])
        for f in 0..filters {
            for p in 0..in_len {
                let mut s = bconv[f];
                for c in 0..3 {
                    s += wconv[f * 3 + c] * row[c * in_len + p];
                }
                let expect = s.max(0.0);
                assert!((conv_out.get(0, f * in_len + p) - expect).abs() < 1e-10);
            }
        }
    }
}
