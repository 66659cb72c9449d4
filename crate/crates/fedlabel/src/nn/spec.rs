//! Declarative layer-stack descriptions.

use crate::data::labels::LabelSet;
use crate::error::{Error, Result};

/// Triaxial input: the first conv layer reads its input row as 3 channels.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Softmax,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { units: usize, activation: Activation },
    Conv1D { filters: usize, kernel: usize, activation: Activation },
}

impl LayerSpec {
    pub fn activation(&self) -> Activation {
        match *self {
            LayerSpec::Dense { activation, .. } => activation,
            LayerSpec::Conv1D { activation, .. } => activation,
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            LayerSpec::Dense { units, .. } => units,
            LayerSpec::Conv1D { filters, .. } => filters,
        }
    }
}

/// Resolved per-layer geometry, computed once at spec validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum LayerDims {
    Dense { fan_in: usize, fan_out: usize },
    Conv {
        in_channels: usize,
        in_len: usize,
        filters: usize,
        kernel: usize,
        out_len: usize,
    },
}

impl LayerDims {
    pub(crate) fn weight_len(&self) -> usize {
        match *self {
            LayerDims::Dense { fan_in, fan_out } => fan_in * fan_out,
            LayerDims::Conv { in_channels, filters, kernel, .. } => filters * in_channels * kernel,
        }
    }

    pub(crate) fn bias_len(&self) -> usize {
        match *self {
            LayerDims::Dense { fan_out, .. } => fan_out,
            LayerDims::Conv { filters, .. } => filters,
        }
    }

    /// Fan-in of one output unit, used for weight initialization.
    pub(crate) fn unit_fan_in(&self) -> usize {
        match *self {
            LayerDims::Dense { fan_in, .. } => fan_in,
            LayerDims::Conv { in_channels, kernel, .. } => in_channels * kernel,
        }
    }

    pub(crate) fn unit_fan_out(&self) -> usize {
        match *self {
            LayerDims::Dense { fan_out, .. } => fan_out,
            LayerDims::Conv { filters, .. } => filters,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
    input_dim: usize,
    output_labels: LabelSet,
    dims: Vec<LayerDims>,
}

impl ModelSpec {
    /// Validate the stack and resolve per-layer geometry.
    ///
    /// Conv layers must form a prefix of the stack (a dense layer flattens
    /// the channel/position structure); the first conv layer reads the input
    /// as [`INPUT_CHANNELS`] channels.
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>, output_labels: LabelSet) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("model must have at least one layer".into()));
        }
        if input_dim == 0 {
            return Err(Error::InvalidInput("input dimension must be positive".into()));
        }
        let last = layers.len() - 1;
        let mut dims = Vec::with_capacity(layers.len());
        // (channels, positions) while inside the conv prefix
        let mut conv_shape: Option<(usize, usize)> = None;
        let mut flat = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.width() == 0 {
                return Err(Error::Dimension {
                    layer: i,
                    detail: "layer width must be positive".into(),
                });
            }
            if layer.activation() == Activation::Softmax && i != last {
                return Err(Error::Dimension {
                    layer: i,
                    detail: "softmax is only allowed on the final classification layer".into(),
                });
            }
            match *layer {
                LayerSpec::Dense { units, .. } => {
                    dims.push(LayerDims::Dense { fan_in: flat, fan_out: units });
                    conv_shape = None;
                    flat = units;
                }
                LayerSpec::Conv1D { filters, kernel, .. } => {
                    let (in_channels, in_len) = match conv_shape {
                        Some(shape) => shape,
                        None if i == 0 => {
                            if input_dim % INPUT_CHANNELS != 0 {
                                return Err(Error::Dimension {
                                    layer: 0,
                                    detail: format!(
                                        "conv input dim {input_dim} is not divisible into {INPUT_CHANNELS} channels"
                                    ),
                                });
                            }
                            (INPUT_CHANNELS, input_dim / INPUT_CHANNELS)
                        }
                        None => {
                            return Err(Error::Dimension {
                                layer: i,
                                detail: "conv layer cannot follow a dense layer".into(),
                            });
                        }
                    };
                    if kernel == 0 || kernel > in_len {
                        return Err(Error::Dimension {
                            layer: i,
                            detail: format!(
                                "kernel width {kernel} out of range 1..={in_len} for input length {in_len}"
                            ),
                        });
                    }
                    let out_len = in_len - kernel + 1;
                    dims.push(LayerDims::Conv { in_channels, in_len, filters, kernel, out_len });
                    conv_shape = Some((filters, out_len));
                    flat = filters * out_len;
                }
            }
        }
        if flat != output_labels.len() {
            return Err(Error::Dimension {
                layer: last,
                detail: format!(
                    "final layer width {flat} does not equal label count {}",
                    output_labels.len()
                ),
            });
        }
        Ok(ModelSpec { layers, input_dim, output_labels, dims })
    }

    /// Fully-connected stack: ReLU hidden layers, softmax classification head.
    pub fn ann(input_dim: usize, hidden: &[usize], labels: LabelSet) -> Result<Self> {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&units| LayerSpec::Dense { units, activation: Activation::ReLU })
            .collect();
        layers.push(LayerSpec::Dense { units: labels.len(), activation: Activation::Softmax });
        ModelSpec::new(input_dim, layers, labels)
    }

    /// Conv stack over the triaxial input: ReLU conv layers, then a flatten
    /// into a softmax classification head.
    pub fn cnn(input_dim: usize, filters: &[usize], kernel: usize, labels: LabelSet) -> Result<Self> {
        let mut layers: Vec<LayerSpec> = filters
            .iter()
            .map(|&f| LayerSpec::Conv1D { filters: f, kernel, activation: Activation::ReLU })
            .collect();
        layers.push(LayerSpec::Dense { units: labels.len(), activation: Activation::Softmax });
        ModelSpec::new(input_dim, layers, labels)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_labels(&self) -> &LabelSet {
        &self.output_labels
    }

    pub(crate) fn dims(&self) -> &[LayerDims] {
        &self.dims
    }

    pub fn final_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation()
    }
}
