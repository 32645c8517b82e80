//! The two-convolution network: layer specs, architecture tables, parameter
//! storage and initialization.
//!
//! MNIST chain (per sample):
//!
//! ```text
//! [1,28,28] -conv 5x5-> [10,24,24] -pool 2x2/2-> [10,12,12]
//!           -conv 3x3-> [20,10,10] -flatten-> 2000 -dense-> 500 -dense-> 10
//! ```
//!
//! CIFAR uses standard dense convolutions `3 -> 30 -> 60`, giving an 8640-wide
//! flatten, and 10 or 100 outputs.

mod layers;
mod network;

pub use layers::{
    conv2d_backward, conv2d_backward_sample, conv2d_forward, conv2d_forward_sample,
    dense_affine_backward_batch, dense_affine_batch, dense_backward, dense_forward,
    maxpool_backward, maxpool_backward_sample, maxpool_forward, maxpool_forward_sample,
    valid_extent, ConvGeometry, ConvGrads, DenseGrads, PoolGeometry, PoolIndices,
};
pub use network::{backward, forward, predict, ForwardCache, LayerCache};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::{ActivationKind, SchemeCode};
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    Conv2D {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        activation: Option<ActivationKind>,
    },
    MaxPool2D {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
        activation: Option<ActivationKind>,
    },
}

impl LayerSpec {
    /// Per-sample output shape for the given per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => {
                let &[c, h, w] = input else {
                    return Err(Error::mismatch("Conv2D", "[C, H, W]", input));
                };
                if c != in_channels {
                    return Err(Error::mismatch("Conv2D", [in_channels, h, w], input));
                }
                let g = ConvGeometry::new([c, h, w], out_channels, kernel_h, kernel_w, stride)?;
                Ok(g.output_shape().to_vec())
            }
            LayerSpec::MaxPool2D { window, stride } => {
                let &[c, h, w] = input else {
                    return Err(Error::mismatch("MaxPool2D", "[C, H, W]", input));
                };
                Ok(PoolGeometry::new([c, h, w], window, stride)?.output_shape().to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                if input != [in_features] {
                    return Err(Error::mismatch("Dense", [in_features], input));
                }
                Ok(vec![out_features])
            }
        }
    }

    /// `(weight shape, bias shape)` for learnable layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel_h, kernel_w],
                vec![out_channels],
            )),
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2D {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some(in_channels * kernel_h * kernel_w),
            LayerSpec::Dense { in_features, .. } => Some(in_features),
            _ => None,
        }
    }

    fn validate_fields(&self) -> Result<()> {
        let fields: Vec<usize> = match *self {
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => vec![in_channels, out_channels, kernel_h, kernel_w, stride],
            LayerSpec::MaxPool2D { window, stride } => vec![window, stride],
            LayerSpec::Flatten => vec![],
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => vec![in_features, out_features],
        };
        if fields.contains(&0) {
            return Err(Error::InvalidInput(format!("zero-sized field in {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
    pub scheme: SchemeCode,
    pub num_classes: usize,
    pub input_shape: [usize; 3],
}

impl Architecture {
    /// Builds an architecture after checking that every layer's output feeds
    /// the next and the network ends in `num_classes` logits.
    pub fn new(
        layers: Vec<LayerSpec>,
        scheme: SchemeCode,
        num_classes: usize,
        input_shape: [usize; 3],
    ) -> Result<Self> {
        let arch = Self {
            layers,
            scheme,
            num_classes,
            input_shape,
        };
        let shapes = arch.layer_shapes()?;
        let last = shapes.last().expect("input shape always present");
        if last.as_slice() != [num_classes] {
            return Err(Error::mismatch(
                "architecture output",
                [num_classes],
                last,
            ));
        }
        Ok(arch)
    }

    /// Per-sample shapes: the input followed by every layer's output.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate_fields().map_err(|e| e.at_layer(i))?;
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| e.at_layer(i))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .filter_map(LayerSpec::param_shapes)
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture is always serializable")
    }
}

/// The published network for `dataset` with activations from `scheme`.
pub fn build_architecture(dataset: DatasetKind, scheme: SchemeCode) -> Architecture {
    let (c1, c2, flat) = match dataset {
        DatasetKind::Mnist => (10, 20, 20 * 10 * 10),
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => (30, 60, 60 * 12 * 12),
    };
    let input = dataset.input_shape();
    let classes = dataset.num_classes();
    let layers = vec![
        LayerSpec::Conv2D {
            in_channels: input[0],
            out_channels: c1,
            kernel_h: 5,
            kernel_w: 5,
            stride: 1,
            activation: Some(scheme.conv1),
        },
        LayerSpec::MaxPool2D {
            window: 2,
            stride: 2,
        },
        LayerSpec::Conv2D {
            in_channels: c1,
            out_channels: c2,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            activation: Some(scheme.conv2),
        },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_features: flat,
            out_features: 500,
            activation: Some(scheme.fc1),
        },
        LayerSpec::Dense {
            in_features: 500,
            out_features: classes,
            activation: None,
        },
    ];
    Architecture::new(layers, scheme, classes, input).expect("static layer tables chain correctly")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LayerParams<T: Scalar = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Weights and biases for every learnable layer, indexed like
/// [`Architecture::layers`] (`None` for pooling and flatten). Gradients and
/// optimizer velocities share this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Parameters<T: Scalar = f64> {
    pub layers: Vec<Option<LayerParams<T>>>,
}

impl<T: Scalar> Parameters<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .layers
            .iter()
            .map(|l| {
                l.param_shapes().map(|(w, b)| LayerParams {
                    weight: Tensor::zeros(&w).expect("validated shape"),
                    bias: Tensor::zeros(&b).expect("validated shape"),
                })
            })
            .collect();
        Self { layers }
    }

    /// All tensors in layer order, weight before bias.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| [&p.weight, &p.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// Checks that the tensors match `arch` layer by layer.
    pub fn check(&self, arch: &Architecture) -> Result<()> {
        if self.layers.len() != arch.layers.len() {
            return Err(Error::mismatch("parameters", arch.layers.len(), self.layers.len()));
        }
        for (i, (spec, p)) in arch.layers.iter().zip(&self.layers).enumerate() {
            match (spec.param_shapes(), p) {
                (None, None) => {}
                (Some((w, b)), Some(p)) if p.weight.shape() == w && p.bias.shape() == b => {}
                (expected, _) => {
                    return Err(Error::mismatch("parameters", expected, p.as_ref().map(|p| p.weight.shape().to_vec()))
                        .at_layer(i))
                }
            }
        }
        Ok(())
    }

    /// Largest absolute difference over all tensors.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        let mut m = T::zero();
        if self.layers.len() != other.layers.len() {
            return None;
        }
        for (a, b) in self.tensors().zip(other.tensors()) {
            m = m.max(a.max_abs_diff(b)?);
        }
        Some(m)
    }
}

/// Uniform He-style initialization: weights in `(-b, b)` with
/// `b = sqrt(6 / fan_in)`, zero biases.
pub fn init_params<T: Scalar>(arch: &Architecture, seed: u64) -> Parameters<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::zeros(arch);
    for (spec, slot) in arch.layers.iter().zip(params.layers.iter_mut()) {
        let (Some(fan_in), Some(p)) = (spec.fan_in(), slot.as_mut()) else {
            continue;
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        for w in p.weight.data_mut() {
            let u = loop {
                let u: f64 = rng.gen();
                if u > 0.0 {
                    break u;
                }
            };
            *w = T::cast(bound * (2.0 * u - 1.0));
        }
    }
    params
}
