//! CNN building blocks with the N-Gauss activation `tanh(x)/x`.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common choices.

pub mod activations;
pub mod data;
pub mod error;
pub mod lipschitz;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use activations::{ngauss, ngauss_deriv, parse_scheme, ActivationKind, SchemeCode};
pub use data::{DatasetKind, LabeledDataset, Split};
pub use error::{Error, Result};
pub use lipschitz::{certify_ngauss, estimate_lipschitz, LipschitzReport};
pub use nn::{build_architecture, init_params, Architecture, LayerSpec, Parameters};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{
    cross_entropy, detect_divergence, run_training, DivergenceReason, DivergenceStatus,
    EpochMetrics, Hyperparams, TrainingRun,
};

pub type TensorF64 = Tensor<f64>;
pub type TensorF32 = Tensor<f32>;
pub type ParametersF64 = Parameters<f64>;
pub type ParametersF32 = Parameters<f32>;
pub type DatasetF64 = LabeledDataset<f64>;
pub type DatasetF32 = LabeledDataset<f32>;
