//! Batched forward and backward passes through an [`Architecture`].

use super::layers::{
    conv2d_backward_sample, conv2d_forward_sample, dense_affine_backward_batch, dense_affine_batch,
    maxpool_backward_sample, maxpool_forward_sample, ConvGeometry, PoolGeometry,
};
use super::{Architecture, LayerParams, LayerSpec, Parameters};
use crate::activations::ActivationKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// What a layer keeps from the forward pass for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerCache<T: Scalar = f64> {
    Conv {
        input: Tensor<T>,
        /// Pre-activation output; absent for a linear layer.
        pre: Option<Tensor<T>>,
    },
    Pool {
        geometry: PoolGeometry,
        /// Window-local argmax offsets for the whole batch.
        indices: Vec<u32>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor<T>,
        pre: Option<Tensor<T>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T: Scalar = f64> {
    pub batch: usize,
    pub layers: Vec<LayerCache<T>>,
}

fn sample_shape(x: &Tensor<impl Scalar>) -> &[usize] {
    &x.shape()[1..]
}

fn with_batch(batch: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(sample.len() + 1);
    s.push(batch);
    s.extend_from_slice(sample);
    s
}

fn activate<T: Scalar>(pre: Tensor<T>, act: Option<ActivationKind>, keep_pre: bool) -> (Tensor<T>, Option<Tensor<T>>) {
    match act {
        None => (pre, None),
        Some(a) => {
            let out = pre.map(|x| a.apply(x));
            (out, keep_pre.then_some(pre))
        }
    }
}

fn layer_params<T: Scalar>(params: &Parameters<T>, i: usize) -> Result<&LayerParams<T>> {
    params.layers[i]
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("missing parameters for learnable layer".into()).at_layer(i))
}

fn run_forward<T: Scalar>(
    arch: &Architecture,
    params: &Parameters<T>,
    batch: &Tensor<T>,
    keep_cache: bool,
) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
    params.check(arch)?;
    let expected = with_batch(batch.shape()[0], &arch.input_shape);
    if batch.ndim() != 4 || batch.shape() != expected.as_slice() {
        return Err(Error::mismatch("forward input", &expected, batch.shape()).at_layer(0));
    }
    let b = batch.shape()[0];
    let mut caches = Vec::with_capacity(arch.layers.len());
    let mut x = batch.clone();

    for (i, spec) in arch.layers.iter().enumerate() {
        let in_shape = sample_shape(&x).to_vec();
        let out_shape = spec.output_shape(&in_shape).map_err(|e| e.at_layer(i))?;
        let (y, cache) = match *spec {
            LayerSpec::Conv2D {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                activation,
                ..
            } => {
                let p = layer_params(params, i)?;
                let g = ConvGeometry::new(
                    [in_shape[0], in_shape[1], in_shape[2]],
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                )
                .map_err(|e| e.at_layer(i))?;
                let mut pre = Tensor::zeros(&with_batch(b, &out_shape))?;
                for (xs, ps) in x
                    .data()
                    .chunks_exact(g.input_len())
                    .zip(pre.data_mut().chunks_exact_mut(g.output_len()))
                {
                    conv2d_forward_sample(&g, xs, p.weight.data(), p.bias.data(), ps);
                }
                let (y, pre) = activate(pre, activation, keep_cache);
                (y, LayerCache::Conv { input: x, pre })
            }
            LayerSpec::MaxPool2D { window, stride } => {
                let g = PoolGeometry::new([in_shape[0], in_shape[1], in_shape[2]], window, stride)
                    .map_err(|e| e.at_layer(i))?;
                let mut y = Tensor::zeros(&with_batch(b, &out_shape))?;
                let mut indices = vec![0u32; b * g.output_len()];
                for ((xs, ys), is) in x
                    .data()
                    .chunks_exact(g.input_len())
                    .zip(y.data_mut().chunks_exact_mut(g.output_len()))
                    .zip(indices.chunks_exact_mut(g.output_len()))
                {
                    maxpool_forward_sample(&g, xs, ys, is);
                }
                (y, LayerCache::Pool { geometry: g, indices })
            }
            LayerSpec::Flatten => {
                let y = x.reshape(&with_batch(b, &out_shape))?;
                (y, LayerCache::Flatten { input_shape: in_shape })
            }
            LayerSpec::Dense { activation, .. } => {
                let p = layer_params(params, i)?;
                let mut pre = Tensor::zeros(&with_batch(b, &out_shape))?;
                dense_affine_batch(x.data(), b, p.weight.data(), p.bias.data(), pre.data_mut());
                let (y, pre) = activate(pre, activation, keep_cache);
                (y, LayerCache::Dense { input: x, pre })
            }
        };
        if keep_cache {
            caches.push(cache);
        }
        x = y;
    }
    let cache = keep_cache.then_some(ForwardCache {
        batch: b,
        layers: caches,
    });
    Ok((x, cache))
}

/// Runs a `[B, C, H, W]` batch through the network, returning `[B, K]`
/// logits and the per-layer state needed by [`backward`].
pub fn forward<T: Scalar>(
    arch: &Architecture,
    params: &Parameters<T>,
    batch: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let (logits, cache) = run_forward(arch, params, batch, true)?;
    Ok((logits, cache.expect("cache requested")))
}

/// Logits only; keeps no intermediate state.
pub fn predict<T: Scalar>(arch: &Architecture, params: &Parameters<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(run_forward(arch, params, batch, false)?.0)
}

fn scale_by_derivative<T: Scalar>(grad: &mut Tensor<T>, pre: &Option<Tensor<T>>, act: Option<ActivationKind>) -> Result<()> {
    match (act, pre) {
        (None, _) => Ok(()),
        (Some(a), Some(pre)) => {
            for (g, &p) in grad.data_mut().iter_mut().zip(pre.data()) {
                *g *= a.derivative(p);
            }
            Ok(())
        }
        (Some(_), None) => Err(Error::State("activated layer has no stored pre-activation".into())),
    }
}

/// Parameter gradients for the batch behind `cache`.
///
/// Per-sample contributions are summed in batch order; any averaging over the
/// batch is carried by `grad_logits` (the cross-entropy gradient already
/// includes the `1/B` factor).
pub fn backward<T: Scalar>(
    arch: &Architecture,
    params: &Parameters<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<Parameters<T>> {
    params.check(arch)?;
    if cache.layers.len() != arch.layers.len() {
        return Err(Error::State(format!(
            "cache holds {} layers, architecture has {}",
            cache.layers.len(),
            arch.layers.len()
        )));
    }
    let b = cache.batch;
    let expected = [b, arch.num_classes];
    if grad_logits.shape() != expected {
        return Err(Error::State(format!(
            "gradient shape {:?} does not match cached batch {:?}",
            grad_logits.shape(),
            expected
        )));
    }

    let mut grads = Parameters::zeros(arch);
    let mut g = grad_logits.clone();

    for (i, (spec, layer_cache)) in arch.layers.iter().zip(&cache.layers).enumerate().rev() {
        let need_input_grad = i > 0;
        g = match (*spec, layer_cache) {
            (
                LayerSpec::Dense {
                    in_features,
                    activation,
                    ..
                },
                LayerCache::Dense { input, pre },
            ) => {
                if input.shape() != [b, in_features] {
                    return Err(Error::State(format!("layer {i}: cached input {:?}", input.shape())));
                }
                scale_by_derivative(&mut g, pre, activation)?;
                let p = layer_params(params, i)?;
                let gp = grads.layers[i].as_mut().expect("learnable layer");
                let mut gi = need_input_grad.then(|| vec![T::zero(); input.len()]);
                dense_affine_backward_batch(
                    input.data(),
                    p.weight.data(),
                    g.data(),
                    gp.weight.data_mut(),
                    gp.bias.data_mut(),
                    gi.as_deref_mut(),
                );
                match gi {
                    Some(v) => Tensor::from_vec(input.shape(), v)?,
                    None => break,
                }
            }
            (LayerSpec::Flatten, LayerCache::Flatten { input_shape }) => {
                g.reshape(&with_batch(b, input_shape))?
            }
            (LayerSpec::MaxPool2D { .. }, LayerCache::Pool { geometry, indices }) => {
                if g.len() != b * geometry.output_len() {
                    return Err(Error::State(format!("layer {i}: pooling gradient size mismatch")));
                }
                let mut gi = Tensor::zeros(&with_batch(b, &[geometry.channels, geometry.in_h, geometry.in_w]))?;
                for ((go, is), gs) in g
                    .data()
                    .chunks_exact(geometry.output_len())
                    .zip(indices.chunks_exact(geometry.output_len()))
                    .zip(gi.data_mut().chunks_exact_mut(geometry.input_len()))
                {
                    maxpool_backward_sample(geometry, is, go, gs);
                }
                gi
            }
            (
                LayerSpec::Conv2D {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    activation,
                    ..
                },
                LayerCache::Conv { input, pre },
            ) => {
                let s = sample_shape(input);
                let geom = ConvGeometry::new([s[0], s[1], s[2]], out_channels, kernel_h, kernel_w, stride)
                    .map_err(|e| e.at_layer(i))?;
                if g.len() != b * geom.output_len() || input.len() != b * geom.input_len() {
                    return Err(Error::State(format!("layer {i}: convolution cache mismatch")));
                }
                scale_by_derivative(&mut g, pre, activation)?;
                let p = layer_params(params, i)?;
                let gp = grads.layers[i].as_mut().expect("learnable layer");
                let mut gi = need_input_grad.then(|| Tensor::zeros(input.shape())).transpose()?;
                for (k, (xs, gs)) in input
                    .data()
                    .chunks_exact(geom.input_len())
                    .zip(g.data().chunks_exact(geom.output_len()))
                    .enumerate()
                {
                    let gin = gi
                        .as_mut()
                        .map(|t| &mut t.data_mut()[k * geom.input_len()..(k + 1) * geom.input_len()]);
                    conv2d_backward_sample(
                        &geom,
                        xs,
                        p.weight.data(),
                        gs,
                        gp.weight.data_mut(),
                        gp.bias.data_mut(),
                        gin,
                    );
                }
                match gi {
                    Some(t) => t,
                    None => break,
                }
            }
            _ => {
                return Err(Error::State(format!(
                    "layer {i}: cache entry does not match layer kind"
                )))
            }
        };
    }
    Ok(grads)
}
