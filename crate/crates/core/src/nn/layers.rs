//! Convolution, max-pooling and dense layers with hand-written backward
//! passes.
//!
//! Public functions take [`Tensor`]s: a single image `[C, H, W]` (or a dense
//! input `[in]`), or a batch with a leading axis. The `*_sample` kernels
//! below work on flat slices and are what the network driver calls per
//! sample.

use crate::activations::ActivationKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{axpy, Tensor};

/// Geometry of a valid (unpadded) convolution on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output extent of a valid convolution or pooling window; `None` when the
/// window does not tile the input exactly.
pub fn valid_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
    if stride == 0 || window == 0 || window > input || (input - window) % stride != 0 {
        None
    } else {
        Some((input - window) / stride + 1)
    }
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 3],
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
    ) -> Result<Self> {
        let [in_channels, in_h, in_w] = input;
        let out_h = valid_extent(in_h, kernel_h, stride);
        let out_w = valid_extent(in_w, kernel_w, stride);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) if out_channels > 0 && in_channels > 0 => Ok(Self {
                in_channels,
                out_channels,
                in_h,
                in_w,
                kernel_h,
                kernel_w,
                stride,
                out_h,
                out_w,
            }),
            _ => Err(Error::InvalidShape {
                shape: input.to_vec(),
                reason: format!(
                    "{kernel_h}x{kernel_w} kernel with stride {stride} does not tile the input"
                ),
            }),
        }
    }

    fn from_tensors<T: Scalar>(input: &[usize], weight: &Tensor<T>, stride: usize) -> Result<Self> {
        let &[c, h, w] = input else {
            return Err(Error::mismatch("conv2d", "[C, H, W] input", input));
        };
        let &[co, ci, kh, kw] = weight.shape() else {
            return Err(Error::mismatch("conv2d", "[C_out, C_in, kH, kW] weight", weight.shape()));
        };
        if ci != c {
            return Err(Error::mismatch("conv2d", format!("weight with {c} input channels"), weight.shape()));
        }
        Self::new([c, h, w], co, kh, kw, stride)
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_h * self.out_w
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_channels, self.out_h, self.out_w]
    }
}

/// Dot product with four interleaved partial sums, combined in a fixed order.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cross-correlation of one sample: `out[o,i,j] = bias[o] +
/// sum_{c,u,v} input[c, i*s+u, j*s+v] * weight[o,c,u,v]`, accumulated in
/// ascending `(c, u, v)` order after the bias.
pub fn conv2d_forward_sample<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let (oh, ow, s) = (g.out_h, g.out_w, g.stride);
    let plane = g.in_h * g.in_w;
    for (o, out_o) in out.chunks_exact_mut(oh * ow).enumerate() {
        out_o.fill(bias[o]);
        for c in 0..g.in_channels {
            let in_c = &input[c * plane..(c + 1) * plane];
            for u in 0..g.kernel_h {
                for v in 0..g.kernel_w {
                    let wv = weight[((o * g.in_channels + c) * g.kernel_h + u) * g.kernel_w + v];
                    for (i, out_row) in out_o.chunks_exact_mut(ow).enumerate() {
                        let start = (i * s + u) * g.in_w + v;
                        if s == 1 {
                            axpy(wv, &in_c[start..start + ow], out_row);
                        } else {
                            for (j, y) in out_row.iter_mut().enumerate() {
                                *y += wv * in_c[start + j * s];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates the gradients of one sample into `grad_weight`, `grad_bias`
/// and (when given) `grad_input`.
pub fn conv2d_backward_sample<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    mut grad_input: Option<&mut [T]>,
) {
    let (oh, ow, s) = (g.out_h, g.out_w, g.stride);
    let plane = g.in_h * g.in_w;
    let mut row_buf = vec![T::zero(); ow];
    for (o, g_o) in grad_out.chunks_exact(oh * ow).enumerate() {
        grad_bias[o] += g_o.iter().fold(T::zero(), |acc, &x| acc + x);
        for c in 0..g.in_channels {
            let in_c = &input[c * plane..(c + 1) * plane];
            for u in 0..g.kernel_h {
                for v in 0..g.kernel_w {
                    let widx = ((o * g.in_channels + c) * g.kernel_h + u) * g.kernel_w + v;
                    let mut acc = T::zero();
                    for (i, g_row) in g_o.chunks_exact(ow).enumerate() {
                        let start = (i * s + u) * g.in_w + v;
                        if s == 1 {
                            acc += dot(g_row, &in_c[start..start + ow]);
                        } else {
                            for (j, slot) in row_buf.iter_mut().enumerate() {
                                *slot = in_c[start + j * s];
                            }
                            acc += dot(g_row, &row_buf);
                        }
                    }
                    grad_weight[widx] += acc;

                    if let Some(gin) = grad_input.as_deref_mut() {
                        let wv = weight[widx];
                        let gin_c = &mut gin[c * plane..(c + 1) * plane];
                        for (i, g_row) in g_o.chunks_exact(ow).enumerate() {
                            let start = (i * s + u) * g.in_w + v;
                            if s == 1 {
                                axpy(wv, g_row, &mut gin_c[start..start + ow]);
                            } else {
                                for (j, &gv) in g_row.iter().enumerate() {
                                    gin_c[start + j * s] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Valid convolution of a single `[C_in, H, W]` image.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::from_tensors(input.shape(), weight, stride)?;
    if bias.shape() != [g.out_channels] {
        return Err(Error::mismatch("conv2d", [g.out_channels], bias.shape()));
    }
    let mut out = Tensor::zeros(&g.output_shape())?;
    conv2d_forward_sample(&g, input.data(), weight.data(), bias.data(), out.data_mut());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T: Scalar = f64> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a single-image convolution given the forward input and the
/// upstream gradient `grad_out` of shape `[C_out, H', W']`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::from_tensors(input.shape(), weight, stride)?;
    if grad_out.shape() != g.output_shape() {
        return Err(Error::mismatch("conv2d_backward", g.output_shape(), grad_out.shape()));
    }
    let mut gi = Tensor::zeros(input.shape())?;
    let mut gw = Tensor::zeros(weight.shape())?;
    let mut gb = Tensor::zeros(&[g.out_channels])?;
    conv2d_backward_sample(
        &g,
        input.data(),
        weight.data(),
        grad_out.data(),
        gw.data_mut(),
        gb.data_mut(),
        Some(gi.data_mut()),
    );
    Ok(ConvGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

/// Geometry of max pooling on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    pub fn new(input: [usize; 3], window: usize, stride: usize) -> Result<Self> {
        let [channels, in_h, in_w] = input;
        match (valid_extent(in_h, window, stride), valid_extent(in_w, window, stride)) {
            (Some(out_h), Some(out_w)) => Ok(Self {
                channels,
                in_h,
                in_w,
                window,
                stride,
                out_h,
                out_w,
            }),
            _ => Err(Error::InvalidShape {
                shape: input.to_vec(),
                reason: format!(
                    "{window}x{window} pooling with stride {stride} does not divide the input"
                ),
            }),
        }
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.channels * self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.channels, self.out_h, self.out_w]
    }
}

/// Max pooling of one sample. `indices` receives, per output element, the
/// row-major offset `u * window + v` of the winning element inside its
/// window; ties go to the smallest offset.
pub fn maxpool_forward_sample<T: Scalar>(
    g: &PoolGeometry,
    input: &[T],
    out: &mut [T],
    indices: &mut [u32],
) {
    let plane = g.in_h * g.in_w;
    let mut k = 0;
    for c in 0..g.channels {
        let in_c = &input[c * plane..(c + 1) * plane];
        for i in 0..g.out_h {
            for j in 0..g.out_w {
                let (y0, x0) = (i * g.stride, j * g.stride);
                let mut best = in_c[y0 * g.in_w + x0];
                let mut arg = 0u32;
                for u in 0..g.window {
                    for v in 0..g.window {
                        let x = in_c[(y0 + u) * g.in_w + x0 + v];
                        if x > best {
                            best = x;
                            arg = (u * g.window + v) as u32;
                        }
                    }
                }
                out[k] = best;
                indices[k] = arg;
                k += 1;
            }
        }
    }
}

/// Routes each upstream gradient to its window's argmax, accumulating into
/// `grad_input`.
pub fn maxpool_backward_sample<T: Scalar>(
    g: &PoolGeometry,
    indices: &[u32],
    grad_out: &[T],
    grad_input: &mut [T],
) {
    let plane = g.in_h * g.in_w;
    let mut k = 0;
    for c in 0..g.channels {
        for i in 0..g.out_h {
            for j in 0..g.out_w {
                let arg = indices[k] as usize;
                let (u, v) = (arg / g.window, arg % g.window);
                grad_input[c * plane + (i * g.stride + u) * g.in_w + j * g.stride + v] += grad_out[k];
                k += 1;
            }
        }
    }
}

/// Argmax positions recorded by [`maxpool_forward`], one per output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub geometry: PoolGeometry,
    pub offsets: Vec<u32>,
}

pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndices)> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::mismatch("maxpool", "[C, H, W] input", input.shape()));
    };
    let g = PoolGeometry::new([c, h, w], window, stride)?;
    let mut out = Tensor::zeros(&g.output_shape())?;
    let mut offsets = vec![0; g.output_len()];
    maxpool_forward_sample(&g, input.data(), out.data_mut(), &mut offsets);
    Ok((
        out,
        PoolIndices {
            geometry: g,
            offsets,
        },
    ))
}

pub fn maxpool_backward<T: Scalar>(indices: &PoolIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let g = &indices.geometry;
    if grad_out.shape() != g.output_shape() {
        return Err(Error::mismatch("maxpool_backward", g.output_shape(), grad_out.shape()));
    }
    let mut gi = Tensor::zeros(&[g.channels, g.in_h, g.in_w])?;
    maxpool_backward_sample(g, &indices.offsets, grad_out.data(), gi.data_mut());
    Ok(gi)
}

/// Rows of a 1-D or 2-D dense operand: `[in]` is one row.
fn dense_rows(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [n] => Some((1, n)),
        [b, n] => Some((b, n)),
        _ => None,
    }
}

/// Batched affine map `pre[b] = weight * input[b] + bias` over flat row-major
/// buffers. Each output is accumulated from its bias over ascending input
/// index.
pub fn dense_affine_batch<T: Scalar>(
    input: &[T],
    batch: usize,
    weight: &[T],
    bias: &[T],
    pre: &mut [T],
) {
    let out_f = bias.len();
    let in_f = weight.len() / out_f;
    debug_assert_eq!(input.len(), batch * in_f);
    // weight^T so the inner loop runs over contiguous outputs
    let mut wt = vec![T::zero(); in_f * out_f];
    for (o, row) in weight.chunks_exact(in_f).enumerate() {
        for (i, &w) in row.iter().enumerate() {
            wt[i * out_f + o] = w;
        }
    }
    for row in pre.chunks_exact_mut(out_f) {
        row.copy_from_slice(bias);
    }
    // Keep a block of weight^T rows hot in cache while sweeping the batch.
    const BLOCK: usize = 32;
    for i0 in (0..in_f).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(in_f);
        for (x, p) in input.chunks_exact(in_f).zip(pre.chunks_exact_mut(out_f)) {
            for i in i0..i1 {
                axpy(x[i], &wt[i * out_f..(i + 1) * out_f], p);
            }
        }
    }
}

/// Backward pass of the batched affine map given `delta = dL/dpre`.
/// Accumulates into `grad_weight` and `grad_bias` and, when given, writes
/// `grad_input`.
pub fn dense_affine_backward_batch<T: Scalar>(
    input: &[T],
    weight: &[T],
    delta: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_input: Option<&mut [T]>,
) {
    let out_f = grad_bias.len();
    let in_f = weight.len() / out_f;
    for d in delta.chunks_exact(out_f) {
        for (gb, &dv) in grad_bias.iter_mut().zip(d) {
            *gb += dv;
        }
    }
    for (o, gw_row) in grad_weight.chunks_exact_mut(in_f).enumerate() {
        for (x, d) in input.chunks_exact(in_f).zip(delta.chunks_exact(out_f)) {
            axpy(d[o], x, gw_row);
        }
    }
    if let Some(gi) = grad_input {
        gi.fill(T::zero());
        for (o, w_row) in weight.chunks_exact(in_f).enumerate() {
            for (gi_row, d) in gi.chunks_exact_mut(in_f).zip(delta.chunks_exact(out_f)) {
                axpy(d[o], w_row, gi_row);
            }
        }
    }
}

fn check_dense<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let (batch, in_f) = dense_rows(input.shape())
        .ok_or_else(|| Error::mismatch("dense", "[in] or [B, in] input", input.shape()))?;
    let &[out_f, w_in] = weight.shape() else {
        return Err(Error::mismatch("dense", "[out, in] weight", weight.shape()));
    };
    if w_in != in_f {
        return Err(Error::mismatch("dense", format!("weight with {in_f} columns"), weight.shape()));
    }
    if bias.shape() != [out_f] {
        return Err(Error::mismatch("dense", [out_f], bias.shape()));
    }
    Ok((batch, in_f, out_f))
}

fn dense_out_shape(input: &[usize], out_f: usize) -> Vec<usize> {
    if input.len() == 1 {
        vec![out_f]
    } else {
        vec![input[0], out_f]
    }
}

/// `activation(weight * input + bias)`, or the affine part alone when
/// `activation` is `None`. Accepts `[in]` or a batch `[B, in]`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Option<ActivationKind>,
) -> Result<Tensor<T>> {
    let (batch, _, out_f) = check_dense(input, weight, bias)?;
    let mut pre = Tensor::zeros(&dense_out_shape(input.shape(), out_f))?;
    dense_affine_batch(input.data(), batch, weight.data(), bias.data(), pre.data_mut());
    if let Some(act) = activation {
        pre.map_inplace(|x| act.apply(x));
    }
    Ok(pre)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T: Scalar = f64> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`dense_forward`], chaining through the activation
/// derivative evaluated at the recomputed pre-activation.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Option<ActivationKind>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (batch, _, out_f) = check_dense(input, weight, bias)?;
    let out_shape = dense_out_shape(input.shape(), out_f);
    if grad_out.shape() != out_shape.as_slice() {
        return Err(Error::mismatch("dense_backward", out_shape, grad_out.shape()));
    }
    let mut delta = grad_out.clone();
    if let Some(act) = activation {
        let mut pre = vec![T::zero(); batch * out_f];
        dense_affine_batch(input.data(), batch, weight.data(), bias.data(), &mut pre);
        for (d, &p) in delta.data_mut().iter_mut().zip(&pre) {
            *d *= act.derivative(p);
        }
    }
    let mut gi = Tensor::zeros(input.shape())?;
    let mut gw = Tensor::zeros(weight.shape())?;
    let mut gb = Tensor::zeros(bias.shape())?;
    dense_affine_backward_batch(
        input.data(),
        weight.data(),
        delta.data(),
        gw.data_mut(),
        gb.data_mut(),
        Some(gi.data_mut()),
    );
    Ok(DenseGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_output_extent() {
        let x: Tensor = Tensor::full(&[1, 28, 28], 0.5).unwrap();
        let w: Tensor = Tensor::full(&[10, 1, 5, 5], 0.01).unwrap();
        let b: Tensor = Tensor::zeros(&[10]).unwrap();
        let y = conv2d_forward(&x, &w, &b, 1).unwrap();
        assert_eq!(y.shape(), &[10, 24, 24]);
    }

    #[test]
    fn conv_zero_weights_give_bias() {
        let x: Tensor = Tensor::full(&[2, 6, 6], 3.0).unwrap();
        let w: Tensor = Tensor::zeros(&[3, 2, 3, 3]).unwrap();
        let b = t(&[3], vec![0.5, -1.0, 2.0]);
        let y = conv2d_forward(&x, &w, &b, 1).unwrap();
        for (o, plane) in y.data().chunks(16).enumerate() {
            assert!(plane.iter().all(|&v| v == b.data()[o]));
        }
    }

    #[test]
    fn conv_rejects_non_tiling_stride() {
        let x: Tensor = Tensor::zeros(&[1, 6, 6]).unwrap();
        let w: Tensor = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        let b: Tensor = Tensor::zeros(&[1]).unwrap();
        assert!(matches!(
            conv2d_forward(&x, &w, &b, 2),
            Err(Error::InvalidShape { .. })
        ));
        assert!(conv2d_forward(&x, &w, &b, 3).is_ok());
    }

    #[test]
    fn conv_backward_bias_and_zero_grad() {
        let x = t(&[1, 4, 4], (0..16).map(|i| i as f64 / 7.0).collect());
        let w = t(&[2, 1, 3, 3], (0..18).map(|i| (i as f64 - 9.0) / 10.0).collect());
        let go = t(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.25, 0.0]);
        let g = conv2d_backward(&x, &w, 1, &go).unwrap();
        assert_eq!(g.bias.data(), &[10.0, -0.25]);

        let zero: Tensor = Tensor::zeros(&[2, 2, 2]).unwrap();
        let g = conv2d_backward(&x, &w, 1, &zero).unwrap();
        assert!(g.input.data().iter().chain(g.weight.data()).chain(g.bias.data()).all(|&v| v == 0.0));

        assert!(conv2d_backward(&x, &w, 1, &t(&[2, 3, 3], vec![0.0; 18])).is_err());
    }

    #[test]
    fn pool_single_window() {
        let x = t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (y, idx) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.offsets, vec![3]);

        let gi = maxpool_backward(&idx, &t(&[1, 1, 1], vec![1.0])).unwrap();
        assert_eq!(gi.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn pool_constant_input_ties() {
        let x: Tensor = Tensor::full(&[3, 4, 4], 0.7).unwrap();
        let (y, idx) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.7));
        assert!(idx.offsets.iter().all(|&i| i == 0));
    }

    #[test]
    fn pool_shapes() {
        let x: Tensor = Tensor::zeros(&[10, 24, 24]).unwrap();
        let (y, _) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[10, 12, 12]);

        let odd: Tensor = Tensor::zeros(&[1, 5, 4]).unwrap();
        assert!(matches!(maxpool_forward(&odd, 2, 2), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn dense_identity_and_shapes() {
        let x = t(&[3], vec![1.0, -2.0, 0.5]);
        let y = dense_forward(&x, &Tensor::eye(3).unwrap(), &Tensor::zeros(&[3]).unwrap(), None).unwrap();
        assert_eq!(y, x);

        let x: Tensor = Tensor::full(&[2000], 0.1).unwrap();
        let w: Tensor = Tensor::full(&[500, 2000], 0.001).unwrap();
        let b: Tensor = Tensor::zeros(&[500]).unwrap();
        let y = dense_forward(&x, &w, &b, Some(ActivationKind::ReLU)).unwrap();
        assert_eq!(y.shape(), &[500]);

        assert!(dense_forward(&x, &w, &Tensor::zeros(&[499]).unwrap(), None).is_err());
    }

    #[test]
    fn dense_backward_affine_is_outer_product() {
        let x = t(&[3], vec![1.0, -2.0, 0.5]);
        let w = t(&[2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
        let b = t(&[2], vec![0.0, 1.0]);
        let go = t(&[2], vec![2.0, -1.0]);
        let g = dense_backward(&x, &w, &b, None, &go).unwrap();
        assert_eq!(g.weight.data(), &[2.0, -4.0, 1.0, -1.0, 2.0, -0.5]);
        assert_eq!(g.bias, go);
    }

    #[test]
    fn dense_backward_zero_input() {
        let x: Tensor = Tensor::zeros(&[3]).unwrap();
        let w = t(&[2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
        let b = t(&[2], vec![0.3, -1.2]);
        let go = t(&[2], vec![2.0, -1.0]);
        let act = ActivationKind::NGauss;
        let g = dense_backward(&x, &w, &b, Some(act), &go).unwrap();
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        let expected: Vec<f64> = go
            .data()
            .iter()
            .zip(b.data())
            .map(|(&gv, &bv)| gv * act.derivative(bv))
            .collect();
        assert_eq!(g.bias.data(), expected.as_slice());
    }
}
