//! Dense row-major tensors.
//!
//! A [`Tensor`] is a shape plus a flat buffer with the last index varying
//! fastest. Images use the channel-first `[C, H, W]` convention and batches
//! prepend a leading `B` axis. There is no broadcasting and no striding:
//! every operation either preserves shape or checks it explicitly.
//!
//! All reductions sum in ascending index order so results are bitwise
//! reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "shape has no dimensions".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("shape holds {len} elements but {} were given", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// `n`×`n` identity matrix.
    pub fn eye(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false: a valid tensor holds at least one element.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    fn flat_index(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(flat)
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        self.flat_index(index).map(|i| self.data[i])
    }

    pub fn get_mut(&mut self, index: &[usize]) -> Option<&mut T> {
        self.flat_index(index).map(move |i| &mut self.data[i])
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Applies `f` to every element, preserving shape.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    ///
    /// Each output element is accumulated from zero over ascending `k`,
    /// which makes the result bitwise identical to a naive triple loop.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = match self.shape[..] {
            [m, k] => (m, k),
            _ => return Err(Error::mismatch("matmul", "2-D left operand", &self.shape)),
        };
        let (k2, n) = match other.shape[..] {
            [k2, n] => (k2, n),
            _ => return Err(Error::mismatch("matmul", "2-D right operand", &other.shape)),
        };
        if k != k2 {
            return Err(Error::mismatch(
                "matmul",
                format!("right operand with {k} rows"),
                &other.shape,
            ));
        }
        let mut out = vec![T::zero(); m * n];
        for (a_row, c_row) in self.data.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
            for (&a, b_row) in a_row.iter().zip(other.data.chunks_exact(n)) {
                axpy(a, b_row, c_row);
            }
        }
        Self::from_vec(&[m, n], out)
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = match self.shape[..] {
            [r, c] => (r, c),
            _ => return Err(Error::mismatch("transpose", "2-D tensor", &self.shape)),
        };
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_vec(&[c, r], out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    /// Largest absolute elementwise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())),
        )
    }

    /// `self += alpha * other`, elementwise.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch("add_scaled", &self.shape, &other.shape));
        }
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for x in &mut self.data {
            *x *= alpha;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }
}

pub fn zeros<T: Scalar>(shape: &[usize]) -> Result<Tensor<T>> {
    Tensor::zeros(shape)
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.matmul(b)
}

pub fn elementwise_map<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    t.map(f)
}

/// `y += a * x` over equal-length slices.
#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
