//! Hidden-layer activations and the scheme codes that assign them to layers.
//!
//! N-Gauss is taken to be `tanh(x) / x`, continuously extended with value 1
//! at the origin. It is even, bell shaped and maps the reals onto `(0, 1]`.
//! Near zero the quotient is replaced by its even Taylor series to avoid the
//! `0 / 0` and the cancellation that precedes it.
//!
//! Softmax is not an [`ActivationKind`]: it only ever appears on the output
//! of the network and is evaluated inside the loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Below this magnitude N-Gauss and its derivative use the Taylor series.
pub const NGAUSS_SERIES_CUTOFF: f64 = 1e-4;

/// `tanh(x) / x`, with value 1 at `x = 0`.
#[inline]
pub fn ngauss<T: Scalar>(x: T) -> T {
    let a = x.abs();
    if a < T::cast(NGAUSS_SERIES_CUTOFF) {
        let a2 = a * a;
        // 1 - x^2/3 + 2x^4/15
        T::one() - a2 / T::cast(3.0) + T::cast(2.0) * a2 * a2 / T::cast(15.0)
    } else {
        a.tanh() / a
    }
}

/// Derivative of [`ngauss`]: `(x sech^2 x - tanh x) / x^2`.
#[inline]
pub fn ngauss_deriv<T: Scalar>(x: T) -> T {
    let a = x.abs();
    let d = if a < T::cast(NGAUSS_SERIES_CUTOFF) {
        // -2x/3 + 8x^3/15
        -T::cast(2.0) * a / T::cast(3.0) + T::cast(8.0) * a * a * a / T::cast(15.0)
    } else {
        let sech = a.cosh().recip();
        (a * sech * sech - a.tanh()) / (a * a)
    };
    if x < T::zero() {
        -d
    } else {
        d
    }
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// 1 for positive inputs, 0 otherwise (including at the kink).
#[inline]
pub fn relu_deriv<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Logistic sigmoid, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `x * sigmoid(x)`.
#[inline]
pub fn swish<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn swish_deriv<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s + x * s * (T::one() - s)
}

/// Numerically stable softmax of a non-empty vector.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    let mut out = logits.to_vec();
    softmax_inplace(&mut out);
    Ok(out)
}

/// In-place softmax; `row` must be non-empty.
pub(crate) fn softmax_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivationKind {
    NGauss,
    ReLU,
    Swish,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [Self::NGauss, Self::ReLU, Self::Swish];

    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Self::NGauss => ngauss(x),
            Self::ReLU => relu(x),
            Self::Swish => swish(x),
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Self::NGauss => ngauss_deriv(x),
            Self::ReLU => relu_deriv(x),
            Self::Swish => swish_deriv(x),
        }
    }

    /// Scheme-code letter.
    pub fn letter(self) -> char {
        match self {
            Self::NGauss => 'N',
            Self::ReLU => 'R',
            Self::Swish => 'S',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'N' => Some(Self::NGauss),
            'R' => Some(Self::ReLU),
            'S' => Some(Self::Swish),
            _ => None,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::NGauss => "N-Gauss",
            Self::ReLU => "ReLU",
            Self::Swish => "Swish",
        }
    }
}

/// Activations for (Conv1, Conv2, FC1), written as three letters over
/// `{N, R, S}`, e.g. `"NNS"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchemeCode {
    pub conv1: ActivationKind,
    pub conv2: ActivationKind,
    pub fc1: ActivationKind,
}

/// The nine schemes of the experiment grid, in table order.
pub const GRID_SCHEMES: [&str; 9] = [
    "NNN", "RRN", "SSN", "NNR", "RRR", "SSR", "NNS", "RRS", "SSS",
];

impl SchemeCode {
    pub fn new(conv1: ActivationKind, conv2: ActivationKind, fc1: ActivationKind) -> Self {
        Self { conv1, conv2, fc1 }
    }

    /// Grid schemes use the same activation in both convolutions.
    pub fn is_grid_scheme(&self) -> bool {
        self.conv1 == self.conv2
    }

    pub fn grid_schemes() -> Vec<SchemeCode> {
        GRID_SCHEMES
            .iter()
            .map(|c| c.parse().expect("static scheme table"))
            .collect()
    }

    /// All 27 codes in lexicographic order of (conv1, conv2, fc1).
    pub fn all() -> Vec<SchemeCode> {
        let mut out = Vec::with_capacity(27);
        for a in ActivationKind::ALL {
            for b in ActivationKind::ALL {
                for c in ActivationKind::ALL {
                    out.push(SchemeCode::new(a, b, c));
                }
            }
        }
        out
    }
}

pub fn parse_scheme(code: &str) -> Result<SchemeCode> {
    let chars: Vec<char> = code.chars().collect();
    if chars.len() != 3 {
        return Err(Error::SchemeParse {
            code: code.to_string(),
            position: None,
            reason: format!("expected 3 characters, found {}", chars.len()),
        });
    }
    let mut kinds = [ActivationKind::NGauss; 3];
    for (i, (&c, slot)) in chars.iter().zip(kinds.iter_mut()).enumerate() {
        *slot = ActivationKind::from_letter(c).ok_or_else(|| Error::SchemeParse {
            code: code.to_string(),
            position: Some(i + 1),
            reason: format!("character {c:?} at position {} is not one of N, R, S", i + 1),
        })?;
    }
    Ok(SchemeCode::new(kinds[0], kinds[1], kinds[2]))
}

impl FromStr for SchemeCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_scheme(s)
    }
}

impl fmt::Display for SchemeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            self.conv1.letter(),
            self.conv2.letter(),
            self.fc1.letter()
        )
    }
}

impl Serialize for SchemeCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SchemeCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
