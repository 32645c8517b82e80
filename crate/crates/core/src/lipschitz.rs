//! Numerical Lipschitz certification for scalar functions.
//!
//! The quantities checked here:
//!
//! * a Lipschitz constant estimated as the largest difference quotient
//!   `|f(x) - f(y)| / |x - y|` over a uniform grid plus seeded random pairs;
//! * the quotient bound `sup |f(x)/x| <= 2 + |f(1)|` on `[1, hi]`;
//! * for `f = tanh`, the composite constant `k + 2 + |f(1)|` bounding the
//!   Lipschitz constant of `tanh(x)/x` (N-Gauss) on `[1, +inf)`.
//!
//! The half-line `[1, +inf)` is truncated to `[1, hi]`. Both N-Gauss and its
//! derivative decay monotonically past `x = 1`, so the supremum sits at the
//! left end and the truncation does not hide a larger slope.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ngauss;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Multiplicative margin on the empirical Lipschitz constant of `tanh`.
pub const K_SAFETY_MARGIN: f64 = 1.05;
/// Analytic Lipschitz constant of `tanh` on the whole real line.
pub const TANH_ANALYTIC_K: f64 = 1.0;
pub const DEFAULT_HI: f64 = 1000.0;
pub const DEFAULT_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub function_name: String,
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub sample_count: usize,
    pub estimated_constant: f64,
    pub claimed_bound: Option<f64>,
    pub bound_satisfied: Option<bool>,
    /// `sup |f(x)/x|` over the grid on `[1, hi]`.
    pub quotient_sup: Option<f64>,
    /// `2 + |f(1)|`.
    pub quotient_bound: Option<f64>,
}

impl LipschitzReport {
    /// True when every bound carried by the report holds.
    pub fn all_satisfied(&self) -> bool {
        let quotient_ok = match (self.quotient_sup, self.quotient_bound) {
            (Some(s), Some(b)) => s <= b,
            _ => true,
        };
        self.bound_satisfied.unwrap_or(true) && quotient_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QuotientCheck<T: Scalar = f64> {
    pub sup: T,
    pub bound: T,
    pub ok: bool,
}

fn eval<T: Scalar>(f: &impl Fn(T) -> T, x: T) -> Result<T> {
    let y = f(x);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::Evaluation {
            x: x.to_f64_lossy(),
            value: y.to_f64_lossy(),
        })
    }
}

/// `k`-th point of the `n`-point uniform grid on `[lo, hi]`.
#[inline]
fn grid_point<T: Scalar>(lo: T, hi: T, k: usize, n: usize) -> T {
    if k + 1 == n {
        hi
    } else {
        lo + (hi - lo) * T::from_count(k) / T::from_count(n - 1)
    }
}

fn check_domain<T: Scalar>(lo: T, hi: T, n: usize) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!(
            "domain [{lo}, {hi}] must be finite with lo < hi"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    Ok(())
}

/// Largest difference quotient of `f` on `[lo, hi]`.
///
/// The pair set is the adjacent pairs of the `n`-point uniform grid and of
/// every coarser grid `n/2, n/4, ...` (down to 2 points), together with `n`
/// random pairs drawn from a ChaCha stream seeded by `seed`. Because the grid
/// chain for `2n` contains the chain for `n`, and the random pairs for `n` are
/// a prefix of those for `2n`, doubling `n` can never lower the estimate.
pub fn estimate_lipschitz<T: Scalar>(
    f: impl Fn(T) -> T,
    lo: T,
    hi: T,
    n: usize,
    seed: u64,
) -> Result<T> {
    check_domain(lo, hi, n)?;
    let mut best = T::zero();

    let mut m = n;
    while m >= 2 {
        let mut prev_x = lo;
        let mut prev_y = eval(&f, lo)?;
        for k in 1..m {
            let x = grid_point(lo, hi, k, m);
            let y = eval(&f, x)?;
            let dx = x - prev_x;
            if dx > T::zero() {
                best = best.max((y - prev_y).abs() / dx);
            }
            prev_x = x;
            prev_y = y;
        }
        m /= 2;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = hi - lo;
    for _ in 0..n {
        let x = lo + width * T::cast(rng.gen::<f64>());
        let y = lo + width * T::cast(rng.gen::<f64>());
        let dx = (x - y).abs();
        if dx > T::zero() {
            best = best.max((eval(&f, x)? - eval(&f, y)?).abs() / dx);
        }
    }
    Ok(best)
}

/// `sup |f(x)/x|` over the `n`-point grid on `[1, hi]` against `2 + |f(1)|`.
pub fn check_quotient_bound<T: Scalar>(
    f: impl Fn(T) -> T,
    hi: T,
    n: usize,
) -> Result<QuotientCheck<T>> {
    let one = T::one();
    if !(hi > one) {
        return Err(Error::InvalidInput(format!("hi = {hi} must exceed 1")));
    }
    check_domain(one, hi, n)?;
    let mut sup = T::zero();
    for k in 0..n {
        let x = grid_point(one, hi, k, n);
        sup = sup.max((eval(&f, x)? / x).abs());
    }
    let bound = T::cast(2.0) + eval(&f, one)?.abs();
    Ok(QuotientCheck {
        sup,
        bound,
        ok: sup <= bound,
    })
}

fn check_certify_args(hi: f64, n: usize) -> Result<()> {
    if !(hi > 1.0 && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("hi = {hi} must be finite and exceed 1")));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {n}")));
    }
    Ok(())
}

/// Empirical `k` for `tanh` on `[1, hi]`, inflated by the safety margin and
/// floored at the analytic constant.
pub fn tanh_constant(hi: f64, n: usize, seed: u64) -> Result<f64> {
    let k = estimate_lipschitz(f64::tanh, 1.0, hi, n, seed)?;
    Ok((k * K_SAFETY_MARGIN).max(TANH_ANALYTIC_K))
}

fn ngauss_report(
    estimate: f64,
    domain: (f64, f64),
    hi: f64,
    n: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    let k = tanh_constant(hi, n, seed)?;
    let quotient = check_quotient_bound(f64::tanh, hi, n)?;
    let claimed = k + 2.0 + 1.0_f64.tanh().abs();
    Ok(LipschitzReport {
        function_name: "ngauss".into(),
        domain_lo: domain.0,
        domain_hi: domain.1,
        sample_count: n,
        estimated_constant: estimate,
        claimed_bound: Some(claimed),
        bound_satisfied: Some(estimate <= claimed),
        quotient_sup: Some(quotient.sup),
        quotient_bound: Some(quotient.bound),
    })
}

/// Certifies N-Gauss on `[1, hi]` against `k + 2 + |tanh(1)|`.
pub fn certify_ngauss(hi: f64, n: usize, seed: u64) -> Result<LipschitzReport> {
    check_certify_args(hi, n)?;
    let estimate = estimate_lipschitz(ngauss, 1.0, hi, n, seed)?;
    ngauss_report(estimate, (1.0, hi), hi, n, seed)
}

/// Same certificate on the mirrored half-line `[-hi, -1]`.
///
/// Sample points are the negations of those used by [`certify_ngauss`], so
/// for the even N-Gauss the estimate is bitwise identical.
pub fn certify_ngauss_mirrored(hi: f64, n: usize, seed: u64) -> Result<LipschitzReport> {
    check_certify_args(hi, n)?;
    let estimate = estimate_lipschitz(|x: f64| ngauss(-x), 1.0, hi, n, seed)?;
    ngauss_report(estimate, (-hi, -1.0), hi, n, seed)
}

/// Lipschitz report for `tanh` itself on `[1, hi]`, checked against its
/// analytic constant 1.
pub fn certify_tanh(hi: f64, n: usize, seed: u64) -> Result<LipschitzReport> {
    check_certify_args(hi, n)?;
    let estimate = estimate_lipschitz(f64::tanh, 1.0, hi, n, seed)?;
    let quotient = check_quotient_bound(f64::tanh, hi, n)?;
    Ok(LipschitzReport {
        function_name: "tanh".into(),
        domain_lo: 1.0,
        domain_hi: hi,
        sample_count: n,
        estimated_constant: estimate,
        claimed_bound: Some(TANH_ANALYTIC_K),
        bound_satisfied: Some(estimate <= TANH_ANALYTIC_K),
        quotient_sup: Some(quotient.sup),
        quotient_bound: Some(quotient.bound),
    })
}
