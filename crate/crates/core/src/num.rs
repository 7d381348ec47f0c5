use std::fmt;
use std::iter::Sum;

/// Scalar type for all numerical kernels: f64 in tests and verification,
/// f32 permitted for training speed.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + num_traits::NumCast
    + rand::distributions::uniform::SampleUniform
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn to_f64_lossy(self) -> f64 {
        num_traits::NumCast::from(self).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lifting an f64 constant into the scalar type.
pub fn s<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("constant not representable")
}

/// Log-sum-exp over a slice, stable under large negative values.
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let m = xs.iter().cloned().fold(S::neg_infinity(), S::max);
    if m == S::neg_infinity() {
        return S::neg_infinity();
    }
    let sum: S = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Two-argument log-sum-exp used by the dynamic-programming recursions.
pub fn lse2<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
