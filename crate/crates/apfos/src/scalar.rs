//! Scalar abstraction shared by plain `f64` values and tape-tracked variables.
//!
//! Everything downstream of the tape (jets, network layers, loss residuals)
//! is written once against this trait. Instantiated with `f64` it evaluates
//! values only; instantiated with [`crate::tape::Var`] the same code records
//! the expression on a tape for reverse-mode differentiation.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// The plain numeric value.
    fn val(self) -> f64;

    /// `c * self` with a constant coefficient.
    fn scale(self, c: f64) -> Self;

    /// `self + c` with a constant offset.
    fn shift(self, c: f64) -> Self;

    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn square(self) -> Self;

    /// Left-to-right sum. Panics on an empty slice for tracked variables.
    fn sum(terms: &[Self]) -> Self;

    /// `sum_i c_i * x_i + bias`, accumulated left to right.
    fn lincomb(pairs: &[(Self, f64)], bias: f64) -> Self;

    /// `sum_i a_i * b_i`, accumulated left to right.
    fn dot(a: &[Self], b: &[Self]) -> Self;

    /// `sum_i a_i * b_i + bias`, accumulated left to right with the bias last.
    fn dot_bias(a: &[Self], b: &[Self], bias: Self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn val(self) -> f64 {
        self
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        c * self
    }

    #[inline]
    fn shift(self, c: f64) -> Self {
        self + c
    }

    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }

    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }

    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    #[inline]
    fn square(self) -> Self {
        self * self
    }

    fn sum(terms: &[Self]) -> Self {
        let mut acc = 0.0;
        for t in terms {
            acc += t;
        }
        acc
    }

    fn lincomb(pairs: &[(Self, f64)], bias: f64) -> Self {
        let mut acc = 0.0;
        for (x, c) in pairs {
            acc += c * x;
        }
        acc + bias
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        acc
    }

    fn dot_bias(a: &[Self], b: &[Self], bias: Self) -> Self {
        assert_eq!(a.len(), b.len(), "dot_bias: length mismatch");
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        acc + bias
    }
}
