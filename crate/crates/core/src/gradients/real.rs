//! Scalar abstraction shared by plain evaluation (`f64`) and taped
//! evaluation ([`Var`](super::Var)).
//!
//! Every model computation in this crate is written once against [`Real`]
//! and instantiated twice: with `f64` for inference and with tape variables
//! when a gradient is needed.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;

    /// A constant living in the same evaluation context as `self`.
    fn constant(self, c: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;

    /// `max(self, floor)`; below the floor the result is a constant.
    fn floor_at(self, floor: f64) -> Self;

    /// `bias + Σ weights[j] * inputs[j]` as one fused operation.
    fn affine(bias: Self, weights: &[Self], inputs: &[Self]) -> Self;

    /// `init + Σ terms`.
    fn sum(init: Self, terms: &[Self]) -> Self;
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_f64(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus for positive arguments.
pub fn inverse_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "inverse_softplus needs a positive argument");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn constant(self, c: f64) -> Self {
        c
    }

    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }

    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }

    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }

    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }

    #[inline]
    fn softplus(self) -> Self {
        softplus_f64(self)
    }

    #[inline]
    fn floor_at(self, floor: f64) -> Self {
        if self < floor {
            floor
        } else {
            self
        }
    }

    #[inline]
    fn affine(bias: Self, weights: &[Self], inputs: &[Self]) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        weights
            .iter()
            .zip(inputs)
            .fold(bias, |acc, (w, x)| acc + w * x)
    }

    #[inline]
    fn sum(init: Self, terms: &[Self]) -> Self {
        terms.iter().fold(init, |acc, t| acc + t)
    }
}
