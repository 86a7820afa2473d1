//! Gradients of the training losses.
//!
//! Losses implement [`ScalarLoss`], which is generic over [`Real`]: the same
//! code path produces plain values and reverse-mode gradients. Sampling noise
//! is always an explicit input of a loss, so a loss is a deterministic
//! function of its parameter vector.

mod real;
mod tape;

use serde::{Deserialize, Serialize};

pub use real::{inverse_softplus, Real};
pub use tape::{Adjoints, Tape, Var};

use crate::error::{Error, Result};

/// A named contiguous run of coordinates inside a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Stable index map for a flattened model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamIndex {
    pub blocks: Vec<ParamBlock>,
}

impl ParamIndex {
    pub fn push(&mut self, name: impl Into<String>, len: usize) {
        let start = self.total();
        self.blocks.push(ParamBlock {
            name: name.into(),
            start,
            len,
        });
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start + b.len)
    }

    /// Block name and offset within the block for a flat coordinate.
    pub fn locate(&self, flat: usize) -> Option<(&str, usize)> {
        self.blocks
            .iter()
            .find(|b| flat >= b.start && flat < b.start + b.len)
            .map(|b| (b.name.as_str(), flat - b.start))
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Flattened trainable scalars of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub index: ParamIndex,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, index: ParamIndex) -> Self {
        assert_eq!(values.len(), index.total(), "values do not match index map");
        Self { values, index }
    }

    /// A vector with a single block, handy for tests and ad-hoc losses.
    pub fn anonymous(values: Vec<f64>) -> Self {
        let mut index = ParamIndex::default();
        index.push("x", values.len());
        Self { values, index }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.index
            .block(name)
            .map(|b| &self.values[b.start..b.start + b.len])
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same index, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            index: self.index.clone(),
        }
    }
}

/// A scalar function of a flat parameter vector.
pub trait ScalarLoss {
    fn eval<T: Real>(&self, params: &[T]) -> T;
}

/// Plain evaluation of a loss.
pub fn value(loss: &impl ScalarLoss, at: &ParamVector) -> f64 {
    loss.eval(&at.values)
}

/// Reverse-mode gradient of `loss` at `at`. Returns the loss value too.
pub fn value_and_grad(loss: &impl ScalarLoss, at: &ParamVector) -> Result<(f64, ParamVector)> {
    let tape = Tape::new();
    let vars = tape.vars(&at.values);
    let out = loss.eval(&vars);
    let v = out.value();
    if !v.is_finite() {
        return Err(Error::NonFinite {
            what: format!("loss value {v}"),
            index: at.index.clone(),
        });
    }
    let g = tape.backward(out).wrt_all(&vars);
    if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
        let (block, offset) = at.index.locate(bad).unwrap_or(("?", bad));
        return Err(Error::NonFinite {
            what: format!("gradient coordinate {block}[{offset}]"),
            index: at.index.clone(),
        });
    }
    Ok((v, at.with_values(g)))
}

pub fn grad(loss: &impl ScalarLoss, at: &ParamVector) -> Result<ParamVector> {
    value_and_grad(loss, at).map(|(_, g)| g)
}

/// Per-coordinate result of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub checked: bool,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub coords: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl FdReport {
    pub fn checked_count(&self) -> usize {
        self.coords.iter().filter(|c| c.checked).count()
    }
}

/// Magnitude below which a coordinate is excluded from the relative check.
pub const FD_MIN_MAGNITUDE: f64 = 1e-6;

/// Compares reverse-mode gradients with central differences of step `h`.
pub fn finite_diff_check(
    loss: &impl ScalarLoss,
    at: &ParamVector,
    h: f64,
    tol: f64,
) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    let analytic = grad(loss, at)?;
    let mut x = at.values.clone();
    let mut coords = Vec::with_capacity(x.len());
    let mut max_rel: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up: f64 = loss.eval(&x);
        x[i] = orig - h;
        let down: f64 = loss.eval(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.values[i];
        let scale = a.abs().max(numeric.abs());
        let checked = scale > FD_MIN_MAGNITUDE;
        let rel_error = if checked {
            (a - numeric).abs() / scale
        } else {
            0.0
        };
        max_rel = max_rel.max(rel_error);
        coords.push(CoordinateCheck {
            index: i,
            analytic: a,
            numeric,
            rel_error,
            checked,
        });
    }
    Ok(FdReport {
        coords,
        max_rel_error: max_rel,
        tol,
        passed: max_rel <= tol,
    })
}
