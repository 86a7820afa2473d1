//! Reverse-mode tape.
//!
//! Each node records the indices of its operands together with the local
//! partial derivative with respect to each of them. Fused `affine` and `sum`
//! nodes keep recurrent and kernel computations from blowing up the node
//! count.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{sigmoid_f64, softplus_f64, Real};

#[derive(Default)]
struct TapeInner {
    // Node `i` owns `parents[offsets[i]..offsets[i + 1]]`.
    offsets: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl TapeInner {
    fn push(&mut self, edges: impl IntoIterator<Item = (u32, f64)>) -> u32 {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        for (p, d) in edges {
            self.parents.push(p);
            self.partials.push(d);
        }
        let idx = self.offsets.len() - 1;
        self.offsets.push(self.parents.len() as u32);
        idx as u32
    }

    fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

/// Recording context for one gradient evaluation.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(std::iter::empty());
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adjoints of every node with respect to `output`.
    pub fn backward(&self, output: Var<'_>) -> Adjoints {
        debug_assert!(std::ptr::eq(output.tape, self));
        let inner = self.inner.borrow();
        let n = inner.len();
        let mut adj = vec![0.0; n];
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let (lo, hi) = (inner.offsets[i] as usize, inner.offsets[i + 1] as usize);
            for e in lo..hi {
                adj[inner.parents[e] as usize] += g * inner.partials[e];
            }
        }
        Adjoints { adj }
    }

    fn node(&self, val: f64, edges: impl IntoIterator<Item = (u32, f64)>) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(edges);
        Var {
            tape: self,
            idx,
            val,
        }
    }
}

pub struct Adjoints {
    adj: Vec<f64>,
}

impl Adjoints {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adj[v.idx as usize]
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.val)
    }
}

impl<'t> Var<'t> {
    fn unary(self, val: f64, d: f64) -> Self {
        self.tape.node(val, [(self.idx, d)])
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        self.tape.node(val, [(self.idx, da), (other.idx, db)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn constant(self, c: f64) -> Self {
        self.tape.var(c)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.val);
        self.unary(s, s * (1.0 - s))
    }

    fn softplus(self) -> Self {
        self.unary(softplus_f64(self.val), sigmoid_f64(self.val))
    }

    fn floor_at(self, floor: f64) -> Self {
        if self.val < floor {
            self.tape.var(floor)
        } else {
            self
        }
    }

    fn affine(bias: Self, weights: &[Self], inputs: &[Self]) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        let val = weights
            .iter()
            .zip(inputs)
            .fold(bias.val, |acc, (w, x)| acc + w.val * x.val);
        let edges = std::iter::once((bias.idx, 1.0))
            .chain(weights.iter().zip(inputs).map(|(w, x)| (w.idx, x.val)))
            .chain(weights.iter().zip(inputs).map(|(w, x)| (x.idx, w.val)));
        bias.tape.node(val, edges)
    }

    fn sum(init: Self, terms: &[Self]) -> Self {
        let val = terms.iter().fold(init.val, |acc, t| acc + t.val);
        let edges = std::iter::once((init.idx, 1.0)).chain(terms.iter().map(|t| (t.idx, 1.0)));
        init.tape.node(val, edges)
    }
}
