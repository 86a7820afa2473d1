//! Small dense building blocks evaluated over flat parameter slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gradients::Real;

/// Fully connected network: tanh between layers, linear output.
///
/// Parameters are stored layer by layer as a row-major `out × in` weight
/// matrix followed by the `out` biases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub sizes: Vec<usize>,
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self { sizes }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Uniform in `±1/√fan_in` for weights and biases alike.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in self.sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[1] * (w[0] + 1) {
                out.push(rng.random_range(-bound..=bound));
            }
        }
        out
    }

    pub fn forward<T: Real>(&self, params: &[T], input: &[T]) -> Vec<T> {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(input.len(), self.input_dim());
        let mut x = input.to_vec();
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[off..off + fan_out * fan_in];
            let biases = &params[off + fan_out * fan_in..off + fan_out * (fan_in + 1)];
            off += fan_out * (fan_in + 1);
            let mut y: Vec<T> = (0..fan_out)
                .map(|j| T::affine(biases[j], &weights[j * fan_in..(j + 1) * fan_in], &x))
                .collect();
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            x = y;
        }
        x
    }
}

/// Long short-term memory cell with input, forget, cell and output gates.
///
/// Layout: for each gate (in that order) a row-major `hidden × (input +
/// hidden)` matrix acting on `[x; h]`, then all `4 × hidden` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub input: usize,
    pub hidden: usize,
}

impl LstmShape {
    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden + 1)
    }

    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let bound = 1.0 / ((self.input + self.hidden) as f64).sqrt();
        (0..self.param_count())
            .map(|_| rng.random_range(-bound..=bound))
            .collect()
    }

    /// One step; returns the new `(h, c)`.
    pub fn step<T: Real>(&self, params: &[T], x: &[T], h: &[T], c: &[T]) -> (Vec<T>, Vec<T>) {
        debug_assert_eq!(params.len(), self.param_count());
        let (p, width) = (self.hidden, self.input + self.hidden);
        let mut xh = Vec::with_capacity(width);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h);
        let biases = &params[4 * p * width..];
        let gate = |g: usize, j: usize| {
            let row = (g * p + j) * width;
            T::affine(biases[g * p + j], &params[row..row + width], &xh)
        };
        let mut h_new = Vec::with_capacity(p);
        let mut c_new = Vec::with_capacity(p);
        for j in 0..p {
            let i = gate(0, j).sigmoid();
            let f = gate(1, j).sigmoid();
            let g = gate(2, j).tanh();
            let o = gate(3, j).sigmoid();
            let cj = f * c[j] + i * g;
            h_new.push(o * cj.tanh());
            c_new.push(cj);
        }
        (h_new, c_new)
    }
}
