//! Stochastic recurrent sequence generator.
//!
//! Starting from `h₀ = 0`, each step reads a Gaussian head off the hidden
//! state and draws the next inter-arrival time and mark with the
//! reparameterization `raw = mean + softplus(s) ⊙ ε`:
//!
//! ```text
//! Δt   = softplus(raw₀) + 1e-6
//! mark = 2π · logistic(raw_{1..d})
//! ```
//!
//! The new event `(t_prev + Δt, mark)` is fed back through an LSTM cell.
//! Generation stops at the first event that would land at or past the
//! horizon. For fixed noise `ε` every event is a smooth function of the
//! parameters.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::events::{Event, Sequence};
use crate::gradients::{inverse_softplus, ParamIndex, ParamVector, Real};
use crate::nn::{LstmShape, MlpShape};

/// Smallest inter-arrival time the generator can emit.
pub const MIN_INTERVAL: f64 = 1e-6;

/// Hard cap on events per generated sequence.
pub const MAX_EVENTS_CAP: usize = 10_000;

/// Generator parameters φ: LSTM cell weights followed by the linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub hidden: usize,
    pub mark_dim: usize,
    #[serde(with = "codec::f64_vec")]
    pub weights: Vec<f64>,
}

impl GeneratorParams {
    pub fn init(mark_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self {
            hidden,
            mark_dim,
            weights: Vec::new(),
        };
        let mut w = p.lstm_shape().init(rng);
        w.extend(p.head_shape().init(rng));
        p.weights = w;
        p
    }

    pub fn from_weights(mark_dim: usize, hidden: usize, weights: Vec<f64>) -> Result<Self> {
        let p = Self {
            hidden,
            mark_dim,
            weights,
        };
        let expected = p.lstm_shape().param_count() + p.head_shape().param_count();
        if p.weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: p.weights.len(),
            });
        }
        Ok(p)
    }

    pub fn lstm_shape(&self) -> LstmShape {
        LstmShape {
            input: self.mark_dim + 1,
            hidden: self.hidden,
        }
    }

    /// Linear head `ℝ^p → ℝ^{2(d+1)}`: means, then pre-softplus scales.
    pub fn head_shape(&self) -> MlpShape {
        MlpShape::new(vec![self.hidden, 2 * (self.mark_dim + 1)])
    }

    pub fn index(&self) -> ParamIndex {
        let mut index = ParamIndex::default();
        index.push("lstm", self.lstm_shape().param_count());
        index.push("head", self.head_shape().param_count());
        index
    }

    pub fn flatten(&self) -> ParamVector {
        ParamVector::new(self.weights.clone(), self.index())
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        Self::from_weights(self.mark_dim, self.hidden, flat.to_vec())
    }

    fn head_bias_offset(&self) -> usize {
        let head = self.head_shape();
        self.lstm_shape().param_count() + head.output_dim() * head.input_dim()
    }

    /// Head biases: `d + 1` means followed by `d + 1` pre-scales.
    pub fn head_bias(&self) -> &[f64] {
        &self.weights[self.head_bias_offset()..]
    }

    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        let off = self.head_bias_offset();
        &mut self.weights[off..]
    }

    /// Sets the inter-arrival mean bias so that the first interval has
    /// expectation `mean_interval` under the current scale bias.
    pub fn calibrate_first_interval(&mut self, mean_interval: f64) -> Result<()> {
        if !(mean_interval > MIN_INTERVAL && mean_interval.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mean interval {mean_interval} must exceed {MIN_INTERVAL}"
            )));
        }
        let d1 = self.mark_dim + 1;
        let sigma = self.head_bias()[d1].softplus();
        let target = mean_interval - MIN_INTERVAL;
        let expected = |b: f64| gaussian_expectation(|e| (b + sigma * e).softplus());
        let (mut lo, mut hi) = (inverse_softplus(target) - 20.0, inverse_softplus(target) + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if expected(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.head_bias_mut()[0] = 0.5 * (lo + hi);
        Ok(())
    }
}

/// `E[f(ε)]` for standard normal ε by the trapezoid rule on `[-10, 10]`.
fn gaussian_expectation(f: impl Fn(f64) -> f64) -> f64 {
    let n = 4000;
    let h = 20.0 / n as f64;
    let norm = (TAU).sqrt();
    (0..=n)
        .map(|j| {
            let e = -10.0 + h * j as f64;
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            w * f(e) * (-0.5 * e * e).exp() / norm
        })
        .sum::<f64>()
        * h
}

/// Recurrent state between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct GenState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
    pub t_prev: T,
}

impl<T: Real> GenState<T> {
    pub fn initial(hidden: usize, zero: T) -> Self {
        Self {
            h: vec![zero; hidden],
            c: vec![zero; hidden],
            t_prev: zero,
        }
    }
}

/// One generation step. Returns the event as a point `[t, m]`.
pub(crate) fn step_generic<T: Real>(
    params: &GeneratorParams,
    weights: &[T],
    state: &GenState<T>,
    noise: &[f64],
) -> (Vec<T>, GenState<T>) {
    let d1 = params.mark_dim + 1;
    debug_assert_eq!(noise.len(), d1);
    let lstm = params.lstm_shape();
    let (lstm_w, head_w) = weights.split_at(lstm.param_count());
    let head = params.head_shape().forward(head_w, &state.h);
    let mut point = Vec::with_capacity(d1);
    for (j, &eps) in noise.iter().enumerate() {
        let raw = head[j] + head[d1 + j].softplus() * eps;
        if j == 0 {
            point.push(state.t_prev + (raw.softplus() + MIN_INTERVAL));
        } else {
            point.push(raw.sigmoid() * TAU);
        }
    }
    let (h, c) = lstm.step(lstm_w, &point, &state.h, &state.c);
    let next = GenState {
        h,
        c,
        t_prev: point[0],
    };
    (point, next)
}

/// Unrolls the generator until the horizon or `max_events`.
/// `noise` is called once per step. Returns flat points and whether the
/// sequence was cut at `max_events`.
pub(crate) fn generate_points<T: Real>(
    params: &GeneratorParams,
    weights: &[T],
    zero: T,
    horizon: f64,
    max_events: usize,
    mut noise: impl FnMut() -> Vec<f64>,
) -> (Vec<T>, bool) {
    let mut state = GenState::initial(params.hidden, zero);
    let mut points = Vec::new();
    let mut count = 0;
    loop {
        if count == max_events {
            return (points, true);
        }
        let (point, next) = step_generic(params, weights, &state, &noise());
        if point[0].value() >= horizon {
            return (points, false);
        }
        points.extend_from_slice(&point);
        count += 1;
        state = next;
    }
}

pub fn sample_noise(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// One step with plain values.
pub fn step(
    state: &GenState<f64>,
    params: &GeneratorParams,
    noise: &[f64],
) -> Result<(Event, GenState<f64>)> {
    if noise.len() != params.mark_dim + 1 {
        return Err(Error::DimensionMismatch {
            expected: params.mark_dim + 1,
            got: noise.len(),
        });
    }
    let (point, next) = step_generic(params, &params.weights, state, noise);
    Ok((Event::new(point[0], point[1..].to_vec()), next))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub sequence: Sequence,
    pub truncated: bool,
}

/// Default event cap: ten times the expected count, at most
/// [`MAX_EVENTS_CAP`].
pub fn default_max_events(expected_count: f64) -> usize {
    let base = expected_count.max(1.0).ceil() as usize;
    (10 * base).min(MAX_EVENTS_CAP)
}

/// Samples one sequence on `[0, horizon)`.
pub fn generate(
    params: &GeneratorParams,
    horizon: f64,
    rng: &mut impl Rng,
    max_events: usize,
) -> Result<Generated> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
    }
    if max_events == 0 {
        return Err(Error::InvalidArgument("max_events must be at least 1".into()));
    }
    let dim = params.mark_dim + 1;
    let (points, truncated) =
        generate_points(params, &params.weights, 0.0, horizon, max_events.min(MAX_EVENTS_CAP), || {
            sample_noise(dim, rng)
        });
    let events = points
        .chunks(dim)
        .map(|p| Event::new(p[0], p[1..].to_vec()))
        .collect();
    Ok(Generated {
        sequence: Sequence {
            horizon,
            label: None,
            events,
        },
        truncated,
    })
}
