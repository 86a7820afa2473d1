//! Alternating minimax optimization of the detector (θ) against the
//! generator (φ).
//!
//! `J(θ, φ)` is the mean log-likelihood of a real minibatch minus the mean
//! log-likelihood of a generated minibatch. Each outer iteration takes one
//! descent step on φ followed by `inner_steps` ascent steps on θ; every step
//! draws a fresh real minibatch, generated minibatch and Fourier features
//! from its own RNG stream, so a run is a pure function of data and config
//! and can be resumed mid-way with identical results.

use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::events::{validate, Sequence};
use crate::fourier::{FeatureNoise, FeatureView, FourierFeatureSet, SpectrumNet};
use crate::generator::{self, generate_points, sample_noise, GeneratorParams};
use crate::gradients::{value_and_grad, ParamVector, Real, ScalarLoss, Tape};
use crate::hawkes::{log_likelihood_generic, mark_volume, DetectorLayout, DetectorParams};
use crate::seeding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(alias = "M0")]
    pub outer_iterations: usize,
    #[serde(alias = "M1")]
    pub inner_steps: usize,
    #[serde(alias = "n_prime")]
    pub generated_batch: usize,
    #[serde(alias = "n_double_prime")]
    pub real_batch: usize,
    #[serde(alias = "D")]
    pub features: usize,
    pub lr_generator: f64,
    pub lr_detector: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub generator_hidden: usize,
    pub spectrum_hidden: Vec<usize>,
    pub noise_dim: usize,
    pub feature_dim: usize,
    pub initial_alpha: f64,
    pub max_events: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 1000,
            inner_steps: 5,
            generated_batch: 32,
            real_batch: 32,
            features: 20,
            lr_generator: 1e-3,
            lr_detector: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            clip_norm: None,
            generator_hidden: 32,
            spectrum_hidden: vec![32, 32],
            noise_dim: 2,
            feature_dim: 2,
            initial_alpha: 0.1,
            max_events: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("inner_steps", self.inner_steps),
            ("generated_batch", self.generated_batch),
            ("real_batch", self.real_batch),
            ("features", self.features),
            ("generator_hidden", self.generator_hidden),
            ("noise_dim", self.noise_dim),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.spectrum_hidden.contains(&0) {
            return Err(Error::InvalidArgument("spectrum layer widths must be positive".into()));
        }
        for (name, v) in [("lr_generator", self.lr_generator), ("lr_detector", self.lr_detector)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidArgument("Adam decay rates must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidArgument("adam_eps must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument("clip_norm must be positive".into()));
            }
        }
        if !(self.initial_alpha > 0.0 && self.initial_alpha.is_finite()) {
            return Err(Error::InvalidArgument("initial_alpha must be positive".into()));
        }
        if self.max_events == Some(0) {
            return Err(Error::InvalidArgument("max_events must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row per outer iteration; the θ columns describe the last inner step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub real_mean: f64,
    pub gen_mean: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_phi: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,J,real_mean,gen_mean,grad_norm_theta,grad_norm_phi")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.iteration, r.objective, r.real_mean, r.gen_mean, r.grad_norm_theta, r.grad_norm_phi
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// `real_mean − gen_mean` averaged over a centred window of `radius`.
    pub fn smoothed_gap(&self, iteration: usize, radius: usize) -> Option<f64> {
        let pos = self.records.iter().position(|r| r.iteration == iteration)?;
        let lo = pos.saturating_sub(radius);
        let hi = (pos + radius + 1).min(self.records.len());
        let window = &self.records[lo..hi];
        Some(window.iter().map(|r| r.real_mean - r.gen_mean).sum::<f64>() / window.len() as f64)
    }
}

/// Adaptive-moment optimizer state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    #[serde(with = "codec::f64_vec")]
    pub first_moment: Vec<f64>,
    #[serde(with = "codec::f64_vec")]
    pub second_moment: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }

    /// Moves `params` against the gradient, or along it when `ascend`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], ascend: bool) {
        debug_assert_eq!(params.len(), grad.len());
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let sign = if ascend { 1.0 } else { -1.0 };
        for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p += sign * self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn clip(grad: &mut [f64], limit: Option<f64>) {
    if let Some(c) = limit {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > c {
            grad.iter_mut().for_each(|g| *g *= c / norm);
        }
    }
}

/// Shape summary of a training set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataSummary {
    pub mark_dim: usize,
    pub horizon: f64,
    pub total_events: usize,
    pub total_time: f64,
}

impl DataSummary {
    /// Events per unit time.
    pub fn event_rate(&self) -> f64 {
        self.total_events as f64 / self.total_time
    }
}

/// Checks that every sequence is valid, normalized, and shares `d` and `T`.
pub fn summarize(data: &[Sequence]) -> Result<DataSummary> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    for (i, seq) in data.iter().enumerate() {
        let violations = validate(seq);
        if !violations.is_empty() {
            return Err(Error::Validation {
                line: Some(i + 1),
                violations,
            });
        }
    }
    let mark_dim = data.iter().find(|s| !s.is_empty()).map_or(0, |s| s.mark_dim());
    if let Some(s) = data.iter().find(|s| !s.is_empty() && s.mark_dim() != mark_dim) {
        return Err(Error::DimensionMismatch {
            expected: mark_dim,
            got: s.mark_dim(),
        });
    }
    let horizon = first.horizon;
    if data.iter().any(|s| (s.horizon - horizon).abs() > 1e-9 * horizon) {
        return Err(Error::InvalidArgument(
            "training sequences must share one horizon".into(),
        ));
    }
    let total_events: usize = data.iter().map(Sequence::len).sum();
    if total_events == 0 {
        return Err(Error::InvalidArgument("training set has no events".into()));
    }
    Ok(DataSummary {
        mark_dim,
        horizon,
        total_events,
        total_time: horizon * data.len() as f64,
    })
}

fn constants<T: Real>(zero: T, values: &[f64]) -> Vec<T> {
    values.iter().map(|&v| zero.constant(v)).collect()
}

fn mean<T: Real>(zero: T, terms: &[T]) -> T {
    T::sum(zero, terms) * (1.0 / terms.len() as f64)
}

/// `J` as a function of θ for fixed batches and recorded feature noise.
pub struct DetectorObjective<'a> {
    pub detector: &'a DetectorParams,
    pub noise: &'a FeatureNoise,
    pub real: &'a [Sequence],
    pub generated: &'a [Sequence],
}

/// Evaluates `ℓ(s; θ)` for every sequence with θ given as a flat vector.
fn likelihoods_in_theta<T: Real>(
    p: &DetectorParams,
    noise: &FeatureNoise,
    theta: &[T],
    batches: &[&[Sequence]],
) -> Vec<Vec<T>> {
    let slices = DetectorLayout::of(p).split(theta).expect("theta has detector layout");
    let zero = theta[0].constant(0.0);
    let draws = constants(zero, &noise.noise);
    let omegas = SpectrumNet::frequencies(&p.spectrum.shape, slices.spectrum, &draws);
    let view = FeatureView {
        omegas: &omegas,
        phases: &noise.phases,
        projection: slices.projection,
        feature_dim: p.spectrum.feature_dim(),
        point_dim: p.mark_dim() + 1,
    };
    let mu = slices.log_mu.exp();
    let alpha = slices.log_alpha.exp();
    batches
        .iter()
        .map(|batch| {
            batch
                .iter()
                .map(|s| {
                    let pts = constants(zero, &s.flat_points());
                    log_likelihood_generic(mu, alpha, &view, &pts, s.horizon)
                })
                .collect()
        })
        .collect()
}

impl DetectorObjective<'_> {
    /// `(J, real mean, generated mean)` for the given flat θ.
    fn parts<T: Real>(&self, theta: &[T]) -> (T, T, T) {
        let zero = theta[0].constant(0.0);
        let lls = likelihoods_in_theta(self.detector, self.noise, theta, &[self.real, self.generated]);
        let real = mean(zero, &lls[0]);
        let generated = mean(zero, &lls[1]);
        (real - generated, real, generated)
    }
}

impl ScalarLoss for DetectorObjective<'_> {
    fn eval<T: Real>(&self, theta: &[T]) -> T {
        self.parts(theta).0
    }
}

/// `ℓ(sequence; θ)` alone, for fixed feature noise.
pub struct SequenceLikelihood<'a> {
    pub detector: &'a DetectorParams,
    pub noise: &'a FeatureNoise,
    pub sequence: &'a Sequence,
}

impl ScalarLoss for SequenceLikelihood<'_> {
    fn eval<T: Real>(&self, theta: &[T]) -> T {
        let seq = std::slice::from_ref(self.sequence);
        likelihoods_in_theta(self.detector, self.noise, theta, &[seq])[0][0]
    }
}

/// Mean log-likelihood of real minus generated sequences under θ and `fs`.
pub fn objective(
    real: &[Sequence],
    generated: &[Sequence],
    detector: &DetectorParams,
    fs: &FourierFeatureSet,
) -> Result<f64> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::InvalidArgument("objective needs non-empty batches".into()));
    }
    let batch_mean = |batch: &[Sequence]| -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            total += crate::hawkes::log_likelihood(s, detector, fs)?;
        }
        Ok(total / batch.len() as f64)
    };
    Ok(batch_mean(real)? - batch_mean(generated)?)
}

/// The generated-batch part of `J` as a function of φ: `−mean ℓ(z(φ); θ)`
/// for a fixed detector and features, with one noise stream per sequence.
pub struct GeneratorObjective<'a> {
    pub generator: &'a GeneratorParams,
    pub detector: &'a DetectorParams,
    pub features: &'a FourierFeatureSet,
    pub horizon: f64,
    pub max_events: usize,
    pub noise_seeds: Vec<u64>,
}

impl GeneratorObjective<'_> {
    fn sequence_ll<T: Real>(&self, phi: &[T], seed: u64) -> T {
        let zero = phi[0].constant(0.0);
        let dim = self.generator.mark_dim + 1;
        let mut rng: ChaCha8Rng = seeding::rng(seed, &[]);
        let (points, _) = generate_points(self.generator, phi, zero, self.horizon, self.max_events, || {
            sample_noise(dim, &mut rng)
        });
        let omegas = constants(zero, &self.features.omegas);
        let projection = constants(zero, &self.detector.projection.data);
        let view = FeatureView {
            omegas: &omegas,
            phases: self.features.phases(),
            projection: &projection,
            feature_dim: self.features.feature_dim,
            point_dim: dim,
        };
        log_likelihood_generic(
            zero.constant(self.detector.mu),
            zero.constant(self.detector.alpha),
            &view,
            &points,
            self.horizon,
        )
    }

    /// Loss and gradient with one tape per generated sequence, evaluated in
    /// parallel and reduced in sequence order.
    pub fn value_and_grad_parallel(&self, at: &ParamVector) -> Result<(f64, ParamVector)> {
        let per_sequence: Vec<(f64, Vec<f64>)> = self
            .noise_seeds
            .par_iter()
            .map(|&seed| {
                let tape = Tape::new();
                let vars = tape.vars(&at.values);
                let ll = self.sequence_ll(&vars, seed);
                let g = tape.backward(ll).wrt_all(&vars);
                (ll.value(), g)
            })
            .collect();
        let n = per_sequence.len() as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; at.len()];
        for (ll, g) in per_sequence {
            value -= ll / n;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc -= gi / n;
            }
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("generator loss value {value}"),
                index: at.index.clone(),
            });
        }
        if let Some(bad) = grad.iter().position(|x| !x.is_finite()) {
            let (block, offset) = at.index.locate(bad).unwrap_or(("?", bad));
            return Err(Error::NonFinite {
                what: format!("gradient coordinate {block}[{offset}]"),
                index: at.index.clone(),
            });
        }
        Ok((value, at.with_values(grad)))
    }
}

impl ScalarLoss for GeneratorObjective<'_> {
    fn eval<T: Real>(&self, phi: &[T]) -> T {
        let zero = phi[0].constant(0.0);
        let lls: Vec<T> = self.noise_seeds.iter().map(|&s| self.sequence_ll(phi, s)).collect();
        -mean(zero, &lls)
    }
}

/// Everything needed to continue a run: parameters, optimizer moments and
/// the history so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub detector: DetectorParams,
    pub generator: GeneratorParams,
    pub detector_opt: Adam,
    pub generator_opt: Adam,
    pub iterations_done: usize,
    pub history: TrainHistory,
    pub horizon: f64,
    pub max_events: usize,
}

const INIT_STREAM: u64 = 10;
const STEP_STREAM: u64 = 11;
const FREEZE_STREAM: u64 = 12;

/// Initial parameters: μ at the empirical rate per unit mark volume,
/// α = `initial_alpha`, random networks, and a generator whose first
/// inter-arrival matches the data's mean gap.
pub fn initialize(data: &[Sequence], config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    let summary = summarize(data)?;
    let mut rng = seeding::rng(config.seed, &[INIT_STREAM]);
    let detector = DetectorParams::init(
        summary.mark_dim,
        summary.event_rate() / mark_volume(summary.mark_dim),
        config.initial_alpha,
        config.noise_dim,
        &config.spectrum_hidden,
        config.feature_dim,
        &mut rng,
    )?;
    let mut generator = GeneratorParams::init(summary.mark_dim, config.generator_hidden, &mut rng);
    generator.calibrate_first_interval(1.0 / summary.event_rate())?;
    let max_events = config
        .max_events
        .unwrap_or_else(|| generator::default_max_events(summary.event_rate() * summary.horizon));
    let adam = |len: usize, lr: f64| Adam::new(len, lr, config.adam_beta1, config.adam_beta2, config.adam_eps);
    Ok(TrainState {
        detector_opt: adam(detector.index().total(), config.lr_detector),
        generator_opt: adam(generator.weights.len(), config.lr_generator),
        detector,
        generator,
        iterations_done: 0,
        history: TrainHistory::default(),
        horizon: summary.horizon,
        max_events,
    })
}

fn sample_batch<'a>(data: &'a [Sequence], size: usize, rng: &mut impl Rng) -> Vec<&'a Sequence> {
    if size <= data.len() {
        index::sample(rng, data.len(), size).into_iter().map(|i| &data[i]).collect()
    } else {
        (0..size).map(|_| &data[rng.random_range(0..data.len())]).collect()
    }
}

fn generate_batch(state: &TrainState, seeds: &[u64]) -> Result<Vec<Sequence>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = seeding::rng(seed, &[]);
            generator::generate(&state.generator, state.horizon, &mut rng, state.max_events)
                .map(|g| g.sequence)
        })
        .collect()
}

fn diverged(iteration: usize, state: &TrainState) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged {
            iteration,
            history: Box::new(state.history.clone()),
        },
        other => other,
    }
}

/// One outer iteration (1-based `iteration`).
fn outer_step(data: &[Sequence], config: &TrainConfig, state: &mut TrainState, iteration: usize) -> Result<()> {
    let k = iteration as u64;

    // generator: one descent step on J through the generated batch
    let mut rng = seeding::rng(config.seed, &[STEP_STREAM, k, 0]);
    let features = crate::fourier::sample_features(&state.detector.spectrum, config.features, &mut rng)?;
    let noise_seeds: Vec<u64> = (0..config.generated_batch).map(|_| rng.random()).collect();
    let phi = state.generator.flatten();
    let (_, mut phi_grad) = GeneratorObjective {
        generator: &state.generator,
        detector: &state.detector,
        features: &features,
        horizon: state.horizon,
        max_events: state.max_events,
        noise_seeds,
    }
    .value_and_grad_parallel(&phi)
    .map_err(diverged(iteration, state))?;
    let grad_norm_phi = phi_grad.norm();
    clip(&mut phi_grad.values, config.clip_norm);
    let mut weights = phi.values;
    state.generator_opt.step(&mut weights, &phi_grad.values, false);
    state.generator = state.generator.unflatten(&weights)?;

    // detector: inner ascent steps, each with fresh batches and features
    let mut last = None;
    for j in 0..config.inner_steps {
        let mut rng = seeding::rng(config.seed, &[STEP_STREAM, k, 1 + j as u64]);
        let noise = FeatureNoise::sample(config.features, config.noise_dim, &mut rng)?;
        let real: Vec<Sequence> = sample_batch(data, config.real_batch, &mut rng)
            .into_iter()
            .cloned()
            .collect();
        let seeds: Vec<u64> = (0..config.generated_batch).map(|_| rng.random()).collect();
        let generated = generate_batch(state, &seeds)?;
        let loss = DetectorObjective {
            detector: &state.detector,
            noise: &noise,
            real: &real,
            generated: &generated,
        };
        let theta = state.detector.flatten();
        let (value, mut theta_grad) =
            value_and_grad(&loss, &theta).map_err(diverged(iteration, state))?;
        let (_, real_mean, gen_mean) = loss.parts(&theta.values);
        let grad_norm_theta = theta_grad.norm();
        clip(&mut theta_grad.values, config.clip_norm);
        let mut values = theta.values;
        state.detector_opt.step(&mut values, &theta_grad.values, true);
        state.detector = state.detector.unflatten(&values)?;
        last = Some((value, real_mean, gen_mean, grad_norm_theta));
    }
    let (objective, real_mean, gen_mean, grad_norm_theta) = last.expect("inner_steps >= 1");
    state.history.records.push(IterationRecord {
        iteration,
        objective,
        real_mean,
        gen_mean,
        grad_norm_theta,
        grad_norm_phi,
    });
    state.iterations_done = iteration;
    Ok(())
}

/// Continues `state` until `config.outer_iterations` iterations are done,
/// then freezes detection features. Resuming from a saved state gives the
/// same result as an uninterrupted run.
pub fn resume(data: &[Sequence], config: &TrainConfig, mut state: TrainState) -> Result<TrainState> {
    config.validate()?;
    let summary = summarize(data)?;
    if summary.mark_dim != state.detector.mark_dim() {
        return Err(Error::DimensionMismatch {
            expected: state.detector.mark_dim(),
            got: summary.mark_dim,
        });
    }
    for iteration in state.iterations_done + 1..=config.outer_iterations {
        outer_step(data, config, &mut state, iteration)?;
    }
    let mut rng = seeding::rng(config.seed, &[FREEZE_STREAM]);
    state.detector.freeze_features(config.features, &mut rng)?;
    Ok(state)
}

/// Runs the full adversarial training loop from initialization.
pub fn train(data: &[Sequence], config: &TrainConfig) -> Result<TrainState> {
    resume(data, config, initialize(data, config)?)
}
