//! Hawkes detector with a deep Fourier triggering kernel.
//!
//! Conditional intensity of a candidate event `x` given earlier events:
//!
//! ```text
//! λ(x) = μ + α Σ_{x' earlier} K̃(x, x') = μ + α Φ(x)ᵀ Σ_{x' earlier} Φ(x')
//! ```
//!
//! With marks normalized to `[0, 2π]^d` the likelihood integral is taken as
//! `μ T (2π)^d`, and the prefix statistic follows the recursion
//!
//! ```text
//! ℓ_i = ℓ_{i-1} + log λ(x_i) − μ (t_i − t_{i-1}) (2π)^d,   t_0 = 0.
//! ```
//!
//! The cosine kernel can drive `μ + αΣK̃` below zero, so every intensity
//! that enters a logarithm is floored at [`INTENSITY_FLOOR`].

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, Sequence};
use crate::fourier::{FeatureView, FourierFeatureSet, KernelProjection, SpectrumNet};
use crate::gradients::{ParamIndex, ParamVector, Real};

pub const INTENSITY_FLOOR: f64 = 1e-9;

/// Volume of the normalized mark space, `(2π)^d`.
pub fn mark_volume(mark_dim: usize) -> f64 {
    TAU.powi(mark_dim as i32)
}

/// Detector parameters θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub mu: f64,
    pub alpha: f64,
    pub projection: KernelProjection,
    pub spectrum: SpectrumNet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_features: Option<FourierFeatureSet>,
}

impl DetectorParams {
    pub fn new(mu: f64, alpha: f64, projection: KernelProjection, spectrum: SpectrumNet) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) || !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need finite mu >= 0 and alpha >= 0, got mu={mu}, alpha={alpha}"
            )));
        }
        if projection.rows != spectrum.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: spectrum.feature_dim(),
                got: projection.rows,
            });
        }
        Ok(Self {
            mu,
            alpha,
            projection,
            spectrum,
            frozen_features: None,
        })
    }

    /// Random `W` and spectrum network with the given background rate.
    pub fn init(
        mark_dim: usize,
        mu: f64,
        alpha: f64,
        noise_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spectrum = SpectrumNet::new(noise_dim, hidden, feature_dim, rng);
        let projection = KernelProjection::init(feature_dim, mark_dim, rng);
        Self::new(mu, alpha, projection, spectrum)
    }

    pub fn mark_dim(&self) -> usize {
        self.projection.mark_dim()
    }

    pub fn index(&self) -> ParamIndex {
        let mut index = ParamIndex::default();
        index.push("log_mu", 1);
        index.push("log_alpha", 1);
        index.push("projection", self.projection.data.len());
        index.push("spectrum", self.spectrum.weights.len());
        index
    }

    /// Trainable coordinates; `μ` and `α` enter through their logarithms.
    pub fn flatten(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.index().total());
        v.push(self.mu.ln());
        v.push(self.alpha.ln());
        v.extend_from_slice(&self.projection.data);
        v.extend_from_slice(&self.spectrum.weights);
        ParamVector::new(v, self.index())
    }

    /// Copy with trainable coordinates replaced; frozen features are kept.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        let view = DetectorLayout::of(self).split(flat)?;
        let mut out = self.clone();
        out.mu = view.log_mu.exp();
        out.alpha = view.log_alpha.exp();
        out.projection.data = view.projection.to_vec();
        out.spectrum.weights = view.spectrum.to_vec();
        Ok(out)
    }

    pub fn features(&self) -> Result<&FourierFeatureSet> {
        self.frozen_features.as_ref().ok_or(Error::MissingFeatures)
    }

    /// Samples and stores the features used at detection time.
    pub fn freeze_features(&mut self, count: usize, rng: &mut impl Rng) -> Result<()> {
        self.frozen_features = Some(crate::fourier::sample_features(&self.spectrum, count, rng)?);
        Ok(())
    }
}

/// Offsets of θ's blocks inside its flat vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DetectorLayout {
    projection: usize,
    spectrum: usize,
}

pub(crate) struct DetectorSlices<'a, T> {
    pub log_mu: T,
    pub log_alpha: T,
    pub projection: &'a [T],
    pub spectrum: &'a [T],
}

impl DetectorLayout {
    pub fn of(p: &DetectorParams) -> Self {
        Self {
            projection: p.projection.data.len(),
            spectrum: p.spectrum.weights.len(),
        }
    }

    pub fn split<'a, T: Copy>(&self, flat: &'a [T]) -> Result<DetectorSlices<'a, T>> {
        let total = 2 + self.projection + self.spectrum;
        if flat.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: flat.len(),
            });
        }
        Ok(DetectorSlices {
            log_mu: flat[0],
            log_alpha: flat[1],
            projection: &flat[2..2 + self.projection],
            spectrum: &flat[2 + self.projection..],
        })
    }
}

/// `log λ(x_i | x_{1:i-1})` for every event of a flat point list.
pub(crate) fn log_intensities<T: Real>(mu: T, alpha: T, view: &FeatureView<'_, T>, points: &[T]) -> Vec<T> {
    let dim = view.point_dim;
    let n = points.len() / dim;
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let zero = points[0].constant(0.0);
    let mut running: Vec<T> = Vec::new();
    for x in points.chunks(dim) {
        let phi = view.map(x);
        let lambda = if running.is_empty() {
            mu
        } else {
            mu + alpha * T::affine(zero, &phi, &running)
        };
        out.push(lambda.floor_at(INTENSITY_FLOOR).ln());
        if running.is_empty() {
            running = phi;
        } else {
            for (s, p) in running.iter_mut().zip(phi) {
                *s = *s + p;
            }
        }
    }
    out
}

/// Recursive prefix statistic `ℓ(x_{1:i})` for `i = 1..N`.
pub(crate) fn prefix_trace_generic<T: Real>(
    mu: T,
    alpha: T,
    view: &FeatureView<'_, T>,
    points: &[T],
) -> Vec<T> {
    let volume = mark_volume(view.point_dim - 1);
    let logs = log_intensities(mu, alpha, view, points);
    let mut out: Vec<T> = Vec::with_capacity(logs.len());
    let mut prev_t: Option<T> = None;
    for (i, log_lambda) in logs.into_iter().enumerate() {
        let t = points[i * view.point_dim];
        let dt = match prev_t {
            None => t,
            Some(p) => t - p,
        };
        let step = log_lambda - mu * dt * volume;
        let next = match out.last() {
            None => step,
            Some(&a) => a + step,
        };
        out.push(next);
        prev_t = Some(t);
    }
    out
}

/// Full-sequence log-likelihood with integral `μ T (2π)^d`.
pub(crate) fn log_likelihood_generic<T: Real>(
    mu: T,
    alpha: T,
    view: &FeatureView<'_, T>,
    points: &[T],
    horizon: f64,
) -> T {
    let volume = mark_volume(view.point_dim - 1);
    let logs = log_intensities(mu, alpha, view, points);
    let integral = mu * (horizon * volume);
    T::sum(-integral, &logs)
}

fn check_dims(seq: &Sequence, params: &DetectorParams) -> Result<()> {
    if !seq.is_empty() && seq.mark_dim() != params.mark_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.mark_dim(),
            got: seq.mark_dim(),
        });
    }
    Ok(())
}

/// `λ(x | history)`, floored at [`INTENSITY_FLOOR`].
pub fn intensity(
    x: &Event,
    history: &[Event],
    params: &DetectorParams,
    fs: &FourierFeatureSet,
) -> Result<f64> {
    let view = FeatureView::new(fs, &params.projection)?;
    let dim = params.mark_dim() + 1;
    let point = x.point();
    if point.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: point.len(),
        });
    }
    let phi = view.map(&point);
    let mut total = 0.0;
    for (i, h) in history.iter().enumerate() {
        if h.t >= x.t {
            return Err(Error::Precondition(format!(
                "history event {i} at t={} is not earlier than t={}",
                h.t, x.t
            )));
        }
        let hp = h.point();
        if hp.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: hp.len(),
            });
        }
        total += view.map(&hp).iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok((params.mu + params.alpha * total).max(INTENSITY_FLOOR))
}

/// `μ T (2π)^d`: the integral term under the `[0, 2π]` mark normalization.
pub fn integral_closed_form(seq: &Sequence, params: &DetectorParams) -> f64 {
    params.mu * seq.horizon * mark_volume(params.mark_dim())
}

/// Numerical integral of the un-floored intensity over
/// `[0, T] × [0, 2π]^d` on a trapezoid tensor grid.
///
/// The grid has `resolution` intervals per unit length in every coordinate
/// (at least two per time piece). Because the intensity is linear in cosine
/// features, each feature's tensor-grid sum factorizes into per-axis sums;
/// the result is the same number the explicit grid would give.
pub fn integral_quadrature(
    seq: &Sequence,
    params: &DetectorParams,
    fs: &FourierFeatureSet,
    resolution: usize,
) -> Result<f64> {
    check_dims(seq, params)?;
    let d = params.mark_dim();
    if d > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature over {d} mark dimensions"
        )));
    }
    if resolution < 100 {
        return Err(Error::InvalidArgument(format!(
            "resolution {resolution} below 100 points per unit"
        )));
    }
    let view = FeatureView::new(fs, &params.projection)?;
    let w = &params.projection;
    let dcount = fs.count();
    let scale = (2.0 / dcount as f64).sqrt();

    // Per-feature frequencies along each axis: a_k (time), b_kl (marks).
    let axis_freq = |k: usize, col: usize| -> f64 {
        let omega = fs.omega(k);
        (0..w.rows).map(|r| omega[r] * w.data[r * w.cols + col]).sum()
    };

    let mark_n = ((resolution as f64) * TAU).ceil() as usize;
    let mark_sums: Vec<Vec<(f64, f64)>> = (0..dcount)
        .map(|k| (1..=d).map(|l| trapezoid_exp(axis_freq(k, l), 0.0, TAU, mark_n)).collect())
        .collect();
    let mark_weight_total = trapezoid_exp(0.0, 0.0, TAU, mark_n).0.powi(d as i32);

    let mut cuts = vec![0.0];
    cuts.extend(seq.events.iter().map(|e| e.t));
    cuts.push(seq.horizon);

    let mut total = 0.0;
    let mut running = vec![0.0; dcount];
    for (piece, pair) in cuts.windows(2).enumerate() {
        let (lo, hi) = (pair[0], pair[1]);
        let n = ((resolution as f64) * (hi - lo)).ceil().max(2.0) as usize;
        let time_weight = trapezoid_exp(0.0, lo, hi, n).0;
        total += params.mu * time_weight * mark_weight_total;
        if piece == 0 {
            continue;
        }
        let phi = view.map(&seq.events[piece - 1].point());
        for (s, p) in running.iter_mut().zip(&phi) {
            *s += p;
        }
        for k in 0..dcount {
            let mut acc = trapezoid_exp(axis_freq(k, 0), lo, hi, n);
            for &m in &mark_sums[k] {
                acc = cmul(acc, m);
            }
            let u = fs.phases()[k];
            let grid_cos = cmul(acc, (u.cos(), u.sin())).0;
            total += params.alpha * running[k] * scale * grid_cos;
        }
    }
    Ok(total)
}

fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Trapezoid rule for `∫_lo^hi e^{i f s} ds` with `n` intervals.
fn trapezoid_exp(freq: f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let h = (hi - lo) / n as f64;
    let mut re = 0.0;
    let mut im = 0.0;
    for j in 0..=n {
        let s = lo + h * j as f64;
        let wgt = if j == 0 || j == n { 0.5 } else { 1.0 };
        let (sn, cs) = (freq * s).sin_cos();
        re += wgt * cs;
        im += wgt * sn;
    }
    (re * h, im * h)
}

/// `ℓ(x; θ) = Σ log λ(x_i) − μ T (2π)^d`.
pub fn log_likelihood(seq: &Sequence, params: &DetectorParams, fs: &FourierFeatureSet) -> Result<f64> {
    check_dims(seq, params)?;
    let view = FeatureView::new(fs, &params.projection)?;
    Ok(log_likelihood_generic(
        params.mu,
        params.alpha,
        &view,
        &seq.flat_points(),
        seq.horizon,
    ))
}

/// `ℓ(x_{1:i}; θ)` for every prefix, via the one-pass recursion.
pub fn prefix_log_likelihood(
    seq: &Sequence,
    params: &DetectorParams,
    fs: &FourierFeatureSet,
) -> Result<Vec<f64>> {
    check_dims(seq, params)?;
    let view = FeatureView::new(fs, &params.projection)?;
    Ok(prefix_trace_generic(
        params.mu,
        params.alpha,
        &view,
        &seq.flat_points(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;
    use crate::fourier::sample_features;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn temporal_seq(times: &[f64], horizon: f64) -> Sequence {
        Sequence {
            horizon,
            label: None,
            events: times.iter().map(|&t| Event::temporal(t)).collect(),
        }
    }

    fn detector(mu: f64, alpha: f64, mark_dim: usize, seed: u64) -> DetectorParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DetectorParams::init(mark_dim, mu, alpha, 2, &[8], 2, &mut rng).unwrap()
    }

    /// One feature whose time frequency `ω·W[:,0]` is `freq`.
    fn single_feature(freq: f64, phase: f64, mark_dim: usize) -> (DetectorParams, FourierFeatureSet) {
        let mut p = detector(1.0, 1.0, mark_dim, 0);
        let mut data = vec![0.0; 2 * (mark_dim + 1)];
        data[0] = 1.0;
        p.projection = KernelProjection::new(2, mark_dim + 1, data).unwrap();
        let fs = FourierFeatureSet::from_parts(2, vec![freq, 0.0], vec![phase]).unwrap();
        (p, fs)
    }

    fn random_marked(rng: &mut ChaCha8Rng, n: usize, d: usize, horizon: f64) -> Sequence {
        let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..horizon)).collect();
        times.sort_by(f64::total_cmp);
        Sequence {
            horizon,
            label: None,
            events: times
                .into_iter()
                .map(|t| Event::new(t, (0..d).map(|_| rng.random_range(0.0..TAU)).collect()))
                .collect(),
        }
    }

    #[test]
    fn empty_history_gives_background_rate() {
        let p = detector(3.5, 0.7, 0, 1);
        let fs = sample_features(&p.spectrum, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(intensity(&Event::temporal(0.4), &[], &p, &fs).unwrap(), 3.5);
    }

    #[test]
    fn zero_alpha_ignores_history() {
        let p = detector(2.0, 0.0, 0, 1);
        let fs = sample_features(&p.spectrum, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let hist = [Event::temporal(0.1), Event::temporal(0.2)];
        assert_eq!(intensity(&Event::temporal(0.4), &hist, &p, &fs).unwrap(), 2.0);
    }

    #[test]
    fn one_past_event_with_zero_frequency_adds_two_alpha() {
        let (mut p, fs) = single_feature(0.0, 0.0, 0);
        p.mu = 1.5;
        p.alpha = 0.25;
        let lam = intensity(&Event::temporal(0.9), &[Event::temporal(0.3)], &p, &fs).unwrap();
        assert!((lam - 2.0).abs() < 1e-14);
    }

    #[test]
    fn history_must_be_strictly_earlier() {
        let (p, fs) = single_feature(0.0, 0.0, 0);
        let r = intensity(&Event::temporal(0.3), &[Event::temporal(0.3)], &p, &fs);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn negative_intensity_is_floored() {
        // φ(0) = √2 and φ(1) = √2 cos(π), so the kernel is -2
        let (mut p, fs) = single_feature(std::f64::consts::PI, 0.0, 0);
        p.mu = 0.5;
        p.alpha = 1.0;
        let lam = intensity(&Event::temporal(1.0), &[Event::temporal(0.0)], &p, &fs).unwrap();
        assert_eq!(lam, INTENSITY_FLOOR);
    }

    #[test]
    fn closed_form_integral_values() {
        let mut p = detector(10.0, 0.3, 0, 3);
        assert_eq!(integral_closed_form(&Sequence::empty(1.0), &p), 10.0);
        let mut p1 = detector(10.0, 0.3, 1, 3);
        assert!((integral_closed_form(&Sequence::empty(1.0), &p1) - 20.0 * std::f64::consts::PI).abs() < 1e-12);
        p.mu = 0.0;
        p1.mu = 0.0;
        assert_eq!(integral_closed_form(&Sequence::empty(7.0), &p), 0.0);
        assert_eq!(integral_closed_form(&Sequence::empty(7.0), &p1), 0.0);
    }

    #[test]
    fn quadrature_of_constant_intensity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 0..=2 {
            let p = detector(4.0, 0.0, d, 5);
            let fs = sample_features(&p.spectrum, 6, &mut rng).unwrap();
            let seq = random_marked(&mut rng, 4, d, 1.3);
            let q = integral_quadrature(&seq, &p, &fs, 100).unwrap();
            let c = integral_closed_form(&seq, &p);
            assert!(((q - c) / c).abs() < 1e-6, "d={d}: {q} vs {c}");
        }
    }

    #[test]
    fn quadrature_rejects_bad_arguments() {
        let p = detector(1.0, 0.5, 3, 1);
        let fs = sample_features(&p.spectrum, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(
            integral_quadrature(&Sequence::empty(1.0), &p, &fs, 100),
            Err(Error::Unsupported(_))
        ));
        let p = detector(1.0, 0.5, 0, 1);
        assert!(integral_quadrature(&Sequence::empty(1.0), &p, &fs, 99).is_err());
    }

    #[test]
    fn kernel_over_whole_periods_integrates_to_zero() {
        let (t1, horizon) = (0.4, 1.9);
        let freq = 3.0 * TAU / (horizon - t1);
        let (mut p, fs) = single_feature(freq, 0.8, 0);
        p.mu = 2.0;
        p.alpha = 1.0;
        let seq = temporal_seq(&[t1], horizon);
        let q = integral_quadrature(&seq, &p, &fs, 10_000).unwrap();
        assert!((q - 2.0 * horizon).abs() < 1e-6, "{q}");
    }

    #[test]
    fn separable_grid_matches_explicit_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = detector(1.3, 0.8, 1, 8);
        let fs = sample_features(&p.spectrum, 3, &mut rng).unwrap();
        let seq = random_marked(&mut rng, 3, 1, 0.5);
        let res = 100;
        let fast = integral_quadrature(&seq, &p, &fs, res).unwrap();

        let mark_n = ((res as f64) * TAU).ceil() as usize;
        let hm = TAU / mark_n as f64;
        let mut cuts = vec![0.0];
        cuts.extend(seq.times());
        cuts.push(seq.horizon);
        let mut brute = 0.0;
        for (piece, pair) in cuts.windows(2).enumerate() {
            let n = ((res as f64) * (pair[1] - pair[0])).ceil().max(2.0) as usize;
            let ht = (pair[1] - pair[0]) / n as f64;
            for i in 0..=n {
                let t = pair[0] + ht * i as f64;
                let wt = if i == 0 || i == n { 0.5 } else { 1.0 } * ht;
                for j in 0..=mark_n {
                    let m = hm * j as f64;
                    let wm = if j == 0 || j == mark_n { 0.5 } else { 1.0 } * hm;
                    let x = [t, m];
                    let k: f64 = seq.events[..piece]
                        .iter()
                        .map(|e| kernel_estimate_point(&x, &e.point(), &p, &fs))
                        .sum();
                    brute += wt * wm * (p.mu + p.alpha * k);
                }
            }
        }
        assert!((fast - brute).abs() < 1e-9 * brute.abs(), "{fast} vs {brute}");
    }

    fn kernel_estimate_point(x: &[f64], y: &[f64], p: &DetectorParams, fs: &FourierFeatureSet) -> f64 {
        crate::fourier::kernel_estimate(x, y, fs, &p.projection).unwrap()
    }

    #[test]
    fn quadrature_is_stable_under_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..6 {
            let d = trial % 2;
            let p = detector(rng.random_range(1.0..10.0), rng.random_range(0.1..2.0), d, trial as u64);
            let fs = sample_features(&p.spectrum, 1 + trial, &mut rng).unwrap();
            let n = rng.random_range(0..=5);
            let horizon = rng.random_range(0.5..2.0);
            let seq = random_marked(&mut rng, n, d, horizon);
            let a = integral_quadrature(&seq, &p, &fs, 10_000).unwrap();
            let b = integral_quadrature(&seq, &p, &fs, 20_000).unwrap();
            assert!(((a - b) / b).abs() < 1e-4, "trial {trial}: {a} vs {b}");
        }
    }

    #[test]
    fn empty_sequence_likelihood_is_minus_integral() {
        let p = detector(10.0, 0.5, 1, 2);
        let fs = sample_features(&p.spectrum, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let l = log_likelihood(&Sequence::empty(1.0), &p, &fs).unwrap();
        assert!((l + 20.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_case_is_poisson_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for d in 0..=1 {
            let p = detector(6.5, 0.0, d, 4);
            let fs = sample_features(&p.spectrum, 4, &mut rng).unwrap();
            let seq = random_marked(&mut rng, 9, d, 2.0);
            let l = log_likelihood(&seq, &p, &fs).unwrap();
            let expect = 9.0 * 6.5f64.ln() - 6.5 * 2.0 * mark_volume(d);
            assert!((l - expect).abs() < 1e-10);
            let trace = prefix_log_likelihood(&seq, &p, &fs).unwrap();
            for (i, v) in trace.iter().enumerate() {
                let e = (i + 1) as f64 * 6.5f64.ln() - 6.5 * seq.events[i].t * mark_volume(d);
                assert!((v - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn first_prefix_is_base_case() {
        let p = detector(3.0, 0.4, 0, 9);
        let fs = sample_features(&p.spectrum, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let seq = temporal_seq(&[0.25, 0.5], 1.0);
        let trace = prefix_log_likelihood(&seq, &p, &fs).unwrap();
        assert!((trace[0] - (3.0f64.ln() - 3.0 * 0.25)).abs() < 1e-14);
    }

    #[test]
    fn prefix_trace_reconciles_with_batch_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..50 {
            let d = trial % 3;
            let p = detector(rng.random_range(0.5..20.0), rng.random_range(0.0..3.0), d, trial as u64);
            let fs = sample_features(&p.spectrum, rng.random_range(1..=16), &mut rng).unwrap();
            let n = rng.random_range(1..=20);
            let horizon = rng.random_range(0.5..4.0);
            let seq = random_marked(&mut rng, n, d, horizon);
            let trace = prefix_log_likelihood(&seq, &p, &fs).unwrap();
            let last_t = seq.events.last().unwrap().t;
            let survival = p.mu * (seq.horizon - last_t) * mark_volume(d);
            let batch = log_likelihood(&seq, &p, &fs).unwrap();
            assert!((trace[n - 1] - survival - batch).abs() < 1e-9, "trial {trial}");
        }
    }

    #[test]
    fn poisson_prefix_decreases_in_mu_past_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let seq = random_marked(&mut rng, 5, 0, 2.0);
        let fs = FourierFeatureSet::from_parts(2, vec![0.0, 0.0], vec![0.0]).unwrap();
        let h = 1e-6;
        for mu in [3.0, 5.0, 10.0] {
            assert!(mu * 2.0 > 5.0);
            let mut lo = detector(mu, 0.0, 0, 1);
            lo.alpha = 0.0;
            let mut hi = lo.clone();
            hi.mu = mu + h;
            let a = prefix_log_likelihood(&seq, &lo, &fs).unwrap();
            let b = prefix_log_likelihood(&seq, &hi, &fs).unwrap();
            let last = seq.events.last().unwrap().t;
            // the prefix integral runs to t_N; past-mode means mu * t_N > N
            if mu * last > 5.0 {
                assert!(b[4] <= a[4]);
            }
            let full_a = log_likelihood(&seq, &lo, &fs).unwrap();
            let full_b = log_likelihood(&seq, &hi, &fs).unwrap();
            assert!(full_b <= full_a);
        }
    }

    #[test]
    fn per_event_density_integrates_to_one_without_excitation() {
        // f(t) = μ e^{-μ (t - t_prev)} on (t_prev, ∞)
        let mu: f64 = 2.7;
        let t_prev = 0.6;
        let n = 200_000;
        let upper = t_prev + 40.0 / mu;
        let h = (upper - t_prev) / n as f64;
        let mut total = 0.0;
        for j in 0..=n {
            let t = t_prev + h * j as f64;
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            let log_f = mu.ln() - mu * (t - t_prev);
            total += w * log_f.exp();
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn mismatched_mark_dimension_is_rejected() {
        let p = detector(1.0, 0.5, 1, 1);
        let fs = sample_features(&p.spectrum, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let seq = temporal_seq(&[0.2], 1.0);
        assert!(log_likelihood(&seq, &p, &fs).is_err());
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let p = detector(2.5, 0.3, 1, 4);
        let flat = p.flatten();
        let back = p.unflatten(&flat.values).unwrap();
        assert!((back.mu - 2.5).abs() < 1e-15);
        assert!((back.alpha - 0.3).abs() < 1e-15);
        assert_eq!(back.projection, p.projection);
        assert_eq!(back.spectrum, p.spectrum);
        assert_eq!(flat.index.block("projection").unwrap().len, 4);
    }
}
