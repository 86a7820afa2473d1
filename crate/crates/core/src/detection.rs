//! Time-varying thresholds and the online sequential detector.
//!
//! The threshold at step `i` is `c` times the mean prefix log-likelihood of
//! sequences drawn from the trained generator. A sequence raises an alarm at
//! the first step whose prefix statistic reaches the threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, Sequence};
use crate::fourier::{FeatureView, FourierFeatureSet};
use crate::generator::{self, GeneratorParams};
use crate::gradients::Real;
use crate::hawkes::{self, mark_volume, DetectorParams, INTENSITY_FLOOR};
use crate::seeding;

/// `η_i` for `i = 1..=len`, carried forward beyond the last step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    /// Scaled thresholds `c · mean`.
    pub values: Vec<f64>,
    /// Unscaled cross-sequence means.
    pub means: Vec<f64>,
    /// Cross-sequence standard errors of the means.
    pub standard_errors: Vec<f64>,
    pub scale: f64,
    pub n_generated: usize,
    pub seed: u64,
}

impl ThresholdCurve {
    /// Curve with explicit values (scale 1, no sampling metadata).
    pub fn constant(value: f64, len: usize) -> Self {
        Self {
            values: vec![value; len],
            means: vec![value; len],
            standard_errors: vec![0.0; len],
            scale: 1.0,
            n_generated: 0,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Threshold at 1-based step `i`.
    pub fn at(&self, i: usize) -> f64 {
        let last = self.values.len().saturating_sub(1);
        self.values[i.saturating_sub(1).min(last)]
    }

    /// Same curve with a different scale coefficient.
    pub fn rescaled(&self, scale: f64) -> Self {
        Self {
            values: self.means.iter().map(|m| scale * m).collect(),
            scale,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOptions {
    pub n_generated: usize,
    pub max_step: usize,
    pub scale: f64,
    pub seed: u64,
    pub horizon: f64,
    pub max_events: usize,
}

const THRESHOLD_STREAM: u64 = 20;
const ONLINE_STREAM: u64 = 21;

/// Per-step means and standard errors of prefix traces, each trace carried
/// forward from its last value. Empty traces are skipped; `None` if all are.
pub fn carried_statistics(traces: &[Vec<f64>], max_step: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let used: Vec<&Vec<f64>> = traces.iter().filter(|t| !t.is_empty()).collect();
    if used.is_empty() {
        return None;
    }
    let n = used.len() as f64;
    let mut means = Vec::with_capacity(max_step);
    let mut errors = Vec::with_capacity(max_step);
    for i in 0..max_step {
        let at = |t: &Vec<f64>| t[i.min(t.len() - 1)];
        let mean = used.iter().map(|t| at(t)).sum::<f64>() / n;
        let var = if used.len() > 1 {
            used.iter().map(|t| (at(t) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        means.push(mean);
        errors.push((var / n).sqrt());
    }
    Some((means, errors))
}

fn generated_traces(
    detector: &DetectorParams,
    generator: &GeneratorParams,
    opts: &ThresholdOptions,
    stream: &[u64],
) -> Result<Vec<Vec<f64>>> {
    let fs = detector.features()?;
    (0..opts.n_generated)
        .into_par_iter()
        .map(|l| {
            let mut path = stream.to_vec();
            path.push(l as u64);
            let mut rng = seeding::rng(opts.seed, &path);
            let g = generator::generate(generator, opts.horizon, &mut rng, opts.max_events)?;
            hawkes::prefix_log_likelihood(&g.sequence, detector, fs)
        })
        .collect()
}

fn check_options(opts: &ThresholdOptions) -> Result<()> {
    if opts.n_generated == 0 || opts.max_step == 0 {
        return Err(Error::InvalidArgument(
            "threshold needs n_generated >= 1 and max_step >= 1".into(),
        ));
    }
    if !opts.scale.is_finite() {
        return Err(Error::InvalidArgument("threshold scale must be finite".into()));
    }
    Ok(())
}

/// Monte Carlo threshold from `n_generated` generator samples.
pub fn estimate_threshold(
    detector: &DetectorParams,
    generator: &GeneratorParams,
    opts: &ThresholdOptions,
) -> Result<ThresholdCurve> {
    check_options(opts)?;
    let traces = generated_traces(detector, generator, opts, &[THRESHOLD_STREAM])?;
    let (means, standard_errors) =
        carried_statistics(&traces, opts.max_step).ok_or(Error::EmptyGeneratedBatch)?;
    Ok(ThresholdCurve {
        values: means.iter().map(|m| opts.scale * m).collect(),
        means,
        standard_errors,
        scale: opts.scale,
        n_generated: opts.n_generated,
        seed: opts.seed,
    })
}

/// Recursive prefix statistic, one event at a time.
pub struct OnlineStatistic<'a> {
    mu: f64,
    alpha: f64,
    volume: f64,
    view: FeatureView<'a, f64>,
    running: Vec<f64>,
    prev_t: f64,
    value: f64,
    steps: usize,
}

impl<'a> OnlineStatistic<'a> {
    pub fn new(detector: &'a DetectorParams, fs: &'a FourierFeatureSet) -> Result<Self> {
        let view = FeatureView::new(fs, &detector.projection)?;
        Ok(Self {
            mu: detector.mu,
            alpha: detector.alpha,
            volume: mark_volume(detector.mark_dim()),
            running: vec![0.0; view.count()],
            view,
            prev_t: 0.0,
            value: 0.0,
            steps: 0,
        })
    }

    /// Feeds the next event and returns `ℓ(x_{1:i})`.
    pub fn push(&mut self, event: &Event) -> Result<f64> {
        let point = event.point();
        if point.len() != self.view.point_dim {
            return Err(Error::DimensionMismatch {
                expected: self.view.point_dim,
                got: point.len(),
            });
        }
        if self.steps > 0 && event.t <= self.prev_t {
            return Err(Error::Precondition(format!(
                "event time {} not after {}",
                event.t, self.prev_t
            )));
        }
        let phi = self.view.map(&point);
        let lambda = if self.steps == 0 {
            self.mu
        } else {
            self.mu + self.alpha * f64::affine(0.0, &phi, &self.running)
        };
        let step = lambda.floor_at(INTENSITY_FLOOR).ln() - self.mu * (event.t - self.prev_t) * self.volume;
        self.value = if self.steps == 0 { step } else { self.value + step };
        for (s, p) in self.running.iter_mut().zip(phi) {
            *s += p;
        }
        self.prev_t = event.t;
        self.steps += 1;
        Ok(self.value)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub is_anomaly: bool,
    pub stop_index: Option<usize>,
    pub stop_time: Option<f64>,
    /// Statistic at every processed step, up to and including the alarm.
    pub trace: Vec<f64>,
}

/// Single online pass against an arbitrary per-step threshold.
pub fn detect_with(
    seq: &Sequence,
    detector: &DetectorParams,
    mut threshold: impl FnMut(usize) -> Result<f64>,
) -> Result<DetectionResult> {
    let fs = detector.features()?;
    let mut stat = OnlineStatistic::new(detector, fs)?;
    let mut trace = Vec::with_capacity(seq.len());
    for (k, event) in seq.events.iter().enumerate() {
        let value = stat.push(event)?;
        trace.push(value);
        let i = k + 1;
        if value >= threshold(i)? {
            return Ok(DetectionResult {
                is_anomaly: true,
                stop_index: Some(i),
                stop_time: Some(event.t),
                trace,
            });
        }
    }
    Ok(DetectionResult {
        is_anomaly: false,
        stop_index: None,
        stop_time: None,
        trace,
    })
}

/// Online detection against a precomputed curve.
pub fn detect(seq: &Sequence, detector: &DetectorParams, curve: &ThresholdCurve) -> Result<DetectionResult> {
    if curve.is_empty() {
        return Err(Error::InvalidArgument("threshold curve is empty".into()));
    }
    detect_with(seq, detector, |i| Ok(curve.at(i)))
}

/// Thresholds regenerated from fresh generator samples at every step.
pub struct OnlineThreshold<'a> {
    detector: &'a DetectorParams,
    generator: &'a GeneratorParams,
    opts: ThresholdOptions,
}

impl<'a> OnlineThreshold<'a> {
    pub fn new(detector: &'a DetectorParams, generator: &'a GeneratorParams, opts: ThresholdOptions) -> Result<Self> {
        check_options(&opts)?;
        Ok(Self {
            detector,
            generator,
            opts,
        })
    }

    /// `η_i` from `n_generated` sequences drawn for step `i` alone.
    pub fn at(&self, i: usize) -> Result<f64> {
        let traces = generated_traces(self.detector, self.generator, &self.opts, &[ONLINE_STREAM, i as u64])?;
        let (means, _) = carried_statistics(&traces, i).ok_or(Error::EmptyGeneratedBatch)?;
        Ok(self.opts.scale * means[i - 1])
    }
}

/// First 1-based step where `trace` reaches the curve.
pub fn first_crossing(trace: &[f64], curve: &ThresholdCurve) -> Option<usize> {
    trace
        .iter()
        .enumerate()
        .find(|(k, v)| **v >= curve.at(k + 1))
        .map(|(k, _)| k + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate_poisson;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (DetectorParams, GeneratorParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut det = DetectorParams::init(0, 8.0, 0.5, 2, &[6], 2, &mut rng).unwrap();
        det.freeze_features(10, &mut rng).unwrap();
        let mut gen = GeneratorParams::init(0, 6, &mut rng);
        gen.calibrate_first_interval(0.1).unwrap();
        (det, gen)
    }

    fn opts(n: usize, seed: u64) -> ThresholdOptions {
        ThresholdOptions {
            n_generated: n,
            max_step: 25,
            scale: 1.0,
            seed,
            horizon: 2.0,
            max_events: 200,
        }
    }

    fn data(n: usize, seed: u64) -> Vec<Sequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let rate = rng.random_range(5.0..15.0);
                simulate_poisson(rate, 2.0, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_sample_curve_is_its_prefix_trace() {
        let (det, gen) = setup(1);
        let o = opts(1, 3);
        let curve = estimate_threshold(&det, &gen, &o).unwrap();
        let mut rng = seeding::rng(3, &[THRESHOLD_STREAM, 0]);
        let g = generator::generate(&gen, 2.0, &mut rng, 200).unwrap();
        let trace = hawkes::prefix_log_likelihood(&g.sequence, &det, det.features().unwrap()).unwrap();
        assert!(!trace.is_empty());
        for i in 1..=25 {
            assert_eq!(curve.at(i), trace[(i - 1).min(trace.len() - 1)]);
        }
    }

    #[test]
    fn zero_scale_gives_zero_curve() {
        let (det, gen) = setup(2);
        let curve = estimate_threshold(&det, &gen, &ThresholdOptions { scale: 0.0, ..opts(8, 1) }).unwrap();
        assert!(curve.values.iter().all(|&v| v == 0.0));
        assert_eq!(curve.len(), 25);
    }

    #[test]
    fn disjoint_halves_agree_within_two_standard_errors() {
        let (det, gen) = setup(3);
        let a = estimate_threshold(&det, &gen, &opts(200, 10)).unwrap();
        let b = estimate_threshold(&det, &gen, &opts(200, 11)).unwrap();
        let mut outside = 0;
        for i in 0..25 {
            let se = (a.standard_errors[i].powi(2) + b.standard_errors[i].powi(2)).sqrt();
            if (a.means[i] - b.means[i]).abs() > 2.0 * se {
                outside += 1;
            }
        }
        // about 5% of steps may fall outside two standard errors by chance
        assert!(outside <= 3, "{outside} of 25 steps disagree");
    }

    #[test]
    fn doubling_samples_shrinks_standard_error_by_root_two() {
        let (det, gen) = setup(5);
        let mut ratios = Vec::new();
        for seed in 0..10 {
            let small = estimate_threshold(&det, &gen, &opts(32, 100 + seed)).unwrap();
            let large = estimate_threshold(&det, &gen, &opts(64, 200 + seed)).unwrap();
            let mean_se = |c: &ThresholdCurve| c.standard_errors[4..].iter().sum::<f64>();
            ratios.push(mean_se(&large) / mean_se(&small));
        }
        let ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let expected = 1.0 / 2f64.sqrt();
        assert!((ratio - expected).abs() < 0.3 * expected, "ratio {ratio}");
    }

    #[test]
    fn all_empty_generated_sequences_is_an_error() {
        let (det, mut gen) = setup(4);
        gen.calibrate_first_interval(1e3).unwrap();
        let r = estimate_threshold(&det, &gen, &ThresholdOptions { horizon: 1e-3, ..opts(4, 0) });
        assert!(matches!(r, Err(Error::EmptyGeneratedBatch)));
    }

    #[test]
    fn missing_features_are_reported() {
        let (mut det, gen) = setup(5);
        det.frozen_features = None;
        assert!(matches!(estimate_threshold(&det, &gen, &opts(2, 0)), Err(Error::MissingFeatures)));
    }

    #[test]
    fn extreme_curves_never_or_always_alarm() {
        let (det, _) = setup(6);
        for seq in data(20, 1) {
            let never = detect(&seq, &det, &ThresholdCurve::constant(1e18, 5)).unwrap();
            assert!(!never.is_anomaly && never.stop_index.is_none());
            assert_eq!(never.trace.len(), seq.len());
            let always = detect(&seq, &det, &ThresholdCurve::constant(-1e18, 5)).unwrap();
            if !seq.is_empty() {
                assert_eq!(always.stop_index, Some(1));
                assert_eq!(always.stop_time, Some(seq.events[0].t));
                assert_eq!(always.trace.len(), 1);
            }
        }
    }

    #[test]
    fn online_statistic_matches_batch_prefix_trace() {
        let (det, _) = setup(7);
        let fs = det.features().unwrap();
        for seq in data(30, 2) {
            let batch = hawkes::prefix_log_likelihood(&seq, &det, fs).unwrap();
            let never = detect(&seq, &det, &ThresholdCurve::constant(1e18, 1)).unwrap();
            for (a, b) in never.trace.iter().zip(&batch) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn alarm_index_is_first_crossing_of_batch_trace() {
        let (det, gen) = setup(8);
        let curve = estimate_threshold(&det, &gen, &opts(32, 4)).unwrap();
        let fs = det.features().unwrap();
        for seq in data(50, 3) {
            let batch = hawkes::prefix_log_likelihood(&seq, &det, fs).unwrap();
            let r = detect(&seq, &det, &curve).unwrap();
            assert_eq!(r.stop_index, first_crossing(&batch, &curve));
            assert_eq!(r.is_anomaly, r.stop_index.is_some());
        }
    }

    #[test]
    fn raising_threshold_never_alarms_earlier() {
        let (det, gen) = setup(9);
        let base = estimate_threshold(&det, &gen, &opts(32, 5)).unwrap();
        let order = |idx: Option<usize>| idx.unwrap_or(usize::MAX);
        for seq in data(30, 4) {
            let mut prev = 0;
            for shift in [-20.0, -5.0, -1.0, 0.0, 1.0, 5.0, 20.0] {
                let curve = ThresholdCurve {
                    values: base.values.iter().map(|v| v + shift).collect(),
                    ..base.clone()
                };
                let idx = order(detect(&seq, &det, &curve).unwrap().stop_index);
                assert!(idx >= prev);
                prev = idx;
            }
        }
    }

    #[test]
    fn alarm_index_is_monotone_in_scale_for_positive_means() {
        let (det, _) = setup(9);
        let means: Vec<f64> = (1..=25).map(|i| 2.0 + i as f64).collect();
        let base = ThresholdCurve {
            values: means.clone(),
            means,
            ..ThresholdCurve::constant(0.0, 25)
        };
        for seq in data(30, 5) {
            let mut prev = 0;
            for c in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
                let idx = detect(&seq, &det, &base.rescaled(c)).unwrap().stop_index;
                let idx = idx.unwrap_or(usize::MAX);
                assert!(idx >= prev);
                prev = idx;
            }
        }
    }

    #[test]
    fn detection_is_pure() {
        let (det, gen) = setup(10);
        let curve = estimate_threshold(&det, &gen, &opts(16, 6)).unwrap();
        for seq in data(10, 5) {
            assert_eq!(detect(&seq, &det, &curve).unwrap(), detect(&seq, &det, &curve).unwrap());
        }
    }

    #[test]
    fn online_threshold_tracks_offline_curve() {
        let (det, gen) = setup(11);
        let offline = estimate_threshold(&det, &gen, &opts(400, 7)).unwrap();
        let online = OnlineThreshold::new(&det, &gen, opts(400, 8)).unwrap();
        for i in [1, 5, 10] {
            let v = online.at(i).unwrap();
            let se = offline.standard_errors[i - 1] * 2f64.sqrt();
            assert!((v - offline.at(i)).abs() < 4.0 * se, "step {i}: {v} vs {}", offline.at(i));
        }
        let seq = &data(1, 6)[0];
        let r = detect_with(seq, &det, |i| online.at(i)).unwrap();
        assert_eq!(r.is_anomaly, r.stop_index.is_some());
    }

    #[test]
    fn carried_statistics_skip_empty_and_carry_forward() {
        let traces = vec![vec![1.0, 3.0], vec![], vec![5.0]];
        let (m, _) = carried_statistics(&traces, 3).unwrap();
        assert_eq!(m, vec![3.0, 4.0, 4.0]);
        assert!(carried_statistics(&[vec![]], 2).is_none());
    }
}
