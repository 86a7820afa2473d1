//! Synthetic ground truth: exponential-kernel Hawkes anomalies simulated by
//! Ogata thinning, and homogeneous Poisson "normal" sequences.
//!
//! Hawkes sequences start in the stationary regime: thinning begins at
//! `-burn_in` with an empty history and only events in `[0, T)` are kept,
//! so the expected count on `[0, T)` is `μT / (1 − α/β)`. A zero burn-in
//! gives the cold-start process instead.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, Label, Sequence};
use crate::seeding;

/// Transient decay factor `e^{-25}` left after the default burn-in.
const BURN_IN_DECAYS: f64 = 25.0;

/// `λ(t) = μ + Σ α e^{−β(t − t_i)}` on `[0, T)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpHawkesSpec {
    pub mu: f64,
    pub alpha_kernel: f64,
    pub beta: f64,
    pub horizon: f64,
    pub burn_in: f64,
}

impl ExpHawkesSpec {
    /// Stationary-start process with the default burn-in.
    pub fn new(mu: f64, alpha_kernel: f64, beta: f64, horizon: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
        }
        if !(beta > 0.0 && beta.is_finite()) || !(0.0..beta).contains(&alpha_kernel) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= alpha < beta for stationarity, got alpha={alpha_kernel}, beta={beta}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            mu,
            alpha_kernel,
            beta,
            horizon,
            burn_in: BURN_IN_DECAYS / (beta - alpha_kernel),
        })
    }

    /// Starts from an empty history at `t = 0`.
    pub fn cold_start(mut self) -> Self {
        self.burn_in = 0.0;
        self
    }

    pub fn branching_ratio(&self) -> f64 {
        self.alpha_kernel / self.beta
    }

    pub fn stationary_rate(&self) -> f64 {
        self.mu / (1.0 - self.branching_ratio())
    }

    /// Expected number of events on `[0, T)` for the configured start.
    pub fn expected_count(&self) -> f64 {
        let gap = self.beta - self.alpha_kernel;
        let stationary = self.stationary_rate() * self.horizon;
        // E λ(t) relaxes to the stationary rate at speed β − α from μ
        let transient_rate = self.stationary_rate() - self.mu;
        let start = -self.burn_in;
        let decay = |s: f64| (-gap * (s - start)).exp();
        stationary - transient_rate * (decay(0.0) - decay(self.horizon)) / gap
    }
}

/// One accepted point of a thinning run.
#[derive(Clone, Copy, Debug)]
pub struct ThinningRecord {
    pub t: f64,
    pub intensity: f64,
    pub bound: f64,
}

/// Ogata thinning; also returns every accepted point with its bound.
pub fn simulate_hawkes_traced(spec: &ExpHawkesSpec, rng: &mut impl Rng) -> (Sequence, Vec<ThinningRecord>) {
    let mut t = -spec.burn_in;
    let mut excitation = 0.0;
    let mut events = Vec::new();
    let mut records = Vec::new();
    loop {
        let bound = spec.mu + excitation;
        let gap = Exp::new(bound).expect("positive bound").sample(rng);
        t += gap;
        if t >= spec.horizon {
            break;
        }
        excitation *= (-spec.beta * gap).exp();
        let lambda = spec.mu + excitation;
        if rng.random::<f64>() * bound <= lambda {
            excitation += spec.alpha_kernel;
            records.push(ThinningRecord {
                t,
                intensity: lambda,
                bound,
            });
            let strictly_later = events.last().is_none_or(|e: &Event| t > e.t);
            if t >= 0.0 && strictly_later {
                events.push(Event::temporal(t));
            }
        }
    }
    let seq = Sequence {
        horizon: spec.horizon,
        label: None,
        events,
    };
    (seq, records)
}

pub fn simulate_hawkes(spec: &ExpHawkesSpec, rng: &mut impl Rng) -> Sequence {
    simulate_hawkes_traced(spec, rng).0
}

/// Homogeneous Poisson process with exponential inter-arrivals.
pub fn simulate_poisson(rate: f64, horizon: f64, rng: &mut impl Rng) -> Result<Sequence> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("rate must be positive, got {rate}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid horizon {horizon}")));
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    let mut events: Vec<Event> = Vec::new();
    loop {
        t += exp.sample(rng);
        if t >= horizon {
            break;
        }
        if events.last().is_none_or(|e| t > e.t) {
            events.push(Event::temporal(t));
        }
    }
    Ok(Sequence {
        horizon,
        label: None,
        events,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// 1000 Hawkes(μ=10, α=1, β=3) anomalies.
    Singleton,
    /// 5 × 200 anomalies with β ∈ {1, ..., 5}.
    Composite,
    /// Singleton anomalies plus 5000 Poisson normals.
    Mixed,
    /// Composite anomalies plus 5000 Poisson normals.
    MixedComposite,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Singleton => "singleton",
            DatasetKind::Composite => "composite",
            DatasetKind::Mixed => "mixed",
            DatasetKind::MixedComposite => "mixed-composite",
        }
    }
}

pub const ANOMALY_MU: f64 = 10.0;
pub const ANOMALY_ALPHA: f64 = 1.0;
pub const SINGLETON_BETA: f64 = 3.0;
pub const SINGLETON_COUNT: usize = 1000;
pub const SINGLETON_MEAN_LENGTH: f64 = 32.0;
pub const COMPOSITE_BETAS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
pub const COMPOSITE_PER_STRATUM: usize = 200;
pub const COMPOSITE_MEAN_LENGTH: f64 = 29.0;
/// α for the β = 1 stratum, where α = 1 would be critical.
pub const COMPOSITE_BETA1_ALPHA: f64 = 0.5;
pub const NORMAL_COUNT: usize = 5000;
pub const NORMAL_RATE_RANGE: (f64, f64) = (5.0, 15.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub mu: f64,
    pub alpha_kernel: f64,
    pub beta: f64,
    pub burn_in: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalSpec {
    pub count: usize,
    pub rate_min: f64,
    pub rate_max: f64,
}

/// Everything needed to regenerate a dataset, plus recorded deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: DatasetKind,
    pub seed: u64,
    pub horizon: f64,
    pub mark_dim: usize,
    pub target_mean_length: f64,
    pub strata: Vec<Stratum>,
    pub normals: Option<NormalSpec>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
    pub manifest: Manifest,
}

fn anomaly_strata(kind: DatasetKind) -> (Vec<ExpHawkesSpec>, usize, f64, Vec<String>) {
    let composite = matches!(kind, DatasetKind::Composite | DatasetKind::MixedComposite);
    let mut notes = vec![
        "horizon solved from the stationary count mu*T/(1 - alpha/beta); Hawkes sequences start stationary via burn-in".to_string(),
        "sequences are temporal only (mark dimension 0)".to_string(),
    ];
    if composite {
        let alpha = |b: f64| if b == 1.0 { COMPOSITE_BETA1_ALPHA } else { ANOMALY_ALPHA };
        let mean_rate = COMPOSITE_BETAS
            .iter()
            .map(|&b| ANOMALY_MU / (1.0 - alpha(b) / b))
            .sum::<f64>()
            / COMPOSITE_BETAS.len() as f64;
        let horizon = COMPOSITE_MEAN_LENGTH / mean_rate;
        notes.push(format!(
            "beta=1 stratum uses alpha={COMPOSITE_BETA1_ALPHA}: alpha=1 would give branching ratio 1 (non-stationary)"
        ));
        let specs = COMPOSITE_BETAS
            .iter()
            .map(|&b| ExpHawkesSpec::new(ANOMALY_MU, alpha(b), b, horizon).expect("valid stratum"))
            .collect();
        (specs, COMPOSITE_PER_STRATUM, COMPOSITE_MEAN_LENGTH, notes)
    } else {
        let horizon =
            SINGLETON_MEAN_LENGTH * (1.0 - ANOMALY_ALPHA / SINGLETON_BETA) / ANOMALY_MU;
        let spec = ExpHawkesSpec::new(ANOMALY_MU, ANOMALY_ALPHA, SINGLETON_BETA, horizon)
            .expect("valid singleton spec");
        (vec![spec], SINGLETON_COUNT, SINGLETON_MEAN_LENGTH, notes)
    }
}

const ANOMALY_STREAM: u64 = 1;
const NORMAL_STREAM: u64 = 2;

/// Builds one of the synthetic datasets; every sequence has its own RNG
/// stream derived from `seed`, so the output does not depend on threading.
pub fn make_dataset(kind: DatasetKind, seed: u64) -> Dataset {
    let (specs, per_stratum, target, mut notes) = anomaly_strata(kind);
    let horizon = specs[0].horizon;
    let jobs: Vec<(usize, ExpHawkesSpec)> = specs
        .iter()
        .flat_map(|s| std::iter::repeat_n(*s, per_stratum))
        .enumerate()
        .collect();
    let mut sequences: Vec<Sequence> = jobs
        .par_iter()
        .map(|(i, spec)| {
            let mut rng = seeding::rng(seed, &[ANOMALY_STREAM, *i as u64]);
            simulate_hawkes(spec, &mut rng).with_label(Label::Anomalous)
        })
        .collect();

    let with_normals = matches!(kind, DatasetKind::Mixed | DatasetKind::MixedComposite);
    let normals = with_normals.then(|| {
        notes.push(format!(
            "normal rates uniform in [{}, {}]; normals share the anomalies' horizon",
            NORMAL_RATE_RANGE.0, NORMAL_RATE_RANGE.1
        ));
        let extra: Vec<Sequence> = (0..NORMAL_COUNT)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeding::rng(seed, &[NORMAL_STREAM, i as u64]);
                let rate = rng.random_range(NORMAL_RATE_RANGE.0..NORMAL_RATE_RANGE.1);
                simulate_poisson(rate, horizon, &mut rng)
                    .expect("positive rate")
                    .with_label(Label::Normal)
            })
            .collect();
        sequences.extend(extra);
        NormalSpec {
            count: NORMAL_COUNT,
            rate_min: NORMAL_RATE_RANGE.0,
            rate_max: NORMAL_RATE_RANGE.1,
        }
    });

    let strata = specs
        .iter()
        .map(|s| Stratum {
            mu: s.mu,
            alpha_kernel: s.alpha_kernel,
            beta: s.beta,
            burn_in: s.burn_in,
            count: per_stratum,
        })
        .collect();
    Dataset {
        sequences,
        manifest: Manifest {
            kind,
            seed,
            horizon,
            mark_dim: 0,
            target_mean_length: target,
            strata,
            normals,
            notes,
        },
    }
}
