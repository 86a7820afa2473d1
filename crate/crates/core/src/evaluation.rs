//! Step-wise precision, recall and F1 of the online detector.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{carried_statistics, detect, ThresholdCurve};
use crate::error::{Error, Result};
use crate::events::Sequence;
use crate::hawkes::{prefix_log_likelihood, DetectorParams};

/// Metrics after `step` events, with `V` the sequences alarmed so far and
/// `U` the true anomalies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub anomalies: usize,
    pub alarms: usize,
    pub hits: usize,
    /// No alarms yet; precision is reported as 0.
    pub degenerate: bool,
}

/// Metrics from per-sequence alarm steps. Sequences not labeled anomalous
/// count as negatives.
pub fn stepwise_from_alarms(
    is_anomalous: &[bool],
    alarm_steps: &[Option<usize>],
    max_step: usize,
) -> Result<Vec<StepMetrics>> {
    if is_anomalous.len() != alarm_steps.len() {
        return Err(Error::DimensionMismatch {
            expected: is_anomalous.len(),
            got: alarm_steps.len(),
        });
    }
    let anomalies = is_anomalous.iter().filter(|&&a| a).count();
    if anomalies == 0 {
        return Err(Error::NoAnomalies);
    }
    Ok((1..=max_step)
        .map(|step| {
            let mut alarms = 0;
            let mut hits = 0;
            for (&a, s) in is_anomalous.iter().zip(alarm_steps) {
                if s.is_some_and(|s| s <= step) {
                    alarms += 1;
                    hits += a as usize;
                }
            }
            let degenerate = alarms == 0;
            let precision = if degenerate { 0.0 } else { hits as f64 / alarms as f64 };
            let recall = hits as f64 / anomalies as f64;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            StepMetrics {
                step,
                precision,
                recall,
                f1,
                anomalies,
                alarms,
                hits,
                degenerate,
            }
        })
        .collect())
}

/// Runs the online detector on every sequence and scores steps `1..=max_step`.
pub fn stepwise_evaluate(
    data: &[Sequence],
    detector: &DetectorParams,
    curve: &ThresholdCurve,
    max_step: usize,
) -> Result<Vec<StepMetrics>> {
    let alarms: Vec<Option<usize>> = data
        .par_iter()
        .map(|s| detect(s, detector, curve).map(|r| r.stop_index))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = data.iter().map(Sequence::is_anomalous).collect();
    stepwise_from_alarms(&labels, &alarms, max_step)
}

pub fn write_metrics_csv(rows: &[StepMetrics], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "step,precision,recall,f1,U,V,UiV,degenerate")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.step, r.precision, r.recall, r.f1, r.anomalies, r.alarms, r.hits, r.degenerate
        )?;
    }
    Ok(())
}

/// Mean prefix statistic per step for each class next to the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanTrace {
    pub step: usize,
    pub anomalous_mean: Option<f64>,
    pub normal_mean: Option<f64>,
    pub generated_mean: f64,
    pub threshold: f64,
}

/// Full prefix traces of every sequence.
pub fn prefix_traces(data: &[Sequence], detector: &DetectorParams) -> Result<Vec<Vec<f64>>> {
    let fs = detector.features()?;
    data.par_iter()
        .map(|s| prefix_log_likelihood(s, detector, fs))
        .collect()
}

/// Class means of the prefix statistic, each trace carried forward past its
/// last event, alongside the generated mean and the threshold.
pub fn mean_traces(
    data: &[Sequence],
    detector: &DetectorParams,
    curve: &ThresholdCurve,
    max_step: usize,
) -> Result<Vec<MeanTrace>> {
    let traces = prefix_traces(data, detector)?;
    let class = |anomalous: bool| {
        let picked: Vec<Vec<f64>> = data
            .iter()
            .zip(&traces)
            .filter(|(s, _)| s.is_anomalous() == anomalous)
            .map(|(_, t)| t.clone())
            .collect();
        carried_statistics(&picked, max_step).map(|(m, _)| m)
    };
    let anomalous = class(true);
    let normal = class(false);
    Ok((1..=max_step)
        .map(|step| {
            let generated = curve.means[(step - 1).min(curve.means.len() - 1)];
            MeanTrace {
                step,
                anomalous_mean: anomalous.as_ref().map(|m| m[step - 1]),
                normal_mean: normal.as_ref().map(|m| m[step - 1]),
                generated_mean: generated,
                threshold: curve.at(step),
            }
        })
        .collect())
}

pub fn write_traces_csv(rows: &[MeanTrace], w: &mut impl Write) -> std::io::Result<()> {
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    writeln!(w, "step,anomalous_mean,normal_mean,generated_mean,threshold")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step,
            cell(r.anomalous_mean),
            cell(r.normal_mean),
            r.generated_mean,
            r.threshold
        )?;
    }
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
