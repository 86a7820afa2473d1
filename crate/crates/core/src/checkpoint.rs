//! Versioned JSON checkpoint holding everything the pipeline produces.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::ThresholdCurve;
use crate::error::{Error, Result};
use crate::generator::GeneratorParams;
use crate::hawkes::DetectorParams;
use crate::training::{Adam, TrainConfig, TrainHistory, TrainState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub train: u64,
    pub threshold: Option<u64>,
}

/// Optimizer state kept so training can be resumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub iterations_done: usize,
    pub detector_opt: Adam,
    pub generator_opt: Adam,
    pub history: TrainHistory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub detector: DetectorParams,
    pub generator: Option<GeneratorParams>,
    pub threshold: Option<ThresholdCurve>,
    pub config: TrainConfig,
    pub horizon: f64,
    pub max_events: usize,
    pub seeds: Seeds,
    /// SHA-256 of the training data file, hex encoded.
    pub dataset_digest: String,
    pub resume: Option<ResumeState>,
}

impl Checkpoint {
    pub fn from_training(state: TrainState, config: TrainConfig, dataset_digest: String) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            detector: state.detector,
            generator: Some(state.generator),
            threshold: None,
            seeds: Seeds {
                train: config.seed,
                threshold: None,
            },
            config,
            horizon: state.horizon,
            max_events: state.max_events,
            dataset_digest,
            resume: Some(ResumeState {
                iterations_done: state.iterations_done,
                detector_opt: state.detector_opt,
                generator_opt: state.generator_opt,
                history: state.history,
            }),
        }
    }

    /// Training state to continue from; needs the generator and optimizer.
    pub fn training_state(&self) -> Result<TrainState> {
        let generator = self.generator()?.clone();
        let resume = self
            .resume
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("no optimizer state to resume from".into()))?;
        Ok(TrainState {
            detector: self.detector.clone(),
            generator,
            detector_opt: resume.detector_opt.clone(),
            generator_opt: resume.generator_opt.clone(),
            iterations_done: resume.iterations_done,
            history: resume.history.clone(),
            horizon: self.horizon,
            max_events: self.max_events,
        })
    }

    pub fn generator(&self) -> Result<&GeneratorParams> {
        self.generator
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no generator parameters".into()))
    }

    pub fn threshold(&self) -> Result<&ThresholdCurve> {
        self.threshold
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no threshold curve".into()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not JSON: {e}")))?;
        let version = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Checkpoint("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        serde_json::from_value(raw).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
