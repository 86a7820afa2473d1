use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use appd_core::checkpoint::Checkpoint;
use appd_core::detection::{detect, detect_with, OnlineThreshold, ThresholdOptions};
use appd_core::events::{self, Label, Sequence};
use appd_core::training::{self, TrainConfig};
use appd_core::{detection, evaluation, simulate, Error};

use crate::args::{DetectArgs, EvaluateArgs, SimulateArgs, ThresholdArgs, TrainArgs};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::MarkOutOfRange { .. }
            | Error::DimensionMismatch { .. }
            | Error::NoAnomalies => EXIT_DATA,
            Error::Checkpoint(_) | Error::MissingFeatures => EXIT_CHECKPOINT,
            _ => EXIT_OTHER,
        };
        Self::new(code, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn data_failure(e: Error) -> Failure {
    match e {
        Error::Io { .. } => Failure::from(e),
        other => Failure::new(EXIT_DATA, other.to_string()),
    }
}

fn load_data(path: &Path) -> Result<Vec<Sequence>, Failure> {
    events::load_jsonl(path).map_err(data_failure)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure::from(e),
        other => Failure::new(EXIT_CHECKPOINT, other.to_string()),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::from(Error::io(path, e)))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn simulate(args: SimulateArgs) -> Outcome {
    let dataset = simulate::make_dataset(args.kind.into(), args.seed);
    fs::create_dir_all(&args.out).map_err(|e| Failure::from(Error::io(&args.out, e)))?;
    events::save_jsonl(&dataset.sequences, args.out.join("sequences.jsonl"))?;
    let manifest = serde_json::to_string_pretty(&dataset.manifest).map_err(Error::from)? + "\n";
    write_file(&args.out.join("manifest.json"), manifest.as_bytes())?;
    eprintln!(
        "wrote {} sequences ({}) to {}",
        dataset.sequences.len(),
        dataset.manifest.kind.name(),
        args.out.display()
    );
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::from(Error::io(path, e)))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::new(EXIT_USAGE, format!("config {}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut config.outer_iterations, args.iterations);
    set(&mut config.inner_steps, args.inner_steps);
    set(&mut config.generated_batch, args.generated_batch);
    set(&mut config.real_batch, args.real_batch);
    set(&mut config.features, args.features);
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(lr) = args.lr_generator {
        config.lr_generator = lr;
    }
    if let Some(lr) = args.lr_detector {
        config.lr_detector = lr;
    }
    if args.clip_norm.is_some() {
        config.clip_norm = args.clip_norm;
    }
    config.validate()?;
    Ok(config)
}

pub fn train(args: TrainArgs) -> Outcome {
    let config = train_config(&args)?;
    let bytes = fs::read(&args.data).map_err(|e| Failure::from(Error::io(&args.data, e)))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let data: Vec<Sequence> = load_data(&args.data)?
        .into_iter()
        .filter(|s| s.label != Some(Label::Normal))
        .collect();
    training::summarize(&data).map_err(data_failure)?;

    let start = if args.resume {
        let ckpt = load_checkpoint(&args.out)?;
        if ckpt.dataset_digest != digest {
            return Err(Failure::new(
                EXIT_CHECKPOINT,
                "checkpoint was trained on a different dataset",
            ));
        }
        ckpt.training_state().map_err(|e| Failure::new(EXIT_CHECKPOINT, e.to_string()))?
    } else {
        training::initialize(&data, &config)?
    };
    let state = match training::resume(&data, &config, start) {
        Ok(state) => state,
        Err(Error::Diverged { iteration, history }) => {
            let path = args.history.clone().unwrap_or_else(|| sibling(&args.out, "history.csv"));
            history.save_csv(&path)?;
            return Err(Failure::new(
                EXIT_OTHER,
                format!("training diverged at iteration {iteration}; history up to failure in {}", path.display()),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let history_path = args.history.clone().unwrap_or_else(|| sibling(&args.out, "history.csv"));
    state.history.save_csv(&history_path)?;
    Checkpoint::from_training(state, config, digest).save(&args.out)?;
    eprintln!("wrote {} and {}", args.out.display(), history_path.display());
    Ok(())
}

pub fn threshold(args: ThresholdArgs) -> Outcome {
    let mut ckpt = load_checkpoint(&args.checkpoint)?;
    let generator = ckpt
        .generator()
        .map_err(|e| Failure::new(EXIT_CHECKPOINT, e.to_string()))?;
    let opts = ThresholdOptions {
        n_generated: args.n_generated,
        max_step: args.max_step,
        scale: args.scale,
        seed: args.seed,
        horizon: ckpt.horizon,
        max_events: ckpt.max_events,
    };
    let curve = detection::estimate_threshold(&ckpt.detector, generator, &opts)?;
    ckpt.threshold = Some(curve);
    ckpt.seeds.threshold = Some(args.seed);
    let out = args.out.unwrap_or(args.checkpoint);
    ckpt.save(&out)?;
    eprintln!("wrote threshold curve of length {} to {}", args.max_step, out.display());
    Ok(())
}

fn stored_curve(ckpt: &Checkpoint, scale: Option<f64>) -> Result<detection::ThresholdCurve, Failure> {
    let curve = ckpt
        .threshold()
        .map_err(|e| Failure::new(EXIT_CHECKPOINT, e.to_string()))?;
    Ok(match scale {
        Some(c) => curve.rescaled(c),
        None => curve.clone(),
    })
}

pub fn detect_cmd(args: DetectArgs) -> Outcome {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = load_data(&args.data)?;
    ckpt.detector
        .features()
        .map_err(|e| Failure::new(EXIT_CHECKPOINT, e.to_string()))?;
    let results = if args.online_threshold {
        let generator = ckpt
            .generator()
            .map_err(|e| Failure::new(EXIT_CHECKPOINT, e.to_string()))?;
        let opts = ThresholdOptions {
            n_generated: args.n_generated,
            max_step: 1,
            scale: args.scale.or(ckpt.threshold.as_ref().map(|c| c.scale)).unwrap_or(1.0),
            seed: args.seed,
            horizon: ckpt.horizon,
            max_events: ckpt.max_events,
        };
        let online = OnlineThreshold::new(&ckpt.detector, generator, opts)?;
        data.iter()
            .map(|s| detect_with(s, &ckpt.detector, |i| online.at(i)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let curve = stored_curve(&ckpt, args.scale)?;
        data.iter()
            .map(|s| detect(s, &ckpt.detector, &curve))
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut out = String::new();
    for r in &results {
        out.push_str(&serde_json::to_string(r).map_err(Error::from)?);
        out.push('\n');
    }
    write_file(&args.out, out.as_bytes())?;
    let alarms = results.iter().filter(|r| r.is_anomaly).count();
    eprintln!("{alarms} of {} sequences alarmed", results.len());
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Outcome {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = load_data(&args.data)?;
    let curve = stored_curve(&ckpt, args.scale)?;
    let max_step = args.max_step.unwrap_or(curve.len());
    if max_step == 0 {
        return Err(Failure::new(EXIT_USAGE, "--max-step must be at least 1"));
    }
    let metrics = evaluation::stepwise_evaluate(&data, &ckpt.detector, &curve, max_step)?;
    let traces = evaluation::mean_traces(&data, &ckpt.detector, &curve, max_step)?;
    evaluation::save_csv(&args.out, |w| evaluation::write_metrics_csv(&metrics, w))?;
    let traces_path = args.traces.unwrap_or_else(|| sibling(&args.out, "traces.csv"));
    evaluation::save_csv(&traces_path, |w| evaluation::write_traces_csv(&traces, w))?;
    if let Some(last) = metrics.last() {
        eprintln!(
            "step {}: precision {:.3} recall {:.3} f1 {:.3}",
            last.step, last.precision, last.recall, last.f1
        );
    }
    Ok(())
}
