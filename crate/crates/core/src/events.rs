//! Marked event sequences, mark normalization and the JSON-lines format.

use std::f64::consts::TAU;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation `(t, m)`. For purely temporal data `mark` is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mark: Vec<f64>,
}

impl Event {
    pub fn new(t: f64, mark: Vec<f64>) -> Self {
        Self { t, mark }
    }

    pub fn temporal(t: f64) -> Self {
        Self { t, mark: Vec::new() }
    }

    pub fn mark_dim(&self) -> usize {
        self.mark.len()
    }

    /// The event as a point `[t, m_1, ..., m_d]` in `d + 1` dimensions.
    pub fn point(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.mark.len() + 1);
        v.push(self.t);
        v.extend_from_slice(&self.mark);
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Anomalous,
    Normal,
    Unknown,
}

/// Time-ordered events observed on `[0, horizon)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub events: Vec<Event>,
}

impl Sequence {
    /// Builds a sequence and rejects it if any invariant is violated.
    pub fn new(horizon: f64, events: Vec<Event>, label: Option<Label>) -> Result<Self> {
        let seq = Self {
            horizon,
            label,
            events,
        };
        let violations = validate(&seq);
        if violations.is_empty() {
            Ok(seq)
        } else {
            Err(Error::Validation {
                line: None,
                violations,
            })
        }
    }

    pub fn empty(horizon: f64) -> Self {
        Self {
            horizon,
            label: None,
            events: Vec::new(),
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Mark dimension `d`, taken from the first event (0 when empty).
    pub fn mark_dim(&self) -> usize {
        self.events.first().map_or(0, Event::mark_dim)
    }

    pub fn is_anomalous(&self) -> bool {
        self.label == Some(Label::Anomalous)
    }

    /// The first `i` events with the same horizon and label.
    pub fn prefix(&self, i: usize) -> Sequence {
        Sequence {
            horizon: self.horizon,
            label: self.label,
            events: self.events[..i.min(self.events.len())].to_vec(),
        }
    }

    /// Times as a flat slice-friendly vector.
    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }

    /// Events as consecutive `d + 1`-dimensional points.
    pub fn flat_points(&self) -> Vec<f64> {
        self.events.iter().flat_map(|e| e.point()).collect()
    }
}

/// A broken invariant of an [`Event`] or [`Sequence`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonPositiveHorizon(f64),
    NonFiniteTime { index: usize },
    NegativeTime { index: usize },
    BeyondHorizon { index: usize },
    NonStrictOrdering { index: usize },
    MarkDimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    NonFiniteMark { index: usize, coordinate: usize },
    MarkOutOfRange { index: usize, coordinate: usize },
}

impl Violation {
    /// Everything except the `[0, 2π]` mark range, which only holds after
    /// normalization.
    pub fn is_structural(&self) -> bool {
        !matches!(self, Violation::MarkOutOfRange { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveHorizon(h) => write!(f, "non-positive horizon {h}"),
            Violation::NonFiniteTime { index } => write!(f, "non-finite time at index {index}"),
            Violation::NegativeTime { index } => write!(f, "negative time at index {index}"),
            Violation::BeyondHorizon { index } => {
                write!(f, "event beyond horizon at index {index}")
            }
            Violation::NonStrictOrdering { index } => {
                write!(f, "non-strict ordering at index {index}")
            }
            Violation::MarkDimension {
                index,
                expected,
                got,
            } => write!(
                f,
                "mark dimension {got} at index {index}, expected {expected}"
            ),
            Violation::NonFiniteMark { index, coordinate } => {
                write!(f, "non-finite mark coordinate {coordinate} at index {index}")
            }
            Violation::MarkOutOfRange { index, coordinate } => write!(
                f,
                "mark coordinate {coordinate} at index {index} outside [0, 2pi]"
            ),
        }
    }
}

/// Every violated invariant of `seq`, in event order.
pub fn validate(seq: &Sequence) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(seq.horizon.is_finite() && seq.horizon > 0.0) {
        out.push(Violation::NonPositiveHorizon(seq.horizon));
    }
    let d = seq.mark_dim();
    let mut prev: Option<f64> = None;
    for (index, e) in seq.events.iter().enumerate() {
        if !e.t.is_finite() {
            out.push(Violation::NonFiniteTime { index });
        } else {
            if e.t < 0.0 {
                out.push(Violation::NegativeTime { index });
            }
            if e.t >= seq.horizon {
                out.push(Violation::BeyondHorizon { index });
            }
            if let Some(p) = prev {
                if e.t <= p {
                    out.push(Violation::NonStrictOrdering { index });
                }
            }
            prev = Some(e.t);
        }
        if e.mark.len() != d {
            out.push(Violation::MarkDimension {
                index,
                expected: d,
                got: e.mark.len(),
            });
        }
        for (coordinate, &m) in e.mark.iter().enumerate() {
            if !m.is_finite() {
                out.push(Violation::NonFiniteMark { index, coordinate });
            } else if !(0.0..=TAU).contains(&m) {
                out.push(Violation::MarkOutOfRange { index, coordinate });
            }
        }
    }
    out
}

/// Affine rescaling of each mark coordinate from `[a, b]` onto `[0, 2π]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkNormalization {
    ranges: Vec<(f64, f64)>,
}

impl MarkNormalization {
    pub fn new(ranges: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(a, b)) in ranges.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::InvalidArgument(format!(
                    "mark range {i} is [{a}, {b}]; need finite a < b"
                )));
            }
        }
        Ok(Self { ranges })
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }
}

pub fn normalize_marks(seq: &Sequence, norm: &MarkNormalization) -> Result<Sequence> {
    map_marks(seq, norm, |m, (a, b)| {
        if !(a..=b).contains(&m) {
            None
        } else {
            Some((m - a) / (b - a) * TAU)
        }
    })
}

/// Inverse of [`normalize_marks`].
pub fn denormalize_marks(seq: &Sequence, norm: &MarkNormalization) -> Result<Sequence> {
    map_marks(seq, norm, |m, (a, b)| {
        if !(0.0..=TAU).contains(&m) {
            None
        } else {
            Some(a + m / TAU * (b - a))
        }
    })
}

fn map_marks(
    seq: &Sequence,
    norm: &MarkNormalization,
    f: impl Fn(f64, (f64, f64)) -> Option<f64>,
) -> Result<Sequence> {
    let mut events = Vec::with_capacity(seq.events.len());
    for (event, e) in seq.events.iter().enumerate() {
        if e.mark.len() != norm.dim() {
            return Err(Error::DimensionMismatch {
                expected: norm.dim(),
                got: e.mark.len(),
            });
        }
        let mut mark = Vec::with_capacity(e.mark.len());
        for (coordinate, (&m, &range)) in e.mark.iter().zip(&norm.ranges).enumerate() {
            match f(m, range) {
                Some(v) => mark.push(v),
                None => {
                    return Err(Error::MarkOutOfRange {
                        event,
                        coordinate,
                        value: m,
                    })
                }
            }
        }
        events.push(Event { t: e.t, mark });
    }
    Ok(Sequence {
        horizon: seq.horizon,
        label: seq.label,
        events,
    })
}

/// Reads one sequence per line. Blank lines are skipped; lines are
/// numbered from 1 in errors.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Sequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: Sequence = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let violations: Vec<_> = validate(&seq)
            .into_iter()
            .filter(Violation::is_structural)
            .collect();
        if !violations.is_empty() {
            return Err(Error::Validation {
                line: Some(line_no),
                violations,
            });
        }
        out.push(seq);
    }
    Ok(out)
}

pub fn save_jsonl(seqs: &[Sequence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl(seqs, &mut w).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl(seqs: &[Sequence], w: &mut impl Write) -> Result<()> {
    for s in seqs {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}
