//! Domain data model for marked event sequences.
//!
//! An event sequence is an ordered list of `(time, type)` pairs observed over a
//! window. Event types carry a textual description (e.g. "Nice Question") in
//! addition to their integer id, and datasets bundle sequences with the type
//! table and a time unit.
//!
//! Datasets are stored as JSON:
//!
//! ```text
//! {
//!   "name": "...", "time_unit": "...",
//!   "event_types": [{"id": 0, "text": "Large"}, ...],
//!   "sequences": [
//!     {"id": "s0", "window": [0.0, 50.0],
//!      "events": [{"time": 0.3, "type": 1}, ...]},
//!     ...
//!   ]
//! }
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

use crate::error::DataError;

/// An event type: integer id plus textual description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventType {
    pub id: usize,
    pub text: String,
}

/// A single event: occurrence time (in dataset time units) and type id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(rename = "type")]
    pub type_id: usize,
}

/// An ordered event sequence over an observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub id: String,
    /// `[window_start, window_end]`.
    pub window: [f64; 2],
    pub events: Vec<Event>,
}

impl EventSequence {
    pub fn window_start(&self) -> f64 {
        self.window[0]
    }

    pub fn window_end(&self) -> f64 {
        self.window[1]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Event times as a vector.
    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    /// Event type ids as a vector.
    pub fn type_ids(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.type_id).collect()
    }
}

/// A named dataset: type table plus sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub time_unit: String,
    #[serde(rename = "event_types")]
    pub types: Vec<EventType>,
    pub sequences: Vec<EventSequence>,
}

/// Summary counts in the style of a dataset overview table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_types: usize,
    pub num_events: usize,
    pub num_sequences: usize,
    pub avg_seq_length: f64,
}

/// A single validation violation, with the offending index where applicable.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonMonotoneTime { index: usize },
    TypeOutOfRange { index: usize, type_id: usize, k_max: usize },
    NonFiniteTime { index: usize },
    NegativeTime { index: usize },
    TooShort { len: usize },
    EventOutsideWindow { index: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonMonotoneTime { index } => {
                write!(f, "non-monotone time at index {index}")
            }
            Violation::TypeOutOfRange { index, type_id, k_max } => {
                write!(f, "type id {type_id} out of range (K={k_max}) at index {index}")
            }
            Violation::NonFiniteTime { index } => write!(f, "non-finite time at index {index}"),
            Violation::NegativeTime { index } => write!(f, "negative time at index {index}"),
            Violation::TooShort { len } => write!(f, "length < 2 (got {len})"),
            Violation::EventOutsideWindow { index } => {
                write!(f, "event outside observation window at index {index}")
            }
        }
    }
}

/// Checks a sequence against the structural invariants and reports every
/// violation found. An empty report means the sequence is valid.
pub fn validate_sequence(seq: &EventSequence, k_max: usize) -> Vec<Violation> {
    let mut violations = Vec::new();
    if seq.events.len() < 2 {
        violations.push(Violation::TooShort { len: seq.events.len() });
    }
    for (i, ev) in seq.events.iter().enumerate() {
        if !ev.time.is_finite() {
            violations.push(Violation::NonFiniteTime { index: i });
            continue;
        }
        if ev.time < 0.0 && seq.window_start() >= 0.0 {
            violations.push(Violation::NegativeTime { index: i });
        }
        if i > 0 && ev.time < seq.events[i - 1].time {
            violations.push(Violation::NonMonotoneTime { index: i });
        }
        if ev.type_id >= k_max {
            violations.push(Violation::TypeOutOfRange { index: i, type_id: ev.type_id, k_max });
        }
        if ev.time < seq.window_start() || ev.time > seq.window_end() {
            violations.push(Violation::EventOutsideWindow { index: i });
        }
    }
    violations
}

/// Shifts all times so the first event sits at 0; the window moves by the same
/// amount. Idempotent, preserves gaps and ties.
pub fn normalize_times(seq: &EventSequence) -> EventSequence {
    let shift = match seq.events.first() {
        Some(e) => e.time,
        None => return seq.clone(),
    };
    EventSequence {
        id: seq.id.clone(),
        window: [seq.window[0] - shift, seq.window[1] - shift],
        events: seq
            .events
            .iter()
            .map(|e| Event { time: e.time - shift, type_id: e.type_id })
            .collect(),
    }
}

/// Normalizes every sequence in the dataset (per-sequence shift to 0).
pub fn normalize_dataset(ds: &Dataset) -> Dataset {
    Dataset {
        name: ds.name.clone(),
        time_unit: ds.time_unit.clone(),
        types: ds.types.clone(),
        sequences: ds.sequences.iter().map(normalize_times).collect(),
    }
}

/// Deterministic shuffled split into train/val/test.
///
/// Sizes are `floor(N * r_train)` and `floor(N * r_val)`, with the remainder
/// going to test. The shuffle is a seeded Fisher-Yates, so membership is a
/// pure function of `(dataset order, seed)`.
pub fn split_dataset(
    ds: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let (r_train, r_val, r_test) = ratios;
    if r_train <= 0.0 || r_val <= 0.0 || r_test <= 0.0 {
        return Err(DataError::BadSplitRatios { ratios: vec![r_train, r_val, r_test] });
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(DataError::BadSplitRatios { ratios: vec![r_train, r_val, r_test] });
    }
    let n = ds.sequences.len();
    if n == 0 {
        return Err(DataError::EmptyDataset);
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = ((n as f64) * r_train).floor() as usize;
    let n_val = ((n as f64) * r_val).floor() as usize;

    let make = |suffix: &str, idx: &[usize]| Dataset {
        name: format!("{}-{suffix}", ds.name),
        time_unit: ds.time_unit.clone(),
        types: ds.types.clone(),
        sequences: idx.iter().map(|&i| ds.sequences[i].clone()).collect(),
    };
    Ok((
        make("train", &order[..n_train]),
        make("val", &order[n_train..n_train + n_val]),
        make("test", &order[n_train + n_val..]),
    ))
}

/// Computes summary counts. Errors on an empty sequence list.
pub fn dataset_stats(ds: &Dataset) -> Result<DatasetStats, DataError> {
    let num_sequences = ds.sequences.len();
    if num_sequences == 0 {
        return Err(DataError::EmptyDataset);
    }
    let num_events: usize = ds.sequences.iter().map(|s| s.events.len()).sum();
    Ok(DatasetStats {
        num_types: ds.types.len(),
        num_events,
        num_sequences,
        avg_seq_length: num_events as f64 / num_sequences as f64,
    })
}

/// Validates the whole dataset: type table invariants plus every sequence.
pub fn validate_dataset(ds: &Dataset) -> Result<(), DataError> {
    let k = ds.types.len();
    for (i, ty) in ds.types.iter().enumerate() {
        if ty.id != i {
            return Err(DataError::BadTypeTable {
                detail: format!("type ids must be contiguous 0..K-1; got id {} at position {i}", ty.id),
            });
        }
        if ty.text.trim().is_empty() {
            return Err(DataError::BadTypeTable { detail: format!("type {i} has empty text") });
        }
    }
    let mut seen = HashSet::new();
    for ty in &ds.types {
        if !seen.insert(ty.text.as_str()) {
            return Err(DataError::BadTypeTable {
                detail: format!("duplicate type text {:?}", ty.text),
            });
        }
    }
    for seq in &ds.sequences {
        let violations = validate_sequence(seq, k);
        if !violations.is_empty() {
            return Err(DataError::InvalidSequence {
                id: seq.id.clone(),
                detail: violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            });
        }
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
    let ds: Dataset = serde_json::from_str(&text)
        .map_err(|e| DataError::Schema { path: path.display().to_string(), detail: e.to_string() })?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(ds).expect("dataset serializes");
    std::fs::write(path, text)
        .map_err(|e| DataError::Io { path: path.display().to_string(), source: e })
}
