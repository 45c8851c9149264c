//! Next-event type and time prediction heads and their losses.
//!
//! The type head is a linear map plus softmax over the `K` types; the time
//! head is a single linear unit whose raw output is read as the next
//! inter-event gap (clamped at zero) by default, or as an absolute time when
//! configured. Losses follow the training objective: cross-entropy summed
//! over events `2..n` and a summed squared time error over the same range.

use ndarray::{Array1, Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::backbone::normal_matrix;
use crate::params::{BoundParams, ParamFamily, ParamId, ParamSet};

/// Linear-softmax head over event types.
#[derive(Debug, Clone)]
pub struct TypeHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Scalar linear head for the next time.
#[derive(Debug, Clone)]
pub struct TimeHead {
    pub weight: Array1<f64>,
    pub bias: f64,
}

/// Coefficients of the type/time loss terms in the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta_type: f64,
    pub beta_time: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta_type: 1.0, beta_time: 1.0 }
    }
}

/// What the time head's raw output means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeTarget {
    /// Raw output is the next inter-event gap, clamped at zero.
    #[default]
    Gap,
    /// Raw output is the next absolute time.
    Absolute,
}

/// Softmax probabilities over the next event type.
pub fn predict_type_probs(h: ArrayView1<f64>, head: &TypeHead) -> Array1<f64> {
    let mut logits = head.weight.dot(&h) + &head.bias;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logits.mapv_inplace(|x| (x - max).exp());
    let sum = logits.sum();
    logits / sum
}

/// Argmax type id; ties break toward the lowest id.
pub fn predict_next_type(h: ArrayView1<f64>, head: &TypeHead) -> usize {
    argmax(&predict_type_probs(h, head))
}

pub fn argmax(probs: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, v) in probs.iter().enumerate() {
        if *v > probs[best] {
            best = i;
        }
    }
    best
}

/// Raw output of the time head.
pub fn time_head_raw(h: ArrayView1<f64>, head: &TimeHead) -> f64 {
    head.weight.dot(&h) + head.bias
}

/// Predicted next absolute time from the event at `t_prev`.
pub fn predict_time(t_prev: f64, h: ArrayView1<f64>, head: &TimeHead, target: TimeTarget) -> f64 {
    let raw = time_head_raw(h, head);
    match target {
        TimeTarget::Gap => t_prev + raw.max(0.0),
        TimeTarget::Absolute => raw,
    }
}

/// Cross-entropy of the true type under the predicted distribution.
pub fn type_loss(probs: &Array1<f64>, true_k: usize) -> f64 {
    -probs[true_k].ln()
}

/// Summed squared error between predicted and true event times.
pub fn time_loss(pred_times: &[f64], true_times: &[f64]) -> f64 {
    debug_assert_eq!(pred_times.len(), true_times.len());
    pred_times
        .iter()
        .zip(true_times)
        .map(|(p, t)| (t - p) * (t - p))
        .sum()
}

// ---------------------------------------------------------------------------
// Parameter registration and tape graphs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeHeadIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeHeadIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

pub fn init_type_head(
    params: &mut ParamSet,
    num_types: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> TypeHeadIds {
    TypeHeadIds {
        weight: params.add(
            "type_head.weight",
            ParamFamily::TypeHead,
            normal_matrix(rng, num_types, hidden, 0.02),
        ),
        bias: params.add("type_head.bias", ParamFamily::TypeHead, Array2::zeros((1, num_types))),
    }
}

pub fn init_time_head(params: &mut ParamSet, hidden: usize, rng: &mut ChaCha8Rng) -> TimeHeadIds {
    TimeHeadIds {
        weight: params.add(
            "time_head.weight",
            ParamFamily::TimeHead,
            normal_matrix(rng, 1, hidden, 0.02),
        ),
        bias: params.add("time_head.bias", ParamFamily::TimeHead, Array2::zeros((1, 1))),
    }
}

pub fn type_head_from_params(params: &ParamSet, ids: &TypeHeadIds) -> TypeHead {
    TypeHead {
        weight: params.value(ids.weight).clone(),
        bias: params.value(ids.bias).row(0).to_owned(),
    }
}

pub fn time_head_from_params(params: &ParamSet, ids: &TimeHeadIds) -> TimeHead {
    TimeHead {
        weight: params.value(ids.weight).row(0).to_owned(),
        bias: params.value(ids.bias)[[0, 0]],
    }
}

/// Cross-entropy node over events `2..n`: `h_prev` holds `h_1..h_{n-1}` as
/// rows and `type_ids` is the full per-event type list.
pub fn type_ce_node(
    tape: &mut Tape,
    h_prev: NodeId,
    type_ids: &[usize],
    ids: &TypeHeadIds,
    bound: &BoundParams,
) -> NodeId {
    let n = type_ids.len();
    debug_assert_eq!(tape.value(h_prev).nrows(), n - 1);
    let logits = tape.matmul_tb(h_prev, bound.node(ids.weight));
    let logits = tape.add_row(logits, bound.node(ids.bias));
    let logp = tape.log_softmax_rows(logits);
    let coords: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, type_ids[i])).collect();
    let picked = tape.gather_entries(logp, coords);
    let total = tape.sum_all(picked);
    tape.scale(total, -1.0)
}

/// Squared-error time loss node over events `2..n`.
pub fn time_loss_node(
    tape: &mut Tape,
    h_prev: NodeId,
    times: &[f64],
    target: TimeTarget,
    ids: &TimeHeadIds,
    bound: &BoundParams,
) -> NodeId {
    let n = times.len();
    debug_assert_eq!(tape.value(h_prev).nrows(), n - 1);
    let raw = tape.matmul_tb(h_prev, bound.node(ids.weight));
    let raw = tape.add_row(raw, bound.node(ids.bias));
    let diff = match target {
        TimeTarget::Gap => {
            let pred_gap = tape.relu(raw);
            let neg_gaps = Array2::from_shape_fn((n - 1, 1), |(r, _)| -(times[r + 1] - times[r]));
            let neg = tape.constant(neg_gaps);
            tape.add(pred_gap, neg)
        }
        TimeTarget::Absolute => {
            let neg_times = Array2::from_shape_fn((n - 1, 1), |(r, _)| -times[r + 1]);
            let neg = tape.constant(neg_times);
            tape.add(raw, neg)
        }
    };
    let sq = tape.mul(diff, diff);
    tape.sum_all(sq)
}
