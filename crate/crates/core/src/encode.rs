//! Tokenization of event-type texts and prompts, temporal embeddings, and
//! assembly of the flattened per-event embedding stream.
//!
//! Each event contributes a block of slots to the stream: its type tokens and
//! one time slot, in either order. A prompt (when enabled) is prepended. The
//! stream for events with token lengths `L_i` and prompt length `L_p` has
//! `L_p + sum_i (L_i + 1)` slots, and the final slot of event `i` (0-based)
//! sits at index `L_p + sum_{j<=i} L_j + i`. Hidden states at those indices
//! summarize the history up to and including event `i`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::data::{Dataset, EventSequence, EventType};
use crate::error::ModelError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Word-level vocabulary with reserved PAD=0 and UNK=1 entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }
}

/// Token ids for one event type text.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedEvent {
    pub token_ids: Vec<usize>,
}

impl TokenizedEvent {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// How event times are embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalVariant {
    /// Sinusoidal encoding of the raw event time (no parameters).
    Sinusoidal,
    /// Sinusoid evaluated at `position + s_j * t` with learnable per-dimension
    /// scales `s` (initialized to 1).
    TimeShifted,
    /// Affine map `w * t + b` with learnable vectors `w, b`.
    Linear,
}

/// Temporal embedding configuration plus its (variant-specific) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEncodingSpec {
    pub variant: TemporalVariant,
    pub dim: usize,
    /// `w_t` for the linear variant.
    #[serde(default)]
    pub linear_weight: Vec<f64>,
    /// `b_t` for the linear variant.
    #[serde(default)]
    pub linear_bias: Vec<f64>,
    /// Per-dimension time scale `s` for the time-shifted variant.
    #[serde(default)]
    pub time_scale: Vec<f64>,
}

impl TemporalEncodingSpec {
    pub fn new(variant: TemporalVariant, dim: usize) -> Result<Self, ModelError> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(ModelError::BadConfig {
                detail: format!("temporal dim must be even and >= 2 (got {dim})"),
            });
        }
        Ok(Self {
            variant,
            dim,
            linear_weight: vec![0.0; if variant == TemporalVariant::Linear { dim } else { 0 }],
            linear_bias: vec![0.0; if variant == TemporalVariant::Linear { dim } else { 0 }],
            time_scale: vec![1.0; if variant == TemporalVariant::TimeShifted { dim } else { 0 }],
        })
    }
}

/// Whether an event block lists type tokens before or after the time slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOrder {
    TypeFirst,
    TimeFirst,
}

/// Whether type texts are embedded as-is or replaced by ordinal strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeFormat {
    Textual,
    Ordinal,
}

/// Prompt configuration for the prepended instruction text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub enabled: bool,
    pub text: String,
    pub order: EventOrder,
    pub type_format: TypeFormat,
}

impl PromptSpec {
    pub fn disabled(order: EventOrder, type_format: TypeFormat) -> Self {
        Self { enabled: false, text: String::new(), order, type_format }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.enabled && self.text.trim().is_empty() {
            return Err(ModelError::BadConfig {
                detail: "prompt enabled but text is empty".into(),
            });
        }
        Ok(())
    }
}

/// The flattened embedding stream for one sequence, with per-event boundaries.
#[derive(Debug, Clone)]
pub struct AssembledSequence {
    /// `total_len x D` embedding matrix.
    pub embeddings: Array2<f64>,
    /// 0-based stream index of each event's final slot.
    pub event_last_index: Vec<usize>,
    pub total_len: usize,
}

/// One slot of the flattened stream before embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Token(usize),
    /// Time slot for the event at this index.
    Time { event_idx: usize },
}

/// Slot layout for a sequence: which token or time value occupies each stream
/// position, plus the event boundary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLayout {
    pub slots: Vec<Slot>,
    pub event_last_index: Vec<usize>,
    pub prompt_len: usize,
}

impl SequenceLayout {
    pub fn total_len(&self) -> usize {
        self.slots.len()
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|w| w.to_lowercase())
}

/// The text a type contributes to the token stream under the given format.
pub fn type_token_text(ty: &EventType, format: TypeFormat) -> String {
    match format {
        TypeFormat::Textual => ty.text.clone(),
        TypeFormat::Ordinal => ty.id.to_string(),
    }
}

/// Builds a lowercase word-level vocabulary over all event-type texts (or
/// their ordinal strings) plus the prompt text, ids assigned in first-seen
/// order after the reserved entries.
pub fn build_vocab(ds: &Dataset, prompt: &PromptSpec) -> Vocab {
    let mut id_to_token = vec!["<pad>".to_string(), "<unk>".to_string()];
    let mut token_to_id = BTreeMap::new();
    token_to_id.insert(id_to_token[PAD_ID].clone(), PAD_ID);
    token_to_id.insert(id_to_token[UNK_ID].clone(), UNK_ID);

    let mut add = |word: String| {
        if !token_to_id.contains_key(&word) {
            token_to_id.insert(word.clone(), id_to_token.len());
            id_to_token.push(word);
        }
    };
    for ty in &ds.types {
        for w in words(&type_token_text(ty, prompt.type_format)) {
            add(w);
        }
    }
    if prompt.enabled {
        for w in words(&prompt.text) {
            add(w);
        }
    }
    Vocab { token_to_id, id_to_token }
}

/// Maps whitespace word tokens to ids; unknown words map to UNK.
pub fn tokenize_text(text: &str, vocab: &Vocab) -> Vec<usize> {
    words(text).map(|w| vocab.id(&w).unwrap_or(UNK_ID)).collect()
}

/// Tokenizes one event-type text.
pub fn tokenize_event_type(text: &str, vocab: &Vocab) -> TokenizedEvent {
    TokenizedEvent { token_ids: tokenize_text(text, vocab) }
}

/// Tokenizes every event of a sequence against the dataset's type table.
pub fn tokenize_sequence(
    seq: &EventSequence,
    types: &[EventType],
    format: TypeFormat,
    vocab: &Vocab,
) -> Vec<TokenizedEvent> {
    seq.events
        .iter()
        .map(|e| tokenize_event_type(&type_token_text(&types[e.type_id], format), vocab))
        .collect()
}

/// Inverse frequency for dimension `c` (0-based): `10000^(-c/D)` on even
/// dimensions (cos) and `10000^(-(c+1)/D)` on odd ones (sin).
pub fn inv_freq(c: usize, dim: usize) -> f64 {
    let exponent = if c.is_multiple_of(2) { c as f64 } else { (c + 1) as f64 };
    10000f64.powf(-exponent / dim as f64)
}

/// Sinusoidal encoding of a continuous time value: dimension `c` holds
/// `cos(t * inv_freq(c))` when even and `sin(t * inv_freq(c))` when odd.
pub fn temporal_positional_encoding(t: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|c| {
            let phase = t * inv_freq(c, dim);
            if c % 2 == 0 {
                phase.cos()
            } else {
                phase.sin()
            }
        })
        .collect()
}

/// Time-shifted variant: the sinusoid is evaluated at `position + s_c * t`
/// instead of `t`, so the slot's stream position and a learnable multiple of
/// the event time share one phase.
pub fn time_shifted_encoding(position: usize, t: f64, spec: &TemporalEncodingSpec) -> Vec<f64> {
    assert_eq!(spec.variant, TemporalVariant::TimeShifted);
    (0..spec.dim)
        .map(|c| {
            let phase = (position as f64 + spec.time_scale[c] * t) * inv_freq(c, spec.dim);
            if c % 2 == 0 {
                phase.cos()
            } else {
                phase.sin()
            }
        })
        .collect()
}

/// Affine time embedding `w * t + b`.
pub fn linear_time_embedding(t: f64, spec: &TemporalEncodingSpec) -> Vec<f64> {
    assert_eq!(spec.variant, TemporalVariant::Linear);
    (0..spec.dim)
        .map(|c| spec.linear_weight[c] * t + spec.linear_bias[c])
        .collect()
}

/// Evaluates the configured temporal embedding for the time slot of one event.
pub fn temporal_embedding(position: usize, t: f64, spec: &TemporalEncodingSpec) -> Vec<f64> {
    match spec.variant {
        TemporalVariant::Sinusoidal => temporal_positional_encoding(t, spec.dim),
        TemporalVariant::TimeShifted => time_shifted_encoding(position, t, spec),
        TemporalVariant::Linear => linear_time_embedding(t, spec),
    }
}

/// Computes the slot layout: prompt tokens, then per event either
/// `[type tokens..., time]` or `[time, type tokens...]`.
pub fn build_layout(
    tokenized: &[TokenizedEvent],
    prompt_token_ids: &[usize],
    order: EventOrder,
) -> SequenceLayout {
    let mut slots: Vec<Slot> = prompt_token_ids.iter().map(|&id| Slot::Token(id)).collect();
    let mut event_last_index = Vec::with_capacity(tokenized.len());
    for (event_idx, tok) in tokenized.iter().enumerate() {
        match order {
            EventOrder::TypeFirst => {
                slots.extend(tok.token_ids.iter().map(|&id| Slot::Token(id)));
                slots.push(Slot::Time { event_idx });
            }
            EventOrder::TimeFirst => {
                slots.push(Slot::Time { event_idx });
                slots.extend(tok.token_ids.iter().map(|&id| Slot::Token(id)));
            }
        }
        event_last_index.push(slots.len() - 1);
    }
    SequenceLayout { slots, event_last_index, prompt_len: prompt_token_ids.len() }
}

/// Builds the embedding stream for a sequence from a token embedding table.
///
/// One `TokenizedEvent` per event is required; `max_len` is the backbone's
/// sequence capacity.
pub fn assemble_sequence(
    seq: &EventSequence,
    tokenized: &[TokenizedEvent],
    prompt: &PromptSpec,
    temporal: &TemporalEncodingSpec,
    token_embeddings: &Array2<f64>,
    vocab: &Vocab,
    max_len: usize,
) -> Result<AssembledSequence, ModelError> {
    assert_eq!(seq.events.len(), tokenized.len(), "one TokenizedEvent per event");
    let dim = token_embeddings.ncols();
    assert_eq!(dim, temporal.dim, "token and temporal dims must agree");

    let prompt_ids = if prompt.enabled { tokenize_text(&prompt.text, vocab) } else { vec![] };
    let layout = build_layout(tokenized, &prompt_ids, prompt.order);
    let total_len = layout.total_len();
    if total_len > max_len {
        return Err(ModelError::SequenceTooLong { len: total_len, max: max_len });
    }

    let mut embeddings = Array2::<f64>::zeros((total_len, dim));
    for (pos, slot) in layout.slots.iter().enumerate() {
        match slot {
            Slot::Token(id) => {
                embeddings.row_mut(pos).assign(&token_embeddings.row(*id));
            }
            Slot::Time { event_idx } => {
                let t = seq.events[*event_idx].time;
                let emb = temporal_embedding(pos, t, temporal);
                for (c, v) in emb.iter().enumerate() {
                    embeddings[[pos, c]] = *v;
                }
            }
        }
    }
    Ok(AssembledSequence {
        embeddings,
        event_last_index: layout.event_last_index,
        total_len,
    })
}
