//! The assembled model: vocabulary, parameters, and the per-sequence
//! computation graphs that join embedding, backbone, intensity, and
//! prediction heads into one differentiable objective.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::{NodeId, Tape};
use crate::backbone::{
    attach_lora, build_backbone_graph, init_backbone, BackboneConfig, BackboneParamIds,
    LoraConfig, LoraParamIds, Mode,
};
use crate::data::{normalize_times, EventSequence, EventType};
use crate::encode::{
    build_layout, build_vocab, inv_freq, tokenize_sequence, tokenize_text, AssembledSequence,
    PromptSpec, SequenceLayout, Slot, TemporalEncodingSpec, TemporalVariant, TokenizedEvent,
    Vocab,
};
use crate::error::ModelError;
use crate::heads::{
    init_time_head, init_type_head, predict_time, predict_type_probs, time_head_from_params,
    time_loss_node, type_ce_node, type_head_from_params, LossWeights, TimeHeadIds, TimeTarget,
    TypeHeadIds,
};
use crate::params::{
    bind_params, bind_params_frozen, BoundParams, ParamFamily, ParamId, ParamSet, TrainableScope,
};
use crate::tpp::{
    head_from_params, init_intensity_head, loglik_node, sequence_log_likelihood, IntensityHeadIds,
    IntensityKind, MCConfig,
};

/// Everything needed to rebuild a model except the weights themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub temporal_variant: TemporalVariant,
    pub prompt: PromptSpec,
    pub intensity: IntensityKind,
    pub time_target: TimeTarget,
}

/// Temporal-embedding parameter ids, by variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TemporalParamIds {
    Sinusoidal,
    TimeShifted { scale: ParamId },
    Linear { weight: ParamId, bias: ParamId },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub types: Vec<EventType>,
    pub vocab: Vocab,
    pub params: ParamSet,
    pub backbone_ids: BackboneParamIds,
    pub temporal_ids: TemporalParamIds,
    pub intensity_ids: IntensityHeadIds,
    pub type_head_ids: TypeHeadIds,
    pub time_head_ids: TimeHeadIds,
    pub lora: Option<(LoraParamIds, LoraConfig)>,
}

/// Component values of one sequence's training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub log_likelihood: f64,
    pub type_loss: f64,
    pub time_loss: f64,
    pub objective: f64,
}

/// Per-sequence evaluation results.
#[derive(Debug, Clone)]
pub struct SequenceEval {
    pub log_likelihood: f64,
    pub num_predicted: usize,
    pub num_correct: usize,
    pub squared_time_error: f64,
    pub pred_types: Vec<usize>,
    /// Predicted absolute times in the sequence's original clock.
    pub pred_times: Vec<f64>,
}

impl Model {
    /// Initializes a model for the given type table, with fresh random
    /// weights drawn from `seed`.
    pub fn init(
        types: &[EventType],
        config: ModelConfig,
        vocab_source: &crate::data::Dataset,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.backbone.validate()?;
        config.prompt.validate()?;
        let dim = config.backbone.model_dim;
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(ModelError::BadConfig {
                detail: format!("model_dim {dim} must be even (temporal encoding pairs)"),
            });
        }
        let vocab = build_vocab(vocab_source, &config.prompt);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone_ids = init_backbone(&mut params, &config.backbone, vocab.size(), &mut rng);
        let temporal_ids = match config.temporal_variant {
            TemporalVariant::Sinusoidal => TemporalParamIds::Sinusoidal,
            TemporalVariant::TimeShifted => TemporalParamIds::TimeShifted {
                scale: params.add(
                    "temporal.scale",
                    ParamFamily::TemporalEncoding,
                    Array2::ones((1, dim)),
                ),
            },
            TemporalVariant::Linear => TemporalParamIds::Linear {
                weight: params.add(
                    "temporal.weight",
                    ParamFamily::TemporalEncoding,
                    crate::backbone::normal_matrix(&mut rng, 1, dim, 0.02),
                ),
                bias: params.add(
                    "temporal.bias",
                    ParamFamily::TemporalEncoding,
                    Array2::zeros((1, dim)),
                ),
            },
        };
        let k = types.len();
        let intensity_ids = init_intensity_head(&mut params, config.intensity, k, dim, &mut rng);
        let type_head_ids = init_type_head(&mut params, k, dim, &mut rng);
        let time_head_ids = init_time_head(&mut params, dim, &mut rng);
        Ok(Self {
            config,
            types: types.to_vec(),
            vocab,
            params,
            backbone_ids,
            temporal_ids,
            intensity_ids,
            type_head_ids,
            time_head_ids,
            lora: None,
        })
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.backbone.model_dim
    }

    /// Attaches low-rank adapters to the attention projections.
    pub fn attach_lora(&mut self, cfg: LoraConfig, seed: u64) -> Result<(), ModelError> {
        let ids = attach_lora(
            &mut self.params,
            &self.backbone_ids,
            &cfg,
            self.config.backbone.model_dim,
            seed,
        )?;
        self.lora = Some((ids, cfg));
        Ok(())
    }

    pub fn lora_ref(&self) -> Option<(&LoraParamIds, &LoraConfig)> {
        self.lora.as_ref().map(|(ids, cfg)| (ids, cfg))
    }

    /// The temporal spec with current parameter values filled in.
    pub fn temporal_spec(&self) -> TemporalEncodingSpec {
        let dim = self.config.backbone.model_dim;
        let mut spec = TemporalEncodingSpec::new(self.config.temporal_variant, dim)
            .expect("dim validated at init");
        match &self.temporal_ids {
            TemporalParamIds::Sinusoidal => {}
            TemporalParamIds::TimeShifted { scale } => {
                spec.time_scale = self.params.value(*scale).row(0).to_vec();
            }
            TemporalParamIds::Linear { weight, bias } => {
                spec.linear_weight = self.params.value(*weight).row(0).to_vec();
                spec.linear_bias = self.params.value(*bias).row(0).to_vec();
            }
        }
        spec
    }

    pub fn tokenize(&self, seq: &EventSequence) -> Vec<TokenizedEvent> {
        tokenize_sequence(seq, &self.types, self.config.prompt.type_format, &self.vocab)
    }

    fn layout(&self, tokenized: &[TokenizedEvent]) -> SequenceLayout {
        let prompt_ids = if self.config.prompt.enabled {
            tokenize_text(&self.config.prompt.text, &self.vocab)
        } else {
            vec![]
        };
        build_layout(tokenized, &prompt_ids, self.config.prompt.order)
    }

    /// Assembles the plain (non-differentiable) embedding stream.
    pub fn assemble(&self, seq: &EventSequence) -> Result<AssembledSequence, ModelError> {
        let tokenized = self.tokenize(seq);
        crate::encode::assemble_sequence(
            seq,
            &tokenized,
            &self.config.prompt,
            &self.temporal_spec(),
            self.params.value(self.backbone_ids.token_emb),
            &self.vocab,
            self.config.backbone.max_seq_len,
        )
    }

    /// Builds the input-embedding node with differentiable token and temporal
    /// parameters. Returns the node and the event boundary indices.
    fn input_node(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        seq: &EventSequence,
        layout: &SequenceLayout,
    ) -> Result<(NodeId, Vec<usize>), ModelError> {
        let dim = self.config.backbone.model_dim;
        if layout.total_len() > self.config.backbone.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: layout.total_len(),
                max: self.config.backbone.max_seq_len,
            });
        }
        let n = seq.events.len();
        let times: Vec<f64> = seq.events.iter().map(|e| e.time).collect();
        // stream positions of each event's time slot (time-shifted variant
        // folds them into the phase)
        let mut time_slot_pos = vec![0usize; n];
        for (pos, slot) in layout.slots.iter().enumerate() {
            if let Slot::Time { event_idx } = slot {
                time_slot_pos[*event_idx] = pos;
            }
        }

        let time_rows: NodeId = match &self.temporal_ids {
            TemporalParamIds::Sinusoidal => {
                let mut mat = Array2::zeros((n, dim));
                for i in 0..n {
                    let row = crate::encode::temporal_positional_encoding(times[i], dim);
                    for (c, v) in row.iter().enumerate() {
                        mat[[i, c]] = *v;
                    }
                }
                tape.constant(mat)
            }
            TemporalParamIds::TimeShifted { scale } => {
                // phase = (pos + s_c * t) * inv_freq(c)
                let invf = Array2::from_shape_fn((1, dim), |(_, c)| inv_freq(c, dim));
                let pos_phase = Array2::from_shape_fn((n, dim), |(i, c)| {
                    time_slot_pos[i] as f64 * inv_freq(c, dim)
                });
                let invf_node = tape.constant(invf);
                let s_node = bound.node(*scale);
                let s_invf = tape.mul(s_node, invf_node);
                let t_col = tape.constant(Array2::from_shape_fn((n, 1), |(i, _)| times[i]));
                let t_phase = tape.matmul(t_col, s_invf);
                let pos_node = tape.constant(pos_phase);
                let phase = tape.add(t_phase, pos_node);
                tape.sin_cos_parity(phase)
            }
            TemporalParamIds::Linear { weight, bias } => {
                let t_col = tape.constant(Array2::from_shape_fn((n, 1), |(i, _)| times[i]));
                let scaled = tape.matmul(t_col, bound.node(*weight));
                tape.add_row(scaled, bound.node(*bias))
            }
        };

        let emb_node = bound.node(self.backbone_ids.token_emb);
        let sources: Vec<(NodeId, usize)> = layout
            .slots
            .iter()
            .map(|slot| match slot {
                Slot::Token(id) => (emb_node, *id),
                Slot::Time { event_idx } => (time_rows, *event_idx),
            })
            .collect();
        let input = tape.assemble_rows(sources, dim);
        Ok((input, layout.event_last_index.clone()))
    }

    /// Builds the full objective graph for one (raw-clock) sequence. Returns
    /// the tape, bound parameters, the scalar objective node, and the
    /// component values.
    pub fn sequence_objective_graph(
        &self,
        seq: &EventSequence,
        scope: TrainableScope,
        weights: &LossWeights,
        mc: &MCConfig,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tape, BoundParams, NodeId, ObjectiveParts), ModelError> {
        let n = seq.events.len();
        if n < 2 {
            return Err(ModelError::SequenceTooShort { len: n });
        }
        let seq = normalize_times(seq);
        let times = seq.times();
        let type_ids = seq.type_ids();
        let tokenized = self.tokenize(&seq);
        let layout = self.layout(&tokenized);

        let mut tape = Tape::new();
        let bound = if mode == Mode::Infer {
            bind_params_frozen(&mut tape, &self.params)
        } else {
            bind_params(&mut tape, &self.params, scope)
        };
        let (input, boundaries) = self.input_node(&mut tape, &bound, &seq, &layout)?;
        let hidden = build_backbone_graph(
            &mut tape,
            input,
            &bound,
            &self.backbone_ids,
            self.lora_ref(),
            &self.config.backbone,
            mode,
            rng,
        )?;
        let h_events = tape.gather_rows(hidden, boundaries);

        let seq_mc = mc.for_sequence(&seq.id);
        let ll = loglik_node(
            &mut tape,
            h_events,
            &times,
            &type_ids,
            &self.intensity_ids,
            &bound,
            self.num_types(),
            &seq_mc,
        )?;
        let prev_rows: Vec<usize> = (0..n - 1).collect();
        let h_prev = tape.gather_rows(h_events, prev_rows);
        let ce = type_ce_node(&mut tape, h_prev, &type_ids, &self.type_head_ids, &bound);
        let tl = time_loss_node(
            &mut tape,
            h_prev,
            &times,
            self.config.time_target,
            &self.time_head_ids,
            &bound,
        );

        let neg_ll = tape.scale(ll, -1.0);
        let ce_w = tape.scale(ce, weights.beta_type);
        let tl_w = tape.scale(tl, weights.beta_time);
        let partial = tape.add(neg_ll, ce_w);
        let objective = tape.add(partial, tl_w);

        let parts = ObjectiveParts {
            log_likelihood: tape.value(ll)[[0, 0]],
            type_loss: tape.value(ce)[[0, 0]],
            time_loss: tape.value(tl)[[0, 0]],
            objective: tape.value(objective)[[0, 0]],
        };
        if !parts.objective.is_finite() {
            return Err(ModelError::NonFiniteObjective { id: seq.id.clone() });
        }
        Ok((tape, bound, objective, parts))
    }

    /// Objective component values without gradients.
    pub fn sequence_objective(
        &self,
        seq: &EventSequence,
        weights: &LossWeights,
        mc: &MCConfig,
    ) -> Result<ObjectiveParts, ModelError> {
        let (_, _, _, parts) = self.sequence_objective_graph(
            seq,
            TrainableScope::HeadsOnly,
            weights,
            mc,
            Mode::Infer,
            None,
        )?;
        Ok(parts)
    }

    /// History vectors `h_1..h_n` for a (raw-clock) sequence, inference mode.
    pub fn history_vectors(&self, seq: &EventSequence) -> Result<Array2<f64>, ModelError> {
        let seq = normalize_times(seq);
        let assembled = self.assemble(&seq)?;
        let hidden = crate::backbone::forward(
            &assembled,
            &self.params,
            &self.backbone_ids,
            self.lora_ref(),
            &self.config.backbone,
            Mode::Infer,
            None,
        )?;
        Ok(crate::backbone::extract_history_vectors(
            &hidden,
            &assembled.event_last_index,
        ))
    }

    /// Log-likelihood, type/time predictions, and error counts for one
    /// sequence.
    pub fn evaluate_sequence(
        &self,
        seq: &EventSequence,
        mc: &MCConfig,
    ) -> Result<SequenceEval, ModelError> {
        let n = seq.events.len();
        if n < 2 {
            return Err(ModelError::SequenceTooShort { len: n });
        }
        let shift = seq.events[0].time;
        let normalized = normalize_times(seq);
        let history = self.history_vectors(seq)?;
        let times = normalized.times();
        let type_ids = normalized.type_ids();
        let head = head_from_params(&self.params, &self.intensity_ids);
        let seq_mc = mc.for_sequence(&normalized.id);
        let ll = sequence_log_likelihood(&times, &type_ids, &history, &head, &seq_mc)?;

        let type_head = type_head_from_params(&self.params, &self.type_head_ids);
        let time_head = time_head_from_params(&self.params, &self.time_head_ids);
        let mut num_correct = 0;
        let mut sq = 0.0;
        let mut pred_types = Vec::with_capacity(n - 1);
        let mut pred_times = Vec::with_capacity(n - 1);
        for i in 1..n {
            let h = history.row(i - 1);
            let probs = predict_type_probs(h, &type_head);
            let k_hat = crate::heads::argmax(&probs);
            if k_hat == type_ids[i] {
                num_correct += 1;
            }
            let t_hat = predict_time(times[i - 1], h, &time_head, self.config.time_target);
            sq += (times[i] - t_hat) * (times[i] - t_hat);
            pred_types.push(k_hat);
            pred_times.push(t_hat + shift);
        }
        Ok(SequenceEval {
            log_likelihood: ll,
            num_predicted: n - 1,
            num_correct,
            squared_time_error: sq,
            pred_types,
            pred_times,
        })
    }

    /// Prediction for the event following the last observed one.
    pub fn predict_next(
        &self,
        seq: &EventSequence,
    ) -> Result<(usize, f64), ModelError> {
        let n = seq.events.len();
        if n == 0 {
            return Err(ModelError::SequenceTooShort { len: 0 });
        }
        let shift = seq.events[0].time;
        let normalized = normalize_times(seq);
        let history = self.history_vectors(seq)?;
        let h = history.row(n - 1);
        let type_head = type_head_from_params(&self.params, &self.type_head_ids);
        let time_head = time_head_from_params(&self.params, &self.time_head_ids);
        let k_hat = crate::heads::argmax(&predict_type_probs(h, &type_head));
        let t_hat = predict_time(
            normalized.events[n - 1].time,
            h,
            &time_head,
            self.config.time_target,
        );
        Ok((k_hat, t_hat + shift))
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_FORMAT: &str = "tppkit.checkpoint.v1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    model: Model,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    let file = CheckpointFile { format: CHECKPOINT_FORMAT.to_string(), model: model.clone() };
    let text = serde_json::to_string(&file)
        .map_err(|e| ModelError::Checkpoint { detail: e.to_string() })?;
    std::fs::write(path, text).map_err(|e| ModelError::Checkpoint {
        detail: format!("write {}: {e}", path.display()),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint {
        detail: format!("read {}: {e}", path.display()),
    })?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint { detail: e.to_string() })?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(ModelError::Checkpoint {
            detail: format!("unsupported format tag {:?}", file.format),
        });
    }
    Ok(file.model)
}
