//! Gradient computation over batches, Adam updates, the training loop with
//! early stopping, and evaluation metrics.
//!
//! Everything here is deterministic given the config seed: the train-fraction
//! prefix is fixed before epoch 1, per-epoch shuffles and dropout draw from
//! seeded streams, and all reductions run in a fixed order (evaluation sorts
//! by sequence id first, so dataset order never matters).

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Mode;
use crate::data::Dataset;
use crate::data::EventSequence;
use crate::error::{ModelError, TrainError};
use crate::heads::LossWeights;
use crate::model::{Model, ObjectiveParts};
use crate::params::{Gradients, ParamSet, TrainableScope};
use crate::tpp::MCConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Fraction of the (seed-shuffled) train split actually used.
    pub train_fraction: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub mc: MCConfig,
    pub scope: TrainableScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 8,
            max_epochs: 20,
            early_stop_patience: 3,
            train_fraction: 1.0,
            seed: 0,
            loss_weights: LossWeights::default(),
            mc: MCConfig::default(),
            scope: TrainableScope::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.learning_rate <= 0.0 {
            return Err(ModelError::BadConfig { detail: "learning_rate must be positive".into() });
        }
        if self.early_stop_patience == 0 {
            return Err(ModelError::BadConfig { detail: "early_stop_patience must be >= 1".into() });
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(ModelError::BadConfig {
                detail: format!("train_fraction {} outside (0, 1]", self.train_fraction),
            });
        }
        if self.batch_size == 0 {
            return Err(ModelError::BadConfig { detail: "batch_size must be >= 1".into() });
        }
        Ok(())
    }
}

/// Objective value and gradients summed over a batch of sequences.
pub fn batch_objective_and_grads(
    model: &Model,
    batch: &[&EventSequence],
    weights: &LossWeights,
    mc: &MCConfig,
    scope: TrainableScope,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Gradients, Vec<ObjectiveParts>), ModelError> {
    let mut grads = Gradients::zeros_like(&model.params);
    let mut total = 0.0;
    let mut parts_out = Vec::with_capacity(batch.len());
    for seq in batch {
        let (tape, bound, objective, parts) = model.sequence_objective_graph(
            seq,
            scope,
            weights,
            mc,
            Mode::Train,
            dropout_rng.as_deref_mut(),
        )?;
        let mut node_grads = tape.backward(objective);
        grads.absorb_tape(&model.params, &bound, &mut node_grads)?;
        total += parts.objective;
        parts_out.push(parts);
    }
    Ok((total, grads, parts_out))
}

/// Objective value (no gradients) summed over a dataset, deterministic.
pub fn dataset_objective(
    model: &Model,
    ds: &Dataset,
    weights: &LossWeights,
    mc: &MCConfig,
) -> Result<f64, ModelError> {
    let mut order: Vec<&EventSequence> = ds.sequences.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut total = 0.0;
    for seq in order {
        total += model.sequence_objective(seq, weights, mc)?.objective;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: usize,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Array2<f64>> =
            params.ids().map(|id| Array2::zeros(params.value(id).dim())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// One bias-corrected Adam update over every parameter that received a
/// gradient.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for id in params.ids() {
        let Some(g) = grads.get(id) else { continue };
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        m.zip_mut_with(g, |m, g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
        v.zip_mut_with(g, |v, g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
        let value = params.value_mut(id);
        for ((theta, m), v) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics and evaluation
// ---------------------------------------------------------------------------

/// Held-out metrics: per-predicted-event log-likelihood, next-type accuracy,
/// and next-time RMSE over events `2..n` of every sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ll_per_event: f64,
    pub accuracy: f64,
    pub rmse: f64,
    pub num_sequences: usize,
    pub num_events: usize,
    pub num_predicted: usize,
}

/// Evaluates a dataset. Sequences are processed in id order, so the result is
/// independent of their order in the file.
pub fn evaluate(model: &Model, ds: &Dataset, mc: &MCConfig) -> Result<Metrics, ModelError> {
    let mut order: Vec<&EventSequence> = ds.sequences.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut ll_sum = 0.0;
    let mut correct = 0usize;
    let mut predicted = 0usize;
    let mut sq_sum = 0.0;
    let mut num_events = 0usize;
    for seq in &order {
        let eval = model.evaluate_sequence(seq, mc)?;
        ll_sum += eval.log_likelihood;
        correct += eval.num_correct;
        predicted += eval.num_predicted;
        sq_sum += eval.squared_time_error;
        num_events += seq.events.len();
    }
    if predicted == 0 {
        return Err(ModelError::BadConfig { detail: "no predictable events in dataset".into() });
    }
    Ok(Metrics {
        ll_per_event: ll_sum / predicted as f64,
        accuracy: correct as f64 / predicted as f64,
        rmse: (sq_sum / predicted as f64).sqrt(),
        num_sequences: ds.sequences.len(),
        num_events,
        num_predicted: predicted,
    })
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One line of the per-epoch training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_objective: f64,
    pub val_objective: f64,
    pub val_metrics: Metrics,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains with per-epoch seeded shuffles and early stopping on the validation
/// objective; returns the best-validation checkpoint.
pub fn train_loop(
    mut model: Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.sequences.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }

    // train_fraction applies to the seed-shuffled list, once, before epoch 1
    let mut all: Vec<&EventSequence> = train.sequences.iter().collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    all.shuffle(&mut shuffle_rng);
    let keep = ((all.len() as f64) * cfg.train_fraction).floor().max(1.0) as usize;
    let mut working: Vec<&EventSequence> = all[..keep.min(all.len())].to_vec();

    let mut adam = AdamState::new(&model.params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b97f4a7c15));
    let mut history = Vec::new();
    let mut best: Option<(f64, ParamSet, usize)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        working.shuffle(&mut shuffle_rng);
        let mut train_objective = 0.0;
        for (batch_idx, batch) in working.chunks(cfg.batch_size).enumerate() {
            let result = batch_objective_and_grads(
                &model,
                batch,
                &cfg.loss_weights,
                &cfg.mc,
                cfg.scope,
                Some(&mut dropout_rng),
            );
            let (obj, grads, _) = match result {
                Ok(r) => r,
                Err(ModelError::NonFiniteObjective { .. })
                | Err(ModelError::NonFiniteGradient { .. }) => {
                    return Err(TrainError::Diverged { epoch, batch: batch_idx });
                }
                Err(e) => return Err(e.into()),
            };
            train_objective += obj;
            adam_step(&mut model.params, &grads, &mut adam, cfg.learning_rate);
        }

        let val_objective = dataset_objective(&model, val, &cfg.loss_weights, &cfg.mc)?;
        if !val_objective.is_finite() {
            return Err(TrainError::Diverged { epoch, batch: 0 });
        }
        let val_metrics = evaluate(&model, val, &cfg.mc)?;
        history.push(EpochRecord { epoch, train_objective, val_objective, val_metrics });

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_objective < *b);
        if improved {
            best = Some((val_objective, model.params.clone(), epoch));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let (_, best_params, best_epoch) = best.expect("at least one epoch ran");
    model.params = best_params;
    Ok(TrainOutcome { model, history, best_epoch })
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

/// Worst-case comparison between reverse-mode and central-difference
/// gradients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub num_params: usize,
    pub num_coords: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub mean_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Sweeps every coordinate of every in-scope parameter: relative error
/// between the reverse-mode gradient and `(f(x+h) - f(x-h)) / 2h` with
/// `h = 1e-5 * max(1, |x|)`. Gradients smaller than `1e-4` in both routes are
/// compared absolutely against `1e-8`.
pub fn finite_difference_check(
    model: &Model,
    seqs: &[&EventSequence],
    weights: &LossWeights,
    mc: &MCConfig,
    scope: TrainableScope,
) -> Result<GradCheckReport, ModelError> {
    let (_, grads, _) = batch_objective_and_grads(model, seqs, weights, mc, scope, None)?;

    let objective = |m: &Model| -> Result<f64, ModelError> {
        let mut total = 0.0;
        for seq in seqs {
            let (_, _, _, parts) =
                m.sequence_objective_graph(seq, scope, weights, mc, Mode::Train, None)?;
            total += parts.objective;
        }
        Ok(total)
    };

    let mut work = model.clone();
    let mut max_rel = 0.0f64;
    let mut rel_sum = 0.0f64;
    let mut worst = String::new();
    let mut num_params = 0usize;
    let mut num_coords = 0usize;

    for id in model.params.ids() {
        if !scope.includes(model.params.family(id)) {
            continue;
        }
        num_params += 1;
        let shape = model.params.value(id).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let theta = model.params.value(id)[[r, c]];
                let h = 1e-5 * theta.abs().max(1.0);
                work.params.value_mut(id)[[r, c]] = theta + h;
                let f_plus = objective(&work)?;
                work.params.value_mut(id)[[r, c]] = theta - h;
                let f_minus = objective(&work)?;
                work.params.value_mut(id)[[r, c]] = theta;
                let fd = (f_plus - f_minus) / (2.0 * h);
                let ad = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                let denom = ad.abs().max(fd.abs());
                let rel = if denom < 1e-4 {
                    if (ad - fd).abs() < 1e-8 {
                        0.0
                    } else {
                        (ad - fd).abs() / denom.max(1e-12)
                    }
                } else {
                    (ad - fd).abs() / denom
                };
                num_coords += 1;
                rel_sum += rel;
                if rel > max_rel {
                    max_rel = rel;
                    worst = format!("{}[{r},{c}]", model.params.name(id));
                }
            }
        }
    }
    Ok(GradCheckReport {
        num_params,
        num_coords,
        max_rel_error: max_rel,
        worst_param: worst,
        mean_rel_error: if num_coords > 0 { rel_sum / num_coords as f64 } else { 0.0 },
    })
}

/// Builds the reference gradient-check suite: one pass per intensity head on
/// a small model with adapters attached and a learnable temporal embedding,
/// sweeping every trainable parameter against central differences.
pub fn reference_gradcheck(
    dim: usize,
    num_layers: usize,
    num_heads: usize,
    num_types: usize,
) -> Result<Vec<(String, GradCheckReport)>, ModelError> {
    use crate::backbone::{BackboneConfig, LoraConfig, LoraTarget};
    use crate::data::{Dataset, Event};
    use crate::encode::{EventOrder, PromptSpec, TemporalVariant, TypeFormat};
    use crate::heads::TimeTarget;
    use crate::model::ModelConfig;
    use crate::synth::{label_types, TypeNaming};
    use crate::tpp::IntensityKind;

    let types = label_types(num_types, TypeNaming::Textual);
    let ds = Dataset {
        name: "gradcheck".into(),
        time_unit: "unit".into(),
        types: types.clone(),
        sequences: vec![],
    };
    let seq = EventSequence {
        id: "g0".into(),
        window: [0.0, 3.0],
        events: [(0.0, 0), (0.4, 2 % num_types), (1.1, 1 % num_types), (1.5, 1 % num_types), (2.3, 0)]
            .iter()
            .map(|&(time, type_id)| Event { time, type_id })
            .collect(),
    };
    let passes = [
        ("thp + time_shifted", IntensityKind::Thp, TemporalVariant::TimeShifted),
        ("rmtpp + linear", IntensityKind::Rmtpp, TemporalVariant::Linear),
        ("sahp + linear", IntensityKind::Sahp, TemporalVariant::Linear),
    ];
    let mut out = Vec::new();
    for (label, intensity, temporal) in passes {
        let config = ModelConfig {
            backbone: BackboneConfig {
                num_layers,
                num_heads,
                model_dim: dim,
                ffn_dim: dim * 4,
                max_seq_len: 256,
                dropout_rate: 0.0,
            },
            temporal_variant: temporal,
            prompt: PromptSpec {
                enabled: true,
                text: "predict the next event type and time".into(),
                order: EventOrder::TypeFirst,
                type_format: TypeFormat::Textual,
            },
            intensity,
            time_target: TimeTarget::Gap,
        };
        let mut model = Model::init(&types, config, &ds, 1234)?;
        model.attach_lora(
            LoraConfig { rank: 2, alpha: 4.0, dropout: 0.0, targets: LoraTarget::ALL.to_vec() },
            77,
        )?;
        // non-zero adapters so their whole path carries signal
        let lora_ids = model.lora_ref().map(|(ids, _)| ids.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4321);
        for layer in &lora_ids.layers {
            for pair in [layer.q, layer.k, layer.v, layer.o].into_iter().flatten() {
                let v = model.params.value_mut(pair.1);
                *v = crate::backbone::normal_matrix(&mut rng, v.nrows(), v.ncols(), 0.05);
            }
        }
        let mc = MCConfig { samples_per_interval: 3, seed: 9 };
        let report = finite_difference_check(
            &model,
            &[&seq],
            &LossWeights::default(),
            &mc,
            TrainableScope::All,
        )?;
        out.push((label.to_string(), report));
    }
    Ok(out)
}
