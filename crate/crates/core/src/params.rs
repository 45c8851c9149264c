//! Named parameter storage shared by the optimizer, the tape, and checkpoints.
//!
//! Every learnable value in the model is an `f64` matrix registered in a
//! [`ParamSet`] under a stable name and a [`ParamFamily`]. Graph builders bind
//! the set onto a tape (marking only in-scope families as differentiable),
//! and gradients come back indexed by [`ParamId`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, TapeGrads};
use crate::error::ModelError;

/// Which part of the model a parameter belongs to; training scopes filter on
/// this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamFamily {
    Backbone,
    TemporalEncoding,
    Lora,
    IntensityHead,
    TypeHead,
    TimeHead,
}

/// Which parameter families receive gradients and optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    /// Everything, including adapters when attached.
    All,
    /// Adapters, prediction heads, and temporal-embedding parameters; the
    /// base backbone stays frozen.
    LoraAndHeads,
    /// Only the intensity/type/time heads.
    HeadsOnly,
}

impl TrainableScope {
    pub fn includes(&self, family: ParamFamily) -> bool {
        match self {
            TrainableScope::All => true,
            TrainableScope::LoraAndHeads => matches!(
                family,
                ParamFamily::Lora
                    | ParamFamily::IntensityHead
                    | ParamFamily::TypeHead
                    | ParamFamily::TimeHead
                    | ParamFamily::TemporalEncoding
            ),
            TrainableScope::HeadsOnly => matches!(
                family,
                ParamFamily::IntensityHead | ParamFamily::TypeHead | ParamFamily::TimeHead
            ),
        }
    }
}

/// Stable handle into a [`ParamSet`]; serializes as its registration index,
/// which checkpoints preserve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    family: ParamFamily,
    value: Array2<f64>,
}

/// The full set of model parameters.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, family: ParamFamily, value: Array2<f64>) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), family, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn family(&self, id: ParamId) -> ParamFamily {
        self.entries[id.0].family
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total scalar count across a family.
    pub fn scalar_count(&self, family: ParamFamily) -> usize {
        self.entries
            .iter()
            .filter(|e| e.family == family)
            .map(|e| e.value.len())
            .sum()
    }

    /// Total scalar count across the trainable scope.
    pub fn trainable_scalar_count(&self, scope: TrainableScope) -> usize {
        self.entries
            .iter()
            .filter(|e| scope.includes(e.family))
            .map(|e| e.value.len())
            .sum()
    }
}

/// Tape leaves for every parameter of a set, in registration order.
pub struct BoundParams {
    nodes: Vec<NodeId>,
}

impl BoundParams {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }
}

/// Places every parameter on the tape; only families inside `scope` are
/// marked differentiable.
pub fn bind_params(tape: &mut Tape, params: &ParamSet, scope: TrainableScope) -> BoundParams {
    let nodes = params
        .ids()
        .map(|id| tape.leaf(params.value(id).clone(), scope.includes(params.family(id))))
        .collect();
    BoundParams { nodes }
}

/// Same binding with gradients disabled everywhere (pure inference).
pub fn bind_params_frozen(tape: &mut Tape, params: &ParamSet) -> BoundParams {
    let nodes = params.ids().map(|id| tape.leaf(params.value(id).clone(), false)).collect();
    BoundParams { nodes }
}

/// Gradient accumulator indexed by [`ParamId`]. Out-of-scope parameters keep
/// an empty slot.
#[derive(Debug, Clone)]
pub struct Gradients {
    slots: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self { slots: vec![None; params.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.slots[id.0].as_ref()
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Array2<f64>) {
        match &mut self.slots[id.0] {
            Some(existing) => *existing += grad,
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Moves tape gradients into the accumulator, erroring on any non-finite
    /// entry.
    pub fn absorb_tape(
        &mut self,
        params: &ParamSet,
        bound: &BoundParams,
        node_grads: &mut TapeGrads,
    ) -> Result<(), ModelError> {
        for id in params.ids() {
            if let Some(g) = node_grads.take(bound.node(id)) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::NonFiniteGradient { name: params.name(id).to_string() });
                }
                self.accumulate(id, &g);
            }
        }
        Ok(())
    }
}
