//! Causal decoder-only transformer backbone with optional low-rank adapters.
//!
//! Pre-norm residual blocks: layer norm -> multi-head causal self-attention
//! -> residual, then layer norm -> gelu feed-forward -> residual, with a
//! final layer norm. A deterministic sinusoidal position encoding over the
//! flattened stream is added to the input embeddings (the per-event temporal
//! embedding is separate and lives in the input itself).
//!
//! Adapters follow the additive low-rank form `W' = W + (alpha/r) * B A`,
//! applied to any subset of the attention projections. `B` starts at zero, so
//! an adapted forward is exactly the base forward until the first update.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::encode::{inv_freq, AssembledSequence};
use crate::error::ModelError;
use crate::params::{bind_params_frozen, BoundParams, ParamFamily, ParamId, ParamSet};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(ModelError::BadConfig {
                detail: format!(
                    "model_dim {} must be a positive multiple of num_heads {}",
                    self.model_dim, self.num_heads
                ),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::BadConfig {
                detail: format!("dropout_rate {} outside [0, 1)", self.dropout_rate),
            });
        }
        Ok(())
    }
}

/// Attention projections an adapter can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTarget {
    Q,
    K,
    V,
    O,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 4] = [LoraTarget::Q, LoraTarget::K, LoraTarget::V, LoraTarget::O];

    fn tag(&self) -> &'static str {
        match self {
            LoraTarget::Q => "q",
            LoraTarget::K => "k",
            LoraTarget::V => "v",
            LoraTarget::O => "o",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub targets: Vec<LoraTarget>,
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self, model_dim: usize) -> Result<(), ModelError> {
        if self.rank == 0 || self.rank > model_dim {
            return Err(ModelError::BadConfig {
                detail: format!("lora rank {} must be in 1..={model_dim}", self.rank),
            });
        }
        if self.targets.is_empty() {
            return Err(ModelError::BadConfig { detail: "lora targets empty".into() });
        }
        Ok(())
    }
}

/// Parameter ids for one transformer block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerParamIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneParamIds {
    pub token_emb: ParamId,
    pub layers: Vec<LayerParamIds>,
    pub final_gain: ParamId,
    pub final_bias: ParamId,
}

/// `(A, B)` parameter ids per adapted projection of one layer.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoraLayerIds {
    pub q: Option<(ParamId, ParamId)>,
    pub k: Option<(ParamId, ParamId)>,
    pub v: Option<(ParamId, ParamId)>,
    pub o: Option<(ParamId, ParamId)>,
}

impl LoraLayerIds {
    fn get(&self, target: LoraTarget) -> Option<(ParamId, ParamId)> {
        match target {
            LoraTarget::Q => self.q,
            LoraTarget::K => self.k,
            LoraTarget::V => self.v,
            LoraTarget::O => self.o,
        }
    }

    fn set(&mut self, target: LoraTarget, pair: (ParamId, ParamId)) {
        match target {
            LoraTarget::Q => self.q = Some(pair),
            LoraTarget::K => self.k = Some(pair),
            LoraTarget::V => self.v = Some(pair),
            LoraTarget::O => self.o = Some(pair),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoraParamIds {
    pub layers: Vec<LoraLayerIds>,
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    // Box-Muller keeps us off rand_distr for one distribution
    Array2::from_shape_fn((rows, cols), |_| {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

/// Registers freshly initialized backbone weights (token table, attention,
/// feed-forward, norms) and returns their ids.
pub fn init_backbone(
    params: &mut ParamSet,
    cfg: &BackboneConfig,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> BackboneParamIds {
    let d = cfg.model_dim;
    let f = cfg.ffn_dim;
    let std = 0.02;
    let fam = ParamFamily::Backbone;
    let token_emb = params.add("backbone.token_emb", fam, normal_matrix(rng, vocab_size, d, std));
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        layers.push(LayerParamIds {
            wq: params.add(format!("backbone.layer{l}.wq"), fam, normal_matrix(rng, d, d, std)),
            wk: params.add(format!("backbone.layer{l}.wk"), fam, normal_matrix(rng, d, d, std)),
            wv: params.add(format!("backbone.layer{l}.wv"), fam, normal_matrix(rng, d, d, std)),
            wo: params.add(format!("backbone.layer{l}.wo"), fam, normal_matrix(rng, d, d, std)),
            ln1_gain: params.add(format!("backbone.layer{l}.ln1_gain"), fam, Array2::ones((1, d))),
            ln1_bias: params.add(format!("backbone.layer{l}.ln1_bias"), fam, Array2::zeros((1, d))),
            ln2_gain: params.add(format!("backbone.layer{l}.ln2_gain"), fam, Array2::ones((1, d))),
            ln2_bias: params.add(format!("backbone.layer{l}.ln2_bias"), fam, Array2::zeros((1, d))),
            ffn_w1: params.add(format!("backbone.layer{l}.ffn_w1"), fam, normal_matrix(rng, f, d, std)),
            ffn_b1: params.add(format!("backbone.layer{l}.ffn_b1"), fam, Array2::zeros((1, f))),
            ffn_w2: params.add(format!("backbone.layer{l}.ffn_w2"), fam, normal_matrix(rng, d, f, std)),
            ffn_b2: params.add(format!("backbone.layer{l}.ffn_b2"), fam, Array2::zeros((1, d))),
        });
    }
    let final_gain = params.add("backbone.final_gain", fam, Array2::ones((1, d)));
    let final_bias = params.add("backbone.final_bias", fam, Array2::zeros((1, d)));
    BackboneParamIds { token_emb, layers, final_gain, final_bias }
}

/// Registers adapter pairs for every targeted projection of every layer.
/// `B` is zero; `A` is drawn from a small-variance normal via the seed.
pub fn attach_lora(
    params: &mut ParamSet,
    backbone: &BackboneParamIds,
    cfg: &LoraConfig,
    model_dim: usize,
    seed: u64,
) -> Result<LoraParamIds, ModelError> {
    cfg.validate(model_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.rank;
    let d = model_dim;
    let mut layers = Vec::with_capacity(backbone.layers.len());
    for l in 0..backbone.layers.len() {
        let mut ids = LoraLayerIds::default();
        for &target in &cfg.targets {
            let a = params.add(
                format!("lora.layer{l}.{}.a", target.tag()),
                ParamFamily::Lora,
                normal_matrix(&mut rng, r, d, 0.02),
            );
            let b = params.add(
                format!("lora.layer{l}.{}.b", target.tag()),
                ParamFamily::Lora,
                Array2::zeros((d, r)),
            );
            ids.set(target, (a, b));
        }
        layers.push(ids);
    }
    Ok(LoraParamIds { layers })
}

/// Folds the adapter deltas into the base weights: `W' = W + (alpha/r) B A`.
/// Returns a parameter set whose base projections produce the adapted
/// forward without the two-matmul path.
pub fn merge_lora(
    params: &ParamSet,
    backbone: &BackboneParamIds,
    lora: &LoraParamIds,
    cfg: &LoraConfig,
) -> ParamSet {
    let mut merged = params.clone();
    for (layer_ids, lora_ids) in backbone.layers.iter().zip(&lora.layers) {
        for target in LoraTarget::ALL {
            if let Some((a, b)) = lora_ids.get(target) {
                let w_id = match target {
                    LoraTarget::Q => layer_ids.wq,
                    LoraTarget::K => layer_ids.wk,
                    LoraTarget::V => layer_ids.wv,
                    LoraTarget::O => layer_ids.wo,
                };
                let delta = params.value(b).dot(params.value(a)) * cfg.scaling();
                *merged.value_mut(w_id) += &delta;
            }
        }
    }
    merged
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Deterministic sinusoidal encoding of integer stream positions.
pub fn stream_position_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(p, c)| {
        let phase = p as f64 * inv_freq(c, dim);
        if c % 2 == 0 {
            phase.cos()
        } else {
            phase.sin()
        }
    })
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

struct DropoutCtx<'a> {
    rate: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl DropoutCtx<'_> {
    fn apply(&mut self, tape: &mut Tape, x: NodeId) -> NodeId {
        match (&mut self.rng, self.rate > 0.0) {
            (Some(rng), true) => {
                let (r, c) = tape.value(x).dim();
                let mask = dropout_mask(rng, r, c, self.rate);
                tape.mask_mul(x, mask)
            }
            _ => x,
        }
    }
}

fn projection(
    tape: &mut Tape,
    x: NodeId,
    w: NodeId,
    lora_pair: Option<(NodeId, NodeId)>,
    lora_cfg: Option<&LoraConfig>,
    lora_dropout: &mut DropoutCtx<'_>,
) -> NodeId {
    let base = tape.matmul_tb(x, w);
    match (lora_pair, lora_cfg) {
        (Some((a, b)), Some(cfg)) => {
            let x_in = lora_dropout.apply(tape, x);
            let down = tape.matmul_tb(x_in, a);
            let up = tape.matmul_tb(down, b);
            let delta = tape.scale(up, cfg.scaling());
            tape.add(base, delta)
        }
        _ => base,
    }
}

/// Builds the transformer graph on `tape` from an input-embedding node.
/// Returns the hidden-state node (`total_len x model_dim`).
#[allow(clippy::too_many_arguments)]
pub fn build_backbone_graph(
    tape: &mut Tape,
    input: NodeId,
    bound: &BoundParams,
    ids: &BackboneParamIds,
    lora: Option<(&LoraParamIds, &LoraConfig)>,
    cfg: &BackboneConfig,
    mode: Mode,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId, ModelError> {
    let (len, d) = tape.value(input).dim();
    if len > cfg.max_seq_len {
        return Err(ModelError::SequenceTooLong { len, max: cfg.max_seq_len });
    }
    debug_assert_eq!(d, cfg.model_dim);
    let head_dim = cfg.model_dim / cfg.num_heads;
    let attn_scale = 1.0 / (head_dim as f64).sqrt();
    let drop_rate = if mode == Mode::Train { cfg.dropout_rate } else { 0.0 };
    let lora_drop_rate = match (mode, lora) {
        (Mode::Train, Some((_, lcfg))) => lcfg.dropout,
        _ => 0.0,
    };

    let pos = tape.constant(stream_position_encoding(len, d));
    let mut x = tape.add(input, pos);
    let mut stream_dropout = DropoutCtx { rate: drop_rate, rng: rng.as_deref_mut() };
    x = stream_dropout.apply(tape, x);

    for (l, layer) in ids.layers.iter().enumerate() {
        let lora_layer = lora.map(|(ids, cfg)| (&ids.layers[l], cfg));
        let ln1g = bound.node(layer.ln1_gain);
        let ln1b = bound.node(layer.ln1_bias);
        let xn = tape.layer_norm(x, ln1g, ln1b, LN_EPS);

        let mut lora_dropout = DropoutCtx { rate: lora_drop_rate, rng: rng.as_deref_mut() };
        let pair = |t: LoraTarget| {
            lora_layer
                .and_then(|(ids, _)| ids.get(t))
                .map(|(a, b)| (bound.node(a), bound.node(b)))
        };
        let lcfg = lora_layer.map(|(_, c)| c);
        let q = projection(tape, xn, bound.node(layer.wq), pair(LoraTarget::Q), lcfg, &mut lora_dropout);
        let k = projection(tape, xn, bound.node(layer.wk), pair(LoraTarget::K), lcfg, &mut lora_dropout);
        let v = projection(tape, xn, bound.node(layer.wv), pair(LoraTarget::V), lcfg, &mut lora_dropout);

        let mut head_outs = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim);
            let kh = tape.slice_cols(k, h * head_dim, head_dim);
            let vh = tape.slice_cols(v, h * head_dim, head_dim);
            let scores = tape.matmul_tb(qh, kh);
            let scaled = tape.scale(scores, attn_scale);
            let probs = tape.causal_softmax(scaled);
            head_outs.push(tape.matmul(probs, vh));
        }
        let merged = if head_outs.len() == 1 { head_outs[0] } else { tape.concat_cols(head_outs) };
        let attn =
            projection(tape, merged, bound.node(layer.wo), pair(LoraTarget::O), lcfg, &mut lora_dropout);

        let mut res_dropout = DropoutCtx { rate: drop_rate, rng: rng.as_deref_mut() };
        let attn = res_dropout.apply(tape, attn);
        x = tape.add(x, attn);

        let ln2g = bound.node(layer.ln2_gain);
        let ln2b = bound.node(layer.ln2_bias);
        let xn2 = tape.layer_norm(x, ln2g, ln2b, LN_EPS);
        let h1 = tape.matmul_tb(xn2, bound.node(layer.ffn_w1));
        let h1 = tape.add_row(h1, bound.node(layer.ffn_b1));
        let h1 = tape.gelu_node(h1);
        let h2 = tape.matmul_tb(h1, bound.node(layer.ffn_w2));
        let h2 = tape.add_row(h2, bound.node(layer.ffn_b2));
        let h2 = res_dropout.apply(tape, h2);
        x = tape.add(x, h2);

        if tape.has_non_finite(x) {
            return Err(ModelError::NonFiniteActivation { layer: l });
        }
    }
    let fg = bound.node(ids.final_gain);
    let fb = bound.node(ids.final_bias);
    let out = tape.layer_norm(x, fg, fb, LN_EPS);
    if tape.has_non_finite(out) {
        return Err(ModelError::NonFiniteActivation { layer: ids.layers.len() });
    }
    Ok(out)
}

/// Runs the backbone over an assembled embedding stream. Parameters are
/// frozen; this is the inference-facing entry point.
pub fn forward(
    assembled: &AssembledSequence,
    params: &ParamSet,
    ids: &BackboneParamIds,
    lora: Option<(&LoraParamIds, &LoraConfig)>,
    cfg: &BackboneConfig,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Array2<f64>, ModelError> {
    let mut tape = Tape::new();
    let bound = bind_params_frozen(&mut tape, params);
    let input = tape.constant(assembled.embeddings.clone());
    let hidden = build_backbone_graph(&mut tape, input, &bound, ids, lora, cfg, mode, rng)?;
    Ok(tape.value(hidden).clone())
}

/// Rows of the hidden-state matrix at each event's final slot.
pub fn extract_history_vectors(hidden: &Array2<f64>, boundaries: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((boundaries.len(), hidden.ncols()));
    for (i, &b) in boundaries.iter().enumerate() {
        out.row_mut(i).assign(&hidden.row(b));
    }
    out
}

/// Same gather as a tape op, for training graphs.
pub fn history_vectors_node(tape: &mut Tape, hidden: NodeId, boundaries: &[usize]) -> NodeId {
    tape.gather_rows(hidden, boundaries.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::AssembledSequence;
    use ndarray::arr2;
    use rand::Rng;

    fn small_cfg(num_layers: usize, num_heads: usize, dim: usize) -> BackboneConfig {
        BackboneConfig {
            num_layers,
            num_heads,
            model_dim: dim,
            ffn_dim: dim * 2,
            max_seq_len: 64,
            dropout_rate: 0.0,
        }
    }

    fn assembled(embeddings: Array2<f64>) -> AssembledSequence {
        let n = embeddings.nrows();
        AssembledSequence { embeddings, event_last_index: vec![n - 1], total_len: n }
    }

    fn random_input(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Array2<f64> {
        Array2::from_shape_fn((len, dim), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn lora_parameter_count_formula() {
        let cfg = small_cfg(2, 2, 64);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ids = init_backbone(&mut params, &cfg, 10, &mut rng);
        let lora_cfg =
            LoraConfig { rank: 4, alpha: 16.0, dropout: 0.0, targets: LoraTarget::ALL.to_vec() };
        attach_lora(&mut params, &ids, &lora_cfg, cfg.model_dim, 7).unwrap();
        // 2 r d per adapted matrix, 4 targets, 2 layers
        let per_matrix = 2 * 4 * 64;
        assert_eq!(per_matrix, 512);
        assert_eq!(params.scalar_count(ParamFamily::Lora), 512 * 4 * 2);
    }

    #[test]
    fn lora_attach_is_seed_deterministic() {
        let cfg = small_cfg(1, 1, 8);
        let lora_cfg =
            LoraConfig { rank: 2, alpha: 4.0, dropout: 0.0, targets: vec![LoraTarget::Q] };
        let build = || {
            let mut params = ParamSet::new();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let ids = init_backbone(&mut params, &cfg, 5, &mut rng);
            let lora = attach_lora(&mut params, &ids, &lora_cfg, 8, 99).unwrap();
            let (a, _) = lora.layers[0].q.unwrap();
            params.value(a).clone()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn lora_identity_before_any_update() {
        let cfg = small_cfg(2, 2, 8);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ids = init_backbone(&mut params, &cfg, 6, &mut rng);
        let base_params = params.clone();
        let lora_cfg =
            LoraConfig { rank: 3, alpha: 6.0, dropout: 0.0, targets: LoraTarget::ALL.to_vec() };
        let lora = attach_lora(&mut params, &ids, &lora_cfg, 8, 11).unwrap();

        let input = assembled(random_input(&mut rng, 9, 8));
        let base = forward(&input, &base_params, &ids, None, &cfg, Mode::Infer, None).unwrap();
        let adapted = forward(
            &input,
            &params,
            &ids,
            Some((&lora, &lora_cfg)),
            &cfg,
            Mode::Infer,
            None,
        )
        .unwrap();
        let max_diff = (&base - &adapted).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(max_diff, 0.0);
    }

    #[test]
    fn lora_merge_matches_two_matmul_path() {
        let cfg = small_cfg(2, 2, 8);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ids = init_backbone(&mut params, &cfg, 6, &mut rng);
        let lora_cfg =
            LoraConfig { rank: 2, alpha: 8.0, dropout: 0.0, targets: LoraTarget::ALL.to_vec() };
        let lora = attach_lora(&mut params, &ids, &lora_cfg, 8, 12).unwrap();
        // make the deltas non-trivial
        for layer in &lora.layers {
            for target in LoraTarget::ALL {
                if let Some((_, b)) = layer.get(target) {
                    let v = params.value_mut(b);
                    *v = Array2::from_shape_fn(v.dim(), |_| rng.gen_range(-0.5..0.5));
                }
            }
        }
        let input = assembled(random_input(&mut rng, 7, 8));
        let unmerged =
            forward(&input, &params, &ids, Some((&lora, &lora_cfg)), &cfg, Mode::Infer, None)
                .unwrap();
        let merged_params = merge_lora(&params, &ids, &lora, &lora_cfg);
        let merged = forward(&input, &merged_params, &ids, None, &cfg, Mode::Infer, None).unwrap();
        for (a, b) in unmerged.iter().zip(merged.iter()) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
            assert!(rel < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn causal_masking_blocks_future_positions() {
        let cfg = small_cfg(2, 2, 8);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ids = init_backbone(&mut params, &cfg, 6, &mut rng);
        let base_input = random_input(&mut rng, 10, 8);
        let base = forward(&assembled(base_input.clone()), &params, &ids, None, &cfg, Mode::Infer, None)
            .unwrap();
        for p in [0usize, 4, 8] {
            let mut perturbed = base_input.clone();
            for r in p + 1..10 {
                for c in 0..8 {
                    perturbed[[r, c]] += rng.gen_range(0.5..2.0);
                }
            }
            let out = forward(&assembled(perturbed), &params, &ids, None, &cfg, Mode::Infer, None)
                .unwrap();
            for r in 0..=p {
                for c in 0..8 {
                    assert_eq!(base[[r, c]], out[[r, c]], "row {r} changed by future edit");
                }
            }
        }
    }

    #[test]
    fn single_layer_value_path_matches_hand_computation() {
        // wq = wk = 0, wv = wo = I, ffn = 0: the block reduces to
        // x + causal_mean(layer_norm(x)), then the final norm.
        let cfg = BackboneConfig {
            num_layers: 1,
            num_heads: 1,
            model_dim: 2,
            ffn_dim: 2,
            max_seq_len: 8,
            dropout_rate: 0.0,
        };
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids = init_backbone(&mut params, &cfg, 4, &mut rng);
        let layer = &ids.layers[0];
        let eye = Array2::eye(2);
        params.value_mut(layer.wq).fill(0.0);
        params.value_mut(layer.wk).fill(0.0);
        *params.value_mut(layer.wv) = eye.clone();
        *params.value_mut(layer.wo) = eye;
        params.value_mut(layer.ffn_w1).fill(0.0);
        params.value_mut(layer.ffn_w2).fill(0.0);

        let input = arr2(&[[0.3, -1.2], [0.9, 0.4]]);
        let got = forward(&assembled(input.clone()), &params, &ids, None, &cfg, Mode::Infer, None)
            .unwrap();

        // hand computation with scalar arithmetic
        let ln = |a: f64, b: f64| {
            let mean = (a + b) / 2.0;
            let var = ((a - mean).powi(2) + (b - mean).powi(2)) / 2.0;
            let s = 1.0 / (var + LN_EPS).sqrt();
            [(a - mean) * s, (b - mean) * s]
        };
        let pos = stream_position_encoding(2, 2);
        let x: Vec<[f64; 2]> = (0..2)
            .map(|r| [input[[r, 0]] + pos[[r, 0]], input[[r, 1]] + pos[[r, 1]]])
            .collect();
        let xn: Vec<[f64; 2]> = x.iter().map(|r| ln(r[0], r[1])).collect();
        // scores are all zero: row 0 attends to itself, row 1 averages
        let attn = [xn[0], [(xn[0][0] + xn[1][0]) / 2.0, (xn[0][1] + xn[1][1]) / 2.0]];
        let x2: Vec<[f64; 2]> =
            (0..2).map(|r| [x[r][0] + attn[r][0], x[r][1] + attn[r][1]]).collect();
        let expected: Vec<[f64; 2]> = x2.iter().map(|r| ln(r[0], r[1])).collect();
        for r in 0..2 {
            for c in 0..2 {
                assert!(
                    (got[[r, c]] - expected[r][c]).abs() < 1e-12,
                    "row {r} col {c}: {} vs {}",
                    got[[r, c]],
                    expected[r][c]
                );
            }
        }
    }

    #[test]
    fn forward_rejects_overlong_streams() {
        let cfg = BackboneConfig { max_seq_len: 4, ..small_cfg(1, 1, 4) };
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ids = init_backbone(&mut params, &cfg, 4, &mut rng);
        let input = assembled(random_input(&mut rng, 5, 4));
        let err = forward(&input, &params, &ids, None, &cfg, Mode::Infer, None).unwrap_err();
        assert!(matches!(err, ModelError::SequenceTooLong { len: 5, max: 4 }));
    }

    #[test]
    fn forward_reports_non_finite_layer() {
        let cfg = small_cfg(2, 1, 4);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ids = init_backbone(&mut params, &cfg, 4, &mut rng);
        params.value_mut(ids.layers[1].ffn_w2)[[0, 0]] = f64::INFINITY;
        let input = assembled(random_input(&mut rng, 3, 4));
        let err = forward(&input, &params, &ids, None, &cfg, Mode::Infer, None).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteActivation { layer: 1 }));
    }

    #[test]
    fn lora_rejects_bad_rank() {
        let cfg = small_cfg(1, 1, 8);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ids = init_backbone(&mut params, &cfg, 4, &mut rng);
        let bad = LoraConfig { rank: 9, alpha: 1.0, dropout: 0.0, targets: vec![LoraTarget::Q] };
        assert!(attach_lora(&mut params, &ids, &bad, 8, 0).is_err());
        let zero = LoraConfig { rank: 0, alpha: 1.0, dropout: 0.0, targets: vec![LoraTarget::Q] };
        assert!(attach_lora(&mut params, &ids, &zero, 8, 0).is_err());
        // rank = model_dim is the full-capacity bound and is allowed
        let full = LoraConfig { rank: 8, alpha: 1.0, dropout: 0.0, targets: vec![LoraTarget::Q] };
        assert!(attach_lora(&mut params, &ids, &full, 8, 0).is_ok());
    }
}
