//! Run configuration: a flat key-value file plus command-line overrides.
//!
//! The file format is one `key = value` pair per line, `#` comments allowed.
//! Keys mirror the usual hyperparameter names:
//!
//! ```text
//! hidden_size   = 32          num_layers    = 2
//! num_heads     = 2           ffn_size      = 64
//! batch_size    = 8           max_epoch     = 20
//! learning_rate = 5e-4        num_integrals = 20
//! lora_rank     = 16          lora_alpha    = 16
//! lora_dropout  = 0.05        target_modules = QKVO
//! beta_type     = 1           beta_time     = 1
//! temporal_encoding = sinusoidal   event_order = type_first
//! type_format   = textual     intensity     = thp
//! prompt        = on          time_target   = gap
//! trainable_scope = all       seed = 0
//! split_ratios  = 0.8,0.1,0.1  split_seed = 0
//! early_stop_patience = 3     train_fraction = 1.0
//! dropout       = 0.0         max_seq_len = 2048
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use tppkit::backbone::{BackboneConfig, LoraConfig, LoraTarget};
use tppkit::encode::{EventOrder, PromptSpec, TemporalVariant, TypeFormat};
use tppkit::heads::TimeTarget;
use tppkit::model::ModelConfig;
use tppkit::params::TrainableScope;
use tppkit::tpp::IntensityKind;
use tppkit::train::TrainConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub lora: Option<LoraConfig>,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
    pub prompt_enabled: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                backbone: BackboneConfig {
                    num_layers: 2,
                    num_heads: 2,
                    model_dim: 32,
                    ffn_dim: 64,
                    max_seq_len: 2048,
                    dropout_rate: 0.0,
                },
                temporal_variant: TemporalVariant::Sinusoidal,
                prompt: PromptSpec {
                    enabled: false,
                    text: String::new(),
                    order: EventOrder::TypeFirst,
                    type_format: TypeFormat::Textual,
                },
                intensity: IntensityKind::Thp,
                time_target: TimeTarget::Gap,
            },
            train: TrainConfig::default(),
            lora: None,
            split_ratios: (0.8, 0.1, 0.1),
            split_seed: 0,
            prompt_enabled: false,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Parses a key-value file into a map; later keys win.
pub fn parse_kv_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
    parse_kv(&text)
}

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("line {}: expected key = value", lineno + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    /// Applies a key-value map on top of the current values.
    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<(), ConfigError> {
        let mut lora_rank: Option<usize> = self.lora.as_ref().map(|l| l.rank);
        let mut lora_alpha: Option<f64> = self.lora.as_ref().map(|l| l.alpha);
        let mut lora_dropout: Option<f64> = self.lora.as_ref().map(|l| l.dropout);
        let mut lora_targets: Option<Vec<LoraTarget>> =
            self.lora.as_ref().map(|l| l.targets.clone());

        for (key, value) in map {
            match key.as_str() {
                "hidden_size" | "model_dim" => self.model.backbone.model_dim = parse(key, value)?,
                "num_layers" => self.model.backbone.num_layers = parse(key, value)?,
                "num_heads" => self.model.backbone.num_heads = parse(key, value)?,
                "ffn_size" | "ffn_dim" => self.model.backbone.ffn_dim = parse(key, value)?,
                "max_seq_len" => self.model.backbone.max_seq_len = parse(key, value)?,
                "dropout" => self.model.backbone.dropout_rate = parse(key, value)?,
                "learning_rate" => self.train.learning_rate = parse(key, value)?,
                "batch_size" => self.train.batch_size = parse(key, value)?,
                "max_epoch" | "max_epochs" => self.train.max_epochs = parse(key, value)?,
                "early_stop_patience" => self.train.early_stop_patience = parse(key, value)?,
                "train_fraction" => self.train.train_fraction = parse(key, value)?,
                "seed" => self.train.seed = parse(key, value)?,
                "beta_type" => self.train.loss_weights.beta_type = parse(key, value)?,
                "beta_time" => self.train.loss_weights.beta_time = parse(key, value)?,
                "num_integrals" | "mc_samples" => {
                    self.train.mc.samples_per_interval = parse(key, value)?
                }
                "mc_seed" => self.train.mc.seed = parse(key, value)?,
                "trainable_scope" => {
                    self.train.scope = match value.as_str() {
                        "all" => TrainableScope::All,
                        "lora_and_heads" => TrainableScope::LoraAndHeads,
                        "heads_only" | "none" => TrainableScope::HeadsOnly,
                        other => return Err(err(format!("unknown trainable_scope {other:?}"))),
                    }
                }
                "temporal_encoding" => {
                    self.model.temporal_variant = match value.as_str() {
                        "sinusoidal" | "positional" => TemporalVariant::Sinusoidal,
                        "time_shifted" => TemporalVariant::TimeShifted,
                        "linear" => TemporalVariant::Linear,
                        other => return Err(err(format!("unknown temporal_encoding {other:?}"))),
                    }
                }
                "event_order" | "first_embedding" => {
                    self.model.prompt.order = match value.as_str() {
                        "type_first" | "event_type" => EventOrder::TypeFirst,
                        "time_first" | "event_time" => EventOrder::TimeFirst,
                        other => return Err(err(format!("unknown event_order {other:?}"))),
                    }
                }
                "type_format" => {
                    self.model.prompt.type_format = match value.as_str() {
                        "textual" => TypeFormat::Textual,
                        "ordinal" => TypeFormat::Ordinal,
                        other => return Err(err(format!("unknown type_format {other:?}"))),
                    }
                }
                "prompt" => {
                    self.prompt_enabled = match value.as_str() {
                        "on" | "true" | "yes" | "y" => true,
                        "off" | "false" | "no" | "n" => false,
                        other => return Err(err(format!("unknown prompt setting {other:?}"))),
                    }
                }
                "prompt_text" => {
                    self.model.prompt.text = value.clone();
                    self.prompt_enabled = true;
                }
                "intensity" => {
                    self.model.intensity = match value.as_str() {
                        "thp" => IntensityKind::Thp,
                        "rmtpp" => IntensityKind::Rmtpp,
                        "sahp" => IntensityKind::Sahp,
                        other => return Err(err(format!("unknown intensity {other:?}"))),
                    }
                }
                "time_target" => {
                    self.model.time_target = match value.as_str() {
                        "gap" => TimeTarget::Gap,
                        "absolute" => TimeTarget::Absolute,
                        other => return Err(err(format!("unknown time_target {other:?}"))),
                    }
                }
                "lora_rank" => lora_rank = Some(parse(key, value)?),
                "lora_alpha" => lora_alpha = Some(parse(key, value)?),
                "lora_dropout" => lora_dropout = Some(parse(key, value)?),
                "target_modules" => lora_targets = Some(parse_targets(value)?),
                "split_ratios" => {
                    let parts: Vec<f64> = value
                        .split(',')
                        .map(|p| p.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| err(format!("split_ratios: {e}")))?;
                    if parts.len() != 3 {
                        return Err(err("split_ratios needs three comma-separated values"));
                    }
                    self.split_ratios = (parts[0], parts[1], parts[2]);
                }
                "split_seed" => self.split_seed = parse(key, value)?,
                other => return Err(err(format!("unknown config key {other:?}"))),
            }
        }

        if let Some(rank) = lora_rank {
            self.lora = Some(LoraConfig {
                rank,
                alpha: lora_alpha.unwrap_or(rank as f64),
                dropout: lora_dropout.unwrap_or(0.0),
                targets: lora_targets.unwrap_or_else(|| LoraTarget::ALL.to_vec()),
            });
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| err(format!("{key}: {e}")))
}

fn parse_targets(value: &str) -> Result<Vec<LoraTarget>, ConfigError> {
    let mut out = Vec::new();
    for ch in value.chars() {
        match ch.to_ascii_uppercase() {
            'Q' => out.push(LoraTarget::Q),
            'K' => out.push(LoraTarget::K),
            'V' => out.push(LoraTarget::V),
            'O' => out.push(LoraTarget::O),
            ',' | ' ' => {}
            other => return Err(err(format!("unknown lora target {other:?}"))),
        }
    }
    if out.is_empty() {
        return Err(err("target_modules is empty"));
    }
    Ok(out)
}
