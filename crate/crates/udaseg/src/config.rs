//! Flat `key = value` configuration files.
//!
//! Keys are dotted (`loss.w1_s = 0.01`), `#` starts a comment, blank lines
//! are skipped. Every key is optional and falls back to
//! [`TrainConfig::default`]; unknown or repeated keys are errors. Lists are
//! comma separated. Threshold modes are `adaptive`, `none` or `fixed(v)`.
//!
//! [`render`] writes every key in schema order, so the rendered text is a
//! canonical form: parsing it back yields the same configuration and its
//! SHA-256 identifies the run.

use std::collections::HashSet;
use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use udaseg_core::selftrain::{ClassWeightMode, ThresholdMode};
use udaseg_core::train::{LrConfig, TrainConfig};

use crate::error::{Result, UdasError};

/// Every accepted key with a one-line description.
pub const SCHEMA: &[(&str, &str)] = &[
    ("run.iterations", "training iterations"),
    ("run.batch_size", "images per domain per step"),
    ("run.seed", "master seed for weights and data streams"),
    ("run.eval_interval", "iterations between validation passes"),
    ("run.eval_images", "target images per evaluation"),
    ("scene.height", "image height (even, >= 8)"),
    ("scene.width", "image width (even, >= 8)"),
    ("scene.num_classes", "classes in use, 2..=6"),
    ("scene.class_frequencies", "expected pixel share per class, sums to 1"),
    ("scene.rare_probability", "probability a scene contains the rare blob"),
    ("shift.hue_degrees", "target hue rotation"),
    ("shift.gamma_offset", "target gamma is 1 + offset"),
    ("shift.noise_amplitude", "target correlated-noise amplitude"),
    ("shift.texture_offset", "target texture frequency scale is 1 + offset"),
    ("model.generator_width", "generator base width (>= 4)"),
    ("model.leaky_slope", "leaky ReLU negative slope"),
    ("model.d1_channels", "D1 output channels per layer (5 values, last 1)"),
    ("model.d2_channels", "D2 output channels per layer (5 values, last 1)"),
    ("loss.w1_s", "weight of the D1 adversarial term on source"),
    ("loss.w1_t", "weight of the D1 adversarial term on target"),
    ("loss.w2_t", "weight of the D2 adversarial term"),
    ("loss.w3", "weight of the self-training term"),
    ("loss.eps", "floor added inside every logarithm"),
    ("ablation.use_g1_s", "enable the D1 adversarial term on source"),
    ("ablation.use_g1_t", "enable the D1 adversarial term on target"),
    ("ablation.use_g2", "enable the D2 adversarial term"),
    ("ablation.use_g3", "enable self-training"),
    ("ablation.threshold_mode", "adaptive | none | fixed(v)"),
    ("selftrain.percentile", "percentile f in (0, 100]"),
    (
        "selftrain.min_pixels",
        "predicted pixels needed before a class threshold moves",
    ),
    (
        "selftrain.initial_threshold",
        "threshold before a class is first observed",
    ),
    ("selftrain.class_weights", "inverse | proportional"),
    (
        "selftrain.class_weight_samples",
        "source scenes used for class frequencies",
    ),
    ("optim.g.base_lr", "generator initial learning rate"),
    ("optim.g.end_lr", "generator final learning rate"),
    ("optim.g.power", "generator polynomial decay power"),
    ("optim.g.momentum", "generator SGD momentum"),
    ("optim.g.weight_decay", "generator L2 weight decay"),
    ("optim.d1.base_lr", "D1 initial learning rate"),
    ("optim.d1.end_lr", "D1 final learning rate"),
    ("optim.d1.power", "D1 polynomial decay power"),
    ("optim.d2.base_lr", "D2 initial learning rate"),
    ("optim.d2.end_lr", "D2 final learning rate"),
    ("optim.d2.power", "D2 polynomial decay power"),
    ("optim.adam.beta1", "Adam first-moment decay"),
    ("optim.adam.beta2", "Adam second-moment decay"),
    ("optim.adam.eps", "Adam denominator floor"),
];

fn list<T: Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn threshold_mode_text(mode: ThresholdMode) -> String {
    match mode {
        ThresholdMode::Adaptive => "adaptive".into(),
        ThresholdMode::Disabled => "none".into(),
        ThresholdMode::Fixed(v) => format!("fixed({v})"),
    }
}

fn lookup(cfg: &TrainConfig, key: &str) -> String {
    let s = &cfg.scene;
    let sw = &cfg.switches;
    match key {
        "run.iterations" => cfg.iterations.to_string(),
        "run.batch_size" => cfg.batch_size.to_string(),
        "run.seed" => cfg.seed.to_string(),
        "run.eval_interval" => cfg.eval_interval.to_string(),
        "run.eval_images" => cfg.eval_images.to_string(),
        "scene.height" => s.height.to_string(),
        "scene.width" => s.width.to_string(),
        "scene.num_classes" => s.num_classes.to_string(),
        "scene.class_frequencies" => list(&s.class_frequencies),
        "scene.rare_probability" => s.rare_probability.to_string(),
        "shift.hue_degrees" => s.shift.hue_degrees.to_string(),
        "shift.gamma_offset" => s.shift.gamma_offset.to_string(),
        "shift.noise_amplitude" => s.shift.noise_amplitude.to_string(),
        "shift.texture_offset" => s.shift.texture_offset.to_string(),
        "model.generator_width" => cfg.generator_width.to_string(),
        "model.leaky_slope" => cfg.leaky_slope.to_string(),
        "model.d1_channels" => list(&cfg.d1_channels),
        "model.d2_channels" => list(&cfg.d2_channels),
        "loss.w1_s" => cfg.weights.w1_s.to_string(),
        "loss.w1_t" => cfg.weights.w1_t.to_string(),
        "loss.w2_t" => cfg.weights.w2_t.to_string(),
        "loss.w3" => cfg.weights.w3.to_string(),
        "loss.eps" => cfg.eps.to_string(),
        "ablation.use_g1_s" => sw.use_g1_s.to_string(),
        "ablation.use_g1_t" => sw.use_g1_t.to_string(),
        "ablation.use_g2" => sw.use_g2.to_string(),
        "ablation.use_g3" => sw.use_g3.to_string(),
        "ablation.threshold_mode" => threshold_mode_text(sw.threshold_mode),
        "selftrain.percentile" => cfg.percentile.to_string(),
        "selftrain.min_pixels" => cfg.min_pixels.to_string(),
        "selftrain.initial_threshold" => cfg.initial_threshold.to_string(),
        "selftrain.class_weights" => match cfg.class_weight_mode {
            ClassWeightMode::Inverse => "inverse".into(),
            ClassWeightMode::Proportional => "proportional".into(),
        },
        "selftrain.class_weight_samples" => cfg.class_weight_samples.to_string(),
        "optim.g.base_lr" => cfg.g_lr.base.to_string(),
        "optim.g.end_lr" => cfg.g_lr.end.to_string(),
        "optim.g.power" => cfg.g_lr.power.to_string(),
        "optim.g.momentum" => cfg.g_momentum.to_string(),
        "optim.g.weight_decay" => cfg.g_weight_decay.to_string(),
        "optim.d1.base_lr" => cfg.d1_lr.base.to_string(),
        "optim.d1.end_lr" => cfg.d1_lr.end.to_string(),
        "optim.d1.power" => cfg.d1_lr.power.to_string(),
        "optim.d2.base_lr" => cfg.d2_lr.base.to_string(),
        "optim.d2.end_lr" => cfg.d2_lr.end.to_string(),
        "optim.d2.power" => cfg.d2_lr.power.to_string(),
        "optim.adam.beta1" => cfg.adam_beta1.to_string(),
        "optim.adam.beta2" => cfg.adam_beta2.to_string(),
        "optim.adam.eps" => cfg.adam_eps.to_string(),
        _ => unreachable!("key {key} missing from lookup"),
    }
}

fn scalar<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?}"))
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    value.split(',').map(|v| scalar(v.trim())).collect()
}

fn parse_threshold_mode(value: &str) -> std::result::Result<ThresholdMode, String> {
    match value {
        "adaptive" => Ok(ThresholdMode::Adaptive),
        "none" => Ok(ThresholdMode::Disabled),
        _ => value
            .strip_prefix("fixed(")
            .and_then(|rest| rest.strip_suffix(')'))
            .map(|v| scalar(v.trim()).map(ThresholdMode::Fixed))
            .unwrap_or_else(|| Err(format!("expected adaptive, none or fixed(v), got {value:?}"))),
    }
}

fn set_lr(lr: &mut LrConfig, field: &str, value: &str) -> std::result::Result<(), String> {
    match field {
        "base_lr" => lr.base = scalar(value)?,
        "end_lr" => lr.end = scalar(value)?,
        "power" => lr.power = scalar(value)?,
        _ => unreachable!(),
    }
    Ok(())
}

fn assign(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let s = &mut cfg.scene;
    let sw = &mut cfg.switches;
    match key {
        "run.iterations" => cfg.iterations = scalar(value)?,
        "run.batch_size" => cfg.batch_size = scalar(value)?,
        "run.seed" => cfg.seed = scalar(value)?,
        "run.eval_interval" => cfg.eval_interval = scalar(value)?,
        "run.eval_images" => cfg.eval_images = scalar(value)?,
        "scene.height" => s.height = scalar(value)?,
        "scene.width" => s.width = scalar(value)?,
        "scene.num_classes" => s.num_classes = scalar(value)?,
        "scene.class_frequencies" => s.class_frequencies = parse_list(value)?,
        "scene.rare_probability" => s.rare_probability = scalar(value)?,
        "shift.hue_degrees" => s.shift.hue_degrees = scalar(value)?,
        "shift.gamma_offset" => s.shift.gamma_offset = scalar(value)?,
        "shift.noise_amplitude" => s.shift.noise_amplitude = scalar(value)?,
        "shift.texture_offset" => s.shift.texture_offset = scalar(value)?,
        "model.generator_width" => cfg.generator_width = scalar(value)?,
        "model.leaky_slope" => cfg.leaky_slope = scalar(value)?,
        "model.d1_channels" => cfg.d1_channels = parse_list(value)?,
        "model.d2_channels" => cfg.d2_channels = parse_list(value)?,
        "loss.w1_s" => cfg.weights.w1_s = scalar(value)?,
        "loss.w1_t" => cfg.weights.w1_t = scalar(value)?,
        "loss.w2_t" => cfg.weights.w2_t = scalar(value)?,
        "loss.w3" => cfg.weights.w3 = scalar(value)?,
        "loss.eps" => cfg.eps = scalar(value)?,
        "ablation.use_g1_s" => sw.use_g1_s = scalar(value)?,
        "ablation.use_g1_t" => sw.use_g1_t = scalar(value)?,
        "ablation.use_g2" => sw.use_g2 = scalar(value)?,
        "ablation.use_g3" => sw.use_g3 = scalar(value)?,
        "ablation.threshold_mode" => sw.threshold_mode = parse_threshold_mode(value)?,
        "selftrain.percentile" => cfg.percentile = scalar(value)?,
        "selftrain.min_pixels" => cfg.min_pixels = scalar(value)?,
        "selftrain.initial_threshold" => cfg.initial_threshold = scalar(value)?,
        "selftrain.class_weights" => {
            cfg.class_weight_mode = match value {
                "inverse" => ClassWeightMode::Inverse,
                "proportional" => ClassWeightMode::Proportional,
                _ => return Err(format!("expected inverse or proportional, got {value:?}")),
            }
        }
        "selftrain.class_weight_samples" => cfg.class_weight_samples = scalar(value)?,
        "optim.g.momentum" => cfg.g_momentum = scalar(value)?,
        "optim.g.weight_decay" => cfg.g_weight_decay = scalar(value)?,
        "optim.adam.beta1" => cfg.adam_beta1 = scalar(value)?,
        "optim.adam.beta2" => cfg.adam_beta2 = scalar(value)?,
        "optim.adam.eps" => cfg.adam_eps = scalar(value)?,
        _ => {
            let (net, field) = key
                .strip_prefix("optim.")
                .and_then(|k| k.split_once('.'))
                .filter(|(_, f)| matches!(*f, "base_lr" | "end_lr" | "power"))
                .ok_or_else(|| format!("unknown key {key:?}"))?;
            let lr = match net {
                "g" => &mut cfg.g_lr,
                "d1" => &mut cfg.d1_lr,
                "d2" => &mut cfg.d2_lr,
                _ => return Err(format!("unknown key {key:?}")),
            };
            set_lr(lr, field, value)?;
        }
    }
    Ok(())
}

/// Applies one `key=value` pair; `line` is only used in error messages.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str, line: usize) -> Result<()> {
    if !SCHEMA.iter().any(|(k, _)| *k == key) {
        return Err(UdasError::Config {
            line,
            message: format!("unknown key {key:?}"),
        });
    }
    assign(cfg, key, value).map_err(|message| UdasError::Config {
        line,
        message: format!("{key}: {message}"),
    })
}

/// Applies a command-line `key=value` override. Validation is left to the
/// caller once all overrides are in.
pub fn apply_override(cfg: &mut TrainConfig, pair: &str) -> Result<()> {
    let (key, value) = pair.split_once('=').ok_or_else(|| UdasError::Config {
        line: 0,
        message: format!("override {pair:?} is not key=value"),
    })?;
    apply(cfg, key.trim(), value.trim(), 0)
}

/// Parses a configuration file on top of the defaults and validates it.
pub fn parse(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut seen = HashSet::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| UdasError::Config {
            line,
            message: format!("expected key = value, got {content:?}"),
        })?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(UdasError::Config {
                line,
                message: format!("duplicate key {key:?}"),
            });
        }
        apply(&mut cfg, key, value.trim(), line)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical text: every key in schema order.
pub fn render(cfg: &TrainConfig) -> String {
    SCHEMA
        .iter()
        .map(|(key, _)| format!("{key} = {}\n", lookup(cfg, key)))
        .collect()
}

/// Hex SHA-256 of the canonical text.
pub fn config_hash(cfg: &TrainConfig) -> String {
    Sha256::digest(render(cfg).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
