//! Run configuration: a flat `key = value` file plus `--set` overrides,
//! validated against one static schema that also generates the help text.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sanet_core::attention::CbamOrder;
use sanet_core::data::SynthParams;
use sanet_core::network::SANetConfig;
use sanet_core::trainer::TrainConfig;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
    Choice(&'static [&'static str]),
}

struct SchemaEntry {
    key: &'static str,
    kind: Kind,
    default: &'static str,
    help: &'static str,
}

/// Every recognized key, its type, default and documentation. `--help-config`
/// and validation both come from this table.
const SCHEMA: &[SchemaEntry] = &[
    SchemaEntry { key: "model.base_channels", kind: Kind::Int, default: "16", help: "first-stage channel width; doubles per stage (multiple of 4)" },
    SchemaEntry { key: "model.stages", kind: Kind::Int, default: "4", help: "encoder depth; inputs must be divisible by 2^(stages-1)" },
    SchemaEntry { key: "model.use_pinwheel", kind: Kind::Bool, default: "true", help: "enable the pinwheel context branch in each encoder block" },
    SchemaEntry { key: "model.use_cbam", kind: Kind::Bool, default: "true", help: "enable spatial-channel attention after branch fusion" },
    SchemaEntry { key: "model.cbam_order", kind: Kind::Choice(&["channel_first", "spatial_first"]), default: "channel_first", help: "order of the two attention gates" },
    SchemaEntry { key: "model.safm_residual", kind: Kind::Bool, default: "true", help: "keep the residual connection in the skip-fusion modules" },
    SchemaEntry { key: "model.lambda_learnable", kind: Kind::Bool, default: "true", help: "learn the residual strength (false pins it to 1)" },
    SchemaEntry { key: "train.lr0", kind: Kind::Float, default: "1e-3", help: "initial learning rate" },
    SchemaEntry { key: "train.epochs", kind: Kind::Int, default: "50", help: "training epochs" },
    SchemaEntry { key: "train.batch", kind: Kind::Int, default: "8", help: "batch size" },
    SchemaEntry { key: "train.eta_min", kind: Kind::Float, default: "0", help: "cosine schedule floor" },
    SchemaEntry { key: "train.beta1", kind: Kind::Float, default: "0.9", help: "Adam first-moment decay" },
    SchemaEntry { key: "train.beta2", kind: Kind::Float, default: "0.999", help: "Adam second-moment decay" },
    SchemaEntry { key: "train.adam_eps", kind: Kind::Float, default: "1e-8", help: "Adam denominator epsilon" },
    SchemaEntry { key: "train.seed", kind: Kind::Int, default: "42", help: "seed for init, shuffling and augmentation" },
    SchemaEntry { key: "train.holdout_frac", kind: Kind::Float, default: "0.2", help: "fraction of the training set held out for per-epoch metrics" },
    SchemaEntry { key: "train.grad_clip", kind: Kind::Float, default: "0", help: "global-norm gradient clip (0 = off)" },
    SchemaEntry { key: "train.ckpt_every", kind: Kind::Int, default: "10", help: "checkpoint cadence in epochs (0 = only final)" },
    SchemaEntry { key: "train.eval_every", kind: Kind::Int, default: "1", help: "held-out evaluation cadence in epochs" },
    SchemaEntry { key: "synth.count", kind: Kind::Int, default: "200", help: "synthetic training scenes generated by `synth`" },
    SchemaEntry { key: "synth.test_count", kind: Kind::Int, default: "50", help: "synthetic test scenes generated by `synth`" },
    SchemaEntry { key: "synth.height", kind: Kind::Int, default: "64", help: "scene height in pixels" },
    SchemaEntry { key: "synth.width", kind: Kind::Int, default: "64", help: "scene width in pixels" },
    SchemaEntry { key: "synth.targets_min", kind: Kind::Int, default: "1", help: "minimum targets per scene" },
    SchemaEntry { key: "synth.targets_max", kind: Kind::Int, default: "3", help: "maximum targets per scene" },
    SchemaEntry { key: "synth.amp_min", kind: Kind::Float, default: "0.5", help: "minimum target peak amplitude" },
    SchemaEntry { key: "synth.amp_max", kind: Kind::Float, default: "0.95", help: "maximum target peak amplitude" },
    SchemaEntry { key: "synth.sigma_min", kind: Kind::Float, default: "0.75", help: "minimum target Gaussian sigma (px)" },
    SchemaEntry { key: "synth.sigma_max", kind: Kind::Float, default: "1.5", help: "maximum target Gaussian sigma (px)" },
    SchemaEntry { key: "synth.clutter", kind: Kind::Float, default: "0.3", help: "low-frequency background clutter amplitude" },
    SchemaEntry { key: "synth.noise_sigma", kind: Kind::Float, default: "0.02", help: "white noise standard deviation" },
    SchemaEntry { key: "synth.seed", kind: Kind::Int, default: "7", help: "scene generator seed" },
    SchemaEntry { key: "data.train_dir", kind: Kind::Str, default: "data/train", help: "training dataset directory (images/ + masks/)" },
    SchemaEntry { key: "data.test_dir", kind: Kind::Str, default: "data/test", help: "test dataset directory (images/ + masks/)" },
    SchemaEntry { key: "eval.threshold", kind: Kind::Float, default: "0.5", help: "binarization threshold for predictions" },
    SchemaEntry { key: "eval.match_radius", kind: Kind::Float, default: "3.0", help: "centroid matching radius in pixels for Pd/Fa" },
];

/// Validated configuration: every key present with a type-checked value.
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

fn entry(key: &str) -> Option<&'static SchemaEntry> {
    SCHEMA.iter().find(|e| e.key == key)
}

fn check_value(e: &SchemaEntry, value: &str) -> Result<(), ConfigError> {
    let ok = match e.kind {
        Kind::Int => value.parse::<i64>().is_ok(),
        Kind::Float => value.parse::<f64>().is_ok(),
        Kind::Bool => matches!(value, "true" | "false"),
        Kind::Str => true,
        Kind::Choice(options) => options.contains(&value),
    };
    if ok {
        Ok(())
    } else {
        Err(ConfigError(format!(
            "key '{}' expects {} but got '{}'",
            e.key,
            match e.kind {
                Kind::Int => "an integer".to_string(),
                Kind::Float => "a number".to_string(),
                Kind::Bool => "true|false".to_string(),
                Kind::Str => "a string".to_string(),
                Kind::Choice(o) => format!("one of {}", o.join("|")),
            },
            value
        )))
    }
}

impl RunConfig {
    /// Loads defaults, then the optional config file, then `--set` overrides
    /// (last one wins). Unknown keys and malformed values are errors.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
        let mut values: BTreeMap<&'static str, String> = SCHEMA
            .iter()
            .map(|e| (e.key, e.default.to_string()))
            .collect();

        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(ConfigError(format!(
                        "{}:{}: expected 'key = value', got '{line}'",
                        path.display(),
                        lineno + 1
                    )));
                };
                let (key, value) = (key.trim(), value.trim());
                let e = entry(key).ok_or_else(|| {
                    ConfigError(format!(
                        "{}:{}: unknown key '{key}'",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                check_value(e, value)?;
                values.insert(e.key, value.to_string());
            }
        }

        for ov in overrides {
            let Some((key, value)) = ov.split_once('=') else {
                return Err(ConfigError(format!(
                    "--set expects KEY=VALUE, got '{ov}'"
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            let e = entry(key).ok_or_else(|| ConfigError(format!("unknown key '{key}'")))?;
            check_value(e, value)?;
            values.insert(e.key, value.to_string());
        }

        Ok(RunConfig { values })
    }

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key '{key}' missing from schema"))
    }

    pub fn int(&self, key: &str) -> usize {
        self.raw(key).parse().unwrap()
    }

    pub fn int_u64(&self, key: &str) -> u64 {
        self.raw(key).parse().unwrap()
    }

    pub fn float(&self, key: &str) -> f64 {
        self.raw(key).parse().unwrap()
    }

    pub fn boolean(&self, key: &str) -> bool {
        self.raw(key) == "true"
    }

    pub fn string(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key))
    }

    pub fn model_config(&self) -> SANetConfig {
        SANetConfig {
            base_channels: self.int("model.base_channels"),
            stages: self.int("model.stages"),
            use_pinwheel: self.boolean("model.use_pinwheel"),
            use_cbam: self.boolean("model.use_cbam"),
            cbam_order: if self.raw("model.cbam_order") == "spatial_first" {
                CbamOrder::SpatialFirst
            } else {
                CbamOrder::ChannelFirst
            },
            safm_residual: self.boolean("model.safm_residual"),
            lambda_learnable: self.boolean("model.lambda_learnable"),
        }
    }

    pub fn train_config(&self, out_dir: &Path) -> TrainConfig {
        TrainConfig {
            lr0: self.float("train.lr0"),
            epochs: self.int("train.epochs"),
            batch: self.int("train.batch"),
            eta_min: self.float("train.eta_min"),
            beta1: self.float("train.beta1"),
            beta2: self.float("train.beta2"),
            adam_eps: self.float("train.adam_eps"),
            seed: self.int_u64("train.seed"),
            holdout_frac: self.float("train.holdout_frac"),
            grad_clip: self.float("train.grad_clip"),
            threshold: self.float("eval.threshold"),
            match_radius: self.float("eval.match_radius"),
            ckpt_every: self.int("train.ckpt_every"),
            ckpt_dir: Some(out_dir.join("checkpoints")),
            eval_every: self.int("train.eval_every"),
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            height: self.int("synth.height"),
            width: self.int("synth.width"),
            targets: (self.int("synth.targets_min"), self.int("synth.targets_max")),
            amplitude: (self.float("synth.amp_min"), self.float("synth.amp_max")),
            sigma: (self.float("synth.sigma_min"), self.float("synth.sigma_max")),
            clutter: self.float("synth.clutter"),
            noise_sigma: self.float("synth.noise_sigma"),
            seed: self.int_u64("synth.seed"),
        }
    }

    /// The resolved configuration as ordered JSON, for run manifests.
    pub fn resolved_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }

    /// Documentation for every key, generated from the schema.
    pub fn help_text() -> String {
        let mut out = String::from("configuration keys (key = value file or --set KEY=VALUE):\n");
        for e in SCHEMA {
            out.push_str(&format!(
                "  {:<24} {:<10} default {:<12} {}\n",
                e.key,
                match e.kind {
                    Kind::Int => "int",
                    Kind::Float => "float",
                    Kind::Bool => "bool",
                    Kind::Str => "string",
                    Kind::Choice(_) => "choice",
                },
                e.default,
                e.help
            ));
        }
        out
    }

    pub fn all_keys() -> Vec<&'static str> {
        SCHEMA.iter().map(|e| e.key).collect()
    }
}
