//! Flat `key = value` run configuration with `[model]`, `[train]` and
//! `[run]` sections. Unknown keys are errors.
//!
//! ```text
//! # comment
//! [model]
//! backbone = spiking_gcn
//! hidden_dim = 64
//! [train]
//! lr = 0.01
//! ```
//!
//! In grid files any value may be a list, `lr = [0.01, 0.001]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("unknown section [{name}] on line {line}")]
    UnknownSection { name: String, line: usize },

    #[error("unknown key `{key}` in [{section}]{}", .suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey {
        key: String,
        section: String,
        suggestion: Option<String>,
    },

    #[error("bad value {value:?} for `{key}`: expected {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: String,
    },
}

pub const MODEL_KEYS: &[&str] = &[
    "backbone",
    "num_layers",
    "hidden_dim",
    "time_steps",
    "u_th",
    "neuron",
    "norm",
    "ms",
    "jk",
    "pre_linear",
    "coding",
    "sgc_hops",
    "dropout",
    "seed",
    "tau",
    "surrogate",
    "surrogate_alpha",
    "detach_reset",
    "rescale_inputs",
    "latency_threshold",
];

pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "weight_decay",
    "epochs",
    "optimizer",
    "early_stop_patience",
    "eval_every",
];

pub const RUN_KEYS: &[&str] = &[
    "data",
    "out",
    "seeds",
    "report_wall_time",
    "tool_version",
    "timestamp",
];

/// Reproduction metadata carried alongside the model and training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub data: Option<String>,
    pub out: Option<String>,
    /// Inclusive seed range.
    pub seeds: (u64, u64),
    /// Write measured wall time into result files (off for byte-identical
    /// replays).
    pub report_wall_time: bool,
    pub tool_version: String,
    pub timestamp: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            seeds: (0, 4),
            report_wall_time: true,
            tool_version: String::new(),
            timestamp: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub run: RunSection,
}

/// A grid axis: a fully qualified key (`section.key`) and its values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

fn suggest(key: &str) -> Option<String> {
    MODEL_KEYS
        .iter()
        .chain(TRAIN_KEYS)
        .chain(RUN_KEYS)
        .map(|k| (strsim::jaro_winkler(key, k), *k))
        .filter(|(s, _)| *s > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.to_string())
}

fn parse_value<T: std::str::FromStr>(
    key: &str,
    value: &str,
    expected: &str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        expected: expected.into(),
    })
}

fn parse_enum<T: std::str::FromStr<Err = String>>(
    key: &str,
    value: &str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|expected| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        expected,
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            expected: "true|false".into(),
        }),
    }
}

/// Parses `A..B` (inclusive) or a single seed.
pub fn parse_seed_range(s: &str) -> Option<(u64, u64)> {
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (a <= b).then_some((a, b))
        }
        None => s.trim().parse().ok().map(|v| (v, v)),
    }
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"')
        .and_then(|v| v.strip_suffix('"'))
        .unwrap_or(v)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let (cfg, axes) = Self::parse_grid(text)?;
        if let Some(a) = axes.first() {
            return Err(ConfigError::BadValue {
                key: a.key.clone(),
                value: format!("[{}]", a.values.join(", ")),
                expected: "a single value (lists are only valid in grid files)".into(),
            });
        }
        Ok(cfg)
    }

    /// Parses a grid file: list values become axes, and the base config
    /// holds the first value of every list.
    pub fn parse_grid(text: &str) -> Result<(Self, Vec<GridAxis>), ConfigError> {
        let mut cfg = RunConfig::default();
        let mut axes = Vec::new();
        let mut section = String::from("model");
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["model", "train", "run"].contains(&name) {
                    return Err(ConfigError::UnknownSection {
                        name: name.into(),
                        line: line_no,
                    });
                }
                section = name.into();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    msg: format!("expected `key = value`, got {line:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some(list) = value.strip_prefix('[').and_then(|v| v.strip_suffix(']')) {
                let values: Vec<String> = list
                    .split(',')
                    .map(|v| unquote(v.trim()).to_string())
                    .filter(|v| !v.is_empty())
                    .collect();
                if values.is_empty() {
                    return Err(ConfigError::Syntax {
                        line: line_no,
                        msg: format!("empty list for `{key}`"),
                    });
                }
                for v in &values {
                    cfg.set(&section, key, v)?;
                }
                cfg.set(&section, key, &values[0])?;
                axes.push(GridAxis {
                    key: format!("{section}.{key}"),
                    values,
                });
            } else {
                cfg.set(&section, key, unquote(value))?;
            }
        }
        Ok((cfg, axes))
    }

    /// Sets one key; `section` is `model`, `train` or `run`.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let m = &mut self.model;
        let t = &mut self.train;
        let r = &mut self.run;
        match (section, key) {
            ("model", "backbone") => m.backbone = parse_enum(key, value)?,
            ("model", "num_layers") => m.num_layers = parse_value(key, value, "integer")?,
            ("model", "hidden_dim") => m.hidden_dim = parse_value(key, value, "integer")?,
            ("model", "time_steps") => m.time_steps = parse_value(key, value, "integer")?,
            ("model", "u_th") => m.u_th = parse_value(key, value, "real")?,
            ("model", "neuron") => m.neuron = parse_enum(key, value)?,
            ("model", "norm") => m.norm = parse_enum(key, value)?,
            ("model", "ms") => m.ms = parse_bool(key, value)?,
            ("model", "jk") => m.jk = parse_bool(key, value)?,
            ("model", "pre_linear") => m.pre_linear = parse_bool(key, value)?,
            ("model", "coding") => m.coding = parse_enum(key, value)?,
            ("model", "sgc_hops") => m.sgc_hops = parse_value(key, value, "integer")?,
            ("model", "dropout") => m.dropout = parse_value(key, value, "real")?,
            ("model", "seed") => m.seed = parse_value(key, value, "integer")?,
            ("model", "tau") => m.tau = parse_value(key, value, "real")?,
            ("model", "surrogate") => m.surrogate = parse_enum(key, value)?,
            ("model", "surrogate_alpha") => m.surrogate_alpha = parse_value(key, value, "real")?,
            ("model", "detach_reset") => m.detach_reset = parse_bool(key, value)?,
            ("model", "rescale_inputs") => m.rescale_inputs = parse_bool(key, value)?,
            ("model", "latency_threshold") => {
                m.latency_threshold = parse_value(key, value, "real")?
            }
            ("train", "lr") => t.lr = parse_value(key, value, "real")?,
            ("train", "weight_decay") => t.weight_decay = parse_value(key, value, "real")?,
            ("train", "epochs") => t.epochs = parse_value(key, value, "integer")?,
            ("train", "optimizer") => t.optimizer = parse_enum(key, value)?,
            ("train", "early_stop_patience") => {
                t.early_stop_patience = parse_value(key, value, "integer")?
            }
            ("train", "eval_every") => t.eval_every = parse_value(key, value, "integer")?,
            ("run", "data") => r.data = (!value.is_empty()).then(|| value.to_string()),
            ("run", "out") => r.out = (!value.is_empty()).then(|| value.to_string()),
            ("run", "seeds") => {
                r.seeds = parse_seed_range(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    expected: "A..B".into(),
                })?
            }
            ("run", "report_wall_time") => r.report_wall_time = parse_bool(key, value)?,
            ("run", "tool_version") => r.tool_version = value.to_string(),
            ("run", "timestamp") => r.timestamp = (!value.is_empty()).then(|| value.to_string()),
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.into(),
                    section: section.into(),
                    suggestion: suggest(key),
                })
            }
        }
        Ok(())
    }

    /// Sets a qualified `section.key`.
    pub fn set_qualified(&mut self, qualified: &str, value: &str) -> Result<(), ConfigError> {
        let (section, key) = qualified.split_once('.').unwrap_or(("model", qualified));
        self.set(section, key, value)
    }

    /// `(key, value)` pairs of the model and train sections, in schema order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        vec![
            ("backbone", m.backbone.to_string()),
            ("num_layers", m.num_layers.to_string()),
            ("hidden_dim", m.hidden_dim.to_string()),
            ("time_steps", m.time_steps.to_string()),
            ("u_th", m.u_th.to_string()),
            ("neuron", m.neuron.to_string()),
            ("norm", m.norm.to_string()),
            ("ms", m.ms.to_string()),
            ("jk", m.jk.to_string()),
            ("pre_linear", m.pre_linear.to_string()),
            ("coding", m.coding.to_string()),
            ("sgc_hops", m.sgc_hops.to_string()),
            ("dropout", m.dropout.to_string()),
            ("seed", m.seed.to_string()),
            ("tau", m.tau.to_string()),
            ("surrogate", m.surrogate.to_string()),
            ("surrogate_alpha", m.surrogate_alpha.to_string()),
            ("detach_reset", m.detach_reset.to_string()),
            ("rescale_inputs", m.rescale_inputs.to_string()),
            ("latency_threshold", m.latency_threshold.to_string()),
            ("lr", t.lr.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("epochs", t.epochs.to_string()),
            ("optimizer", t.optimizer.to_string()),
            ("early_stop_patience", t.early_stop_patience.to_string()),
            ("eval_every", t.eval_every.to_string()),
        ]
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::from("[model]\n");
        let fields = self.fields();
        let n_model = MODEL_KEYS.len();
        for (k, v) in &fields[..n_model] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n[train]\n");
        for (k, v) in &fields[n_model..] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let r = &self.run;
        s.push_str("\n[run]\n");
        let _ = writeln!(s, "data = {}", r.data.as_deref().unwrap_or(""));
        let _ = writeln!(s, "out = {}", r.out.as_deref().unwrap_or(""));
        let _ = writeln!(s, "seeds = {}..{}", r.seeds.0, r.seeds.1);
        let _ = writeln!(s, "report_wall_time = {}", r.report_wall_time);
        let _ = writeln!(s, "tool_version = {}", r.tool_version);
        let _ = writeln!(s, "timestamp = {}", r.timestamp.as_deref().unwrap_or(""));
        s
    }

    pub fn seeds(&self) -> Vec<u64> {
        (self.run.seeds.0..=self.run.seeds.1).collect()
    }
}
