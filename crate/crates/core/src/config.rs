//! Line-oriented `key = value` training configuration files.
//!
//! ```text
//! # comments and blank lines are ignored
//! epochs = 150
//! optimizer = adam
//! airlight_range = 0.7, 1.0
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Variant;
use crate::trainer::{OptimizerKind, Precision, TrainConfig};

/// Keys accepted in a configuration file, in the order they are printed.
pub const TRAIN_KEYS: [&str; 13] = [
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "seed",
    "precision",
    "ablation",
    "augment",
    "pre_resize",
    "val_fraction",
    "bn_momentum",
    "airlight_range",
    "beta_range",
];

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Setting {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits a config file into settings. Keys must be in [`TRAIN_KEYS`] and
/// appear at most once.
pub fn parse_settings(text: &str) -> Result<Vec<Setting>> {
    let mut out: Vec<Setting> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(Error::Config(format!("line {line}: expected `key = value`, got {body:?}")));
        };
        let (key, value) = (k.trim(), v.trim());
        if !TRAIN_KEYS.contains(&key) {
            return Err(Error::Config(format!("line {line}: unknown key {key:?}")));
        }
        if value.is_empty() {
            return Err(Error::Config(format!("line {line}: {key} has no value")));
        }
        if let Some(prev) = out.iter().find(|s| s.key == key) {
            return Err(Error::Config(format!("line {line}: {key} already set on line {}", prev.line)));
        }
        out.push(Setting {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

/// `lo,hi` with `lo ≤ hi`.
pub fn parse_range(key: &str, v: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("{key}: expected `lo,hi`, got {v:?}")));
    }
    let (lo, hi) = (parse_num::<f64>(key, parts[0])?, parse_num::<f64>(key, parts[1])?);
    if !(lo <= hi) {
        return Err(Error::Config(format!("{key}: lower bound {lo} exceeds upper bound {hi}")));
    }
    Ok((lo, hi))
}

/// Sets one field of `cfg` from its textual value.
pub fn apply_setting(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "epochs" => cfg.epochs = parse_num(key, value)?,
        "batch_size" => cfg.batch_size = parse_num(key, value)?,
        "learning_rate" => cfg.learning_rate = parse_num(key, value)?,
        "optimizer" => cfg.optimizer = OptimizerKind::parse(value)?,
        "seed" => cfg.seed = parse_num(key, value)?,
        "precision" => cfg.precision = Precision::parse(value)?,
        "ablation" => cfg.ablation = Variant::parse(value)?,
        "augment" => cfg.augment = parse_bool(key, value)?,
        "pre_resize" => cfg.pre_resize = parse_bool(key, value)?,
        "val_fraction" => cfg.val_fraction = parse_num(key, value)?,
        "bn_momentum" => cfg.bn_momentum = parse_num(key, value)?,
        "airlight_range" => cfg.airlight_range = parse_range(key, value)?,
        "beta_range" => cfg.beta_range = parse_range(key, value)?,
        other => return Err(Error::Config(format!("unknown key {other:?}"))),
    }
    Ok(())
}

/// Defaults overlaid with the settings of `text`.
pub fn train_config_from_str(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for s in parse_settings(text)? {
        apply_setting(&mut cfg, &s.key, &s.value).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("line {}: {m}", s.line)),
            other => other,
        })?;
    }
    Ok(cfg)
}

pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    train_config_from_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Every key of `cfg` in file syntax; parses back to an equal config.
pub fn render_train_config(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    let b = |v: bool| if v { "true" } else { "false" };
    let precision = match cfg.precision {
        Precision::F64 => "f64",
    };
    for key in TRAIN_KEYS {
        let value = match key {
            "epochs" => cfg.epochs.to_string(),
            "batch_size" => cfg.batch_size.to_string(),
            "learning_rate" => cfg.learning_rate.to_string(),
            "optimizer" => cfg.optimizer.name().to_string(),
            "seed" => cfg.seed.to_string(),
            "precision" => precision.to_string(),
            "ablation" => cfg.ablation.name().to_string(),
            "augment" => b(cfg.augment).to_string(),
            "pre_resize" => b(cfg.pre_resize).to_string(),
            "val_fraction" => cfg.val_fraction.to_string(),
            "bn_momentum" => cfg.bn_momentum.to_string(),
            "airlight_range" => format!("{}, {}", cfg.airlight_range.0, cfg.airlight_range.1),
            "beta_range" => format!("{}, {}", cfg.beta_range.0, cfg.beta_range.1),
            _ => unreachable!("every key is rendered"),
        };
        let _ = writeln!(out, "{key} = {value}");
    }
    out
}
