//! Flat `key=value` configuration.
//!
//! A run merges an optional config file with command-line flags (flags
//! win). Every key must belong to one of the target configs; anything else
//! is rejected with the list of valid keys.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sgncap_core::data::GenConfig;
use sgncap_core::model::ModelConfig;
use sgncap_core::training::TrainConfig;

use crate::error::{io_err, parse_err, Error, Result};

pub type KvMap = BTreeMap<String, String>;

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse(text: &str, source_name: &str) -> Result<KvMap> {
    let mut map = KvMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(source_name, i + 1, format!("expected key=value, got {line:?}")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(parse_err(source_name, i + 1, "empty key"));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(parse_err(source_name, i + 1, format!("duplicate key {k}")));
        }
    }
    Ok(map)
}

pub fn read(path: &Path) -> Result<KvMap> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse(&text, &path.display().to_string())
}

pub fn render(pairs: &[(&'static str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub(crate) fn value<T>(key: &str, v: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

/// A config struct settable from string pairs.
pub trait KvConfig {
    const KEYS: &'static [&'static str];

    /// Sets `key`; returns `Ok(false)` if the key is not one of [`Self::KEYS`].
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    fn to_pairs(&self) -> Vec<(&'static str, String)>;
}

impl KvConfig for ModelConfig {
    const KEYS: &'static [&'static str] = &[
        "regions",
        "feature_dim",
        "hidden_dim",
        "guide_dim",
        "word_dim",
        "attr_dim",
        "input_dim",
        "guide_input_dim",
        "vocab_size",
        "variant",
        "candidate_tanh",
        "dropout_rate",
        "max_decode_len",
    ];

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "regions" => self.regions = value(key, v)?,
            "feature_dim" => self.feature_dim = value(key, v)?,
            "hidden_dim" => self.hidden_dim = value(key, v)?,
            "guide_dim" => self.guide_dim = value(key, v)?,
            "word_dim" => self.word_dim = value(key, v)?,
            "attr_dim" => self.attr_dim = value(key, v)?,
            "input_dim" => self.input_dim = value(key, v)?,
            "guide_input_dim" => self.guide_input_dim = value(key, v)?,
            "vocab_size" => self.vocab_size = value(key, v)?,
            "variant" => self.variant = value(key, v)?,
            "candidate_tanh" => self.candidate_tanh = value(key, v)?,
            "dropout_rate" => self.dropout_rate = value(key, v)?,
            "max_decode_len" => self.max_decode_len = value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("regions", self.regions.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("guide_dim", self.guide_dim.to_string()),
            ("word_dim", self.word_dim.to_string()),
            ("attr_dim", self.attr_dim.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("guide_input_dim", self.guide_input_dim.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("variant", self.variant.to_string()),
            ("candidate_tanh", self.candidate_tanh.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("max_decode_len", self.max_decode_len.to_string()),
        ]
    }
}

impl KvConfig for TrainConfig {
    const KEYS: &'static [&'static str] = &[
        "learning_rate",
        "batch_size",
        "epochs",
        "optimizer",
        "grad_clip_norm",
        "seed",
        "dropout_rate",
        "max_steps",
    ];

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = value(key, v)?,
            "batch_size" => self.batch_size = value(key, v)?,
            "epochs" => self.epochs = value(key, v)?,
            "optimizer" => self.optimizer = value(key, v)?,
            "grad_clip_norm" => self.grad_clip_norm = value(key, v)?,
            "seed" => self.seed = value(key, v)?,
            "dropout_rate" => self.dropout_rate = value(key, v)?,
            "max_steps" => self.max_steps = Some(value(key, v)?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("grad_clip_norm", self.grad_clip_norm.to_string()),
            ("seed", self.seed.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
        ];
        if let Some(m) = self.max_steps {
            out.push(("max_steps", m.to_string()));
        }
        out
    }
}

impl KvConfig for GenConfig {
    const KEYS: &'static [&'static str] = &[
        "n_train",
        "n_val",
        "n_test",
        "rows",
        "cols",
        "feature_dim",
        "noise_std",
        "max_objects",
        "attr_dim",
        "min_count",
        "seed",
    ];

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "n_train" => self.n_train = value(key, v)?,
            "n_val" => self.n_val = value(key, v)?,
            "n_test" => self.n_test = value(key, v)?,
            "rows" => self.rows = value(key, v)?,
            "cols" => self.cols = value(key, v)?,
            "feature_dim" => self.feature_dim = value(key, v)?,
            "noise_std" => self.noise_std = value(key, v)?,
            "max_objects" => self.max_objects = value(key, v)?,
            "attr_dim" => self.attr_dim = value(key, v)?,
            "min_count" => self.min_count = value(key, v)?,
            "seed" => self.seed = value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_train", self.n_train.to_string()),
            ("n_val", self.n_val.to_string()),
            ("n_test", self.n_test.to_string()),
            ("rows", self.rows.to_string()),
            ("cols", self.cols.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("max_objects", self.max_objects.to_string()),
            ("attr_dim", self.attr_dim.to_string()),
            ("min_count", self.min_count.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Config file (if any) overlaid with flag values.
pub fn merge(file: Option<&Path>, flags: KvMap) -> Result<KvMap> {
    let mut map = match file {
        Some(p) => read(p)?,
        None => KvMap::new(),
    };
    map.extend(flags);
    Ok(map)
}

/// Checks every key of `map` against `valid`.
pub fn check_keys(map: &KvMap, valid: &[&str]) -> Result<()> {
    if let Some(k) = map.keys().find(|k| !valid.contains(&k.as_str())) {
        let mut list: Vec<&str> = valid.to_vec();
        list.sort_unstable();
        list.dedup();
        return Err(Error::Config(format!("unknown key {k:?}; valid keys: {}", list.join(", "))));
    }
    Ok(())
}

/// Applies every pair that `target` knows; returns how many were taken.
pub fn apply<C: KvConfig>(target: &mut C, map: &KvMap) -> Result<usize> {
    let mut n = 0;
    for (k, v) in map {
        if target.set(k, v)? {
            n += 1;
        }
    }
    Ok(n)
}

/// Reads a whole config from `map`, rejecting unknown keys.
pub fn from_map<C: KvConfig + Default>(map: &KvMap) -> Result<C> {
    check_keys(map, C::KEYS)?;
    let mut c = C::default();
    apply(&mut c, map)?;
    Ok(c)
}
