//! Flat key-value configuration with dotted section keys.
//!
//! The on-disk format is line-oriented text: `section.key = value`, with
//! `#` comments and blank lines ignored. Values are plain strings;
//! numeric and list interpretation happens at extraction time. The
//! serialized echo is sorted by key, so a config round-trips
//! deterministically.
//!
//! ```text
//! # training setup
//! train.learning_rate = 1e-4
//! model.stage_channels = 32,64,128,256,256
//! data.manifest = corpus/manifest.csv
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::HyperParams;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "empty key".into(),
                });
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Applies `key=value` override pairs on top of the file contents.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) {
        for (k, v) in pairs {
            self.set(k, v);
        }
    }

    /// Deterministic echo (sorted keys).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("{key}: `{v}` is not a number")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("{key}: `{v}` is not an integer")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| Error::Config(format!("{key}: `{v}` is not an integer")))
            })
            .transpose()
    }

    pub fn get_u32(&self, key: &str) -> Result<Option<u32>> {
        self.get(key)
            .map(|v| {
                v.parse::<u32>()
                    .map_err(|_| Error::Config(format!("{key}: `{v}` is not an integer")))
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(Error::Config(format!("{key}: `{other}` is not a bool"))),
            })
            .transpose()
    }

    pub fn get_usize_list(&self, key: &str, expect: usize) -> Result<Option<Vec<usize>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let parts: Result<Vec<usize>> = v
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("{key}: `{p}` is not an integer")))
            })
            .collect();
        let parts = parts?;
        if parts.len() != expect {
            return Err(Error::Config(format!(
                "{key}: expected {expect} comma-separated values, got {}",
                parts.len()
            )));
        }
        Ok(Some(parts))
    }
}

const TRAIN_KEYS: &[&str] = &[
    "train.learning_rate",
    "train.weight_decay",
    "train.batch_triplets",
    "train.patches_per_image",
    "train.max_epochs",
    "train.seed",
    "train.eval_every",
    "train.early_stop_patience",
    "hyper.alpha",
    "hyper.lambda1",
    "hyper.lambda2",
    "hyper.lambda3",
    "model.stage_channels",
    "model.convs_per_stage",
    "model.feature_dim",
    "model.num_classes",
    "model.patch_size",
];

/// Builds a [`TrainConfig`] from the `train.*`, `hyper.*` and `model.*`
/// namespaces, starting from defaults. Unknown keys in those namespaces
/// are rejected (typo safety); other namespaces are left to their
/// commands.
pub fn train_config_from(flat: &FlatConfig) -> Result<TrainConfig> {
    for key in flat.keys() {
        if (key.starts_with("train.") || key.starts_with("hyper.") || key.starts_with("model."))
            && !TRAIN_KEYS.contains(&key.as_str())
        {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
    }
    let mut cfg = TrainConfig::default();
    if let Some(v) = flat.get_f64("train.learning_rate")? {
        cfg.learning_rate = v;
    }
    if let Some(v) = flat.get_f64("train.weight_decay")? {
        cfg.weight_decay = v;
    }
    if let Some(v) = flat.get_usize("train.batch_triplets")? {
        cfg.batch_triplets = v;
    }
    if let Some(v) = flat.get_usize("train.patches_per_image")? {
        cfg.patches_per_image = v;
    }
    if let Some(v) = flat.get_usize("train.max_epochs")? {
        cfg.max_epochs = v;
    }
    if let Some(v) = flat.get_u64("train.seed")? {
        cfg.seed = v;
    }
    if let Some(v) = flat.get_usize("train.eval_every")? {
        cfg.eval_every = v;
    }
    if let Some(v) = flat.get_usize("train.early_stop_patience")? {
        cfg.early_stop_patience = v;
    }
    let mut hyper = HyperParams::default();
    if let Some(v) = flat.get_f64("hyper.alpha")? {
        hyper.alpha = v;
    }
    if let Some(v) = flat.get_f64("hyper.lambda1")? {
        hyper.lambda1 = v;
    }
    if let Some(v) = flat.get_f64("hyper.lambda2")? {
        hyper.lambda2 = v;
    }
    if let Some(v) = flat.get_f64("hyper.lambda3")? {
        hyper.lambda3 = v;
    }
    cfg.hyper = hyper;
    let mut model = ModelConfig::default();
    if let Some(v) = flat.get_usize_list("model.stage_channels", 5)? {
        model.stage_channels = v.try_into().unwrap();
    }
    if let Some(v) = flat.get_usize_list("model.convs_per_stage", 5)? {
        model.convs_per_stage = v.try_into().unwrap();
    }
    if let Some(v) = flat.get_usize("model.feature_dim")? {
        model.feature_dim = v;
    }
    if let Some(v) = flat.get_usize("model.num_classes")? {
        model.num_classes = v;
    }
    if let Some(v) = flat.get_usize("model.patch_size")? {
        model.patch_size = v;
    }
    cfg.model = model;
    Ok(cfg)
}
