//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use graspkg_core::graph::Variant;
use graspkg_core::model::{ModelConfig, TrainConfig};
use graspkg_core::pointcloud::AugmentParams;
use graspkg_core::tensor::AdamConfig;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }

    fn model(self) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(),
            Preset::Paper => ModelConfig::paper(),
        }
    }

    fn target_points(self) -> usize {
        match self {
            Preset::Desk => 512,
            Preset::Paper => 4096,
        }
    }
}

/// Every setting a pipeline needs. Keys absent from the file take the
/// preset's value; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub target_points: usize,
    pub train: TrainConfig,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub embedding_seed: u64,
}

const KEYS: &[&str] = &[
    "preset",
    "embedding_dim",
    "gcn_width",
    "gcn_layers",
    "variant",
    "include_instances",
    "target_points",
    "epochs",
    "batch",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "balance",
    "val_every",
    "val_fraction",
    "split_seed",
    "train_seed",
    "embedding_seed",
    "augment_rotation",
    "augment_jitter",
    "augment_dropout",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn for_preset(preset: Preset) -> Self {
        RunConfig {
            preset,
            model: preset.model(),
            target_points: preset.target_points(),
            train: TrainConfig::default(),
            val_fraction: 0.1,
            split_seed: 0,
            embedding_seed: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("config line {}: `{raw}` is not key=value", n + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::usage(format!("config line {}: unknown key `{k}`", n + 1)));
            }
            if kv.insert(k, (n + 1, v.trim())).is_some() {
                return Err(Error::usage(format!("config line {}: duplicate key `{k}`", n + 1)));
            }
        }
        let preset = match kv.remove("preset").map(|(_, v)| v) {
            None | Some("desk") => Preset::Desk,
            Some("paper") => Preset::Paper,
            Some(other) => return Err(Error::usage(format!("unknown preset `{other}`"))),
        };
        let mut cfg = RunConfig::for_preset(preset);
        for (key, (line, value)) in kv {
            cfg.set(key, value)
                .map_err(|e| Error::usage(format!("config line {line}: {key}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "embedding_dim" => self.model.encoder.head_widths[2] = num(value)?,
            "gcn_width" => self.model.gcn_width = num(value)?,
            "gcn_layers" => self.model.gcn_layers = num(value)?,
            "variant" => self.model.variant = Variant::parse(value).map_err(|e| e.to_string())?,
            "include_instances" => self.model.include_instances = flag(value)?,
            "target_points" => self.target_points = num(value)?,
            "epochs" => t.epochs = num(value)?,
            "batch" => t.batch = num(value)?,
            "lr" => t.adam.lr = num(value)?,
            "beta1" => t.adam.beta1 = num(value)?,
            "beta2" => t.adam.beta2 = num(value)?,
            "epsilon" => t.adam.epsilon = num(value)?,
            "balance" => t.balance = flag(value)?,
            "val_every" => t.val_every = num(value)?,
            "val_fraction" => self.val_fraction = num(value)?,
            "split_seed" => self.split_seed = num(value)?,
            "train_seed" => t.seed = num(value)?,
            "embedding_seed" => self.embedding_seed = num(value)?,
            "augment_rotation" => t.augment.rotation = flag(value)?,
            "augment_jitter" => t.augment.jitter_sigma = num(value)?,
            "augment_dropout" => t.augment.dropout_rate = num(value)?,
            _ => unreachable!("keys are checked before dispatch"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |e: graspkg_core::Error| Error::usage(e.to_string());
        self.model.validate().map_err(bad)?;
        self.train.adam.validate().map_err(bad)?;
        if self.target_points == 0 || self.train.epochs == 0 || self.train.batch == 0 || self.train.val_every == 0 {
            return Err(Error::usage("target_points, epochs, batch and val_every must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::usage("val_fraction must be in [0, 1)"));
        }
        let a = &self.train.augment;
        if !(a.jitter_sigma >= 0.0 && (0.0..1.0).contains(&a.dropout_rate)) {
            return Err(Error::usage("augment_jitter must be non-negative and augment_dropout in [0, 1)"));
        }
        Ok(())
    }

    /// Overrides both the split and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split_seed = seed;
        self.train.seed = seed;
        self
    }

    /// Resolved values, one per key.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let m = &self.model;
        let AugmentParams {
            rotation,
            jitter_sigma,
            dropout_rate,
        } = t.augment;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = t.adam;
        [
            ("preset", self.preset.name().to_string()),
            ("embedding_dim", m.embedding_dim().to_string()),
            ("gcn_width", m.gcn_width.to_string()),
            ("gcn_layers", m.gcn_layers.to_string()),
            ("variant", m.variant.name().to_string()),
            ("include_instances", m.include_instances.to_string()),
            ("target_points", self.target_points.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch", t.batch.to_string()),
            ("lr", lr.to_string()),
            ("beta1", beta1.to_string()),
            ("beta2", beta2.to_string()),
            ("epsilon", epsilon.to_string()),
            ("balance", t.balance.to_string()),
            ("val_every", t.val_every.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("train_seed", t.seed.to_string()),
            ("embedding_seed", self.embedding_seed.to_string()),
            ("augment_rotation", rotation.to_string()),
            ("augment_jitter", jitter_sigma.to_string()),
            ("augment_dropout", dropout_rate.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Canonical text: sorted `key=value` lines. Parsing it gives back an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Hex SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_text().as_bytes()))
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let cfg = RunConfig::parse("preset=desk\nlr=0.003\nbatch=8\nvariant=tasks_only\n").unwrap();
        assert_eq!(cfg.train.adam.lr, 0.003);
        assert_eq!(cfg.model.variant, Variant::TasksOnly);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.entries().len(), KEYS.len());
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let e = RunConfig::parse("epochs=3\nlearning_rate=0.1\n").unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("learning_rate"), "{e}");
        assert_eq!(e.exit_code(), 2);
        assert!(RunConfig::parse("epochs=3\nepochs=4\n").is_err());
        assert!(RunConfig::parse("epochs=three\n").is_err());
        assert!(RunConfig::parse("balance=yes\n").is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let a = RunConfig::default();
        let b = RunConfig::default().with_seed(3);
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn embedding_dim_resizes_the_encoder_head() {
        let cfg = RunConfig::parse("embedding_dim=16\n").unwrap();
        assert_eq!(cfg.model.embedding_dim(), 16);
        assert!(RunConfig::parse("embedding_dim=0\n").is_err());
    }
}
