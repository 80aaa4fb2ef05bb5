use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, Samples, SetAbstractionConfig};
use crate::graph::Variant;
use crate::{Error, Result};

/// Architecture of the GCN grasp model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Hidden width `K` of every GCN layer and of the evaluator.
    pub gcn_width: usize,
    /// Number of GCN layers `L`.
    pub gcn_layers: usize,
    pub variant: Variant,
    pub include_instances: bool,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            encoder: EncoderConfig::paper(),
            gcn_width: 128,
            gcn_layers: 6,
            variant: Variant::Full,
            include_instances: false,
        }
    }

    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig::desk(),
            gcn_width: 32,
            gcn_layers: 3,
            variant: Variant::Full,
            include_instances: false,
        }
    }

    /// Embedding size `D` shared by the encoder output and word vectors.
    pub fn embedding_dim(&self) -> usize {
        self.encoder.embedding_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.gcn_width == 0 || self.gcn_layers == 0 {
            return Err(Error::arg("gcn_width and gcn_layers must be positive"));
        }
        Ok(())
    }

    /// `key=value` lines, one per setting, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, l) in self.encoder.layers.iter().enumerate() {
            let samples = match l.samples {
                Samples::All => String::from("all"),
                Samples::Count(n) => n.to_string(),
            };
            let w = l.mlp_widths;
            let _ = writeln!(s, "sa{}={samples}:{}:{},{},{}", i + 1, l.neighbors, w[0], w[1], w[2]);
        }
        let h = self.encoder.head_widths;
        let _ = writeln!(s, "head={},{},{}", h[0], h[1], h[2]);
        let _ = writeln!(s, "gcn_width={}", self.gcn_width);
        let _ = writeln!(s, "gcn_layers={}", self.gcn_layers);
        let _ = writeln!(s, "variant={}", self.variant.name());
        let _ = writeln!(s, "include_instances={}", self.include_instances);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::arg(format!("config line `{line}` is not key=value")))?;
            kv.insert(k.trim(), v.trim());
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::arg(format!("missing config key `{k}`")));
        let mut layers = [EncoderConfig::desk().layers[0]; 3];
        for (i, layer) in layers.iter_mut().enumerate() {
            *layer = parse_sa(take(&format!("sa{}", i + 1))?)?;
        }
        let head = parse_widths(take("head")?)?;
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                layers,
                head_widths: head,
            },
            gcn_width: parse_num(take("gcn_width")?)?,
            gcn_layers: parse_num(take("gcn_layers")?)?,
            variant: Variant::parse(take("variant")?)?,
            include_instances: match take("include_instances")? {
                "true" => true,
                "false" => false,
                v => return Err(Error::arg(format!("include_instances must be true or false, got `{v}`"))),
            },
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::arg(format!("unknown config key `{k}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_num(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::arg(format!("`{s}` is not a non-negative integer")))
}

fn parse_widths(s: &str) -> Result<[usize; 3]> {
    let v: Vec<usize> = s.split(',').map(|x| parse_num(x.trim())).collect::<Result<_>>()?;
    <[usize; 3]>::try_from(v).map_err(|_| Error::arg(format!("`{s}` must list exactly three widths")))
}

/// `samples:neighbors:w1,w2,w3` with samples a count or `all`.
fn parse_sa(s: &str) -> Result<SetAbstractionConfig> {
    let parts: Vec<&str> = s.split(':').collect();
    let [samples, neighbors, widths] = parts.as_slice() else {
        return Err(Error::arg(format!("`{s}` is not samples:neighbors:widths")));
    };
    Ok(SetAbstractionConfig {
        samples: if *samples == "all" {
            Samples::All
        } else {
            Samples::Count(parse_num(samples)?)
        },
        neighbors: parse_num(neighbors)?,
        mlp_widths: parse_widths(widths)?,
    })
}
