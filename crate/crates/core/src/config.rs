//! Run configuration: one JSON document that covers data generation,
//! architecture, losses, optimizer, and training, plus dotted-key
//! overrides from the command line.
//!
//! Every section rejects unknown keys so typos fail loudly before any
//! work starts. The encoder section deliberately omits `layer_dims` and
//! `tokens`; those always come from the data section so the model and
//! generator cannot drift apart.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::{Bottleneck, EncoderConfig};
use crate::opt::OptimizerConfig;
use crate::synthetic::DataConfig;
use crate::train::TrainConfig;

/// Latent bottleneck selection. `single_sphere` is one sphere spanning
/// the whole latent dimension; it exists as a named kind because the
/// ablation treats it as its own arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum BottleneckChoice {
    ProductSpherical { n_spheres: usize, sphere_dim: usize },
    Gaussian { dim: usize },
    SingleSphere { dim: usize },
}

impl Default for BottleneckChoice {
    fn default() -> Self {
        BottleneckChoice::ProductSpherical {
            n_spheres: 4,
            sphere_dim: 8,
        }
    }
}

impl BottleneckChoice {
    pub fn to_bottleneck(&self) -> Bottleneck {
        match *self {
            BottleneckChoice::ProductSpherical {
                n_spheres,
                sphere_dim,
            } => Bottleneck::Spherical {
                n_spheres,
                sphere_dim,
            },
            BottleneckChoice::Gaussian { dim } => Bottleneck::Gaussian { dim },
            BottleneckChoice::SingleSphere { dim } => Bottleneck::Spherical {
                n_spheres: 1,
                sphere_dim: dim,
            },
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.to_bottleneck().latent_dim()
    }
}

/// Architecture hyperparameters owned by the run config. Shape-carrying
/// fields (`layer_dims`, `tokens`, the bottleneck) live elsewhere; see
/// the module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSettings {
    pub hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub registers: Option<usize>,
    pub kappa_init: f64,
    pub learned_positions: bool,
    pub ln_eps: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            hidden: 128,
            n_layers: 4,
            n_heads: 4,
            registers: Some(1),
            kappa_init: 30.0,
            learned_positions: false,
            ln_eps: 1e-5,
        }
    }
}

/// The single document every command reads. All randomness in a run
/// flows from `seed`; artifacts land under `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderSettings,
    pub bottleneck: BottleneckChoice,
    pub losses: LossWeights,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub dataset_scenes: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            encoder: EncoderSettings::default(),
            bottleneck: BottleneckChoice::default(),
            losses: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
            dataset_scenes: 512,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses a JSON document, applies `key=value` overrides, and
    /// validates the result. `text` may be empty to mean "defaults".
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = if text.trim().is_empty() {
            Value::Object(serde_json::Map::new())
        } else {
            serde_json::from_str(text)?
        };
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, overrides)
    }

    /// Assembles the full encoder configuration from the data section,
    /// the bottleneck choice, and the architecture settings.
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            layer_dims: self.data.layer_dims.clone(),
            tokens: self.data.tokens,
            hidden: self.encoder.hidden,
            n_layers: self.encoder.n_layers,
            n_heads: self.encoder.n_heads,
            registers: self.encoder.registers,
            bottleneck: self.bottleneck.to_bottleneck(),
            kappa_init: self.encoder.kappa_init,
            learned_positions: self.encoder.learned_positions,
            ln_eps: self.encoder.ln_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.losses.validate()?;
        self.optimizer.validate()?;
        self.train.validate()?;
        self.encoder_config().validate()?;
        if self.dataset_scenes == 0 {
            return Err(Error::ConfigError("dataset_scenes must be >= 1".into()));
        }
        Ok(())
    }

    /// The exact resolved document, suitable for echoing into the
    /// output directory.
    pub fn to_pretty_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Applies one `dotted.path=value` override to a JSON document in
/// place. The value is parsed as JSON when possible and kept as a
/// string otherwise, so `--set train.steps=500` and
/// `--set out_dir=runs/a` both work. Intermediate objects are created
/// as needed; final validation still rejects unknown keys.
///
/// Changing the bottleneck kind replaces the whole object, e.g.
/// `--set bottleneck={"kind":"gaussian","dim":32}`; editing `kind`
/// alone would leave the other kind's fields behind and fail
/// validation.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::ConfigError(format!("override '{spec}' is not of the form key=value"))
    })?;
    if path.is_empty() {
        return Err(Error::ConfigError(format!("override '{spec}' has an empty key")));
    }
    let value: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut node = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(Error::ConfigError(format!(
                "override '{spec}' has an empty path segment"
            )));
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::ConfigError(format!(
                "override '{spec}': '{}' is not an object",
                segments[..i].join(".")
            ))
        })?;
        if i + 1 == segments.len() {
            obj.insert((*seg).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*seg).to_string())
            .or_insert_with(|| Value::Object(serde_json::Map::new()));
    }
    unreachable!("loop returns on the last segment");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_pretty_json().unwrap();
        let back = RunConfig::from_json(&text, &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_document_means_defaults() {
        let cfg = RunConfig::from_json("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"optimizre": {}}"#, &[]).is_err());
        assert!(RunConfig::from_json(r#"{"optimizer": {"peak_lr": 1e-4, "lr": 1.0}}"#, &[]).is_err());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let ovs = vec![
            "train.steps=500".to_string(),
            "optimizer.peak_lr=3e-4".to_string(),
            "seed=9".to_string(),
            "out_dir=runs/a".to_string(),
            "bottleneck.kind=gaussian".to_string(),
            "bottleneck.dim=32".to_string(),
            "data.layer_dims=[64,64]".to_string(),
        ];
        let base = r#"{"bottleneck": {"kind": "gaussian", "dim": 16}}"#;
        let cfg = RunConfig::from_json(base, &ovs).unwrap();
        assert_eq!(cfg.train.steps, 500);
        assert_eq!(cfg.optimizer.peak_lr, 3e-4);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.out_dir, PathBuf::from("runs/a"));
        assert_eq!(cfg.bottleneck, BottleneckChoice::Gaussian { dim: 32 });
        assert_eq!(cfg.data.layer_dims, vec![64, 64]);
    }

    #[test]
    fn override_requires_equals_sign() {
        let mut doc = Value::Object(serde_json::Map::new());
        assert!(apply_override(&mut doc, "train.steps").is_err());
        assert!(apply_override(&mut doc, "=5").is_err());
        assert!(apply_override(&mut doc, "a..b=5").is_err());
    }

    #[test]
    fn override_through_non_object_fails() {
        let mut doc = serde_json::json!({"seed": 3});
        assert!(apply_override(&mut doc, "seed.deep=1").is_err());
    }

    #[test]
    fn single_sphere_maps_to_one_chunk() {
        let choice = BottleneckChoice::SingleSphere { dim: 32 };
        assert_eq!(
            choice.to_bottleneck(),
            Bottleneck::Spherical {
                n_spheres: 1,
                sphere_dim: 32
            }
        );
        assert_eq!(choice.latent_dim(), 32);
    }

    #[test]
    fn encoder_config_inherits_data_shapes() {
        let mut cfg = RunConfig::default();
        cfg.data.layer_dims = vec![48, 80];
        cfg.data.layer_radii = vec![1.0, 1.0];
        cfg.data.tokens = 12;
        let enc = cfg.encoder_config();
        assert_eq!(enc.layer_dims, vec![48, 80]);
        assert_eq!(enc.tokens, 12);
        assert_eq!(enc.input_dim(), 128);
    }
}
