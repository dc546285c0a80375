//! Layered run configuration.
//!
//! A TOML file supplies optional overrides on top of compiled defaults (or
//! a named preset); command-line flags override the file in turn. Every
//! field is optional, unknown keys are rejected, and each section's
//! `apply` folds its overrides into a concrete config struct.

use std::path::Path;

use serde::Deserialize;

use crate::brightnet::NetConfig;
use crate::error::{Error, Result};
use crate::illumstats::{DimConfig, DimMode};
use crate::mdn::MdnConfig;
use crate::trainer::{LossConfig, TrainConfig};

/// Root of the run configuration file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; a `--seed` flag wins over this.
    pub seed: Option<u64>,
    #[serde(default)]
    pub mdn: MdnSection,
    #[serde(default)]
    pub dim: DimSection,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub finetune: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
}

/// Overrides for the mixture-density network fit.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdnSection {
    pub components: Option<usize>,
    pub hidden_widths: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
}

impl MdnSection {
    pub fn apply(&self, mut base: MdnConfig) -> MdnConfig {
        if let Some(v) = self.components {
            base.components = v;
        }
        if let Some(v) = &self.hidden_widths {
            base.hidden_widths = v.clone();
        }
        if let Some(v) = self.epochs {
            base.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        base
    }
}

/// Overrides for the dimming sampler.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimSection {
    pub gamma_min: Option<f64>,
    pub gamma_max: Option<f64>,
    pub alpha: Option<f64>,
    pub ratio_clamp_max: Option<f64>,
    /// `"stochastic"` or `"deterministic"`.
    pub mode: Option<String>,
}

impl DimSection {
    pub fn apply(&self, mut base: DimConfig) -> Result<DimConfig> {
        if let Some(v) = self.gamma_min {
            base.gamma_min = v;
        }
        if let Some(v) = self.gamma_max {
            base.gamma_max = v;
        }
        if let Some(v) = self.alpha {
            base.alpha = v;
        }
        if let Some(v) = self.ratio_clamp_max {
            base.ratio_clamp_max = v;
        }
        if let Some(mode) = &self.mode {
            base.mode = match mode.to_ascii_lowercase().as_str() {
                "stochastic" => DimMode::Stochastic,
                "deterministic" => DimMode::Deterministic,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "dim.mode must be \"stochastic\" or \"deterministic\", got {other:?}"
                    )))
                }
            };
        }
        Ok(base)
    }
}

/// Overrides for the brightening network architecture.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub base_channels: Option<usize>,
    pub embed_dim: Option<usize>,
    pub attention_heads: Option<usize>,
    pub attention: Option<bool>,
    pub normalization: Option<bool>,
}

impl NetSection {
    pub fn apply(&self, mut base: NetConfig) -> NetConfig {
        if let Some(v) = self.base_channels {
            base.base_channels = v;
        }
        if let Some(v) = self.embed_dim {
            base.embed_dim = v;
        }
        if let Some(v) = self.attention_heads {
            base.attention_heads = v;
        }
        if let Some(v) = self.attention {
            base.attention = v;
        }
        if let Some(v) = self.normalization {
            base.normalization = v;
        }
        base
    }
}

/// Overrides for either training stage.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub crop_size: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_iters: Option<usize>,
    pub val_interval: Option<usize>,
    pub early_stop_patience: Option<usize>,
}

impl TrainSection {
    pub fn apply(&self, mut base: TrainConfig) -> TrainConfig {
        if let Some(v) = self.crop_size {
            base.crop_size = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.max_iters {
            base.max_iters = v;
        }
        if let Some(v) = self.val_interval {
            base.val_interval = v;
        }
        if let Some(v) = self.early_stop_patience {
            base.early_stop_patience = v;
        }
        base
    }
}

/// Overrides for the training loss.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda: Option<f64>,
    /// Only `"none"` ships; a model-file path would plug in a pretrained
    /// extractor.
    pub extractor: Option<String>,
}

impl LossSection {
    pub fn apply(&self, mut base: LossConfig) -> Result<LossConfig> {
        if let Some(v) = self.lambda {
            base.lambda = v;
        }
        if let Some(extractor) = &self.extractor {
            match extractor.to_ascii_lowercase().as_str() {
                "none" => base.extractor = None,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "loss.extractor {other:?} is not available; only \"none\" ships with this build"
                    )))
                }
            }
        }
        Ok(base)
    }

    /// Whether the section requests a real extractor (always an error for
    /// now, surfaced through [`LossSection::apply`]).
    pub fn wants_extractor(&self) -> bool {
        self.extractor
            .as_deref()
            .is_some_and(|e| !e.eq_ignore_ascii_case("none"))
    }
}

/// Named architecture + schedule presets for the two training stages.
///
/// `Full` is the library defaults; `Toy` is the desk-scale regime: a
/// quarter-width network and short, high-learning-rate schedules sized so
/// a complete run finishes in minutes on one CPU core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toy" => Ok(Preset::Toy),
            "full" => Ok(Preset::Full),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?}; expected \"toy\" or \"full\""
            ))),
        }
    }
}

impl Preset {
    /// Network architecture for this preset.
    pub fn net(self) -> NetConfig {
        match self {
            Preset::Toy => NetConfig::toy(),
            Preset::Full => NetConfig::default(),
        }
    }

    /// Schedule for the unsupervised (synthetic-dimming) stage.
    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Toy => TrainConfig {
                crop_size: 32,
                batch_size: 4,
                learning_rate: 1e-3,
                max_iters: 500,
                val_interval: 50,
                ..TrainConfig::unsupervised()
            },
            Preset::Full => TrainConfig::unsupervised(),
        }
    }

    /// Schedule for the finetune stage.
    pub fn finetune(self) -> TrainConfig {
        match self {
            Preset::Toy => TrainConfig {
                max_iters: 200,
                ..self.train()
            },
            Preset::Full => TrainConfig::finetune(),
        }
    }
}

/// Parses a TOML run configuration file, rejecting unknown keys.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::ParseError {
        path: path.to_path_buf(),
        details: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file_parses_and_applies() {
        let text = r#"
            seed = 99

            [mdn]
            components = 2
            hidden_widths = [8, 8]
            epochs = 50
            learning_rate = 0.02

            [dim]
            gamma_min = 0.5
            gamma_max = 0.9
            alpha = 0.25
            mode = "deterministic"

            [net]
            base_channels = 16
            embed_dim = 32
            attention = false

            [train]
            crop_size = 48
            max_iters = 500

            [finetune]
            max_iters = 200

            [loss]
            lambda = 0.0
            extractor = "none"
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, Some(99));
        let mdn = cfg.mdn.apply(MdnConfig::default());
        assert_eq!(mdn.components, 2);
        assert_eq!(mdn.hidden_widths, vec![8, 8]);
        assert_eq!(mdn.epochs, 50);
        let dim = cfg.dim.apply(DimConfig::default()).unwrap();
        assert_eq!(dim.mode, DimMode::Deterministic);
        assert_eq!(dim.gamma_min, 0.5);
        let net = cfg.net.apply(NetConfig::default());
        assert_eq!(net.base_channels, 16);
        assert!(!net.attention);
        assert!(net.normalization, "untouched fields keep their defaults");
        let train = cfg.train.apply(TrainConfig::unsupervised());
        assert_eq!((train.crop_size, train.max_iters), (48, 500));
        assert_eq!(train.batch_size, 4);
        let ft = cfg.finetune.apply(TrainConfig::finetune());
        assert_eq!(ft.max_iters, 200);
        let loss = cfg.loss.apply(LossConfig::default()).unwrap();
        assert_eq!(loss.lambda, 0.0);
        assert!(loss.extractor.is_none());
    }

    #[test]
    fn empty_file_keeps_every_default() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let train = cfg.train.apply(TrainConfig::unsupervised());
        assert_eq!(train, TrainConfig::unsupervised());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[mdn]\nwidth = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[training]\ncrop_size = 8\n").is_err());
    }

    #[test]
    fn bad_enum_values_are_reported() {
        let cfg: RunConfig = toml::from_str("[dim]\nmode = \"chaotic\"\n").unwrap();
        assert!(matches!(
            cfg.dim.apply(DimConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
        let cfg: RunConfig = toml::from_str("[loss]\nextractor = \"vgg16\"\n").unwrap();
        assert!(cfg.loss.wants_extractor());
        assert!(matches!(
            cfg.loss.apply(LossConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn load_run_config_reports_parse_location() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("run.toml");
        std::fs::write(&path, "seed = \"not a number\"\n").unwrap();
        assert!(matches!(
            load_run_config(&path),
            Err(Error::ParseError { .. })
        ));
        std::fs::write(&path, "seed = 3\n").unwrap();
        assert_eq!(load_run_config(&path).unwrap().seed, Some(3));
    }
}
