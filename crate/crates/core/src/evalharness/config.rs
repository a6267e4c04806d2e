use serde::{Deserialize, Serialize};

use crate::datagen::DatasetSpec;
use crate::flows::FlowArch;
use crate::losses::{LossWeights, SwdConfig};
use crate::pushforward::Mode;
use crate::{Error, Result};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Defaults to an 8-block spline stack over the (latent) dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch_a: Option<FlowArch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch_b: Option<FlowArch>,
    /// Train in a PCA-initialized latent space of this dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_latent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autoencoder: Option<AutoencoderConfig>,
    #[serde(default)]
    pub orientation: Orientation,
}

/// How the orientation of the learned map is chosen. Coupling stacks can
/// only express maps of one orientation, fixed when the model is built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Reverse when the paired training data call for it.
    #[default]
    Auto,
    Preserve,
    Reverse,
}

fn default_mode() -> Mode {
    Mode::Triangle
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: default_mode(),
            arch_a: None,
            arch_b: None,
            d_latent: None,
            autoencoder: None,
            orientation: Orientation::Auto,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub swd: SwdConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<LrDecay>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            lr: 3e-4,
            epochs: 100,
            seed: 0,
            lr_decay: None,
        }
    }
}

/// One-off step decay: the learning rate is multiplied by `factor` once
/// `at` (a fraction of the epoch budget) has elapsed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub at: f64,
    pub factor: f64,
}

impl LrDecay {
    pub fn epoch(&self, epochs: usize) -> usize {
        (self.at * epochs as f64).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MapMse,
    NllRelMse,
    DaAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: vec![Metric::MapMse],
        }
    }
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

fn format_version() -> u32 {
    CONFIG_FORMAT_VERSION
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec) -> Self {
        ExperimentConfig {
            format_version: CONFIG_FORMAT_VERSION,
            dataset,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            out: None,
        }
    }

    /// Parses and validates; errors name the offending line and field.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Dimension the flows operate in.
    pub fn flow_dim(&self) -> usize {
        self.model
            .d_latent
            .unwrap_or_else(|| self.dataset.embed_dim.unwrap_or(2))
    }

    pub fn arch_a(&self) -> FlowArch {
        self.model.arch_a.clone().unwrap_or_else(|| FlowArch::rqs(self.flow_dim()))
    }

    pub fn arch_b(&self) -> FlowArch {
        self.model.arch_b.clone().unwrap_or_else(|| FlowArch::rqs(self.flow_dim()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.format_version != CONFIG_FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        if !(0.0..=1.0).contains(&self.dataset.paired_prop) {
            return bad(format!("dataset.paired_prop must lie in [0, 1], got {}", self.dataset.paired_prop));
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return bad(format!("train.lr must be positive, got {}", self.train.lr));
        }
        if let Some(d) = self.train.lr_decay {
            if !(d.at.is_finite() && (0.0..=1.0).contains(&d.at)) {
                return bad(format!("train.lr_decay.at must lie in [0, 1], got {}", d.at));
            }
            if !(d.factor.is_finite() && d.factor > 0.0) {
                return bad(format!("train.lr_decay.factor must be positive, got {}", d.factor));
            }
        }
        self.loss.weights.validate()?;
        self.loss.swd.validate()?;
        let ambient = self.dataset.embed_dim.unwrap_or(2);
        if let Some(dl) = self.model.d_latent {
            if dl == 0 || dl > ambient {
                return bad(format!("model.d_latent must lie in 1..={ambient}, got {dl}"));
            }
        } else if self.model.autoencoder.is_some() {
            return bad("model.autoencoder requires model.d_latent".into());
        }
        if self.model.orientation == Orientation::Preserve && self.arch_b().reflect {
            return bad("model.orientation \"preserve\" contradicts model.arch_b.reflect".into());
        }
        for (name, arch) in [("model.arch_a", self.arch_a()), ("model.arch_b", self.arch_b())] {
            arch.validate().map_err(|e| Error::InvalidConfig(format!("{name}: {e}")))?;
            if arch.d != self.flow_dim() {
                return bad(format!("{name}.d is {} but the flows act in {} dimensions", arch.d, self.flow_dim()));
            }
        }
        if self.eval.metrics.contains(&Metric::NllRelMse)
            && (self.dataset.dataset != crate::datagen::DatasetKind::Mog
                || self.dataset.true_map != crate::datagen::MapKind::Linear
                || self.dataset.embed_dim.is_some())
        {
            return bad("nll_rel_mse needs the closed-form MoG/linear target density".into());
        }
        Ok(())
    }
}
