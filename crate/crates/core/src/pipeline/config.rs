use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::{ContextKind, ContextStrategy};
use crate::error::{Error, Result};
use crate::fusion::{FusionDims, FusionKind};
use crate::transport::OtkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    /// Text sequence length.
    pub n: usize,
    /// Image sequence length.
    pub t: usize,
    /// Raw feature dimension of both modalities.
    pub d: usize,
    /// Distance between class means, in units of `noise_std`.
    pub class_separation: f64,
    /// Weight of the shared latent in every row, in `[0, 1]`.
    pub cross_modal_correlation: f64,
    pub noise_std: f64,
    pub train_size: usize,
    /// Zero means the validation set is split off the training pool.
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            n: 12,
            t: 12,
            d: 32,
            class_separation: 3.0,
            cross_modal_correlation: 0.5,
            noise_std: 1.0,
            train_size: 200,
            val_size: 60,
            test_size: 60,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.d == 0 {
            return Err(Error::Config("task sequence lengths and dimension must be positive".into()));
        }
        if self.train_size < 2 || self.test_size == 0 {
            return Err(Error::Config("task needs at least two training and one test sample".into()));
        }
        if !(0.0..=1.0).contains(&self.cross_modal_correlation) {
            return Err(Error::Config(format!(
                "cross_modal_correlation must lie in [0, 1], got {}",
                self.cross_modal_correlation
            )));
        }
        if !(self.noise_std > 0.0) || !self.class_separation.is_finite() || self.class_separation < 0.0 {
            return Err(Error::Config("noise_std must be positive and class_separation nonnegative".into()));
        }
        Ok(())
    }
}

/// How the image sequence is brought to the text length before attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    Otk,
    /// Mean of the image rows repeated `n` times.
    Repeat,
    /// Use the image rows as they are; needs `T == n`.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub strategy: ContextKind,
    /// Context layers; the strategy's default when absent.
    pub layers: Option<usize>,
    pub fusion: FusionKind,
    pub label_smoothing_alpha: f64,
    /// Encoder output width `D`.
    pub d_model: usize,
    /// Query/key projection width.
    pub d_qk: usize,
    /// Hidden width of the gating model.
    pub d_gate: usize,
    pub gate_bias: bool,
    pub head: FusionDims,
    pub otk: OtkConfig,
    pub alignment: Alignment,
    /// Cross-modal EMD adaptation; identity swap when off.
    pub transport: bool,
    /// Learned gates in the context layers; pure self-attention when off.
    pub context: bool,
    /// Learned masks in the image attention; all-ones masks when off.
    pub gate_masks: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            strategy: ContextKind::Deep,
            layers: None,
            fusion: FusionKind::AttnFusion,
            label_smoothing_alpha: 0.001,
            d_model: 32,
            d_qk: 64,
            d_gate: 64,
            gate_bias: false,
            head: FusionDims::default(),
            otk: OtkConfig::default(),
            alignment: Alignment::Otk,
            transport: true,
            context: true,
            gate_masks: true,
        }
    }
}

impl ModelConfig {
    pub fn context_strategy(&self) -> Result<ContextStrategy> {
        match self.layers {
            Some(l) => ContextStrategy::new(self.strategy, l),
            None => Ok(ContextStrategy::with_default_layers(self.strategy)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.context_strategy().map_err(|e| Error::Config(e.to_string()))?;
        if self.d_model == 0 || self.d_qk == 0 || self.d_gate == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        let h = &self.head;
        if h.k == 0 || h.hidden == 0 || h.mlp_hidden == 0 || h.d_z == 0 {
            return Err(Error::Config("fusion widths must be positive".into()));
        }
        for rate in [h.dropout_concat, h.dropout_hidden, h.dropout_mlp] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.label_smoothing_alpha) {
            return Err(Error::Config(format!(
                "label_smoothing_alpha must lie in [0, 1], got {}",
                self.label_smoothing_alpha
            )));
        }
        if !(self.otk.eps > 0.0) || self.otk.iterations == 0 {
            return Err(Error::Config("otk eps and iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Gradient descent with heavy-ball momentum.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub momentum: f64,
    /// Epochs between learning-rate decays.
    pub step_size: usize,
    pub gamma: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub runs: usize,
    /// Run `r` uses seed `base_seed + r`.
    pub base_seed: u64,
    /// Fraction of the training pool held out when the task has no
    /// validation set of its own.
    pub val_split: f64,
    pub ece_bins: usize,
    pub ace_ranges: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            optimizer: Optimizer::Sgd,
            lr: 1e-2,
            momentum: 0.9,
            step_size: 4,
            gamma: 0.1,
            patience: 8,
            max_epochs: 100,
            runs: 5,
            base_seed: 0,
            val_split: 0.35,
            ece_bins: 10,
            ace_ranges: 10,
        }
    }
}

impl TrainConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|r| self.base_seed.wrapping_add(r)).collect()
    }

    /// Learning rate in effect during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.gamma.powi((epoch / self.step_size) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.runs == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size, runs, patience and max_epochs must be positive".into()));
        }
        if self.step_size == 0 {
            return Err(Error::Config("step_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.gamma > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("lr and gamma must be positive, momentum in [0, 1)".into()));
        }
        if !(self.val_split > 0.0 && self.val_split < 1.0) {
            return Err(Error::Config(format!("val_split must lie in (0, 1), got {}", self.val_split)));
        }
        if self.ece_bins == 0 || self.ace_ranges == 0 {
            return Err(Error::Config("ece_bins and ace_ranges must be positive".into()));
        }
        Ok(())
    }
}

/// Everything one experiment needs, as read from a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: SyntheticTaskConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.task.validate()?;
        if self.model.alignment == Alignment::Identity && self.task.n != self.task.t {
            return Err(Error::Config(format!(
                "identity alignment needs equal sequence lengths, got n = {} and T = {}",
                self.task.n, self.task.t
            )));
        }
        Ok(())
    }
}
