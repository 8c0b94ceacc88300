//! Experiment configuration.
//!
//! Configs are TOML documents: top-level `key = value` pairs (strings, integers,
//! reals, booleans, arrays) followed by `[section]` / `[section.sub]` tables. Every
//! field has a default, so an empty file is a valid configuration.
//!
//! ```toml
//! seed = 7
//! loss = "s2r2"            # or "infonce"
//! batch_images = 16        # B
//! views_per_image = 8      # K
//! steps = 200
//! eval_every = 50
//!
//! [dataset]
//! source = "synthetic"     # or "images" together with `path`
//!
//! [dataset.synthetic]
//! num_classes = 10
//! cluster_spread = 0.3
//!
//! [smoothing]
//! tau = 0.01
//! ```
//!
//! All randomness flows from `seed`. The data, split, augmentation, init and probe
//! streams are derived from it by name unless overridden under `[seeds]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::ContrastiveConfig;
use crate::batch::AugmentationPolicy;
use crate::datasets::SyntheticSpec;
use crate::encoder::{EncoderConfig, OptimizerConfig};
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::ranking::SmoothingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    S2r2,
    Infonce,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::S2r2 => "s2r2",
            LossKind::Infonce => "infonce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    #[default]
    Synthetic,
    Images,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// `S2R2IMG1` file, used when `source = "images"`.
    pub path: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

/// Per-stream seed overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedOverrides {
    pub data: Option<u64>,
    pub split: Option<u64>,
    pub augmentation: Option<u64>,
    pub init: Option<u64>,
    pub probe: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub b_values: Vec<usize>,
    pub k_values: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { b_values: vec![4, 8, 16, 32], k_values: vec![2, 4, 8] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub deterministic: bool,
    pub loss: LossKind,
    /// Sources per step (`B`).
    pub batch_images: usize,
    /// Views per source (`K`).
    pub views_per_image: usize,
    pub steps: usize,
    pub eval_every: usize,
    /// Share of every class used for self-supervised training and probe fitting.
    pub train_fraction: f64,
    pub dataset: DatasetConfig,
    pub encoder: EncoderConfig,
    pub optimizer: OptimizerConfig,
    pub smoothing: SmoothingConfig,
    pub contrastive: ContrastiveConfig,
    pub augmentation: AugmentationPolicy,
    pub probe: ProbeConfig,
    pub seeds: SeedOverrides,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            deterministic: true,
            loss: LossKind::S2r2,
            batch_images: 16,
            views_per_image: 8,
            steps: 200,
            eval_every: 50,
            train_fraction: 0.8,
            dataset: DatasetConfig::default(),
            encoder: EncoderConfig::default(),
            optimizer: OptimizerConfig::default(),
            smoothing: SmoothingConfig::default(),
            contrastive: ContrastiveConfig::default(),
            augmentation: AugmentationPolicy::default(),
            probe: ProbeConfig::default(),
            seeds: SeedOverrides::default(),
            ablation: AblationConfig::default(),
        }
    }
}

/// Seed of a named stream derived from the root seed (FNV-1a of the name, then SplitMix64).
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn split_seed(&self) -> u64 {
        self.seeds.split.unwrap_or_else(|| derive_seed(self.seed, "split"))
    }

    /// Copy with every component seed filled from the seed streams and the encoder
    /// input width matched to the dataset (when it is known without loading files).
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        let s = self.seeds;
        c.dataset.synthetic.seed = s.data.unwrap_or_else(|| derive_seed(self.seed, "data"));
        c.augmentation.seed = s.augmentation.unwrap_or_else(|| derive_seed(self.seed, "augmentation"));
        c.encoder.seed = s.init.unwrap_or_else(|| derive_seed(self.seed, "init"));
        c.probe.seed = s.probe.unwrap_or_else(|| derive_seed(self.seed, "probe"));
        if c.dataset.source == DatasetSource::Synthetic {
            c.encoder.input_dim = c.dataset.synthetic.output_dim();
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_images < 2 || self.views_per_image < 2 {
            return bad(format!(
                "B = {} and K = {} must both be >= 2",
                self.batch_images, self.views_per_image
            ));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.eval_every == 0 || self.eval_every > self.steps {
            return bad(format!("eval_every = {} must lie in [1, steps = {}]", self.eval_every, self.steps));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        if self.loss == LossKind::Infonce && !self.views_per_image.is_multiple_of(2) {
            return bad("infonce pairs adjacent views and needs an even K".into());
        }
        match self.dataset.source {
            DatasetSource::Synthetic => {
                self.dataset.synthetic.validate()?;
                if self.encoder.input_dim != self.dataset.synthetic.output_dim() {
                    return bad(format!(
                        "encoder input_dim {} does not match dataset width {}",
                        self.encoder.input_dim,
                        self.dataset.synthetic.output_dim()
                    ));
                }
            }
            DatasetSource::Images => {
                if self.dataset.path.is_none() {
                    return bad("dataset.source = \"images\" needs dataset.path".into());
                }
            }
        }
        self.encoder.validate()?;
        self.optimizer.validate()?;
        self.smoothing.validate()?;
        self.contrastive.validate()?;
        self.augmentation.validate()?;
        self.probe.validate()?;
        Ok(())
    }
}
