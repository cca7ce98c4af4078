use alloc::format;
use core::fmt;
use core::str::FromStr;

use crate::data::ReferenceMode;
use crate::error::{Error, Result};
use crate::kv::KvText;
use crate::model::ArchConfig;
use crate::optim::AdamConfig;

/// What the student (or an evaluated network) receives as its reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NarMode {
    /// A random pool image with unrelated content.
    #[default]
    ContentVariant,
    /// The sample's pristine image, slightly rescaled and rotated.
    ContentSimilar,
    /// The pixel-aligned pristine image, cropped at the LQ coordinates.
    AlignedFr,
    /// No reference: the no-reference baseline without a difference path.
    None,
}

impl NarMode {
    pub fn as_reference_mode(self) -> Option<ReferenceMode> {
        match self {
            NarMode::ContentVariant => Some(ReferenceMode::ContentVariant),
            NarMode::ContentSimilar => Some(ReferenceMode::ContentSimilar),
            NarMode::AlignedFr | NarMode::None => None,
        }
    }
}

impl fmt::Display for NarMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NarMode::ContentVariant => "content_variant",
            NarMode::ContentSimilar => "content_similar",
            NarMode::AlignedFr => "aligned_fr",
            NarMode::None => "none",
        })
    }
}

impl FromStr for NarMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content_variant" => Ok(NarMode::ContentVariant),
            "content_similar" => Ok(NarMode::ContentSimilar),
            "aligned_fr" => Ok(NarMode::AlignedFr),
            "none" => Ok(NarMode::None),
            other => Err(Error::Config(format!("unknown nar_mode `{other}`"))),
        }
    }
}

/// Settings for either training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub epochs: usize,
    /// Images per optimizer step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Weight `w` in `L_S = w·L_d + L_l`.
    pub distill_weight: f32,
    pub kd_enabled: bool,
    pub nar_mode: NarMode,
    /// Squared instead of plain Euclidean feature distance.
    pub distill_squared: bool,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchConfig::desk(),
            epochs: 10,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 0,
            distill_weight: 1.0,
            kd_enabled: true,
            nar_mode: NarMode::ContentVariant,
            distill_squared: false,
            augment: true,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "seed",
    "distill_weight",
    "kd_enabled",
    "nar_mode",
    "distill_squared",
    "augment",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(a.weight_decay >= 0.0 && a.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        if !(self.distill_weight >= 0.0 && self.distill_weight.is_finite()) {
            return Err(Error::Config("distill_weight must be non-negative".into()));
        }
        if self.nar_mode == NarMode::None {
            if self.kd_enabled {
                return Err(Error::Config(
                    "nar_mode = none has no difference path to distill; set kd_enabled = false".into(),
                ));
            }
            if self.arch.reference_path {
                return Err(Error::Config("nar_mode = none needs reference_path = false".into()));
            }
        } else if !self.arch.reference_path {
            return Err(Error::Config(format!(
                "nar_mode = {} needs reference_path = true",
                self.nar_mode
            )));
        }
        Ok(())
    }

    /// Switches to the no-reference baseline.
    pub fn no_reference(mut self) -> Self {
        self.nar_mode = NarMode::None;
        self.kd_enabled = false;
        self.arch.reference_path = false;
        self
    }

    /// Overrides fields from keys present in `kv`. `epochs` and `seed` are required.
    pub fn apply_kv(&mut self, kv: &KvText) -> Result<()> {
        self.epochs = kv.require("epochs")?;
        self.seed = kv.require("seed")?;
        if let Some(v) = kv.parse_opt("batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = kv.parse_opt("learning_rate")? {
            self.adam.learning_rate = v;
        }
        if let Some(v) = kv.parse_opt("weight_decay")? {
            self.adam.weight_decay = v;
        }
        if let Some(v) = kv.parse_opt("beta1")? {
            self.adam.beta1 = v;
        }
        if let Some(v) = kv.parse_opt("beta2")? {
            self.adam.beta2 = v;
        }
        if let Some(v) = kv.parse_opt("eps")? {
            self.adam.eps = v;
        }
        if let Some(v) = kv.parse_opt("distill_weight")? {
            self.distill_weight = v;
        }
        if let Some(v) = kv.parse_opt("kd_enabled")? {
            self.kd_enabled = v;
        }
        if let Some(e) = kv.get("nar_mode") {
            self.nar_mode = e.value.parse().map_err(|err| Error::Config(format!("line {}: {err}", e.line)))?;
        }
        if let Some(v) = kv.parse_opt("distill_squared")? {
            self.distill_squared = v;
        }
        if let Some(v) = kv.parse_opt("augment")? {
            self.augment = v;
        }
        self.arch = ArchConfig::from_kv(kv, self.arch.clone())?;
        Ok(())
    }
}
