use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{SamplerConfig, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::VisibleStyle;
use crate::losses::{Aggregation, Distance, LossConfig};
use crate::model::{BackboneConfig, ClassifierSharing};
use crate::spectral::SegConfig;

/// Ablation presets, from plain identity training to the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    /// Raw colour input, identity losses only.
    #[serde(rename = "baseline")]
    Baseline,
    /// SEG input, identity losses only.
    #[serde(rename = "+SE")]
    Se,
    /// SEG input plus the cross-centre loss.
    #[serde(rename = "+SE+CC")]
    SeCc,
    /// SEG input plus the aggregation (PABA) loss.
    #[serde(rename = "+SE+PABA")]
    SePaba,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Baseline, Preset::Se, Preset::SeCc, Preset::SePaba];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::Se => "+SE",
            Preset::SeCc => "+SE+CC",
            Preset::SePaba => "+SE+PABA",
        }
    }

    pub fn uses_seg(self) -> bool {
        self != Preset::Baseline
    }

    pub fn aggregation(self) -> Aggregation {
        match self {
            Preset::Baseline | Preset::Se => Aggregation::None,
            Preset::SeCc => Aggregation::CrossCentre,
            Preset::SePaba => Aggregation::Paba,
        }
    }

    /// File-system friendly name.
    pub fn slug(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::Se => "se",
            Preset::SeCc => "se_cc",
            Preset::SePaba => "se_paba",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s) || p.slug() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset {s:?}; expected one of baseline, +SE, +SE+CC, +SE+PABA"
                ))
            })
    }
}

/// Flat run configuration; every key is optional in the TOML file and
/// defaults to the desk profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub seed: u64,

    pub epochs: usize,
    pub lr0: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub flip: bool,

    /// Identities per batch.
    pub p: usize,
    /// Images per identity per modality in a batch.
    pub k: usize,

    pub margin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub normalize_features: bool,
    pub seg_weight: f64,

    pub parts: usize,
    pub stage_channels: Vec<usize>,
    /// Group-norm groups per shared stage; 0 disables normalisation.
    pub norm_groups: usize,
    pub specific_channels: usize,
    pub classifier_sharing: ClassifierSharing,
    pub image_height: usize,
    pub image_width: usize,

    /// Folder dataset root; the synthetic generator is used when absent.
    pub dataset_root: Option<String>,
    pub num_identities: usize,
    pub train_identities: usize,
    pub images_per_identity: usize,
    pub difficulty: f64,
    /// Generator seed; follows `seed` when absent.
    pub data_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Scaled-down schedule that trains in well under a minute per run.
    pub fn desk() -> Self {
        Self {
            preset: Preset::SePaba,
            seed: 0,
            epochs: 30,
            lr0: 0.03,
            decay_epochs: vec![10, 20],
            decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            flip: true,
            p: 4,
            k: 2,
            margin: 0.5,
            lambda1: 1.0,
            lambda2: 2.5,
            lambda3: 1.0,
            normalize_features: false,
            seg_weight: 1.0,
            parts: 12,
            stage_channels: vec![16, 32, 64],
            norm_groups: 16,
            specific_channels: 128,
            classifier_sharing: ClassifierSharing::Shared,
            image_height: 96,
            image_width: 48,
            dataset_root: None,
            num_identities: 24,
            train_identities: 16,
            images_per_identity: 10,
            difficulty: 0.6,
            data_seed: None,
        }
    }

    /// Full-length schedule and batch composition of the original recipe.
    pub fn paper() -> Self {
        Self {
            epochs: 120,
            decay_epochs: vec![30, 70],
            p: 8,
            k: 7,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Config(format!("unknown profile {name:?}; expected desk or paper"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !(self.decay_factor > 0.0) {
            return Err(Error::Config("lr0 and decay_factor must be positive".into()));
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!("decay epochs {:?} must be strictly increasing", self.decay_epochs)));
        }
        if self.decay_epochs.last().is_some_and(|&e| e >= self.epochs) {
            return Err(Error::Config(format!(
                "decay epochs {:?} must be < epochs ({})",
                self.decay_epochs, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight_decay >= 0".into()));
        }
        if self.seg_weight < 0.0 {
            return Err(Error::Config("seg_weight must be >= 0".into()));
        }
        if self.train_identities < self.p {
            return Err(Error::Config(format!(
                "{} training identities cannot fill P = {}",
                self.train_identities, self.p
            )));
        }
        if self.dataset_root.is_none() {
            self.synthetic().validate()?;
            if self.train_identities >= self.num_identities {
                return Err(Error::Config("train_identities must leave test identities".into()));
            }
        }
        self.sampler().validate()?;
        self.loss().validate()?;
        self.backbone(self.train_identities).validate()
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr0 * self.decay_factor.powi(passed as i32)
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            lambda_specific: self.lambda1,
            lambda_aggregation: self.lambda2,
            lambda_parts: self.lambda3,
            distance: Distance::Euclidean,
            normalize_features: self.normalize_features,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            p: self.p,
            k: self.k,
            seed: self.seed,
        }
    }

    pub fn backbone(&self, num_identities: usize) -> BackboneConfig {
        BackboneConfig {
            in_channels: 3,
            stage_channels: self.stage_channels.clone(),
            specific_channels: self.specific_channels,
            input_height: self.image_height,
            input_width: self.image_width,
            norm_groups: self.norm_groups,
            parts: self.parts,
            num_identities,
            classifier_sharing: self.classifier_sharing,
            seed: self.seed,
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_identities: self.num_identities,
            images_per_identity: self.images_per_identity,
            height: self.image_height,
            width: self.image_width,
            seed: self.data_seed.unwrap_or(self.seed),
            difficulty: self.difficulty,
        }
    }

    pub fn visible_style(&self) -> VisibleStyle {
        if self.preset.uses_seg() {
            VisibleStyle::Seg(SegConfig::with_weight(self.seg_weight))
        } else {
            VisibleStyle::Raw
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_schedule() {
        let cfg = TrainConfig::paper();
        cfg.validate().unwrap();
        for (epoch, lr) in [(0, 0.03), (29, 0.03), (30, 0.003), (69, 0.003), (70, 0.0003), (119, 0.0003)] {
            assert!((cfg.lr_at(epoch) - lr).abs() < 1e-12, "epoch {epoch}");
        }
        assert_eq!((cfg.p, cfg.k, cfg.parts), (8, 7, 12));
        let loss = cfg.loss();
        assert_eq!((loss.margin, loss.lambda_specific, loss.lambda_aggregation, loss.lambda_parts), (0.5, 1.0, 2.5, 1.0));
    }

    #[test]
    fn desk_profile() {
        let cfg = TrainConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.decay_epochs, vec![10, 20]);
        assert_eq!(cfg.lr_at(10), 0.03 * 0.1);
        assert_eq!(cfg.backbone(16).descriptor_dim(), 768);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = TrainConfig::desk();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = TrainConfig::from_toml_str("preset = \"+SE+CC\"\nepochs = 5\ndecay_epochs = [2]\n").unwrap();
        assert_eq!(partial.preset, Preset::SeCc);
        assert_eq!(partial.p, 4);
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
        assert!(TrainConfig::from_toml_str("decay_epochs = [20, 10]").is_err());
        assert!(TrainConfig::from_toml_str("epochs = 10\ndecay_epochs = [10]").is_err());
    }

    #[test]
    fn preset_names() {
        let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
        assert_eq!(names, ["baseline", "+SE", "+SE+CC", "+SE+PABA"]);
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            assert_eq!(p.slug().parse::<Preset>().unwrap(), p);
        }
        assert!(!Preset::Baseline.uses_seg());
        assert_eq!(Preset::SePaba.aggregation(), Aggregation::Paba);
    }
}
