//! Experiment configuration: one flat TOML document, unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::SyntheticSpec;
use super::schedule::{PhaseCount, Protocol};
use crate::cam::Upsampling;
use crate::error::{Error, Result};
use crate::io::read;
use crate::memory::Regime;
use crate::model::Architecture;
use crate::train::{MaskSource, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// `"synthetic"` or a directory with `train/` and `test/` class folders.
    pub dataset: String,
    pub image_size: usize,
    pub synthetic_classes: usize,
    pub synthetic_train_per_class: usize,
    pub synthetic_test_per_class: usize,
    pub synthetic_seed: u64,

    pub protocol: Protocol,
    pub phases: usize,
    pub phase_count: PhaseCount,
    pub class_order_seed: u64,

    pub regime: Regime,
    /// Image units: total (fixed regime) or per class (growing regime).
    pub budget: f64,

    /// Output channels of each convolution block.
    pub channels: Vec<usize>,
    pub norm_groups: usize,

    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub mu: f64,
    pub mu_prime: f64,
    pub grad_clip_phi: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs_phase1: usize,
    pub epochs_later: usize,
    pub batch_size: usize,
    pub bilevel_batch: usize,
    pub tau: f64,
    pub eta: f64,
    pub seed: u64,
    pub distill_weight: f64,
    pub distill_temperature: f64,
    pub mask_source: MaskSource,
    pub learn_phi: bool,
    pub last_block_only: bool,
    pub artifact_augment: bool,
    pub flip_augment: bool,
    pub upsampling: Upsampling,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SyntheticSpec::default();
        let arch = Architecture::desk(s.size, s.size);
        ExperimentConfig {
            name: "experiment".into(),
            dataset: "synthetic".into(),
            image_size: s.size,
            synthetic_classes: s.classes,
            synthetic_train_per_class: s.train_per_class,
            synthetic_test_per_class: s.test_per_class,
            synthetic_seed: s.seed,
            protocol: Protocol::Lfs,
            phases: 5,
            phase_count: PhaseCount::Incremental,
            class_order_seed: 1993,
            regime: Regime::Fixed,
            budget: 200.0,
            channels: arch.channels,
            norm_groups: arch.norm_groups,
            lambda: t.lambda,
            beta1: t.beta1,
            beta2: t.beta2,
            mu: t.mu,
            mu_prime: t.mu_prime,
            grad_clip_phi: t.grad_clip_phi,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            epochs_phase1: t.epochs_phase1,
            epochs_later: t.epochs_later,
            batch_size: t.batch_size,
            bilevel_batch: t.bilevel_batch,
            tau: t.tau,
            eta: t.eta,
            seed: t.seed,
            distill_weight: t.distill_weight,
            distill_temperature: t.distill_temperature,
            mask_source: t.mask_source,
            learn_phi: t.learn_phi,
            last_block_only: t.last_block_only,
            artifact_augment: t.artifact_augment,
            flip_augment: t.flip_augment,
            upsampling: t.upsampling,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.architecture()?;
        if !(self.budget > 0.0) {
            return Err(Error::Config(format!("budget must be > 0, got {}", self.budget)));
        }
        if self.phases == 0 {
            return Err(Error::Config("phases must be positive".into()));
        }
        Ok(())
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == "synthetic"
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.synthetic_classes,
            train_per_class: self.synthetic_train_per_class,
            test_per_class: self.synthetic_test_per_class,
            size: self.image_size,
            seed: self.synthetic_seed,
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let mut arch = Architecture::desk(self.image_size, self.image_size);
        if self.channels.len() != arch.channels.len() {
            return Err(Error::Config(format!(
                "channels must list {} block widths, got {}",
                arch.channels.len(),
                self.channels.len()
            )));
        }
        arch.channels = self.channels.clone();
        arch.norm_groups = self.norm_groups;
        arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(arch)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            beta1: self.beta1,
            beta2: self.beta2,
            mu: self.mu,
            mu_prime: self.mu_prime,
            grad_clip_phi: self.grad_clip_phi,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs_phase1: self.epochs_phase1,
            epochs_later: self.epochs_later,
            batch_size: self.batch_size,
            bilevel_batch: self.bilevel_batch,
            tau: self.tau,
            eta: self.eta,
            seed: self.seed,
            distill_weight: self.distill_weight,
            distill_temperature: self.distill_temperature,
            mask_source: self.mask_source,
            learn_phi: self.learn_phi,
            last_block_only: self.last_block_only,
            artifact_augment: self.artifact_augment,
            flip_augment: self.flip_augment,
            upsampling: self.upsampling,
        }
    }

    /// Named method variants used for comparisons.
    pub fn variant(&self, name: &str) -> Result<Self> {
        let mut c = self.clone();
        c.last_block_only = false;
        c.learn_phi = false;
        match name {
            "baseline" => c.mask_source = MaskSource::None,
            "full_comp" => c.mask_source = MaskSource::FullComp,
            "center_acti" => c.mask_source = MaskSource::CenterActi,
            "class_acti" => c.mask_source = MaskSource::ClassActi,
            "cim" => {
                c.mask_source = MaskSource::Cim;
                c.learn_phi = true;
            }
            "cim_last_block" => {
                c.mask_source = MaskSource::Cim;
                c.learn_phi = true;
                c.last_block_only = true;
            }
            other => return Err(Error::Config(format!("unknown variant `{other}`"))),
        }
        c.name = format!("{}-{name}", self.name);
        Ok(c)
    }
}

pub const VARIANTS: [&str; 6] = ["baseline", "full_comp", "center_acti", "class_acti", "cim", "cim_last_block"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let c = ExperimentConfig::from_toml_str("phases = 2\nmask_source = \"class_acti\"\nregime = \"growing\"\n").unwrap();
        assert_eq!(c.phases, 2);
        assert_eq!(c.mask_source, MaskSource::ClassActi);
        assert_eq!(c.regime, Regime::Growing);
        assert_eq!(c.tau, 0.6);
    }

    #[test]
    fn unknown_key_fails() {
        let err = ExperimentConfig::from_toml_str("phasez = 3\n").unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn invalid_values_fail() {
        assert!(ExperimentConfig::from_toml_str("beta1 = -1.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("channels = [8, 16]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("eta = 0.5\n").is_err());
    }

    #[test]
    fn variants_set_sources() {
        let c = ExperimentConfig::default();
        for v in VARIANTS {
            c.variant(v).unwrap().validate().unwrap();
        }
        assert_eq!(c.variant("baseline").unwrap().mask_source, MaskSource::None);
        assert!(c.variant("cim_last_block").unwrap().last_block_only);
        assert!(c.variant("bogus").is_err());
    }
}
