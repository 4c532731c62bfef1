//! Experiment configuration: strict TOML with documented defaults.
//!
//! Unknown keys are rejected. Defaults follow the standard setup:
//! 4 clients, 1 local epoch, 5 rounds, lr 0.01, batch 32, lambda 10,
//! 1 EWC epoch, 10 teachers, debias-teacher labels, 5 trials.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use fedforget::data::{self, BackdoorSpec, Dataset};
use fedforget::evaluation::{ConventionalConfig, OverlapConfig, Scenario};
use fedforget::federation::FederationConfig;
use fedforget::nn::ModelSpec;
use fedforget::seed;
use fedforget::unlearning::{DebiasMode, EwcConfig, FakeLabelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stream in a run derives from it.
    pub seed: u64,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    /// Default output directory (overridable by --out / FEDFORGET_OUT).
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub backdoor: BackdoorSection,
    #[serde(default)]
    pub unlearn: UnlearnSection,
    #[serde(default)]
    pub ewc: EwcSection,
    #[serde(default)]
    pub conventional: Option<ConventionalSection>,
    #[serde(default)]
    pub overlap: OverlapSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum DatasetSection {
    /// MNIST-style IDX files.
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Seeded subset sizes; whole files when absent.
        #[serde(default)]
        train_subset: Option<usize>,
        #[serde(default)]
        test_subset: Option<usize>,
    },
    /// Synthetic Gaussian blobs.
    Blobs {
        #[serde(default = "defaults::blob_classes")]
        classes: usize,
        #[serde(default = "defaults::blob_per_class")]
        per_class: usize,
        #[serde(default = "defaults::blob_dim")]
        dim: usize,
        #[serde(default = "defaults::blob_spread")]
        spread: f64,
        #[serde(default = "defaults::blob_test_per_class")]
        test_per_class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden-layer widths; input/output come from the dataset.
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { hidden: vec![128] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    #[serde(default = "defaults::clients")]
    pub clients: usize,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            clients: defaults::clients(),
            local_epochs: defaults::local_epochs(),
            rounds: defaults::rounds(),
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackdoorSection {
    /// Explicit trigger coordinates; when absent, a corner block is used.
    #[serde(default)]
    pub trigger_coords: Option<Vec<usize>>,
    /// Side of the square corner block (ignored with explicit coords).
    #[serde(default = "defaults::trigger_size")]
    pub trigger_size: usize,
    #[serde(default = "defaults::trigger_value")]
    pub trigger_value: f64,
    /// Pin the label-flip offset; seeded from the root seed when absent.
    #[serde(default)]
    pub flip_offset: Option<usize>,
    #[serde(default = "defaults::poison_fraction")]
    pub poison_fraction: f64,
}

impl Default for BackdoorSection {
    fn default() -> Self {
        BackdoorSection {
            trigger_coords: None,
            trigger_size: defaults::trigger_size(),
            trigger_value: defaults::trigger_value(),
            flip_offset: None,
            poison_fraction: defaults::poison_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearnSection {
    #[serde(default)]
    pub client: usize,
    #[serde(default)]
    pub target_class: usize,
    #[serde(default = "defaults::label_kind")]
    pub label_kind: FakeLabelKind,
    #[serde(default = "defaults::teachers")]
    pub teachers: usize,
}

impl Default for UnlearnSection {
    fn default() -> Self {
        UnlearnSection {
            client: 0,
            target_class: 0,
            label_kind: defaults::label_kind(),
            teachers: defaults::teachers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EwcSection {
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::ewc_epochs")]
    pub epochs: usize,
    /// Defaults to the federation learning rate.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    /// Defaults to the federation batch size.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "defaults::debias_mode")]
    pub debias_mode: DebiasModeName,
    #[serde(default)]
    pub sigma_fixed: Option<f64>,
}

impl Default for EwcSection {
    fn default() -> Self {
        EwcSection {
            lambda: defaults::lambda(),
            epochs: defaults::ewc_epochs(),
            learning_rate: None,
            batch_size: None,
            debias_mode: defaults::debias_mode(),
            sigma_fixed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DebiasModeName {
    Dynamic,
    Fixed,
}

/// Settings for the conventional-loss (fedaf-c) arm; mirrors the EWC
/// training budget when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConventionalSection {
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapSection {
    #[serde(default = "defaults::overlap_epochs")]
    pub epochs: usize,
    /// Defaults to the federation learning rate.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    /// Defaults to the federation batch size.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl Default for OverlapSection {
    fn default() -> Self {
        OverlapSection {
            epochs: defaults::overlap_epochs(),
            learning_rate: None,
            batch_size: None,
        }
    }
}

mod defaults {
    use fedforget::unlearning::FakeLabelKind;

    use super::DebiasModeName;

    pub fn trials() -> usize {
        5
    }
    pub fn clients() -> usize {
        4
    }
    pub fn local_epochs() -> usize {
        1
    }
    pub fn rounds() -> usize {
        5
    }
    pub fn learning_rate() -> f64 {
        0.01
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn trigger_size() -> usize {
        3
    }
    pub fn trigger_value() -> f64 {
        1.0
    }
    pub fn poison_fraction() -> f64 {
        1.0
    }
    pub fn label_kind() -> FakeLabelKind {
        FakeLabelKind::DebiasTeacher
    }
    pub fn teachers() -> usize {
        10
    }
    pub fn lambda() -> f64 {
        10.0
    }
    pub fn ewc_epochs() -> usize {
        1
    }
    pub fn debias_mode() -> DebiasModeName {
        DebiasModeName::Dynamic
    }
    pub fn overlap_epochs() -> usize {
        5
    }
    pub fn blob_classes() -> usize {
        10
    }
    pub fn blob_per_class() -> usize {
        800
    }
    pub fn blob_dim() -> usize {
        784
    }
    pub fn blob_spread() -> f64 {
        0.25
    }
    pub fn blob_test_per_class() -> usize {
        200
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.trials == 0 {
            bail!("trials must be >= 1");
        }
        if self.model.hidden.iter().any(|&d| d == 0) {
            bail!("hidden layer widths must be >= 1");
        }
        if let EwcSection {
            debias_mode: DebiasModeName::Fixed,
            sigma_fixed: None,
            ..
        } = self.ewc
        {
            bail!("ewc.debias_mode = \"fixed\" requires ewc.sigma_fixed");
        }
        if let Some(s) = self.ewc.sigma_fixed {
            if !(0.0..=1.0).contains(&s) {
                bail!("ewc.sigma_fixed {s} outside [0,1]");
            }
        }
        Ok(())
    }

    /// Resolved snapshot with every default and override filled in, for
    /// embedding next to output files.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Build the train/test datasets.
    pub fn build_datasets(&self) -> anyhow::Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetSection::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_subset,
                test_subset,
            } => {
                let train = data::idx::load_idx(train_images, train_labels)?;
                let test = data::idx::load_idx(test_images, test_labels)?;
                let train = maybe_subset(train, *train_subset, seed::mix(&[self.seed, 0x5b5e7, 0]));
                let test = maybe_subset(test, *test_subset, seed::mix(&[self.seed, 0x5b5e7, 1]));
                Ok((train, test))
            }
            DatasetSection::Blobs {
                classes,
                per_class,
                dim,
                spread,
                test_per_class,
            } => {
                let train = data::make_blobs(
                    *classes,
                    *per_class,
                    *dim,
                    *spread,
                    seed::mix(&[self.seed, seed::TAG_BLOBS, 0]),
                )?;
                let test = data::make_blobs(
                    *classes,
                    *test_per_class,
                    *dim,
                    *spread,
                    seed::mix(&[self.seed, seed::TAG_BLOBS, 1]),
                )?;
                Ok((train, test))
            }
        }
    }

    pub fn model_spec(&self, feature_dim: usize, class_count: usize) -> anyhow::Result<ModelSpec> {
        let mut dims = Vec::with_capacity(self.model.hidden.len() + 2);
        dims.push(feature_dim);
        dims.extend_from_slice(&self.model.hidden);
        dims.push(class_count);
        Ok(ModelSpec::new(dims)?)
    }

    pub fn federation_config(&self) -> FederationConfig {
        FederationConfig {
            client_count: self.federation.clients,
            local_epochs: self.federation.local_epochs,
            rounds: self.federation.rounds,
            learning_rate: self.federation.learning_rate,
            batch_size: self.federation.batch_size,
            seed: self.seed,
        }
    }

    pub fn backdoor_spec(&self, feature_dim: usize, class_count: usize) -> anyhow::Result<BackdoorSpec> {
        let coords = match &self.backdoor.trigger_coords {
            Some(coords) => coords.clone(),
            None => {
                let side = (feature_dim as f64).sqrt().round() as usize;
                if side * side == feature_dim && side >= self.backdoor.trigger_size {
                    BackdoorSpec::corner_block_coords(side, self.backdoor.trigger_size)
                } else {
                    // Not a square image: stamp the last trigger_size^2 features.
                    let n = (self.backdoor.trigger_size * self.backdoor.trigger_size)
                        .min(feature_dim);
                    (feature_dim - n..feature_dim).collect()
                }
            }
        };
        let flip_offset = self
            .backdoor
            .flip_offset
            .unwrap_or_else(|| BackdoorSpec::seeded_flip_offset(self.seed, class_count));
        Ok(BackdoorSpec::new(
            coords,
            self.backdoor.trigger_value,
            flip_offset,
            self.backdoor.poison_fraction,
        )?)
    }

    pub fn debias_mode(&self) -> DebiasMode {
        match self.ewc.debias_mode {
            DebiasModeName::Dynamic => DebiasMode::Dynamic,
            DebiasModeName::Fixed => {
                DebiasMode::Fixed(self.ewc.sigma_fixed.expect("validated at load"))
            }
        }
    }

    pub fn ewc_config(&self) -> EwcConfig {
        EwcConfig {
            lambda: self.ewc.lambda,
            ewc_epochs: self.ewc.epochs,
            learning_rate: self
                .ewc
                .learning_rate
                .unwrap_or(self.federation.learning_rate),
            batch_size: self.ewc.batch_size.unwrap_or(self.federation.batch_size),
            debias: self.debias_mode(),
        }
    }

    pub fn conventional_config(&self) -> ConventionalConfig {
        let ewc = self.ewc_config();
        let section = self.conventional.clone().unwrap_or(ConventionalSection {
            learning_rate: None,
            batch_size: None,
            epochs: None,
        });
        ConventionalConfig {
            learning_rate: section.learning_rate.unwrap_or(ewc.learning_rate),
            batch_size: section.batch_size.unwrap_or(ewc.batch_size),
            epochs: section.epochs.unwrap_or(ewc.ewc_epochs),
        }
    }

    pub fn overlap_config(&self) -> OverlapConfig {
        OverlapConfig {
            epochs: self.overlap.epochs,
            learning_rate: self
                .overlap
                .learning_rate
                .unwrap_or(self.federation.learning_rate),
            batch_size: self.overlap.batch_size.unwrap_or(self.federation.batch_size),
            teacher_count: self.unlearn.teachers,
            debias: self.debias_mode(),
        }
    }

    /// Assemble the full pipeline scenario.
    pub fn scenario(&self) -> anyhow::Result<Scenario> {
        let (train, test) = self.build_datasets()?;
        let spec = self.model_spec(train.feature_dim(), train.class_count())?;
        let ewc = self.ewc_config();
        ewc.validate()?;
        let backdoor = self.backdoor_spec(train.feature_dim(), train.class_count())?;
        Ok(Scenario {
            spec,
            train,
            test,
            federation: self.federation_config(),
            backdoor,
            client_id: self.unlearn.client,
            target_class: self.unlearn.target_class,
            kind: self.unlearn.label_kind,
            teacher_count: self.unlearn.teachers,
            ewc,
            conventional: self.conventional_config(),
        })
    }
}

fn maybe_subset(dataset: Dataset, size: Option<usize>, seed_value: u64) -> Dataset {
    match size {
        Some(n) => dataset.seeded_subset(n, seed_value),
        None => dataset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            seed = 7
            [dataset]
            kind = "blobs"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.federation.clients, 4);
        assert_eq!(cfg.federation.local_epochs, 1);
        assert_eq!(cfg.federation.rounds, 5);
        assert_eq!(cfg.federation.learning_rate, 0.01);
        assert_eq!(cfg.federation.batch_size, 32);
        assert_eq!(cfg.ewc.lambda, 10.0);
        assert_eq!(cfg.ewc.epochs, 1);
        assert_eq!(cfg.unlearn.teachers, 10);
        assert_eq!(cfg.unlearn.label_kind, FakeLabelKind::DebiasTeacher);
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let err = toml::from_str::<ExperimentConfig>(
            r#"
            seed = 7
            [dataset]
            kind = "blobs"
            [ewc]
            lamda = 10
            "#,
        )
        .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("lamda"), "error should name the key: {text}");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            seed = 42
            trials = 2
            [dataset]
            kind = "blobs"
            classes = 4
            per_class = 50
            dim = 16
            spread = 0.1
            test_per_class = 10
            [ewc]
            lambda = 0.5
            debias_mode = "fixed"
            sigma_fixed = 0.3
            "#,
        )
        .unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn fixed_debias_requires_sigma() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            seed = 7
            [dataset]
            kind = "blobs"
            [ewc]
            debias_mode = "fixed"
            "#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn square_features_get_a_corner_trigger() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            seed = 7
            [dataset]
            kind = "blobs"
            dim = 16
            "#,
        )
        .unwrap();
        let bd = cfg.backdoor_spec(16, 10).unwrap();
        assert_eq!(bd.trigger_coords.len(), 9);
        assert!(bd.trigger_coords.contains(&15));
        assert!((1..10).contains(&bd.flip_offset));
    }
}
