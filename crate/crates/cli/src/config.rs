//! Run configuration: a TOML file of dotted keys (`train.parent_epochs = 20`),
//! overridden by command-line flags, falling back to built-in defaults.

use std::path::{Path, PathBuf};

use noisy_ensemble::perturbation::{NoiseDistribution, NoiseSpec};
use noisy_ensemble::pipeline::{OptimSettings, Strategy, TrainBudget};
use noisy_ensemble::SgdConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetKind,
    /// Directory holding the IDX or CIFAR-10 binary files.
    pub path: Option<PathBuf>,
    /// Seeded random subset taken before splitting.
    pub subset: Option<usize>,
    pub split_ratio: f64,
    pub normalize: bool,
    /// Synthetic blobs only.
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: DatasetKind::Blobs,
            path: None,
            subset: None,
            split_ratio: 0.8,
            normalize: true,
            classes: 3,
            per_class: 100,
            dim: 8,
            spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchKind,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: ArchKind::Mlp,
            hidden: vec![256],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub parent_epochs: usize,
    pub child_epochs: usize,
    pub batch_size: usize,
    pub members: usize,
    /// Snapshot run length; defaults to `parent_epochs + members·child_epochs`.
    pub snapshot_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let b = TrainBudget::default();
        Self {
            parent_epochs: b.parent_epochs,
            child_epochs: b.child_epochs,
            batch_size: b.batch_size,
            members: b.ensemble_size,
            snapshot_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let o = OptimSettings::default();
        Self {
            lr_max: o.lr_max,
            lr_min: o.lr_min,
            momentum: o.sgd.momentum,
            weight_decay: o.sgd.weight_decay,
        }
    }
}

/// Raw `noise.*` keys; completeness is checked by [`RunConfig::validate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist: Option<NoiseDistribution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Base of the per-child noise streams; defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub ece_bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ece_bins: noisy_ensemble::metrics::DEFAULT_ECE_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub strategy: Strategy,
    pub train: TrainConfig,
    pub optim: OptimConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    pub seed: u64,
    pub out: PathBuf,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            strategy: Strategy::Noisy,
            train: TrainConfig::default(),
            optim: OptimConfig::default(),
            noise: None,
            seed: 0,
            out: PathBuf::from("runs/latest"),
            metrics: MetricsConfig::default(),
        }
    }
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub strategy: Option<Strategy>,
    pub members: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub dist: Option<NoiseDistribution>,
    pub parent_epochs: Option<usize>,
    pub child_epochs: Option<usize>,
    pub subset: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// File (or defaults) with flag overrides applied, then validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.strategy {
            self.strategy = v;
        }
        if let Some(v) = o.members {
            self.train.members = v;
        }
        if let Some(v) = o.parent_epochs {
            self.train.parent_epochs = v;
        }
        if let Some(v) = o.child_epochs {
            self.train.child_epochs = v;
        }
        if let Some(v) = o.subset {
            self.dataset.subset = Some(v);
        }
        if o.alpha.is_some() || o.beta.is_some() || o.dist.is_some() {
            let noise = self.noise.get_or_insert_with(NoiseConfig::default);
            if let Some(v) = o.alpha {
                noise.alpha = Some(v);
            }
            if let Some(v) = o.beta {
                noise.beta = Some(v);
            }
            if let Some(v) = o.dist {
                noise.dist = Some(v);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if !(d.split_ratio > 0.0 && d.split_ratio < 1.0) {
            return Err(CliError::config("dataset.split_ratio", "must lie strictly between 0 and 1"));
        }
        if d.subset == Some(0) {
            return Err(CliError::config("dataset.subset", "must be positive"));
        }
        match d.name {
            DatasetKind::Blobs => {
                for (field, v) in [
                    ("dataset.classes", d.classes),
                    ("dataset.per_class", d.per_class),
                    ("dataset.dim", d.dim),
                ] {
                    if v == 0 {
                        return Err(CliError::config(field, "must be positive"));
                    }
                }
                if !(d.spread >= 0.0 && d.spread.is_finite()) {
                    return Err(CliError::config("dataset.spread", "must be finite and >= 0"));
                }
                if self.model.arch == ArchKind::Cnn {
                    return Err(CliError::config("model.arch", "cnn needs an image dataset"));
                }
            }
            DatasetKind::Mnist | DatasetKind::Cifar10 => {
                if d.path.is_none() {
                    return Err(CliError::config("dataset.path", "required for file-backed datasets"));
                }
            }
        }
        if self.model.hidden.contains(&0) {
            return Err(CliError::config("model.hidden", "layer widths must be positive"));
        }
        let t = &self.train;
        for (field, v) in [
            ("train.parent_epochs", t.parent_epochs),
            ("train.child_epochs", t.child_epochs),
            ("train.batch_size", t.batch_size),
            ("train.members", t.members),
        ] {
            if v == 0 {
                return Err(CliError::config(field, "must be positive"));
            }
        }
        if self.strategy == Strategy::Snapshot {
            let total = self.snapshot_epochs();
            if total == 0 || !total.is_multiple_of(t.members) {
                return Err(CliError::config(
                    "train.snapshot_epochs",
                    format!("{total} epochs cannot be split into {} equal cycles", t.members),
                ));
            }
        }
        let o = &self.optim;
        if !(o.lr_max >= o.lr_min && o.lr_min >= 0.0 && o.lr_max.is_finite()) {
            return Err(CliError::config("optim.lr_max", "need lr_max >= lr_min >= 0"));
        }
        self.sgd()
            .validate()
            .map_err(|e| CliError::config("optim", e.to_string()))?;
        if self.metrics.ece_bins == 0 {
            return Err(CliError::config("metrics.ece_bins", "must be positive"));
        }
        if self.strategy == Strategy::Noisy {
            self.noise_spec()?;
        }
        Ok(())
    }

    pub fn snapshot_epochs(&self) -> usize {
        self.train
            .snapshot_epochs
            .unwrap_or(self.train.parent_epochs + self.train.members * self.train.child_epochs)
    }

    pub fn budget(&self) -> TrainBudget {
        TrainBudget {
            parent_epochs: self.train.parent_epochs,
            child_epochs: self.train.child_epochs,
            batch_size: self.train.batch_size,
            ensemble_size: if self.strategy == Strategy::Single { 1 } else { self.train.members },
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.optim.momentum,
            weight_decay: self.optim.weight_decay,
        }
    }

    pub fn optim_settings(&self) -> OptimSettings {
        OptimSettings {
            sgd: self.sgd(),
            lr_max: self.optim.lr_max,
            lr_min: self.optim.lr_min,
        }
    }

    /// The complete noise recipe; errors name the missing `noise.*` key.
    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        let missing = |key: &str| {
            CliError::config(
                format!("noise.{key}"),
                format!("noise section requires `{key}` for strategy {}", self.strategy),
            )
        };
        let n = self.noise.as_ref().ok_or_else(|| {
            CliError::config("noise", format!("strategy {} requires a noise section (alpha, beta)", self.strategy))
        })?;
        let alpha = n.alpha.ok_or_else(|| missing("alpha"))?;
        let beta = n.beta.ok_or_else(|| missing("beta"))?;
        let dist = n.dist.unwrap_or(NoiseDistribution::Uniform);
        NoiseSpec::new(dist, alpha, beta, n.seed.unwrap_or(self.seed))
            .map_err(|e| CliError::config("noise", e.to_string()))
    }

    /// SHA-256 of the canonical JSON form; the output directory is excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_parse() {
        let cfg = RunConfig::from_toml(
            r#"
            strategy = "noisy"
            seed = 7
            dataset.name = "mnist"
            dataset.path = "data/mnist-5k"
            train.parent_epochs = 20
            noise.alpha = 0.8
            noise.beta = 0.1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.dataset.name, DatasetKind::Mnist);
        assert_eq!(cfg.train.parent_epochs, 20);
        assert_eq!(cfg.train.child_epochs, 50);
        assert_eq!(cfg.noise_spec().unwrap().beta, 0.1);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("train.epochs = 3").is_err());
    }

    #[test]
    fn flags_beat_file_values() {
        let mut cfg = RunConfig::from_toml("seed = 1\ntrain.members = 4").unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            beta: Some(0.2),
            ..Overrides::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.members, 4);
        assert_eq!(cfg.noise.unwrap().beta, Some(0.2));
    }

    #[test]
    fn noisy_without_noise_names_the_field() {
        let err = RunConfig::default().validate().unwrap_err().to_string();
        assert!(err.contains("noise"), "{err}");
        let mut cfg = RunConfig::default();
        cfg.noise = Some(NoiseConfig {
            alpha: Some(0.5),
            ..NoiseConfig::default()
        });
        assert!(cfg.validate().unwrap_err().to_string().contains("noise.beta"));
    }

    #[test]
    fn snapshot_budget_must_divide() {
        let mut cfg = RunConfig {
            strategy: Strategy::Snapshot,
            ..RunConfig::default()
        };
        cfg.train.snapshot_epochs = Some(11);
        cfg.train.members = 5;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("train.snapshot_epochs"), "{err}");
        cfg.train.snapshot_epochs = None;
        cfg.validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::default();
        let b = RunConfig {
            out: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), RunConfig { seed: 1, ..a }.hash());
    }
}
