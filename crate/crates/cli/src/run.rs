//! Single experiment: prepare data, train one strategy, score it, write the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use noisy_ensemble::data::{load_cifar10, load_mnist, make_blobs, Normalization};
use noisy_ensemble::pipeline::{
    noisy_bundle_from_parent, run_noisy_deep_ensemble, run_single, run_snapshot_ensemble, run_standard_ensemble,
    train_parent, EnsembleBundle, EpochLedger, PhaseTime, Strategy, TrainTrace,
};
use noisy_ensemble::{Architecture, Dataset, MetricsReport, Model};
use serde::{Deserialize, Serialize};

use crate::config::{ArchKind, DatasetKind, RunConfig};
use crate::error::{CliError, Result};
use crate::report::ReportRow;

/// Train/test splits plus the architecture they imply.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub arch: Architecture,
    pub normalization: Option<Normalization>,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let path = || d.path.clone().unwrap_or_default();
    let full = match d.name {
        DatasetKind::Blobs => make_blobs(d.classes, d.per_class, d.dim, d.spread, cfg.seed)?,
        DatasetKind::Mnist => load_mnist(path())?,
        DatasetKind::Cifar10 => load_cifar10(path())?,
    };
    Ok(match d.subset {
        Some(n) => full.random_subset(n, cfg.seed)?,
        None => full,
    })
}

/// Loads, subsets, splits and normalizes (train statistics only).
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let full = load_dataset(cfg)?;
    let (mut train, mut test) = full.split(cfg.dataset.split_ratio, cfg.seed)?;
    let mut normalization = None;
    if cfg.dataset.normalize {
        let norm = train.fit_normalization();
        train = train.normalized(&norm)?;
        test = test.normalized(&norm)?;
        normalization = Some(norm);
    }
    if cfg.train.batch_size > train.len() {
        return Err(CliError::config(
            "train.batch_size",
            format!("{} exceeds the train split of {} samples", cfg.train.batch_size, train.len()),
        ));
    }
    let shape = train.sample_shape().to_vec();
    let classes = train.num_classes();
    let arch = match cfg.model.arch {
        ArchKind::Mlp => Architecture::Mlp {
            input_dim: shape.iter().product(),
            hidden: cfg.model.hidden.clone(),
            num_classes: classes,
        },
        ArchKind::Cnn => match shape[..] {
            [c, h, w] => Architecture::SmallCnn {
                in_channels: c,
                height: h,
                width: w,
                num_classes: classes,
            },
            _ => return Err(CliError::config("model.arch", format!("cnn needs [C×H×W] samples, got {shape:?}"))),
        },
    };
    Ok(Prepared {
        train,
        test,
        arch,
        normalization,
    })
}

/// Trains the configured strategy.
pub fn train_bundle(cfg: &RunConfig, p: &Prepared) -> Result<EnsembleBundle> {
    let budget = cfg.budget();
    let optim = cfg.optim_settings();
    Ok(match cfg.strategy {
        Strategy::Single => run_single(&p.arch, &p.train, &budget, &optim, cfg.seed)?,
        Strategy::Standard => run_standard_ensemble(&p.arch, &p.train, &budget, &optim, cfg.seed)?,
        Strategy::Noisy => run_noisy_deep_ensemble(&p.arch, &p.train, &budget, &optim, &cfg.noise_spec()?, cfg.seed)?,
        Strategy::Snapshot => run_snapshot_ensemble(
            &p.arch,
            &p.train,
            cfg.snapshot_epochs(),
            cfg.train.members,
            cfg.train.batch_size,
            &optim,
            cfg.seed,
        )?,
    })
}

/// Trained parent shared by several noisy runs.
#[derive(Debug, Clone)]
pub struct SharedParent {
    pub model: Model,
    pub trace: TrainTrace,
}

pub fn shared_parent(cfg: &RunConfig, p: &Prepared) -> Result<SharedParent> {
    let (model, trace) = train_parent(&p.arch, &p.train, &cfg.budget(), &cfg.optim_settings(), cfg.seed)?;
    Ok(SharedParent { model, trace })
}

/// Noisy run that reuses an already trained parent; identical to training it afresh.
pub fn noisy_from_parent(cfg: &RunConfig, p: &Prepared, parent: &SharedParent) -> Result<EnsembleBundle> {
    Ok(noisy_bundle_from_parent(
        parent.model.clone(),
        parent.trace.clone(),
        &p.train,
        &cfg.budget(),
        &cfg.optim_settings(),
        &cfg.noise_spec()?,
        cfg.seed,
    )?)
}

/// `report.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub members: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub metrics: MetricsReport,
    pub wall_clock_s: f64,
    pub config_hash: String,
}

impl RunReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            strategy: self.strategy.to_string(),
            seed: self.seed,
            m: self.members,
            alpha: self.alpha,
            beta: self.beta,
            accuracy: self.metrics.accuracy,
            ece: self.metrics.ece,
            nll: self.metrics.nll,
            mean_disagreement: self.metrics.mean_disagreement,
            mean_kl: self.metrics.mean_kl,
            budget_ratio: self.metrics.budget_ratio,
            wall_clock_s: self.wall_clock_s,
            config_hash: self.config_hash.clone(),
        }
    }
}

pub fn score(cfg: &RunConfig, p: &Prepared, bundle: &EnsembleBundle) -> Result<RunReport> {
    let metrics = bundle.evaluate(&p.test, cfg.metrics.ece_bins)?;
    let (alpha, beta) = match (cfg.strategy, cfg.noise_spec()) {
        (Strategy::Noisy, Ok(spec)) => (Some(spec.alpha), Some(spec.beta)),
        _ => (None, None),
    };
    Ok(RunReport {
        strategy: bundle.strategy,
        seed: cfg.seed,
        members: bundle.len(),
        alpha,
        beta,
        metrics,
        wall_clock_s: bundle.total_wall_clock_s(),
        config_hash: cfg.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub train_size: usize,
    pub test_size: usize,
    pub num_classes: usize,
    pub sample_shape: Vec<usize>,
    /// Seed that determined subset and split.
    pub split_seed: u64,
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub base: u64,
    pub noise: Option<u64>,
    pub members: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    #[serde(flatten)]
    pub ledger: EpochLedger,
    pub total: usize,
    pub ratio_to_standard: f64,
}

/// `manifest.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub strategy: Strategy,
    pub architecture: Architecture,
    pub param_count: usize,
    pub data: DataSummary,
    pub seeds: Seeds,
    pub ledger: LedgerSummary,
    pub checkpoint_epochs: Vec<usize>,
    pub wall_clock: Vec<PhaseTime>,
    pub parent_checkpoint: Option<String>,
    pub member_checkpoints: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn manifest(cfg: &RunConfig, p: &Prepared, bundle: &EnsembleBundle) -> Result<Manifest> {
    let warnings = match cfg.strategy {
        Strategy::Noisy => cfg.budget().validate()?,
        _ => Vec::new(),
    };
    Ok(Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        strategy: bundle.strategy,
        architecture: p.arch.clone(),
        param_count: p.arch.param_count(),
        data: DataSummary {
            train_size: p.train.len(),
            test_size: p.test.len(),
            num_classes: p.train.num_classes(),
            sample_shape: p.train.sample_shape().to_vec(),
            split_seed: cfg.seed,
            normalization: p.normalization.clone(),
        },
        seeds: Seeds {
            base: cfg.seed,
            noise: cfg.noise_spec().ok().filter(|_| cfg.strategy == Strategy::Noisy).map(|s| s.seed),
            members: bundle.member_seeds.clone(),
        },
        ledger: LedgerSummary {
            total: bundle.ledger.total(),
            ratio_to_standard: bundle.ledger.ratio_to_standard(),
            ledger: bundle.ledger.clone(),
        },
        checkpoint_epochs: bundle.checkpoint_epochs.clone(),
        wall_clock: bundle.wall_clock.clone(),
        parent_checkpoint: None,
        member_checkpoints: Vec::new(),
        warnings,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn member_checkpoint_name(i: usize) -> String {
    format!("members/member_{i:02}.ckpt")
}

/// Writes manifest, reports and (optionally) checkpoints into `dir`; returns
/// the manifest as written.
pub fn write_run_dir(
    dir: &Path,
    mut manifest: Manifest,
    report: &RunReport,
    bundle: &EnsembleBundle,
    checkpoints: bool,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    if checkpoints {
        let members_dir = dir.join("members");
        fs::create_dir_all(&members_dir).map_err(|e| CliError::io(format!("creating {}", members_dir.display()), e))?;
        for (i, m) in bundle.members.iter().enumerate() {
            let name = member_checkpoint_name(i);
            m.save(dir.join(&name))?;
            manifest.member_checkpoints.push(name);
        }
        if let Some(parent) = &bundle.parent {
            parent.save(dir.join("parent.ckpt"))?;
            manifest.parent_checkpoint = Some("parent.ckpt".into());
        }
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("report.json"), report)?;
    crate::report::write_rows(&dir.join("report.csv"), &[report.row()])?;
    Ok(manifest)
}

/// Everything `run` produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: RunReport,
    pub manifest: Manifest,
    pub bundle: EnsembleBundle,
}

/// `nde run`: train, score and write `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let bundle = train_bundle(cfg, &prepared)?;
    let report = score(cfg, &prepared, &bundle)?;
    let manifest = write_run_dir(&cfg.out, manifest(cfg, &prepared, &bundle)?, &report, &bundle, true)?;
    Ok(RunOutcome {
        dir: cfg.out.clone(),
        report,
        manifest,
        bundle,
    })
}
