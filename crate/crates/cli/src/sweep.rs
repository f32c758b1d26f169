//! Grid drivers: noise (α, β) cells over one shared parent, and ensemble size
//! scaling over repeated seeds.

use std::path::Path;

use noisy_ensemble::pipeline::{EnsembleBundle, Strategy};
use serde::{Deserialize, Serialize};

use crate::config::{NoiseConfig, RunConfig};
use crate::error::{CliError, Result};
use crate::report::{mean_std, write_rows, ReportRow};
use crate::run::{manifest, noisy_from_parent, prepare, score, shared_parent, train_bundle, write_run_dir, Prepared};

fn cell_name(alpha: f64, beta: f64) -> String {
    format!("alpha_{alpha}_beta_{beta}")
}

fn record(cfg: &RunConfig, p: &Prepared, bundle: &EnsembleBundle, dir: &Path) -> Result<ReportRow> {
    let report = score(cfg, p, bundle)?;
    write_run_dir(dir, manifest(cfg, p, bundle)?, &report, bundle, false)?;
    Ok(report.row())
}

/// `nde sweep-noise`: one noisy run per (α, β) cell, all sharing the base seed
/// and therefore the same parent, which is trained once.
pub fn sweep_noise(cfg: &RunConfig, alphas: &[f64], betas: &[f64]) -> Result<Vec<ReportRow>> {
    if alphas.is_empty() {
        return Err(CliError::config("alphas", "need at least one value"));
    }
    if betas.is_empty() {
        return Err(CliError::config("betas", "need at least one value"));
    }
    let mut base = cfg.clone();
    base.strategy = Strategy::Noisy;
    let dist = base.noise.as_ref().and_then(|n| n.dist);
    let seed = base.noise.as_ref().and_then(|n| n.seed);
    let cell_cfg = |alpha: f64, beta: f64| -> Result<RunConfig> {
        let mut c = base.clone();
        c.noise = Some(NoiseConfig {
            dist,
            alpha: Some(alpha),
            beta: Some(beta),
            seed,
        });
        c.out = base.out.join(cell_name(alpha, beta));
        c.validate()?;
        Ok(c)
    };
    // Validate every cell before spending time on the parent.
    for &a in alphas {
        for &b in betas {
            cell_cfg(a, b)?;
        }
    }
    let prepared = prepare(&base)?;
    let parent = shared_parent(&base, &prepared)?;
    let mut rows = Vec::new();
    for &a in alphas {
        for &b in betas {
            let c = cell_cfg(a, b)?;
            let bundle = noisy_from_parent(&c, &prepared, &parent)?;
            rows.push(record(&c, &prepared, &bundle, &c.out)?);
        }
    }
    write_rows(&base.out.join("sweep_noise.csv"), &rows)?;
    Ok(rows)
}

/// Aggregate over repeats for one ensemble size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembersRow {
    pub strategy: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub repeats: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_ece: f64,
    pub mean_nll: f64,
    pub mean_disagreement: f64,
    pub mean_kl: f64,
    pub budget_ratio: f64,
    pub config_hash: String,
}

/// Seed of repeat `r`.
pub fn repeat_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}

/// `nde sweep-members`: for each `M`, `repeats` runs with seeds `seed, seed+1, …`.
///
/// Noisy and standard members are independent of `M`, so each repeat trains
/// `max(Ms)` members once and scores every prefix.
pub fn sweep_members(cfg: &RunConfig, ms: &[usize], repeats: usize) -> Result<(Vec<MembersRow>, Vec<ReportRow>)> {
    if ms.is_empty() || ms.contains(&0) {
        return Err(CliError::config("members", "need a nonempty list of positive sizes"));
    }
    if repeats == 0 {
        return Err(CliError::config("repeats", "must be at least 1"));
    }
    let max_m = *ms.iter().max().expect("nonempty");
    let with = |m: usize, seed: u64| -> Result<RunConfig> {
        let mut c = cfg.clone();
        c.train.members = m;
        c.seed = seed;
        c.out = cfg.out.join(format!("M_{m}")).join(format!("seed_{seed}"));
        c.validate()?;
        Ok(c)
    };
    for &m in ms {
        with(m, cfg.seed)?;
    }
    let mut runs = Vec::new();
    for r in 0..repeats {
        let seed = repeat_seed(cfg.seed, r);
        let big = with(max_m, seed)?;
        let prepared = prepare(&big)?;
        let shared = match cfg.strategy {
            Strategy::Noisy | Strategy::Standard | Strategy::Single => Some(train_bundle(&big, &prepared)?),
            Strategy::Snapshot => None,
        };
        for &m in ms {
            let c = with(m, seed)?;
            let bundle = match (&shared, cfg.strategy) {
                (Some(b), Strategy::Single) => b.clone(),
                (Some(b), _) => b.truncated(m)?,
                (None, _) => train_bundle(&c, &prepared)?,
            };
            runs.push((m, record(&c, &prepared, &bundle, &c.out)?));
        }
    }
    let mut rows = Vec::new();
    for &m in ms {
        let of_m: Vec<&ReportRow> = runs.iter().filter(|(k, _)| *k == m).map(|(_, r)| r).collect();
        let pick = |f: fn(&ReportRow) -> f64| of_m.iter().map(|r| f(r)).collect::<Vec<_>>();
        let (mean_accuracy, std_accuracy) = mean_std(&pick(|r| r.accuracy));
        let mean = |f: fn(&ReportRow) -> f64| mean_std(&pick(f)).0;
        rows.push(MembersRow {
            strategy: cfg.strategy.to_string(),
            m,
            repeats,
            mean_accuracy,
            std_accuracy,
            mean_ece: mean(|r| r.ece),
            mean_nll: mean(|r| r.nll),
            mean_disagreement: mean(|r| r.mean_disagreement),
            mean_kl: mean(|r| r.mean_kl),
            budget_ratio: mean(|r| r.budget_ratio),
            config_hash: with(m, cfg.seed)?.hash(),
        });
    }
    write_rows(&cfg.out.join("sweep_members.csv"), &rows)?;
    let runs: Vec<ReportRow> = runs.into_iter().map(|(_, r)| r).collect();
    write_rows(&cfg.out.join("runs.csv"), &runs)?;
    Ok((rows, runs))
}
