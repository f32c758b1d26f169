//! Training strategies: single model, standard ensemble, noisy deep ensemble
//! (parent → perturbed children) and snapshot ensemble.
//!
//! Every model trained here owns its optimizer state and its shuffle stream,
//! so children and standard-ensemble members can train in parallel without
//! changing any result.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{self, MetricsReport};
use crate::models::{Architecture, Model};
use crate::optim::{CosineSchedule, CyclicCosineSchedule, LrSchedule, Sgd, SgdConfig};
use crate::perturbation::{perturb, NoiseSpec};
use crate::seed;
use crate::tensor::Tensor;

/// Epoch budgets and batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainBudget {
    pub parent_epochs: usize,
    pub child_epochs: usize,
    pub batch_size: usize,
    pub ensemble_size: usize,
}

impl Default for TrainBudget {
    fn default() -> Self {
        Self {
            parent_epochs: 200,
            child_epochs: 50,
            batch_size: 64,
            ensemble_size: 10,
        }
    }
}

impl TrainBudget {
    /// Errors on non-positive fields; returns advisory warnings otherwise.
    pub fn validate(&self) -> Result<Vec<String>> {
        for (name, v) in [
            ("parent_epochs", self.parent_epochs),
            ("child_epochs", self.child_epochs),
            ("batch_size", self.batch_size),
            ("ensemble_size", self.ensemble_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("budget field {name} must be positive")));
            }
        }
        let mut warnings = Vec::new();
        if self.child_epochs > self.parent_epochs {
            warnings.push(format!(
                "child_epochs ({}) exceeds parent_epochs ({}); no training-time saving",
                self.child_epochs, self.parent_epochs
            ));
        }
        Ok(warnings)
    }
}

/// Optimizer recipe shared by every training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimSettings {
    pub sgd: SgdConfig,
    pub lr_max: f64,
    pub lr_min: f64,
}

impl Default for OptimSettings {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::default(),
            lr_max: 0.1,
            lr_min: 0.0,
        }
    }
}

impl OptimSettings {
    fn cosine(&self, epochs: usize) -> Result<CosineSchedule> {
        CosineSchedule::new(self.lr_max, self.lr_min, epochs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    /// Running training accuracy over the epoch's batches.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
    pub wall_clock_s: f64,
}

impl TrainTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Runs one epoch of shuffled mini-batch SGD at a fixed learning rate.
pub fn train_epoch(
    model: &mut Model,
    opt: &mut Sgd,
    data: &Dataset,
    batch_size: usize,
    lr: f64,
    shuffle_seed: u64,
    epoch: usize,
) -> Result<EpochStats> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;
    let c = model.num_classes();
    for batch in data.batches(batch_size, shuffle_seed, epoch)? {
        let b = batch.labels.len();
        let mut g = Graph::new();
        let x = g.input(batch.inputs);
        let fwd = model.forward(&mut g, x)?;
        let loss = g.cross_entropy(fwd.logits, &batch.labels)?;
        loss_sum += g.value(loss).data()[0] * b as f64;
        correct += g
            .value(fwd.logits)
            .data()
            .chunks(c)
            .zip(&batch.labels)
            .filter(|(row, &y)| metrics::argmax(row) == y)
            .count();
        seen += b;
        g.backward(loss)?;
        let grads = fwd
            .params
            .iter()
            .map(|&p| {
                g.take_grad(p)
                    .ok_or_else(|| Error::Usage("parameter received no gradient".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        opt.step(model, &grads, lr)?;
    }
    Ok(EpochStats {
        epoch,
        lr,
        loss: loss_sum / seen as f64,
        accuracy: correct as f64 / seen as f64,
    })
}

/// Trains `model` for `epochs` epochs; epoch `e` uses `schedule.lr_at(e)`.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    epochs: usize,
    schedule: &dyn LrSchedule,
    sgd: SgdConfig,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<TrainTrace> {
    if data.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    if epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::Input(format!(
            "dataset has {} classes, model predicts {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let start = Instant::now();
    let mut opt = Sgd::new(sgd, model)?;
    let mut trace = TrainTrace::default();
    for epoch in 0..epochs {
        let lr = schedule.lr_at(epoch)?;
        trace
            .epochs
            .push(train_epoch(model, &mut opt, data, batch_size, lr, shuffle_seed, epoch)?);
    }
    trace.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Single,
    Standard,
    Noisy,
    Snapshot,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "standard" => Ok(Self::Standard),
            "noisy" => Ok(Self::Noisy),
            "snapshot" => Ok(Self::Snapshot),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (single, standard, noisy, snapshot)"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Standard => "standard",
            Self::Noisy => "noisy",
            Self::Snapshot => "snapshot",
        })
    }
}

/// Epochs consumed by a strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochLedger {
    /// Epochs of a trajectory shared by all members (noisy parent, snapshot run).
    pub shared_epochs: usize,
    /// Epochs spent on each member alone.
    pub member_epochs: Vec<usize>,
    /// Epochs of one fully trained single model, the unit of comparison.
    pub single_model_epochs: usize,
}

impl EpochLedger {
    pub fn total(&self) -> usize {
        self.shared_epochs + self.member_epochs.iter().sum::<usize>()
    }

    /// Consumed epochs relative to training every member from scratch.
    pub fn ratio_to_standard(&self) -> f64 {
        let m = self.member_epochs.len().max(1);
        self.total() as f64 / (m * self.single_model_epochs) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub phase: String,
    pub seconds: f64,
}

/// Trained ensemble members plus provenance.
#[derive(Debug, Clone)]
pub struct EnsembleBundle {
    pub strategy: Strategy,
    pub members: Vec<Model>,
    pub member_seeds: Vec<u64>,
    /// Trained parent of a noisy ensemble.
    pub parent: Option<Model>,
    pub parent_trace: Option<TrainTrace>,
    pub member_traces: Vec<TrainTrace>,
    pub ledger: EpochLedger,
    /// Epochs after which snapshot members were captured.
    pub checkpoint_epochs: Vec<usize>,
    /// Learning rate at each snapshot capture point.
    pub checkpoint_lrs: Vec<f64>,
    pub wall_clock: Vec<PhaseTime>,
}

impl EnsembleBundle {
    pub fn architecture(&self) -> &Architecture {
        self.members[0].architecture()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn total_wall_clock_s(&self) -> f64 {
        self.wall_clock.iter().map(|p| p.seconds).sum()
    }

    /// The bundle a run with only the first `m` members would have produced.
    ///
    /// Valid for noisy and standard ensembles, whose members depend only on
    /// their own index. Member-phase wall clock is pro-rated.
    pub fn truncated(&self, m: usize) -> Result<EnsembleBundle> {
        if self.strategy == Strategy::Snapshot {
            return Err(Error::Usage("snapshot members depend on the cycle count; retrain instead".into()));
        }
        if m == 0 || m > self.len() {
            return Err(Error::Usage(format!("cannot keep {m} of {} members", self.len())));
        }
        let share = m as f64 / self.len() as f64;
        let mut out = self.clone();
        out.members.truncate(m);
        out.member_seeds.truncate(m);
        out.member_traces.truncate(m);
        out.ledger.member_epochs.truncate(m);
        for phase in &mut out.wall_clock {
            if phase.phase != "parent" {
                phase.seconds *= share;
            }
        }
        if out.strategy == Strategy::Standard && m == 1 {
            out.strategy = Strategy::Single;
        }
        Ok(out)
    }

    /// Per-member class probabilities.
    pub fn member_probs(&self, inputs: &Tensor) -> Result<Vec<Tensor>> {
        self.members.iter().map(|m| m.predict_proba(inputs)).collect()
    }

    /// Scores the bundle on a test split.
    pub fn evaluate(&self, test: &Dataset, ece_bins: usize) -> Result<MetricsReport> {
        let probs = self.member_probs(test.inputs())?;
        MetricsReport::from_member_probs(&probs, test.labels(), ece_bins, self.ledger.ratio_to_standard())
    }
}

/// Uniform average of member probabilities `P_ens = (1/M) Σ f_θ(j)(x)`.
pub fn ensemble_predict(bundle: &EnsembleBundle, inputs: &Tensor) -> Result<Tensor> {
    if bundle.is_empty() {
        return Err(Error::Input("empty ensemble".into()));
    }
    metrics::average_probs(&bundle.member_probs(inputs)?)
}

/// `(parent_epochs + M·child_epochs) / (M·parent_epochs)`.
pub fn epoch_budget_ratio(budget: &TrainBudget) -> f64 {
    let m = budget.ensemble_size as f64;
    (budget.parent_epochs as f64 + m * budget.child_epochs as f64) / (m * budget.parent_epochs as f64)
}

/// Seed for the `i`-th from-scratch model (init and shuffling).
pub fn member_seed(base_seed: u64, i: usize) -> u64 {
    seed::derive(base_seed, seed::stream::MEMBER, i as u64)
}

fn check_data(arch: &Architecture, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Input("training dataset is empty".into()));
    }
    if data.num_classes() != arch.num_classes() {
        return Err(Error::Input(format!(
            "dataset has {} classes, architecture predicts {}",
            data.num_classes(),
            arch.num_classes()
        )));
    }
    Ok(())
}

fn train_from_scratch(
    arch: &Architecture,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    optim: &OptimSettings,
    seed: u64,
) -> Result<(Model, TrainTrace)> {
    let mut model = Model::new(arch.clone(), seed)?;
    let schedule = optim.cosine(epochs)?;
    let trace = train(&mut model, data, epochs, &schedule, optim.sgd, batch_size, seed)?;
    Ok((model, trace))
}

/// Trains the parent with a full cosine schedule over `parent_epochs`.
pub fn train_parent(
    arch: &Architecture,
    data: &Dataset,
    budget: &TrainBudget,
    optim: &OptimSettings,
    base_seed: u64,
) -> Result<(Model, TrainTrace)> {
    budget.validate()?;
    check_data(arch, data)?;
    train_from_scratch(arch, data, budget.parent_epochs, budget.batch_size, optim, member_seed(base_seed, 0))
}

/// One retrained child.
#[derive(Debug, Clone)]
pub struct Child {
    pub model: Model,
    pub trace: TrainTrace,
    pub seed: u64,
}

/// Perturbs the parent once per child and retrains each with a fresh cosine schedule.
///
/// Child `i` draws its noise and mask from `child_seed(noise.seed, i)` and its
/// batch order from `child_seed(base_seed, i)`.
pub fn spawn_children(
    parent: &Model,
    data: &Dataset,
    budget: &TrainBudget,
    optim: &OptimSettings,
    noise: &NoiseSpec,
    base_seed: u64,
) -> Result<Vec<Child>> {
    budget.validate()?;
    noise.validate()?;
    check_data(parent.architecture(), data)?;
    let theta = parent.flatten();
    let schedule = optim.cosine(budget.child_epochs)?;
    (0..budget.ensemble_size)
        .into_par_iter()
        .map(|i| {
            let spec = noise.with_seed(seed::child_seed(noise.seed, i));
            let mut model = parent.clone();
            model.unflatten(&perturb(&theta, &spec)?)?;
            let shuffle = seed::child_seed(base_seed, i);
            let trace = train(
                &mut model,
                data,
                budget.child_epochs,
                &schedule,
                optim.sgd,
                budget.batch_size,
                shuffle,
            )?;
            Ok(Child {
                model,
                trace,
                seed: shuffle,
            })
        })
        .collect()
}

/// Assembles a noisy-ensemble bundle from an already trained parent.
pub fn noisy_bundle_from_parent(
    parent: Model,
    parent_trace: TrainTrace,
    data: &Dataset,
    budget: &TrainBudget,
    optim: &OptimSettings,
    noise: &NoiseSpec,
    base_seed: u64,
) -> Result<EnsembleBundle> {
    let start = Instant::now();
    let children = spawn_children(&parent, data, budget, optim, noise, base_seed)?;
    let children_s = start.elapsed().as_secs_f64();
    let parent_s = parent_trace.wall_clock_s;
    let (members, (member_traces, member_seeds)): (Vec<_>, (Vec<_>, Vec<_>)) = children
        .into_iter()
        .map(|c| (c.model, (c.trace, c.seed)))
        .unzip();
    Ok(EnsembleBundle {
        strategy: Strategy::Noisy,
        members,
        member_seeds,
        parent: Some(parent),
        parent_trace: Some(parent_trace),
        member_traces,
        ledger: EpochLedger {
            shared_epochs: budget.parent_epochs,
            member_epochs: vec![budget.child_epochs; budget.ensemble_size],
            single_model_epochs: budget.parent_epochs,
        },
        checkpoint_epochs: Vec::new(),
        checkpoint_lrs: Vec::new(),
        wall_clock: vec![
            PhaseTime {
                phase: "parent".into(),
                seconds: parent_s,
            },
            PhaseTime {
                phase: "children".into(),
                seconds: children_s,
            },
        ],
    })
}

/// Parent for `parent_epochs`, then `M` perturbed children for `child_epochs` each.
pub fn run_noisy_deep_ensemble(
    arch: &Architecture,
    data: &Dataset,
    budget: &TrainBudget,
    optim: &OptimSettings,
    noise: &NoiseSpec,
    base_seed: u64,
) -> Result<EnsembleBundle> {
    let (parent, trace) = train_parent(arch, data, budget, optim, base_seed)?;
    noisy_bundle_from_parent(parent, trace, data, budget, optim, noise, base_seed)
}

/// `M` independently initialized models, each trained `parent_epochs`.
pub fn run_standard_ensemble(
    arch: &Architecture,
    data: &Dataset,
    budget: &TrainBudget,
    optim: &OptimSettings,
    base_seed: u64,
) -> Result<EnsembleBundle> {
    budget.validate()?;
    check_data(arch, data)?;
    let start = Instant::now();
    let trained = (0..budget.ensemble_size)
        .into_par_iter()
        .map(|i| {
            let s = member_seed(base_seed, i);
            train_from_scratch(arch, data, budget.parent_epochs, budget.batch_size, optim, s)
                .map(|(m, t)| (m, t, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut members = Vec::new();
    let mut member_traces = Vec::new();
    let mut member_seeds = Vec::new();
    for (m, t, s) in trained {
        members.push(m);
        member_traces.push(t);
        member_seeds.push(s);
    }
    let strategy = if budget.ensemble_size == 1 {
        Strategy::Single
    } else {
        Strategy::Standard
    };
    Ok(EnsembleBundle {
        strategy,
        members,
        member_seeds,
        parent: None,
        parent_trace: None,
        member_traces,
        ledger: EpochLedger {
            shared_epochs: 0,
            member_epochs: vec![budget.parent_epochs; budget.ensemble_size],
            single_model_epochs: budget.parent_epochs,
        },
        checkpoint_epochs: Vec::new(),
        checkpoint_lrs: Vec::new(),
        wall_clock: vec![PhaseTime {
            phase: "members".into(),
            seconds: elapsed,
        }],
    })
}

/// One model trained for `parent_epochs`; identical to member 0 of a standard
/// ensemble and to the parent of a noisy ensemble with the same seed.
pub fn run_single(
    arch: &Architecture,
    data: &Dataset,
    budget: &TrainBudget,
    optim: &OptimSettings,
    base_seed: u64,
) -> Result<EnsembleBundle> {
    let single = TrainBudget {
        ensemble_size: 1,
        ..*budget
    };
    run_standard_ensemble(arch, data, &single, optim, base_seed)
}

/// One model under a cyclic cosine schedule of `M` cycles; the model at the
/// end of each cycle becomes a member.
pub fn run_snapshot_ensemble(
    arch: &Architecture,
    data: &Dataset,
    total_epochs: usize,
    members: usize,
    batch_size: usize,
    optim: &OptimSettings,
    base_seed: u64,
) -> Result<EnsembleBundle> {
    if members == 0 || total_epochs == 0 {
        return Err(Error::Config("snapshot ensemble needs positive epochs and members".into()));
    }
    if !total_epochs.is_multiple_of(members) {
        return Err(Error::Config(format!(
            "snapshot total_epochs {total_epochs} not divisible by {members} members"
        )));
    }
    check_data(arch, data)?;
    let start = Instant::now();
    let seed = member_seed(base_seed, 0);
    let cycle_length = total_epochs / members;
    let schedule = CyclicCosineSchedule::new(optim.lr_max, optim.lr_min, cycle_length, members)?;
    let mut model = Model::new(arch.clone(), seed)?;
    let mut opt = Sgd::new(optim.sgd, &model)?;
    let mut trace = TrainTrace::default();
    let mut snapshots = Vec::with_capacity(members);
    let mut checkpoint_epochs = Vec::with_capacity(members);
    let mut checkpoint_lrs = Vec::with_capacity(members);
    for epoch in 0..total_epochs {
        let lr = schedule.lr_at(epoch)?;
        trace
            .epochs
            .push(train_epoch(&mut model, &mut opt, data, batch_size, lr, seed, epoch)?);
        if (epoch + 1) % cycle_length == 0 {
            snapshots.push(model.clone());
            checkpoint_epochs.push(epoch + 1);
            checkpoint_lrs.push(schedule.cycle_end_lr());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    trace.wall_clock_s = elapsed;
    Ok(EnsembleBundle {
        strategy: Strategy::Snapshot,
        member_seeds: vec![seed; members],
        members: snapshots,
        parent: None,
        parent_trace: Some(trace),
        member_traces: Vec::new(),
        ledger: EpochLedger {
            shared_epochs: total_epochs,
            member_epochs: vec![0; members],
            single_model_epochs: total_epochs,
        },
        checkpoint_epochs,
        checkpoint_lrs,
        wall_clock: vec![PhaseTime {
            phase: "snapshot".into(),
            seconds: elapsed,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::optim::ConstantSchedule;
    use crate::perturbation::NoiseDistribution;

    fn blobs() -> Dataset {
        make_blobs(3, 40, 4, 1.0, 2).unwrap()
    }

    fn mlp() -> Architecture {
        Architecture::Mlp {
            input_dim: 4,
            hidden: vec![8],
            num_classes: 3,
        }
    }

    fn small_budget(m: usize) -> TrainBudget {
        TrainBudget {
            parent_epochs: 4,
            child_epochs: 2,
            batch_size: 16,
            ensemble_size: m,
        }
    }

    #[test]
    fn budget_ratio_reference_points() {
        let b = |m| TrainBudget {
            ensemble_size: m,
            ..TrainBudget::default()
        };
        assert!((epoch_budget_ratio(&b(10)) - 0.35).abs() < 1e-15);
        assert!((epoch_budget_ratio(&b(2)) - 0.75).abs() < 1e-15);
        let same = TrainBudget {
            child_epochs: 200,
            ..b(4)
        };
        assert!((epoch_budget_ratio(&same) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn budget_validation() {
        assert!(TrainBudget { batch_size: 0, ..small_budget(2) }.validate().is_err());
        let w = TrainBudget {
            child_epochs: 9,
            ..small_budget(2)
        }
        .validate()
        .unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = blobs();
        let mut m = Model::new(mlp(), 1).unwrap();
        let before = m.flatten();
        let sched = ConstantSchedule { lr: 0.0, total_steps: 3 };
        let trace = train(&mut m, &data, 3, &sched, SgdConfig::default(), 16, 0).unwrap();
        assert_eq!(trace.epochs.len(), 3);
        assert_eq!(m.flatten(), before);
    }

    #[test]
    fn train_rejects_empty_epochs_and_class_mismatch() {
        let data = blobs();
        let mut m = Model::new(mlp(), 1).unwrap();
        let sched = CosineSchedule::with_defaults(1).unwrap();
        assert!(train(&mut m, &data, 0, &sched, SgdConfig::default(), 16, 0).is_err());
        let mut wrong = Model::new(
            Architecture::Mlp {
                input_dim: 4,
                hidden: vec![],
                num_classes: 5,
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            train(&mut wrong, &data, 1, &sched, SgdConfig::default(), 16, 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs();
        let run = || {
            let mut m = Model::new(mlp(), 3).unwrap();
            let s = CosineSchedule::with_defaults(3).unwrap();
            train(&mut m, &data, 3, &s, SgdConfig::default(), 16, 9).unwrap();
            m.flatten().values
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn single_equals_standard_with_one_member_and_noisy_parent() {
        let data = blobs();
        let optim = OptimSettings::default();
        let single = run_single(&mlp(), &data, &small_budget(1), &optim, 5).unwrap();
        let std1 = run_standard_ensemble(&mlp(), &data, &small_budget(1), &optim, 5).unwrap();
        let (parent, _) = train_parent(&mlp(), &data, &small_budget(3), &optim, 5).unwrap();
        assert_eq!(single.members[0].flatten(), std1.members[0].flatten());
        assert_eq!(single.members[0].flatten(), parent.flatten());
        assert_eq!(single.strategy, Strategy::Single);
    }

    #[test]
    fn standard_members_distinct_and_ledger() {
        let data = blobs();
        let b = run_standard_ensemble(&mlp(), &data, &small_budget(3), &OptimSettings::default(), 1).unwrap();
        assert_eq!(b.ledger.total(), 3 * 4);
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(b.members[i].flatten().distance(&b.members[j].flatten()) > 0.0);
            }
        }
    }

    #[test]
    fn noisy_ledger_and_degenerate_noise() {
        let data = blobs();
        let noise = NoiseSpec::new(NoiseDistribution::Uniform, 0.0, 0.0, 4).unwrap();
        let budget = small_budget(3);
        let b = run_noisy_deep_ensemble(&mlp(), &data, &budget, &OptimSettings::default(), &noise, 4).unwrap();
        assert_eq!(b.ledger.total(), 4 + 3 * 2);
        assert!((b.ledger.ratio_to_standard() - epoch_budget_ratio(&budget)).abs() < 1e-15);
        assert_eq!(b.len(), 3);
        // Children start from the parent; only batch order separates them.
        assert_ne!(b.members[0].flatten(), b.members[1].flatten());
    }

    #[test]
    fn noisy_single_member_bundle_matches_child() {
        let data = blobs();
        let noise = NoiseSpec::new(NoiseDistribution::Uniform, 0.5, 0.1, 4).unwrap();
        let b = run_noisy_deep_ensemble(&mlp(), &data, &small_budget(1), &OptimSettings::default(), &noise, 4).unwrap();
        let p = ensemble_predict(&b, data.inputs()).unwrap();
        assert_eq!(p, b.members[0].predict_proba(data.inputs()).unwrap());
    }

    #[test]
    fn truncated_bundle_equals_smaller_run() {
        let data = blobs();
        let optim = OptimSettings::default();
        let noise = NoiseSpec::new(NoiseDistribution::Uniform, 0.8, 0.2, 6).unwrap();
        let big = run_noisy_deep_ensemble(&mlp(), &data, &small_budget(4), &optim, &noise, 6).unwrap();
        let small = run_noisy_deep_ensemble(&mlp(), &data, &small_budget(2), &optim, &noise, 6).unwrap();
        let cut = big.truncated(2).unwrap();
        assert_eq!(cut.ledger, small.ledger);
        assert_eq!(cut.member_seeds, small.member_seeds);
        for (a, b) in cut.members.iter().zip(&small.members) {
            assert_eq!(a.flatten(), b.flatten());
        }
        assert!(big.truncated(5).is_err());
        let std = run_standard_ensemble(&mlp(), &data, &small_budget(2), &optim, 6).unwrap();
        assert_eq!(std.truncated(1).unwrap().strategy, Strategy::Single);
    }

    #[test]
    fn snapshot_checkpoints_at_cycle_ends() {
        let data = blobs();
        let b = run_snapshot_ensemble(&mlp(), &data, 6, 3, 16, &OptimSettings::default(), 2).unwrap();
        assert_eq!(b.checkpoint_epochs, vec![2, 4, 6]);
        assert!(b.checkpoint_lrs.iter().all(|&lr| lr == 0.0));
        assert_eq!(b.ledger.total(), 6);
        assert!(b.members[0].flatten().distance(&b.members[1].flatten()) > 0.0);
        assert!(matches!(
            run_snapshot_ensemble(&mlp(), &data, 7, 3, 16, &OptimSettings::default(), 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn snapshot_with_one_member_is_plain_cosine_training() {
        let data = blobs();
        let optim = OptimSettings::default();
        let snap = run_snapshot_ensemble(&mlp(), &data, 4, 1, 16, &optim, 8).unwrap();
        let single = run_single(&mlp(), &data, &small_budget(1), &optim, 8).unwrap();
        assert_eq!(snap.members[0].flatten(), single.members[0].flatten());
    }
}
