//! Noisy deep ensembles: train one parent network, spawn perturbed children,
//! retrain each briefly and average their predictions. Baselines (single
//! model, standard ensemble, snapshot ensemble) and ensemble metrics are
//! included.

pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod perturbation;
pub mod pipeline;
pub mod seed;
pub mod tensor;

pub use data::{Dataset, SplitLoader};
pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use metrics::MetricsReport;
pub use models::{build_mlp, build_small_cnn, build_small_cnn_for, Architecture, Model, ParamVector};
pub use optim::{CosineSchedule, CyclicCosineSchedule, LrSchedule, Sgd, SgdConfig};
pub use perturbation::{perturb, MaskVector, NoiseDistribution, NoiseSpec};
pub use pipeline::{
    ensemble_predict, epoch_budget_ratio, run_noisy_deep_ensemble, run_single, run_snapshot_ensemble,
    run_standard_ensemble, EnsembleBundle, OptimSettings, Strategy, TrainBudget,
};
pub use tensor::Tensor;
