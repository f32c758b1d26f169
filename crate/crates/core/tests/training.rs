use noisy_ensemble::data::{load_mnist, make_blobs, split_shuffle_batch};
use noisy_ensemble::graph::Graph;
use noisy_ensemble::metrics::{self, average_probs};
use noisy_ensemble::pipeline::{
    ensemble_predict, run_noisy_deep_ensemble, run_standard_ensemble, train, OptimSettings, TrainBudget,
};
use noisy_ensemble::{build_mlp, Architecture, CosineSchedule, NoiseDistribution, NoiseSpec, SgdConfig, Tensor};

fn mlp(input_dim: usize, classes: usize) -> Architecture {
    Architecture::Mlp {
        input_dim,
        hidden: vec![16],
        num_classes: classes,
    }
}

#[test]
fn separable_blobs_reach_high_test_accuracy() {
    let data = make_blobs(2, 200, 2, 0.5, 3).unwrap();
    let loader = split_shuffle_batch(&data, 0.8, 32, 3).unwrap();
    let norm = loader.train.fit_normalization();
    let train_set = loader.train.normalized(&norm).unwrap();
    let test_set = loader.test.normalized(&norm).unwrap();
    let mut model = build_mlp(2, &[16], 2, 1).unwrap();
    let schedule = CosineSchedule::with_defaults(20).unwrap();
    let trace = train(&mut model, &train_set, 20, &schedule, SgdConfig::default(), 32, 1).unwrap();
    assert!(trace.epochs.last().unwrap().accuracy >= 0.99);
    let probs = model.predict_proba(test_set.inputs()).unwrap();
    let acc = metrics::accuracy(&probs, test_set.labels()).unwrap();
    assert!(acc >= 0.99, "test accuracy {acc}");
}

#[test]
fn collapsed_blobs_are_classified_perfectly() {
    let data = make_blobs(3, 30, 4, 0.0, 8).unwrap();
    let mut model = build_mlp(4, &[16], 3, 2).unwrap();
    let schedule = CosineSchedule::new(0.05, 0.0, 30).unwrap();
    train(&mut model, &data, 30, &schedule, SgdConfig::default(), 16, 2).unwrap();
    let probs = model.predict_proba(data.inputs()).unwrap();
    assert_eq!(metrics::accuracy(&probs, data.labels()).unwrap(), 1.0);
}

#[test]
fn nll_matches_cross_entropy_loss() {
    let model = build_mlp(5, &[7], 4, 6).unwrap();
    let x = Tensor::new([6, 5], (0..30).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect()).unwrap();
    let labels = vec![0, 1, 2, 3, 1, 0];
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let fwd = model.forward(&mut g, xi).unwrap();
    let ce = g.cross_entropy(fwd.logits, &labels).unwrap();
    let ce = g.value(ce).data()[0];
    let nll = metrics::nll(&model.predict_proba(&x).unwrap(), &labels).unwrap();
    assert!((ce - nll).abs() < 1e-9, "{ce} vs {nll}");
}

#[test]
fn ensemble_average_examples() {
    let a = Tensor::new([1, 2], vec![1.0, 0.0]).unwrap();
    let b = Tensor::new([1, 2], vec![0.0, 1.0]).unwrap();
    assert_eq!(average_probs(&[a, b]).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn identical_members_predict_like_one() {
    let data = make_blobs(3, 20, 4, 1.0, 1).unwrap();
    let budget = TrainBudget {
        parent_epochs: 2,
        child_epochs: 1,
        batch_size: 16,
        ensemble_size: 1,
    };
    let mut bundle = run_standard_ensemble(&mlp(4, 3), &data, &budget, &OptimSettings::default(), 0).unwrap();
    let single = bundle.members[0].predict_proba(data.inputs()).unwrap();
    bundle.members = vec![bundle.members[0].clone(); 4];
    let p = ensemble_predict(&bundle, data.inputs()).unwrap();
    for (x, y) in p.data().iter().zip(single.data()) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn noisy_bundle_is_order_invariant_and_on_simplex() {
    let data = make_blobs(3, 20, 4, 1.5, 5).unwrap();
    let budget = TrainBudget {
        parent_epochs: 3,
        child_epochs: 1,
        batch_size: 16,
        ensemble_size: 3,
    };
    let noise = NoiseSpec::new(NoiseDistribution::Gaussian, 0.8, 0.05, 5).unwrap();
    let mut bundle = run_noisy_deep_ensemble(&mlp(4, 3), &data, &budget, &OptimSettings::default(), &noise, 5).unwrap();
    assert!(bundle.members.iter().all(|m| m.architecture() == bundle.architecture()));
    let p = ensemble_predict(&bundle, data.inputs()).unwrap();
    for row in p.data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    bundle.members.reverse();
    let q = ensemble_predict(&bundle, data.inputs()).unwrap();
    for (x, y) in p.data().iter().zip(q.data()) {
        assert!((x - y).abs() < 1e-15);
    }
    let wrong = Tensor::zeros([2, 5]);
    assert!(ensemble_predict(&bundle, &wrong).is_err());
}

#[test]
fn full_run_is_bitwise_reproducible() {
    let data = make_blobs(3, 20, 4, 1.5, 5).unwrap();
    let budget = TrainBudget {
        parent_epochs: 3,
        child_epochs: 2,
        batch_size: 8,
        ensemble_size: 3,
    };
    let noise = NoiseSpec::new(NoiseDistribution::Uniform, 0.8, 0.1, 1).unwrap();
    let run = || run_noisy_deep_ensemble(&mlp(4, 3), &data, &budget, &OptimSettings::default(), &noise, 1).unwrap();
    let (a, b) = (run(), run());
    for (x, y) in a.members.iter().zip(&b.members) {
        assert_eq!(x.to_checkpoint_bytes(), y.to_checkpoint_bytes());
    }
}

#[test]
fn bundled_mnist_subset_loads() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-5k");
    let ds = load_mnist(dir).unwrap();
    assert_eq!(ds.len(), 5000);
    assert_eq!(ds.sample_shape(), &[1, 28, 28]);
    assert_eq!(ds.num_classes(), 10);
    let mut counts = [0usize; 10];
    for &y in ds.labels() {
        counts[y] += 1;
    }
    assert!(counts.iter().all(|&c| c == 500));
    assert!(ds.inputs().data().iter().all(|v| (0.0..=1.0).contains(v)));
}
