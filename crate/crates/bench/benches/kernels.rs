use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use noisy_ensemble::metrics::{ece, mean_pairwise_kl};
use noisy_ensemble::models::{ParamVector, Segment};
use noisy_ensemble::tensor::{gemm, Layout};
use noisy_ensemble::{perturb, Graph, NoiseDistribution, NoiseSpec, Tensor};

/// Deterministic filler in [-1, 1).
fn filler(n: usize, salt: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 7919 + salt * 104_729) % 2000) as f64 / 1000.0 - 1.0).collect()
}

fn probs(rows: usize, classes: usize, salt: usize) -> Tensor {
    let logits = Tensor::new([rows, classes], filler(rows * classes, salt)).unwrap();
    let mut g = Graph::new();
    let x = g.input(logits);
    let p = g.softmax(x).unwrap();
    g.value(p).clone()
}

fn bench_gemm(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm");
    for n in [64, 256] {
        let (a, b) = (filler(n * n, 1), filler(n * n, 2));
        let mut out = vec![0.0; n * n];
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, &n| {
            bench.iter(|| gemm(n, n, n, 1.0, &a, Layout::Normal, &b, Layout::Transposed, 0.0, black_box(&mut out)))
        });
    }
    group.finish();
}

fn bench_conv(c: &mut Criterion) {
    let x = Tensor::new([8, 3, 32, 32], filler(8 * 3 * 32 * 32, 3)).unwrap();
    let w = Tensor::new([16, 3, 3, 3], filler(16 * 27, 4)).unwrap();
    c.bench_function("conv2d forward+backward 8x3x32x32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let wi = g.param(w.clone());
            let y = g.conv2d(xi, wi, 1, 1).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap();
            black_box(g.grad(wi).map(|v| v[0]))
        })
    });
}

fn bench_perturb(c: &mut Criterion) {
    let d = 1_000_000;
    let theta = ParamVector {
        values: filler(d, 5),
        layout: vec![Segment {
            name: "flat".into(),
            offset: 0,
            len: d,
        }],
    };
    let spec = NoiseSpec::new(NoiseDistribution::Uniform, 0.8, 0.1, 9).unwrap();
    c.bench_function("perturb 1e6 params", |bench| bench.iter(|| perturb(black_box(&theta), &spec).unwrap()));
}

fn bench_metrics(c: &mut Criterion) {
    let members: Vec<Tensor> = (0..5).map(|k| probs(1000, 10, k)).collect();
    let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
    c.bench_function("pairwise kl 5x1000x10", |bench| bench.iter(|| mean_pairwise_kl(black_box(&members)).unwrap()));
    c.bench_function("ece 1000x10", |bench| bench.iter(|| ece(black_box(&members[0]), &labels, 15).unwrap()));
}

criterion_group!(benches, bench_gemm, bench_conv, bench_perturb, bench_metrics);
criterion_main!(benches);
