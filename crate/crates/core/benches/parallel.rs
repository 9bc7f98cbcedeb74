use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oodseg::dispersion::{heatmap_with, DispersionKind};
use oodseg::meta::{loo_cross_validate_with, MetaDataset};
use oodseg::par::Execution;
use oodseg::tensor::{FeatureMap, SoftmaxMap};
use oodseg::toy::baselines::raw_scores;
use oodseg::toy::{Baseline, ToyModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn softmax(h: usize, w: usize, q: usize, rng: &mut ChaCha8Rng) -> SoftmaxMap {
    let mut v = Vec::with_capacity(h * w * q);
    for _ in 0..h * w {
        let raw: Vec<f32> = (0..q).map(|_| rng.random::<f32>() + 1e-3).collect();
        let s: f32 = raw.iter().sum();
        v.extend(raw.iter().map(|x| x / s));
    }
    SoftmaxMap::new(h, w, q, v).unwrap()
}

fn heatmaps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = softmax(256, 512, 19, &mut rng);
    let mut g = c.benchmark_group("entropy_heatmap_256x512x19");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| heatmap_with(&s, DispersionKind::Entropy, exec))
        });
    }
    g.finish();
}

fn loo(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, d) = (150, 20);
    let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| (0..d).map(|j| rng.random::<f64>() + if l && j < 4 { 0.6 } else { 0.0 }).collect())
        .collect();
    let names = (0..d).map(|j| format!("x{j}")).collect();
    let data = MetaDataset::new(names, rows, labels).unwrap();
    let mut g = c.benchmark_group("loo_150x20");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| loo_cross_validate_with(&data, 1e-3, 0, exec).unwrap())
        });
    }
    g.finish();
}

fn mc_dropout(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = ToyModel::new(8, &[64, 64], 5, 0.1, true, &mut rng).unwrap();
    let (h, w) = (64, 64);
    let f = FeatureMap::new(h, w, 8, (0..h * w * 8).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let method = Baseline::McDropout { samples: 8, seed: 0 };
    let mut g = c.benchmark_group("mc_dropout_64x64_8_samples");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| raw_scores(&model, &f, &method, None, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, heatmaps, loo, mc_dropout);
criterion_main!(benches);
