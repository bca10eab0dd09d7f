use aircomp_gpr::gp::PreparedData;
use aircomp_gpr::poe::{partition_dataset, PartitionStrategy};
use aircomp_gpr::{Hyperparams, LocalDataset};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(n: usize) -> LocalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let x = (0..n)
        .map(|_| vec![rng.random_range(1.0..1000.0)])
        .collect();
    let y = (0..n).map(|_| rng.random_range(-90.0..-50.0)).collect();
    LocalDataset::with_sample_mean_prior(x, y).unwrap()
}

fn full_likelihood(c: &mut Criterion) {
    let theta = Hyperparams::new(64.0, 100.0, 1.0).unwrap();
    let mut group = c.benchmark_group("full_likelihood");
    for n in [64, 128, 256, 512] {
        let data = PreparedData::new(&dataset(n));
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, d| {
            b.iter(|| d.log_marginal_likelihood(black_box(&theta)).unwrap())
        });
    }
    group.finish();
}

/// Slowest node of a 512-point problem split across M nodes.
fn node_likelihood(c: &mut Criterion) {
    let theta = Hyperparams::new(64.0, 100.0, 1.0).unwrap();
    let full = dataset(512);
    let mut group = c.benchmark_group("node_likelihood_n512");
    for m in [1, 4, 16] {
        let pool = partition_dataset(&full, m, PartitionStrategy::Random, 0).unwrap();
        let largest = pool.experts().iter().max_by_key(|e| e.len()).unwrap();
        let data = PreparedData::new(largest);
        group.bench_with_input(BenchmarkId::from_parameter(m), &data, |b, d| {
            b.iter(|| d.log_marginal_likelihood(black_box(&theta)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, full_likelihood, node_likelihood);
criterion_main!(benches);
