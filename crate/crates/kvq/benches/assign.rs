//! Compares the rayon-parallel batch assignment against the sequential
//! fallback, across codebook and batch sizes.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kvq::codebook::{Codebook, Metric};
use kvq::data::DataSource;

fn bench_assign(c: &mut Criterion) {
    let mut group = c.benchmark_group("assign_batch");
    for &(k, dim, rows) in &[(64usize, 16usize, 256usize), (512, 64, 1024)] {
        let cb = Codebook::init_gaussian(k, dim, 7, Metric::Euclidean).unwrap();
        let src = DataSource::gaussian_mixture(4, dim, 5.0, 11, rows).unwrap();
        let batch = src.batch(0);
        let label = format!("K{k}_d{dim}_n{rows}");
        group.bench_with_input(BenchmarkId::new("parallel", &label), &batch, |b, data| {
            b.iter(|| cb.assign_batch(data).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", &label), &batch, |b, data| {
            b.iter(|| cb.assign_batch_sequential(data).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_assign);
criterion_main!(benches);
