use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spiked_noise::benchmarks::{ledoit_wolf, stein_isotonized};
use spiked_noise::model::gram;
use spiked_noise::noise::minimize_noise;
use spiked_noise::spiked::estimate_gammas;
use spiked_noise::ure::{evaluate, EstimatorProfile};
use spiked_noise::{decompose, SpikedEstimator};
use spiked_noise_bench::{spiked_draw, spiked_spectrum};

const SIZES: [usize; 3] = [50, 100, 200];

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("decompose");
    for p in SIZES {
        let s = gram(&spiked_draw(2 * p, p, 1));
        group.bench_with_input(BenchmarkId::from_parameter(p), &s, |b, s| b.iter(|| decompose(s, 2 * p).unwrap()));
    }
    group.finish();
}

fn ure(c: &mut Criterion) {
    let mut group = c.benchmark_group("ure");
    for p in SIZES {
        let spec = spiked_spectrum(2 * p, p, 2);
        let profile = EstimatorProfile::sample(spec.eigenvalues());
        group.bench_with_input(BenchmarkId::new("evaluate", p), &spec, |b, spec| b.iter(|| evaluate(spec, &profile).unwrap()));
        group.bench_with_input(BenchmarkId::new("minimize_noise", p), &spec, |b, spec| {
            let gammas = estimate_gammas(spec, 4).unwrap();
            b.iter(|| minimize_noise(spec, &gammas, 4).unwrap())
        });
    }
    group.finish();
}

fn estimators(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimators");
    group.sample_size(10);
    let est = SpikedEstimator::default();
    for p in SIZES {
        let x = spiked_draw(2 * p, p, 3);
        let spec = decompose(&gram(&x), 2 * p).unwrap();
        group.bench_with_input(BenchmarkId::new("select_rank", p), &spec, |b, spec| b.iter(|| est.select_rank(spec)));
        group.bench_with_input(BenchmarkId::new("stein", p), &spec, |b, spec| b.iter(|| stein_isotonized(spec).unwrap()));
        group.bench_with_input(BenchmarkId::new("ledoit_wolf", p), &x, |b, x| b.iter(|| ledoit_wolf(x).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, spectral, ure, estimators);
criterion_main!(benches);
