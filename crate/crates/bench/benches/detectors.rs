// SPDX-License-Identifier: MIT OR Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use qcd_bench::reference_streams;
use qcd_core::markov::reference::{chain_p, chain_q};
use qcd_core::mmd::block_mmd;
use qcd_core::theory::calibrate;
use qcd_core::{Algorithm, BlockPair, ChangePoint, DetectorConfig, KernelSpec};

fn bench_block_mmd(c: &mut Criterion) {
    let mut group = c.benchmark_group("block_mmd");
    let spec = KernelSpec::default();
    for m in [10usize, 40, 100] {
        let (xs, ys) = reference_streams(m, ChangePoint::At(1), 11).unwrap();
        let block = BlockPair::from_samples(&xs, &ys).unwrap();
        group.throughput(Throughput::Elements((3 * (m - 1) * (m - 1)) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(m), &block, |b, block| {
            b.iter(|| block_mmd(&spec, black_box(block)))
        });
    }
    group.finish();
}

fn bench_push(c: &mut Criterion) {
    let n = 10_000;
    let (xs, ys) = reference_streams(n, ChangePoint::Never, 5).unwrap();
    let mut group = c.benchmark_group("push");
    group.throughput(Throughput::Elements(n as u64));
    group.sample_size(20);
    for m in [10usize, 40] {
        let config = DetectorConfig::new(m, 0.3, f64::MAX, KernelSpec::default()).unwrap();
        for algorithm in [Algorithm::Oral, Algorithm::Ral] {
            group.bench_function(BenchmarkId::new(algorithm.to_string(), m), |b| {
                b.iter(|| {
                    let mut det = algorithm.build(config).unwrap();
                    for (&x, &y) in xs.iter().zip(&ys) {
                        black_box(det.push(x, y).unwrap());
                    }
                    det.statistic()
                })
            });
        }
    }
    group.finish();
}

fn bench_calibrate(c: &mut Criterion) {
    let (p, q) = (chain_p(), chain_q());
    let config = DetectorConfig::new(10, 0.3, 1.0, KernelSpec::default()).unwrap();
    c.bench_function("calibrate", |b| {
        b.iter(|| calibrate(black_box(&config), &p, &q).unwrap())
    });
}

criterion_group!(benches, bench_block_mmd, bench_push, bench_calibrate);
criterion_main!(benches);
