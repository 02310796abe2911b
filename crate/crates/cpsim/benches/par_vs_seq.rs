//! Batch scenario throughput: the rayon-backed batch runner against the
//! sequential baseline on identical seed batches.
//!
//! Run with `cargo bench -p cpsim`. With `--no-default-features` the
//! parallel path compiles to the sequential one and the two groups
//! coincide.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cpsim::harness::config::{AttackKind, ScenarioConfig, Variant};
use cpsim::harness::trace::TraceMode;
use cpsim::harness::{run_batch, run_batch_sequential, RuntimeAssets};

fn batch_configs(n: usize) -> Vec<ScenarioConfig> {
    (0..n as u64)
        .map(|seed| {
            let mut cfg = ScenarioConfig::default();
            cfg.seed = seed;
            cfg.frames = 40;
            cfg.scene.n_objects = 12;
            cfg.attack.kind = AttackKind::Bac;
            cfg.defense.variant = Variant::None;
            cfg
        })
        .collect()
}

fn bench_batches(c: &mut Criterion) {
    let assets = RuntimeAssets::default();
    let mut group = c.benchmark_group("scenario_batch");
    group.sample_size(10);
    for &n in &[2usize, 4, 8] {
        let cfgs = batch_configs(n);
        group.bench_with_input(BenchmarkId::new("parallel", n), &cfgs, |b, cfgs| {
            b.iter(|| {
                let out = run_batch(cfgs, &assets, TraceMode::Off);
                assert!(out.iter().all(Result::is_ok));
                out.len()
            })
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &cfgs, |b, cfgs| {
            b.iter(|| {
                let out = run_batch_sequential(cfgs, &assets, TraceMode::Off);
                assert!(out.iter().all(Result::is_ok));
                out.len()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_batches);
criterion_main!(benches);
