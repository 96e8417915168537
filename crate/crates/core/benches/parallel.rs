//! Sequential against rayon-parallel execution of the two data-parallel
//! stages: corpus profiling and the ablation matrix.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use greenfuzz::ablation::{run_ablation, AblationConfig};
use greenfuzz::corpus::{profile_corpus, SeedInput};
use greenfuzz::energy::{Meter, MeterKind};
use greenfuzz::engine::{fixtures, CampaignConfig, StopCondition, TargetSpec};
use greenfuzz::par::Parallelism;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn seeds(name: &str) -> Vec<SeedInput> {
    fixtures::corpus(name)
        .unwrap()
        .into_iter()
        .map(|(id, bytes)| SeedInput { id, bytes })
        .collect()
}

/// The nested corpus repeated with a distinct id per copy.
fn large_corpus(copies: usize) -> Vec<SeedInput> {
    let base = seeds("nested");
    (0..copies)
        .flat_map(|k| base.iter().map(move |s| SeedInput { id: format!("{k:03}_{}", s.id), bytes: s.bytes.clone() }))
        .collect()
}

fn profiling(c: &mut Criterion) {
    let target = TargetSpec::synthetic("nested").resolve().unwrap();
    let corpus = large_corpus(50);
    let mut group = c.benchmark_group("profile_corpus");
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new(name, corpus.len()), &corpus, |b, corpus| {
            b.iter(|| {
                let mut meter = Meter::open(MeterKind::Synthetic).unwrap();
                black_box(profile_corpus(corpus, &target, &mut meter, mode).unwrap())
            })
        });
    }
    group.finish();
}

fn ablation(c: &mut Criterion) {
    let corpus = seeds("keymatch");
    let mut base = CampaignConfig::new(TargetSpec::synthetic("keymatch"), "unused");
    base.stop = StopCondition::MaxExecs(2_000);
    let mut group = c.benchmark_group("run_ablation");
    group.sample_size(10);
    for (name, mode) in MODES {
        let config = AblationConfig {
            base: base.clone(),
            repetitions: 2,
            parallel: mode == Parallelism::Parallel,
            output_dir: None,
        };
        group.bench_function(BenchmarkId::new(name, "4x2"), |b| {
            b.iter(|| black_box(run_ablation(&config, &corpus).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, profiling, ablation);
criterion_main!(benches);
