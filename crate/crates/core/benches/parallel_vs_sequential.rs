//! Compares the rayon-backed data-parallel paths against their sequential
//! twins on the crate's hot inner loops: prefix encoding, score prediction,
//! and k-means restarts.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use xppm_core::encoding::{
    build_feature_schema, encode_cases, generate_prefixes, InstanceEncoder, Split,
};
use xppm_core::exec;
use xppm_core::local_regions::kmeans;
use xppm_core::neural_net::{init_network, predict_scores, NetworkConfig};
use xppm_core::pipeline::PipelineConfig;
use xppm_core::simlog::{generate, SimLogConfig};

fn bench_encoding(c: &mut Criterion) {
    let log = generate(&SimLogConfig {
        cases: 300,
        ..SimLogConfig::default()
    });
    let config = PipelineConfig::default().encoding_config();
    let cases: std::collections::BTreeSet<String> =
        log.traces.iter().map(|t| t.case_id.clone()).collect();
    let schema = build_feature_schema(&log, &config, &cases).unwrap();

    let mut group = c.benchmark_group("encode_instances");
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let dataset =
                encode_cases(&log, &schema, &config.prefix_policy, &cases, Split::Train).unwrap();
            black_box(dataset.instances.len())
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let encoder = InstanceEncoder::new(&schema);
            let mut count = 0usize;
            for trace in &log.traces {
                for prefix in generate_prefixes(trace, &config.prefix_policy) {
                    black_box(encoder.encode(&prefix, 0));
                    count += 1;
                }
            }
            black_box(count)
        })
    });
    group.finish();
}

fn bench_scoring(c: &mut Criterion) {
    let log = generate(&SimLogConfig {
        cases: 300,
        ..SimLogConfig::default()
    });
    let config = PipelineConfig::default().encoding_config();
    let cases: std::collections::BTreeSet<String> =
        log.traces.iter().map(|t| t.case_id.clone()).collect();
    let schema = build_feature_schema(&log, &config, &cases).unwrap();
    let dataset =
        encode_cases(&log, &schema, &config.prefix_policy, &cases, Split::Validation).unwrap();
    let network = init_network(
        schema.dimension(),
        &NetworkConfig {
            seed: 7,
            ..NetworkConfig::default()
        },
    )
    .unwrap();

    let mut group = c.benchmark_group("predict_scores");
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(predict_scores(&network, &dataset).unwrap()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let scores = exec::map_collect_seq(&dataset.instances, |instance| {
                network.score(&instance.features).unwrap()
            });
            black_box(scores)
        })
    });
    group.finish();
}

fn bench_kmeans_restarts(c: &mut Criterion) {
    let points: Vec<Vec<f64>> = (0..800)
        .map(|i| {
            let cluster = (i % 5) as f64;
            (0..16)
                .map(|d| cluster * 3.0 + ((i * 31 + d * 17) % 100) as f64 / 100.0)
                .collect()
        })
        .collect();

    let mut group = c.benchmark_group("kmeans_restarts");
    group.sample_size(10);
    // The library fans restarts out over the rayon pool.
    group.bench_function("parallel", |b| {
        b.iter_batched(
            || points.clone(),
            |points| black_box(kmeans(&points, 8, 42, 8).unwrap().inertia),
            BatchSize::LargeInput,
        )
    });
    // Same work as independent single-restart runs, reduced sequentially.
    group.bench_function("sequential", |b| {
        b.iter_batched(
            || points.clone(),
            |points| {
                let best = exec::map_indices_seq(8, |r| {
                    kmeans(&points, 8, exec::derive_seed(42, r as u64), 1)
                        .unwrap()
                        .inertia
                })
                .into_iter()
                .fold(f64::INFINITY, f64::min);
                black_box(best)
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_encoding, bench_scoring, bench_kmeans_restarts);
criterion_main!(benches);
