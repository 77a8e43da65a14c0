use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kpt_core::pipeline::{zero_shot, Support, ZeroShotFlags};
use kpt_core::predict::{loss_and_grad_with, predict_average_with, VerbalizerWeights};
use kpt_core::refine::{calibrate_with, contextualized_prior, RelevanceParams};
use kpt_core::scorer::{synthetic_scores, word_scores_with, SyntheticTask};
use kpt_core::Execution;

const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_pipeline(c: &mut Criterion) {
    let task = SyntheticTask {
        n_classes: 10,
        planted_per_class: 40,
        noise_words_per_class: 40,
        ..Default::default()
    }
    .build(1);
    let v = &task.verbalizer;
    let (raw, gold) = synthetic_scores(&task.config, 4000, v, 2);
    let scores = word_scores_with(&raw, v, Execution::Sequential).unwrap();
    let support = scores.select_rows(&(0..200).collect::<Vec<_>>());
    let prior = contextualized_prior(&support).unwrap();
    let weights = VerbalizerWeights((0..v.n_words()).map(|j| (j % 7) as f64 * 0.1).collect());

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(20);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::new("word_scores", name), &exec, |b, &e| {
            b.iter(|| word_scores_with(black_box(&raw), v, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("calibrate", name), &exec, |b, &e| {
            b.iter(|| calibrate_with(black_box(&scores), &prior, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("predict_average", name), &exec, |b, &e| {
            b.iter(|| predict_average_with(black_box(&scores), v, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("loss_and_grad", name), &exec, |b, &e| {
            b.iter(|| loss_and_grad_with(black_box(&scores), &gold, v, &weights, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("zero_shot", name), &exec, |b, &e| {
            b.iter(|| {
                zero_shot(
                    v,
                    Support::Rows(&support),
                    black_box(&scores),
                    ZeroShotFlags::default(),
                    RelevanceParams::default(),
                    e,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
