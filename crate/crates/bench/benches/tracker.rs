use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dst_bench::corpus;
use dst_core::synth::random_update_inputs;
use dst_core::update::{constrained_update, learned_interpolation_update, one_step_update, rule_based_update};
use dst_core::{ConstrainedParams, Matrix, MechanismKind, Model, Tracker, TrainConfig};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn updates(c: &mut Criterion) {
    let mut group = c.benchmark_group("update");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = ConstrainedParams {
        a_curr: 3.0,
        b_curr: 0.0,
        a_past: 2.0,
        b_past: 0.0,
    };
    for n in [7, 22, 102] {
        let (y, b) = random_update_inputs(&mut rng, n);
        let w = Matrix::identity(n);
        group.bench_with_input(BenchmarkId::new("rule", n), &n, |bench, _| {
            bench.iter(|| rule_based_update(black_box(&y), black_box(&b), 0.5))
        });
        group.bench_with_input(BenchmarkId::new("interp", n), &n, |bench, _| {
            bench.iter(|| learned_interpolation_update(black_box(&y), black_box(&b), 0.3))
        });
        group.bench_with_input(BenchmarkId::new("constrained", n), &n, |bench, _| {
            bench.iter(|| constrained_update(black_box(&y), black_box(&b), &p))
        });
        group.bench_with_input(BenchmarkId::new("one_step", n), &n, |bench, _| {
            bench.iter(|| one_step_update(black_box(&y), black_box(&b), &w, &w))
        });
    }
    group.finish();
}

fn decoding(c: &mut Criterion) {
    let mut group = c.benchmark_group("decode");
    for dim in [32, 300] {
        let (o, dialogues, store) = corpus(50, dim);
        let model = Model::init(&o, &store, MechanismKind::Constrained, 0);
        let tracker = Tracker::new(&model, &store).unwrap();
        let turn = &dialogues[0].turns()[1];
        group.bench_with_input(BenchmarkId::new("turn", dim), &dim, |bench, _| {
            bench.iter(|| tracker.estimates(black_box(turn)))
        });
        group.bench_with_input(BenchmarkId::new("corpus_50", dim), &dim, |bench, _| {
            bench.iter(|| tracker.track_all(black_box(&dialogues), 1).unwrap())
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    let (o, dialogues, store) = corpus(200, 32);
    for kind in MechanismKind::ALL {
        let config = TrainConfig {
            epochs: 1,
            batch_size: 64,
            mechanism: kind,
            ..Default::default()
        };
        group.bench_function(kind.as_str(), |bench| {
            bench.iter(|| dst_core::train(&dialogues[..150], &dialogues[150..], &o, &store, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, updates, decoding, training);
criterion_main!(benches);
