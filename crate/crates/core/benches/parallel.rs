//! Sequential against parallel execution for the data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rmsh_core::data::{build_similarity_with, generate_synthetic, Dataset, SyntheticConfig};
use rmsh_core::eval::{evaluate, EvalConfig, Task};
use rmsh_core::index::{search_many, PackedCodes};
use rmsh_core::model::{HashModel, ModelDims};
use rmsh_core::trainer::{train_epoch, DeltaSetting, TrainConfig, TrainState};
use rmsh_core::Exec;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn dataset(n: usize) -> Dataset {
    generate_synthetic(&SyntheticConfig::uniform(n, 8, 0.25, 0.1, 1)).unwrap()
}

fn codes(ds: &Dataset, k: usize) -> (PackedCodes, PackedCodes) {
    let dims = ModelDims {
        d_image: ds.image.d(),
        d_text: ds.text.d(),
        hidden: 64,
        k,
        c: ds.labels.c(),
    };
    let model = HashModel::init(dims, 0).unwrap();
    let a = model.encode(&ds.image).unwrap();
    let b = model.encode(&ds.text).unwrap();
    (
        PackedCodes::pack_with_row_ids(&a.binary, k).unwrap(),
        PackedCodes::pack_with_row_ids(&b.binary, k).unwrap(),
    )
}

fn bench_search(c: &mut Criterion) {
    let ds = dataset(4000);
    let (db, q) = codes(&ds, 64);
    let mut g = c.benchmark_group("search_many");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, "4000x4000_k64"), |b| {
            b.iter(|| black_box(search_many(&db, &q, 100, exec).unwrap()))
        });
    }
    g.finish();
}

fn bench_eval(c: &mut Criterion) {
    let ds = dataset(2000);
    let (db, q) = codes(&ds, 32);
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = EvalConfig {
            exec,
            ..Default::default()
        };
        g.bench_function(BenchmarkId::new(name, "2000x2000_k32"), |b| {
            b.iter(|| {
                black_box(
                    evaluate(Task::ImageToText, &q, &ds.labels, &db, &ds.labels, &cfg).unwrap(),
                )
            })
        });
    }
    g.finish();
}

fn bench_similarity(c: &mut Criterion) {
    let ds = dataset(3000);
    let mut g = c.benchmark_group("build_similarity");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, "3000x3000"), |b| {
            b.iter(|| black_box(build_similarity_with(&ds.labels, &ds.labels, exec).unwrap()))
        });
    }
    g.finish();
}

fn bench_epoch(c: &mut Criterion) {
    let ds = dataset(1000);
    let mut g = c.benchmark_group("train_epoch");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = TrainConfig {
            delta: DeltaSetting::Fixed(7),
            exec,
            ..Default::default()
        };
        g.bench_function(BenchmarkId::new(name, "n1000_k32"), |b| {
            b.iter_batched(
                || TrainState::new(&ds, &cfg, 7).unwrap(),
                |mut state| black_box(train_epoch(&mut state, &ds, &cfg).unwrap()),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    bench_search,
    bench_eval,
    bench_similarity,
    bench_epoch
);
criterion_main!(benches);
