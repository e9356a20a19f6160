//! Parallel vs sequential throughput of the data-parallel hot paths.
//!
//! With the `parallel` feature each benchmark runs twice: on the rayon
//! global pool and inside a one-thread pool. Without the feature only the
//! sequential fallback is measured.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hilrag_core::embed::{Embedder, HashEmbedder};
use hilrag_core::eval::triplet_accuracy;
use hilrag_core::fixtures::{eval_queries, random_corpus, random_triplets, separable_triplets};
use hilrag_core::train::{train_adapter, TrainingConfig};
use hilrag_core::{Encoder, VectorIndex};

enum Mode {
    #[cfg(feature = "parallel")]
    Parallel,
    #[cfg(feature = "parallel")]
    Sequential(rayon::ThreadPool),
    #[cfg(not(feature = "parallel"))]
    Sequential,
}

impl Mode {
    fn all() -> Vec<Mode> {
        #[cfg(feature = "parallel")]
        {
            let single = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .expect("thread pool");
            vec![Mode::Parallel, Mode::Sequential(single)]
        }
        #[cfg(not(feature = "parallel"))]
        vec![Mode::Sequential]
    }

    fn name(&self) -> &'static str {
        match self {
            #[cfg(feature = "parallel")]
            Mode::Parallel => "parallel",
            _ => "sequential",
        }
    }

    fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match self {
            #[cfg(feature = "parallel")]
            Mode::Parallel => f(),
            #[cfg(feature = "parallel")]
            Mode::Sequential(pool) => pool.install(f),
            #[cfg(not(feature = "parallel"))]
            Mode::Sequential => f(),
        }
    }
}

fn index_build(c: &mut Criterion) {
    let docs = random_corpus(2000, 1);
    let enc = Encoder::hash(256).unwrap();
    let mut group = c.benchmark_group("index_build");
    group.throughput(Throughput::Elements(docs.len() as u64));
    for mode in Mode::all() {
        group.bench_function(BenchmarkId::from_parameter(mode.name()), |b| {
            b.iter(|| black_box(mode.run(|| VectorIndex::build(&docs, &enc).unwrap())))
        });
    }
    group.finish();
}

fn search_topk(c: &mut Criterion) {
    let docs = random_corpus(10_000, 2);
    let enc = Encoder::hash(256).unwrap();
    let index = VectorIndex::build(&docs, &enc).unwrap();
    let queries: Vec<_> = eval_queries(&docs, 32, 3)
        .iter()
        .map(|q| enc.embed(&q.query).unwrap())
        .collect();
    let mut group = c.benchmark_group("search_topk");
    group.throughput(Throughput::Elements(queries.len() as u64));
    for mode in Mode::all() {
        group.bench_function(BenchmarkId::from_parameter(mode.name()), |b| {
            b.iter(|| {
                mode.run(|| {
                    for q in &queries {
                        black_box(index.search_topk(q, 10, None).unwrap());
                    }
                })
            })
        });
    }
    group.finish();
}

fn triplet_metric(c: &mut Criterion) {
    let triplets = random_triplets(5000, 4);
    let enc = Encoder::hash(256).unwrap();
    let mut group = c.benchmark_group("triplet_accuracy");
    group.throughput(Throughput::Elements(triplets.len() as u64));
    for mode in Mode::all() {
        group.bench_function(BenchmarkId::from_parameter(mode.name()), |b| {
            b.iter(|| black_box(mode.run(|| triplet_accuracy(&enc, &triplets).unwrap())))
        });
    }
    group.finish();
}

fn training_epoch(c: &mut Criterion) {
    let f = separable_triplets(128, 256, 0, 5);
    let base: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(f.dimension).unwrap());
    let config = TrainingConfig {
        epochs: 1,
        batch_size: 32,
        learning_rate: 0.1,
        margin: 0.5,
        ..TrainingConfig::default()
    };
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    group.throughput(Throughput::Elements(f.train.len() as u64));
    for mode in Mode::all() {
        group.bench_function(BenchmarkId::from_parameter(mode.name()), |b| {
            b.iter(|| {
                black_box(mode.run(|| {
                    train_adapter(base.clone(), &f.train, &config, None)
                        .unwrap()
                        .model
                }))
            })
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    index_build,
    search_topk,
    triplet_metric,
    training_epoch
);
criterion_main!(benches);
