use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use cognidb::ann::{batch_scores, build_lsh, spherical_kmeans};
use cognidb::embedding::{train, EmbeddingModel, TrainingConfig};
use cognidb::textify::TokenSentence;
use cognidb::udf::analogy::{solve_analogy, AnalogyMethod};
use cognidb::Parallelism;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn random_model(n: usize, dim: usize, seed: u64) -> EmbeddingModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            (
                format!("t{i}"),
                (0..dim)
                    .map(|_| rng.sample::<f32, _>(StandardNormal))
                    .collect(),
            )
        })
        .collect();
    let mut m = EmbeddingModel::from_vectors(rows).unwrap();
    m.normalize();
    m
}

fn scoring(c: &mut Criterion) {
    let model = random_model(50_000, 100, 1);
    let query: Vec<f64> = model.vector_at(7).iter().map(|&x| f64::from(x)).collect();
    let mut g = c.benchmark_group("batch_scores_50k_d100");
    for (name, par) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| batch_scores(black_box(&query), &model, par).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("analogy_3cosmul_50k");
    for (name, par) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                solve_analogy(
                    "t1",
                    "t2",
                    "t3",
                    AnalogyMethod::from_flag(3).unwrap(),
                    &model,
                    10,
                    par,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn indexing(c: &mut Criterion) {
    let model = random_model(20_000, 64, 2);
    let mut g = c.benchmark_group("index_20k_d64");
    g.sample_size(10);
    for (name, par) in MODES {
        g.bench_with_input(BenchmarkId::new("lsh_b16", name), &par, |b, &par| {
            b.iter(|| build_lsh(&model, 16, 3, par).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("kmeans_k64_5it", name), &par, |b, &par| {
            b.iter(|| spherical_kmeans(&model, 64, 5, 3, par).unwrap())
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus: Vec<TokenSentence> = (0..2_000)
        .map(|i| TokenSentence {
            row_key: Some(format!("row{i}")),
            tokens: std::iter::once(format!("row{i}"))
                .chain((0..8).map(|_| format!("w{}", rng.random_range(0..500))))
                .collect(),
            table: "t".into(),
        })
        .collect();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get().max(4));
    let mut g = c.benchmark_group("train_2k_rows");
    g.sample_size(10);
    for t in [1, threads] {
        let cfg = TrainingConfig {
            dimension: 50,
            epochs: 2,
            threads: t,
            ..Default::default()
        };
        g.bench_with_input(BenchmarkId::new("threads", t), &cfg, |b, cfg| {
            b.iter(|| train(&corpus, cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, scoring, indexing, training);
criterion_main!(benches);
