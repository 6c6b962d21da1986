use std::collections::BTreeSet;

use cognidb::ann::{batch_scores, build_lsh, spherical_kmeans, top_k, AnnIndex, Strategy};
use cognidb::embedding::EmbeddingModel;
use cognidb::Parallelism;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn unit_model(n: usize, dim: usize, seed: u64) -> EmbeddingModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            (
                format!("t{i:04}"),
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

fn query(m: &EmbeddingModel, i: usize) -> Vec<f64> {
    m.vector_at(i).iter().map(|&x| f64::from(x)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lsh_candidates_grow_with_radius(seed in 0u64..1000, bits in 4usize..20, qi in 0usize..300) {
        let m = unit_model(300, 16, seed);
        let lsh = build_lsh(&m, bits, seed, Parallelism::Sequential).unwrap();
        let q = query(&m, qi);
        let mut prev: BTreeSet<u32> = BTreeSet::new();
        for r in 0..=2 {
            let c: BTreeSet<u32> = lsh.candidates(&q, r).unwrap().into_iter().collect();
            prop_assert!(prev.is_subset(&c));
            prev = c;
        }
        // the query's own row shares its signature
        prop_assert!(lsh.candidates(&q, 0).unwrap().contains(&(qi as u32)));
    }

    #[test]
    fn exact_top_k_is_sorted_brute_force(seed in 0u64..1000, k in 1usize..30, qi in 0usize..200) {
        let m = unit_model(200, 12, seed);
        let q = query(&m, qi);
        let dots = batch_scores(&q, &m, Parallelism::Sequential).unwrap();
        let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut want: Vec<(String, f64)> = (0..m.len())
            .map(|i| {
                let n = m.vector_at(i).iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                (m.word(i).to_string(), (dots[i] / (n * qn)).clamp(-1.0, 1.0))
            })
            .collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        want.truncate(k);
        let got = top_k(&q, k, &m, Strategy::Exact, &AnnIndex::default(), &[], Parallelism::Sequential).unwrap();
        prop_assert!(got.exact);
        prop_assert_eq!(got.entries, want);
    }
}

#[test]
fn parallel_scores_match_sequential_bitwise() {
    let m = unit_model(5000, 40, 11);
    let q = query(&m, 3);
    let a = batch_scores(&q, &m, Parallelism::Sequential).unwrap();
    let b = batch_scores(&q, &m, Parallelism::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn kmeans_partitions_rows_and_full_probe_is_exact() {
    let m = unit_model(800, 16, 5);
    let km = spherical_kmeans(&m, 10, 15, 9, Parallelism::Parallel).unwrap();
    let mut seen: Vec<u32> = (0..km.k()).flat_map(|j| km.members(j)).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..800).collect::<Vec<u32>>());

    let index = AnnIndex {
        lsh: None,
        kmeans: Some(km),
    };
    let q = query(&m, 42);
    let exact = top_k(
        &q,
        10,
        &m,
        Strategy::Exact,
        &index,
        &[],
        Parallelism::Sequential,
    )
    .unwrap();
    let probed = top_k(
        &q,
        10,
        &m,
        Strategy::KMeans { n_probe: 10 },
        &index,
        &[],
        Parallelism::Sequential,
    )
    .unwrap();
    assert_eq!(exact.entries, probed.entries);
}

#[test]
fn narrow_probe_scores_equal_exact_rerank() {
    let m = unit_model(2000, 24, 8);
    let index = AnnIndex {
        lsh: Some(build_lsh(&m, 12, 1, Parallelism::Sequential).unwrap()),
        kmeans: Some(spherical_kmeans(&m, 16, 10, 1, Parallelism::Sequential).unwrap()),
    };
    let q = query(&m, 99);
    let all = top_k(
        &q,
        m.len(),
        &m,
        Strategy::Exact,
        &index,
        &[],
        Parallelism::Parallel,
    )
    .unwrap();
    let exact: std::collections::HashMap<String, f64> = all.entries.into_iter().collect();
    for s in [Strategy::Lsh { radius: 1 }, Strategy::KMeans { n_probe: 2 }] {
        for (t, score) in top_k(&q, 5, &m, s, &index, &[], Parallelism::Sequential)
            .unwrap()
            .entries
        {
            assert_eq!(score, exact[&t], "{s}: {t}");
        }
    }
}
