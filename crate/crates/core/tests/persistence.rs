use std::fs;

use cognidb::ann::{build_lsh, StoredIndex};
use cognidb::embedding::{
    load_model, save_model, EmbeddingModel, ModelFormat, RowAttributeCache, RowVectors,
};
use cognidb::model_store::{
    add_cache, add_index, create_store, load_row_cache, open_store, save_row_cache, MANIFEST_FILE,
};
use cognidb::{Error, Parallelism};
use proptest::prelude::*;

/// Loading normalizes, so round-trips are stated for normalized models.
fn model(vals: &[f32], dim: usize) -> EmbeddingModel {
    let mut m = EmbeddingModel::from_vectors(
        vals.chunks(dim)
            .enumerate()
            .map(|(i, v)| (format!("tok_{i}"), v.to_vec()))
            .collect(),
    )
    .unwrap();
    m.normalize();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn word2vec_round_trips(vals in prop::collection::vec(-100f32..100.0, 6..60)) {
        let dim = 3;
        let vals = &vals[..vals.len() / dim * dim];
        prop_assume!(vals.chunks(dim).all(|c| c.iter().any(|x| x.abs() > 1e-3)));
        let m = model(vals, dim);
        let dir = tempfile::tempdir().unwrap();

        let bin = dir.path().join("m.bin");
        save_model(&m, &bin, ModelFormat::Word2vecBinary).unwrap();
        prop_assert_eq!(&load_model(&bin, ModelFormat::Word2vecBinary).unwrap(), &m);

        let txt = dir.path().join("m.txt");
        save_model(&m, &txt, ModelFormat::Word2vecText).unwrap();
        let back = load_model(&txt, ModelFormat::Word2vecText).unwrap();
        prop_assert_eq!(back.words(), m.words());
        for (a, b) in m.matrix().iter().zip(back.matrix()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}

fn sample_cache(dim: usize) -> RowAttributeCache {
    let mut cache = RowAttributeCache::new(dim);
    for key in ["r1", "r2"] {
        let rv = RowVectors {
            columns: vec![
                ("classA".into(), vec![0.25; dim]),
                ("classB".into(), vec![-1.5; dim]),
            ],
        };
        cache.insert("images", key, rv).unwrap();
    }
    cache.set_config_hash(Some("abc123".into()));
    cache
}

#[test]
fn row_cache_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cache = sample_cache(4);
    let path = dir.path().join("cache.bin");
    save_row_cache(&cache, &path).unwrap();
    assert_eq!(load_row_cache(&path).unwrap(), cache);
}

#[test]
fn store_detects_tampered_index_and_bad_version() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let m = model(&[1.0, 0.0, 3.0, 4.0, 0.0, 1.0], 2);
    create_store(
        &store,
        &m,
        ModelFormat::Word2vecText,
        Some(3),
        Some("abc123".into()),
    )
    .unwrap();
    add_cache(&store, &sample_cache(2)).unwrap();
    let lsh = StoredIndex::Lsh(build_lsh(&m, 8, 3, Parallelism::Sequential).unwrap());
    let manifest = add_index(&store, "lsh", &lsh).unwrap();

    let opened = open_store(&store).unwrap();
    assert!(opened.ann_index().lsh.is_some());
    assert_eq!(opened.lookup("tok_1"), Some(&[0.6f32, 0.8][..]));

    let idx = store.join(&manifest.indices["lsh"].file);
    let mut bytes = fs::read(&idx).unwrap();
    *bytes.last_mut().unwrap() ^= 1;
    fs::write(&idx, bytes).unwrap();
    assert!(matches!(
        open_store(&store),
        Err(Error::ChecksumMismatch(_))
    ));

    let path = store.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("\"version\": 1", "\"version\": 9");
    fs::write(&path, text).unwrap();
    assert!(matches!(open_store(&store), Err(Error::VersionMismatch(_))));
}
