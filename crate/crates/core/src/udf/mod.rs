//! Cognitive UDFs over meaning vectors. Every similarity is a cosine of
//! (possibly averaged) token vectors; averages are never re-normalized.

pub mod analogy;
pub mod vector;

use serde::{Deserialize, Serialize};

use crate::ann::{top_k, AnnIndex, Strategy};
use crate::embedding::{EmbeddingModel, OovPolicy, RowAttributeCache, SENTINEL};
use crate::error::{Error, Result};
use crate::parallel::Parallelism;

pub use analogy::{
    analogy_score, solve_analogy, solve_analogy_vectors, AnalogyMethod, DEFAULT_EPSILON,
};
pub use vector::{cosine, MeaningVector};

use vector::{mean, to_f64};

/// Mean of the vectors of `tokens` after OOV resolution.
pub fn avg_vector<S: AsRef<str>>(
    tokens: &[S],
    model: &EmbeddingModel,
    policy: OovPolicy,
) -> Result<MeaningVector> {
    let components = model.mean_vector(tokens, policy)?;
    let source_token = match tokens {
        [t] => Some(t.as_ref().to_string()),
        _ => None,
    };
    Ok(MeaningVector {
        components,
        source_token,
    })
}

/// Whether `token` is one of `tokens` (exact match, no substrings).
pub fn string_present<S: AsRef<str>>(tokens: &[S], token: &str) -> bool {
    !token.is_empty() && tokens.iter().any(|t| t.as_ref() == token)
}

/// Cosine of the average vectors of two token bags.
pub fn proximity_avg<A: AsRef<str>, B: AsRef<str>>(
    a: &[A],
    b: &[B],
    model: &EmbeddingModel,
    policy: OovPolicy,
) -> Result<f64> {
    cosine(
        &avg_vector(a, model, policy)?.components,
        &avg_vector(b, model, policy)?.components,
    )
}

fn key_vector(model: &EmbeddingModel, key: &str) -> Result<Vec<f64>> {
    model
        .vector(key)
        .map(to_f64)
        .ok_or_else(|| Error::UnknownKey(key.to_string()))
}

/// Cosine between a token and the centroid of `inputs`.
pub fn semantic_cluster_score<S: AsRef<str>>(
    inputs: &[S],
    candidate: &str,
    model: &EmbeddingModel,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Config(
            "semantic clustering needs at least one input".into(),
        ));
    }
    let vectors = inputs
        .iter()
        .map(|t| key_vector(model, t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    cosine(&mean(&vectors), &key_vector(model, candidate)?)
}

/// Object-vector similarity of a candidate key to the mean of three input keys.
pub fn combined_avg_sim(
    candidate: &str,
    in1: &str,
    in2: &str,
    in3: &str,
    model: &EmbeddingModel,
) -> Result<f64> {
    semantic_cluster_score(&[in1, in2, in3], candidate, model)
}

/// Input/candidate column combination for [`attribute_sim_avg`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributeFlag {
    /// classB, classC against classB, classC.
    BcToBc = 1,
    /// classB, classC against classD.
    BcToD = 2,
    /// classB, classC, classD against the same.
    BcdToBcd = 3,
    /// classB, classC, classD against the candidate's object vector.
    BcdToObject = 4,
}

impl AttributeFlag {
    pub fn from_i64(flag: i64) -> Result<Self> {
        match flag {
            1 => Ok(AttributeFlag::BcToBc),
            2 => Ok(AttributeFlag::BcToD),
            3 => Ok(AttributeFlag::BcdToBcd),
            4 => Ok(AttributeFlag::BcdToObject),
            other => Err(Error::InvalidFlag(other)),
        }
    }

    pub fn input_columns(self) -> &'static [&'static str] {
        match self {
            AttributeFlag::BcToBc | AttributeFlag::BcToD => &["classB", "classC"],
            AttributeFlag::BcdToBcd | AttributeFlag::BcdToObject => &["classB", "classC", "classD"],
        }
    }

    /// Candidate columns; `None` selects the key column (object vector).
    pub fn candidate_columns(self) -> Option<&'static [&'static str]> {
        match self {
            AttributeFlag::BcToBc => Some(&["classB", "classC"]),
            AttributeFlag::BcToD => Some(&["classD"]),
            AttributeFlag::BcdToBcd => Some(&["classB", "classC", "classD"]),
            AttributeFlag::BcdToObject => None,
        }
    }
}

/// [`attribute_sim_avg`] with the number of vectors averaged on each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeSimTrace {
    pub score: f64,
    pub input_vectors: usize,
    pub candidate_vectors: usize,
}

fn row_column<'a>(cache: &'a RowAttributeCache, key: &str, column: &str) -> Result<&'a [f64]> {
    let row = cache
        .find(key)
        .ok_or_else(|| Error::UnknownKey(key.to_string()))?;
    row.column(column)
        .ok_or_else(|| Error::UnknownColumn(format!("{column} (row `{key}`)")))
}

pub fn attribute_sim_avg_traced(
    inputs: [&str; 3],
    candidate: &str,
    flag: AttributeFlag,
    cache: &RowAttributeCache,
) -> Result<AttributeSimTrace> {
    let mut input_vecs = Vec::new();
    for key in inputs {
        for col in flag.input_columns() {
            input_vecs.push(row_column(cache, key, col)?);
        }
    }
    let candidate_vecs: Vec<&[f64]> = match flag.candidate_columns() {
        Some(cols) => cols
            .iter()
            .map(|c| row_column(cache, candidate, c))
            .collect::<Result<_>>()?,
        None => {
            let row = cache
                .find(candidate)
                .ok_or_else(|| Error::UnknownKey(candidate.to_string()))?;
            // the key column is cached first, in schema order
            let object = row
                .column("imagename")
                .or_else(|| row.columns.first().map(|(_, v)| v.as_slice()))
                .ok_or_else(|| Error::UnknownColumn(format!("imagename (row `{candidate}`)")))?;
            vec![object]
        }
    };
    Ok(AttributeSimTrace {
        score: cosine(&mean(&input_vecs), &mean(&candidate_vecs))?,
        input_vectors: input_vecs.len(),
        candidate_vectors: candidate_vecs.len(),
    })
}

/// Cosine between the mean of the flag's input column vectors over three
/// input rows and the mean of the candidate's flag columns.
pub fn attribute_sim_avg(
    inputs: [&str; 3],
    candidate: &str,
    flag: AttributeFlag,
    cache: &RowAttributeCache,
) -> Result<f64> {
    attribute_sim_avg_traced(inputs, candidate, flag, cache).map(|t| t.score)
}

/// a : b :: c : d, where `d` is a token bag averaged into one vector.
pub fn analogy_query<S: AsRef<str>>(
    a: &str,
    b: &str,
    c: &str,
    d: &[S],
    method: AnalogyMethod,
    model: &EmbeddingModel,
    policy: OovPolicy,
) -> Result<f64> {
    let (x, y, q) = (
        key_vector(model, a)?,
        key_vector(model, b)?,
        key_vector(model, c)?,
    );
    analogy_score(
        &x,
        &y,
        &q,
        &avg_vector(d, model, policy)?.components,
        method,
    )
}

/// Two-example analogy: mean(a, c) : mean(b, d) :: e : f.
#[allow(clippy::too_many_arguments)]
pub fn analogy_sequence<S: AsRef<str>>(
    a: &str,
    b: &str,
    c: &str,
    d: &str,
    e: &str,
    f: &[S],
    method: AnalogyMethod,
    model: &EmbeddingModel,
    policy: OovPolicy,
) -> Result<f64> {
    let x = mean(&[key_vector(model, a)?, key_vector(model, c)?]);
    let y = mean(&[key_vector(model, b)?, key_vector(model, d)?]);
    let q = key_vector(model, e)?;
    analogy_score(
        &x,
        &y,
        &q,
        &avg_vector(f, model, policy)?.components,
        method,
    )
}

/// One clustered-analogy answer: a new source and its analogous targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredAnalogy {
    pub source: String,
    pub source_score: f64,
    pub targets: Vec<(String, f64)>,
}

/// Extend a set of (source, target) examples: find the `k_sources` tokens
/// closest to the centroid of the input sources, then for each solve
/// mean(sources) : mean(targets) :: source : ? for `k_targets` answers.
/// Input tokens are never returned.
pub fn clustered_analogies<S: AsRef<str>>(
    pairs: &[(S, S)],
    k_sources: usize,
    k_targets: usize,
    method: AnalogyMethod,
    model: &EmbeddingModel,
    par: Parallelism,
) -> Result<Vec<ClusteredAnalogy>> {
    if pairs.is_empty() {
        return Err(Error::Config(
            "clustered analogies need at least one pair".into(),
        ));
    }
    let sources = pairs
        .iter()
        .map(|(s, _)| key_vector(model, s.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let targets = pairs
        .iter()
        .map(|(_, t)| key_vector(model, t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let (x, y) = (mean(&sources), mean(&targets));
    let inputs: Vec<&str> = pairs
        .iter()
        .flat_map(|(s, t)| [s.as_ref(), t.as_ref()])
        .collect();

    let found = top_k(
        &x,
        k_sources,
        model,
        Strategy::Exact,
        &AnnIndex::default(),
        &inputs,
        par,
    )?;
    found
        .entries
        .into_iter()
        .map(|(source, source_score)| {
            let q = key_vector(model, &source)?;
            let mut exclude = inputs.clone();
            exclude.push(&source);
            let targets =
                solve_analogy_vectors(&x, &y, &q, method, model, &exclude, k_targets, par)?;
            Ok(ClusteredAnalogy {
                source,
                source_score,
                targets,
            })
        })
        .collect()
}

/// The item least similar on average to the others (ties to the
/// lexicographically smallest token).
pub fn odd_man_out<S: AsRef<str>>(items: &[S], model: &EmbeddingModel) -> Result<String> {
    if items.len() < 3 {
        return Err(Error::Config(
            "odd-man-out needs at least three items".into(),
        ));
    }
    let vectors = items
        .iter()
        .map(|t| key_vector(model, t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(f64, &str)> = None;
    for (i, item) in items.iter().enumerate() {
        let mut total = 0.0;
        for (j, other) in vectors.iter().enumerate() {
            if j != i {
                total += cosine(&vectors[i], other)?;
            }
        }
        let avg = total / (items.len() - 1) as f64;
        let item = item.as_ref();
        let better = match best {
            None => true,
            Some((b, t)) => avg < b || (avg == b && item < t),
        };
        if better {
            best = Some((avg, item));
        }
    }
    Ok(best.expect("at least three items").1.to_string())
}

/// `CONCEPT_` followed by `token` with its first byte ASCII-uppercased.
pub fn concept_token(token: &str) -> String {
    let mut chars = token.chars();
    match chars.next() {
        Some(c) => format!("CONCEPT_{}{}", c.to_ascii_uppercase(), chars.as_str()),
        None => "CONCEPT_".to_string(),
    }
}

fn concept_vector(ext: &EmbeddingModel, concept: &str) -> Result<Vec<f64>> {
    ext.vector(concept)
        .map(to_f64)
        .ok_or_else(|| Error::UnknownConcept(concept.to_string()))
}

fn sentinel_vector(ext: &EmbeddingModel) -> Result<Vec<f64>> {
    ext.vector(SENTINEL)
        .map(to_f64)
        .ok_or_else(|| Error::UnknownToken(SENTINEL.to_string()))
}

/// Similarity of an external-KB concept to a token bag, each token looked up
/// as its `CONCEPT_` form with `</s>` as the fallback.
pub fn proximity_avg_for_ext_kb<S: AsRef<str>>(
    concept: &str,
    tokens: &[S],
    ext: &EmbeddingModel,
) -> Result<f64> {
    let c = concept_vector(ext, concept)?;
    let resolved = tokens
        .iter()
        .map(|t| match ext.vector(&concept_token(t.as_ref())) {
            Some(v) => Ok(to_f64(v)),
            None => sentinel_vector(ext),
        })
        .collect::<Result<Vec<_>>>()?;
    if resolved.is_empty() {
        return Err(Error::AllTokensUnknown(String::new()));
    }
    cosine(&c, &mean(&resolved))
}

/// As [`proximity_avg_for_ext_kb`], but a token whose plain form is also in
/// the model uses the mean of its plain and `CONCEPT_` vectors. A token with
/// only the plain form still falls back to `</s>`.
pub fn proximity_avg_adv_for_ext_kb<S: AsRef<str>>(
    concept: &str,
    tokens: &[S],
    ext: &EmbeddingModel,
) -> Result<f64> {
    let c = concept_vector(ext, concept)?;
    let resolved = tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            match (ext.vector(&concept_token(t)), ext.vector(t)) {
                (Some(cv), Some(pv)) => Ok(mean(&[to_f64(cv), to_f64(pv)])),
                (Some(cv), None) => Ok(to_f64(cv)),
                (None, _) => sentinel_vector(ext),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if resolved.is_empty() {
        return Err(Error::AllTokensUnknown(String::new()));
    }
    cosine(&c, &mean(&resolved))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::RowVectors;
    use approx::assert_abs_diff_eq;

    fn tiny() -> EmbeddingModel {
        EmbeddingModel::from_vectors(vec![
            (SENTINEL, vec![0.1, 0.1, 0.1]),
            ("a", vec![1.0, 0.0, 0.0]),
            ("b", vec![0.0, 1.0, 0.0]),
            ("c", vec![0.0, 0.0, 1.0]),
            ("d", vec![1.0, 1.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn avg_vector_examples() {
        let m = tiny();
        assert_eq!(
            avg_vector(&["a"], &m, OovPolicy::Error).unwrap().components,
            vec![1.0, 0.0, 0.0]
        );
        assert_eq!(
            avg_vector(&["a", "a"], &m, OovPolicy::Error)
                .unwrap()
                .components,
            vec![1.0, 0.0, 0.0]
        );
        assert_eq!(
            avg_vector(&["a", "b"], &m, OovPolicy::Error)
                .unwrap()
                .components,
            vec![0.5, 0.5, 0.0]
        );
        assert!(matches!(
            avg_vector(&["zz"], &m, OovPolicy::Error),
            Err(Error::UnknownToken(_))
        ));
    }

    #[test]
    fn string_present_is_exact() {
        let cell = ["animal", "stable_gear"];
        assert!(string_present(&cell, "animal"));
        assert!(!string_present(&cell, "stable"));
        assert!(!string_present::<&str>(&[], "animal"));
    }

    #[test]
    fn proximity_avg_matches_cosine() {
        let m = tiny();
        let got = proximity_avg(&["a", "b"], &["d"], &m, OovPolicy::Error).unwrap();
        assert_abs_diff_eq!(got, 1.0, epsilon = 1e-12);
        let got = proximity_avg(&["a"], &["d"], &m, OovPolicy::Error).unwrap();
        assert_abs_diff_eq!(got, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-7);
    }

    #[test]
    fn combined_avg_sim_identical_and_unknown() {
        let m = tiny();
        assert_abs_diff_eq!(
            combined_avg_sim("b", "b", "b", "b", &m).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            combined_avg_sim("zz", "a", "b", "c", &m),
            Err(Error::UnknownKey(_))
        ));
    }

    #[test]
    fn attribute_flag_counts() {
        let mut cache = RowAttributeCache::new(2);
        for (k, base) in [("i1", 0.1), ("i2", 0.2), ("i3", 0.3), ("cand", 0.4)] {
            let row = RowVectors {
                columns: ["imagename", "classA", "classB", "classC", "classD"]
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (c.to_string(), vec![base + j as f64, 1.0 - base]))
                    .collect(),
            };
            cache.insert("images", k, row).unwrap();
        }
        let expected = [(1, 6, 2), (2, 6, 1), (3, 9, 3), (4, 9, 1)];
        for (flag, ni, nc) in expected {
            let t = attribute_sim_avg_traced(
                ["i1", "i2", "i3"],
                "cand",
                AttributeFlag::from_i64(flag).unwrap(),
                &cache,
            )
            .unwrap();
            assert_eq!(
                (t.input_vectors, t.candidate_vectors),
                (ni, nc),
                "flag {flag}"
            );
        }
        assert!(matches!(
            AttributeFlag::from_i64(5),
            Err(Error::InvalidFlag(5))
        ));
        let same = attribute_sim_avg(["cand"; 3], "cand", AttributeFlag::BcdToBcd, &cache).unwrap();
        assert_abs_diff_eq!(same, 1.0, epsilon = 1e-12);
        assert!(matches!(
            attribute_sim_avg(["i1", "i2", "nope"], "cand", AttributeFlag::BcToBc, &cache),
            Err(Error::UnknownKey(_))
        ));
    }

    #[test]
    fn analogy_sequence_collapses() {
        let m = tiny();
        for method in [AnalogyMethod::CosAdd, AnalogyMethod::cosmul()] {
            let q = analogy_query("a", "b", "c", &["d"], method, &m, OovPolicy::Error).unwrap();
            let s = analogy_sequence(
                "a",
                "b",
                "a",
                "b",
                "c",
                &["d"],
                method,
                &m,
                OovPolicy::Error,
            )
            .unwrap();
            assert_abs_diff_eq!(q, s, epsilon = 1e-12);
        }
    }

    #[test]
    fn odd_man_out_geometry() {
        let m = EmbeddingModel::from_vectors(vec![
            ("x1", vec![1.0, 0.0]),
            ("x2", vec![1.0, 0.0]),
            ("x3", vec![1.0, 0.0]),
            ("y", vec![0.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(odd_man_out(&["x1", "y", "x2", "x3"], &m).unwrap(), "y");
        assert_eq!(odd_man_out(&["y", "x3", "x2", "x1"], &m).unwrap(), "y");
        assert!(odd_man_out(&["x1", "y"], &m).is_err());
    }

    #[test]
    fn ext_kb_lookup_rules() {
        assert_eq!(concept_token("hyena"), "CONCEPT_Hyena");
        assert_eq!(concept_token("9lives"), "CONCEPT_9lives");
        let ext = EmbeddingModel::from_vectors(vec![
            (SENTINEL, vec![0.0, 1.0]),
            ("Hypercarnivore", vec![1.0, 0.0]),
            ("CONCEPT_Hyena", vec![0.9, 0.1]),
            ("hyena", vec![0.1, 0.9]),
            ("zebra", vec![0.5, 0.5]),
        ])
        .unwrap();
        let missing = proximity_avg_for_ext_kb("Hypercarnivore", &["nope"], &ext).unwrap();
        assert_abs_diff_eq!(missing, 0.0, epsilon = 1e-12);
        let hy = proximity_avg_for_ext_kb("Hypercarnivore", &["hyena"], &ext).unwrap();
        assert_abs_diff_eq!(hy, 0.9 / (0.82f64).sqrt(), epsilon = 1e-6);
        // plain-only tokens do not qualify for the adv mean
        let z1 = proximity_avg_for_ext_kb("Hypercarnivore", &["zebra"], &ext).unwrap();
        let z2 = proximity_avg_adv_for_ext_kb("Hypercarnivore", &["zebra"], &ext).unwrap();
        assert_eq!(z1, z2);
        let adv = proximity_avg_adv_for_ext_kb("Hypercarnivore", &["hyena"], &ext).unwrap();
        assert_abs_diff_eq!(adv, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-6);
        assert!(matches!(
            proximity_avg_for_ext_kb("Nope", &["hyena"], &ext),
            Err(Error::UnknownConcept(_))
        ));
    }

    #[test]
    fn clustered_single_pair_matches_analogy() {
        let m = EmbeddingModel::from_vectors(vec![
            ("man", vec![1.0, 0.0, 0.1]),
            ("woman", vec![1.0, 1.0, 0.1]),
            ("boy", vec![0.9, 0.0, 0.3]),
            ("girl", vec![0.9, 1.0, 0.3]),
            ("apple", vec![-1.0, 0.2, -0.3]),
        ])
        .unwrap();
        let out = clustered_analogies(
            &[("man", "woman")],
            1,
            1,
            AnalogyMethod::cosmul(),
            &m,
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, "boy");
        let direct = solve_analogy(
            "man",
            "woman",
            "boy",
            AnalogyMethod::cosmul(),
            &m,
            1,
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(out[0].targets, direct);
        assert_eq!(out[0].targets[0].0, "girl");
    }
}
