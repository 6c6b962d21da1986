//! Nearest-neighbour search over model vectors: batched exact scoring, sign
//! random projection LSH and spherical k-means candidate pruning, always
//! followed by exact cosine re-ranking.

pub mod kmeans;
pub mod lsh;
pub mod persist;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::parallel::Parallelism;

pub use kmeans::{spherical_kmeans, SphericalKMeansIndex};
pub use lsh::{build_lsh, LshIndex};
pub use persist::StoredIndex;

const SCORE_CHUNK: usize = 1024;

/// Dot product of every model row with `query`, in row order. On a
/// normalized model and unit query these are the cosines.
pub fn batch_scores(query: &[f64], model: &EmbeddingModel, par: Parallelism) -> Result<Vec<f64>> {
    let dim = model.dim();
    if query.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: query.len(),
        });
    }
    let matrix = model.matrix();
    let mut out = vec![0.0f64; model.len()];
    par.for_each_chunk_mut(&mut out, SCORE_CHUNK, |ci, chunk| {
        for (j, slot) in chunk.iter_mut().enumerate() {
            let row = ci * SCORE_CHUNK + j;
            let v = &matrix[row * dim..(row + 1) * dim];
            *slot = v.iter().zip(query).map(|(&x, q)| f64::from(x) * q).sum();
        }
    });
    Ok(out)
}

/// Euclidean norm of every model row.
pub fn row_norms(model: &EmbeddingModel, par: Parallelism) -> Vec<f64> {
    par.map_range(model.len(), |i| {
        model
            .vector_at(i)
            .iter()
            .map(|&x| f64::from(x).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Exact,
    Lsh {
        radius: u32,
    },
    KMeans {
        n_probe: usize,
    },
}

impl Strategy {
    pub fn is_exact(self) -> bool {
        self == Strategy::Exact
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// `exact`, `lsh:<radius>` or `kmeans:<n_probe>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "bad strategy `{s}` (expected exact, lsh:N or kmeans:N)"
            ))
        };
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("exact", None) => Ok(Strategy::Exact),
            ("lsh", Some(a)) => {
                let radius: u32 = a.parse().map_err(|_| bad())?;
                if radius > lsh::MAX_RADIUS {
                    return Err(bad());
                }
                Ok(Strategy::Lsh { radius })
            }
            ("kmeans", Some(a)) => {
                let n_probe: usize = a.parse().map_err(|_| bad())?;
                if n_probe == 0 {
                    return Err(bad());
                }
                Ok(Strategy::KMeans { n_probe })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Exact => write!(f, "exact"),
            Strategy::Lsh { radius } => write!(f, "lsh:{radius}"),
            Strategy::KMeans { n_probe } => write!(f, "kmeans:{n_probe}"),
        }
    }
}

/// Indices available to approximate strategies.
#[derive(Debug, Clone, Default)]
pub struct AnnIndex {
    pub lsh: Option<LshIndex>,
    pub kmeans: Option<SphericalKMeansIndex>,
}

impl AnnIndex {
    /// Candidate rows for `query` under `strategy`; `None` means all rows.
    pub fn candidates(&self, query: &[f64], strategy: Strategy) -> Result<Option<Vec<u32>>> {
        match strategy {
            Strategy::Exact => Ok(None),
            Strategy::Lsh { radius } => {
                let idx = self
                    .lsh
                    .as_ref()
                    .ok_or_else(|| Error::Config("strategy lsh requires an LSH index".into()))?;
                idx.candidates(query, radius).map(Some)
            }
            Strategy::KMeans { n_probe } => {
                let idx = self.kmeans.as_ref().ok_or_else(|| {
                    Error::Config("strategy kmeans requires a k-means index".into())
                })?;
                idx.candidates(query, n_probe).map(Some)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    pub entries: Vec<(String, f64)>,
    pub exact: bool,
}

/// Order by descending score, ties by ascending token.
pub(crate) fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Keep the best `k` of `entries` under [`rank_order`].
pub(crate) fn take_top(mut entries: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    entries.sort_by(rank_order);
    entries.truncate(k);
    entries
}

/// Top-`k` rows by cosine to `query`. Approximate strategies score only their
/// candidate rows, with the same exact cosine as the exhaustive path.
/// Tokens in `exclude` and zero rows never appear.
pub fn top_k(
    query: &[f64],
    k: usize,
    model: &EmbeddingModel,
    strategy: Strategy,
    index: &AnnIndex,
    exclude: &[&str],
    par: Parallelism,
) -> Result<TopKResult> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    if qn == 0.0 {
        return Err(Error::ZeroVector);
    }
    let excluded: Vec<usize> = exclude.iter().filter_map(|t| model.index_of(t)).collect();
    let cos = |i: usize, dot: f64, norm: f64| -> Option<(String, f64)> {
        if norm == 0.0 || excluded.contains(&i) {
            return None;
        }
        Some((
            model.word(i).to_string(),
            (dot / (norm * qn)).clamp(-1.0, 1.0),
        ))
    };
    let entries: Vec<(String, f64)> = match index.candidates(query, strategy)? {
        None => {
            let dots = batch_scores(query, model, par)?;
            let norms = row_norms(model, par);
            (0..model.len())
                .filter_map(|i| cos(i, dots[i], norms[i]))
                .collect()
        }
        Some(rows) => rows
            .into_iter()
            .filter_map(|r| {
                let i = r as usize;
                let v = model.vector_at(i);
                let dot: f64 = v.iter().zip(query).map(|(&x, q)| f64::from(x) * q).sum();
                let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                cos(i, dot, norm)
            })
            .collect(),
    };
    Ok(TopKResult {
        entries: take_top(entries, k),
        exact: strategy.is_exact(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> EmbeddingModel {
        let mut m = EmbeddingModel::from_vectors(vec![
            ("a", vec![1.0, 0.0, 0.0]),
            ("b", vec![0.9, 0.1, 0.0]),
            ("c", vec![0.0, 1.0, 0.0]),
            ("d", vec![0.0, 0.0, 1.0]),
        ])
        .unwrap();
        m.normalize();
        m
    }

    #[test]
    fn self_score_is_one() {
        let m = model();
        let q: Vec<f64> = m
            .vector("b")
            .unwrap()
            .iter()
            .map(|&x| f64::from(x))
            .collect();
        let s = batch_scores(&q, &m, Parallelism::Sequential).unwrap();
        assert!((s[1] - 1.0).abs() < 1e-6);
        assert!(batch_scores(&[1.0], &m, Parallelism::Sequential).is_err());
    }

    #[test]
    fn exact_top_k_with_exclusion() {
        let m = model();
        let r = top_k(
            &[1.0, 0.0, 0.0],
            2,
            &m,
            Strategy::Exact,
            &AnnIndex::default(),
            &["a"],
            Parallelism::Sequential,
        )
        .unwrap();
        assert!(r.exact);
        assert_eq!(r.entries[0].0, "b");
        assert_eq!(r.entries.len(), 2);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("exact".parse::<Strategy>().unwrap(), Strategy::Exact);
        assert_eq!(
            "lsh:2".parse::<Strategy>().unwrap(),
            Strategy::Lsh { radius: 2 }
        );
        assert_eq!(
            "kmeans:3".parse::<Strategy>().unwrap(),
            Strategy::KMeans { n_probe: 3 }
        );
        for bad in ["lsh", "lsh:3", "kmeans:0", "fast"] {
            assert!(bad.parse::<Strategy>().is_err(), "{bad}");
        }
        assert_eq!(Strategy::Lsh { radius: 1 }.to_string(), "lsh:1");
    }

    #[test]
    fn missing_index_is_config_error() {
        let m = model();
        let err = top_k(
            &[1.0, 0.0, 0.0],
            1,
            &m,
            Strategy::Lsh { radius: 1 },
            &AnnIndex::default(),
            &[],
            Parallelism::Sequential,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
