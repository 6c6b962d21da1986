use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The sentinel token every trained vocabulary carries.
pub const SENTINEL: &str = "</s>";

/// What to do with tokens that have no vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    Error,
    /// Substitute the `</s>` vector (or drop the token if the model has
    /// no sentinel) and log a warning.
    #[default]
    SkipWithDefault,
}

/// Vocabulary plus a row-major `len × dim` matrix of f32 vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    dim: usize,
    normalized: bool,
    /// Output-layer weights left over from training; kept in memory only so
    /// incremental training can continue from them.
    pub(crate) output: Option<Vec<f32>>,
}

impl PartialEq for EmbeddingModel {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.words == other.words && self.vectors == other.vectors
    }
}

impl EmbeddingModel {
    pub fn from_parts(words: Vec<String>, vectors: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("model dimension must be >= 1".into()));
        }
        if vectors.len() != words.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: words.len() * dim,
                actual: vectors.len(),
            });
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("model contains non-finite components".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate token `{w}` in model")));
            }
        }
        let mut model = EmbeddingModel {
            words,
            index,
            vectors,
            dim,
            normalized: false,
            output: None,
        };
        model.normalized = model.check_normalized();
        Ok(model)
    }

    /// Build from `(token, vector)` pairs; all vectors must have equal length.
    pub fn from_vectors<S: Into<String>>(entries: Vec<(S, Vec<f32>)>) -> Result<Self> {
        let dim = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        let mut words = Vec::with_capacity(entries.len());
        let mut flat = Vec::with_capacity(entries.len() * dim);
        for (w, v) in entries {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            words.push(w.into());
            flat.extend(v);
        }
        Self::from_parts(words, flat, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn vector(&self, token: &str) -> Option<&[f32]> {
        self.index_of(token).map(|i| self.vector_at(i))
    }

    pub fn vector_at(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// The whole `len × dim` matrix, row-major.
    pub fn matrix(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector_f64(&self, token: &str) -> Option<Vec<f64>> {
        self.vector(token)
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
    }

    fn check_normalized(&self) -> bool {
        (0..self.len()).all(|i| (norm(self.vector_at(i)) - 1.0).abs() <= 1e-6)
    }

    /// Scale every row to unit length. Rows already within 1e-6 of unit
    /// length are left untouched so normalized models round-trip exactly;
    /// zero rows stay zero.
    pub fn normalize(&mut self) {
        let dim = self.dim;
        for row in self.vectors.chunks_mut(dim) {
            let n = norm(row);
            if n > 0.0 && (n - 1.0).abs() > 1e-6 {
                for x in row.iter_mut() {
                    *x = (f64::from(*x) / n) as f32;
                }
            }
        }
        self.normalized = self.check_normalized();
    }

    /// Multiply every component by `c`; used to test scale invariance.
    pub fn scaled(&self, c: f32) -> Self {
        let mut m = self.clone();
        m.vectors.iter_mut().for_each(|x| *x *= c);
        m.normalized = m.check_normalized();
        m.output = None;
        m
    }

    /// Resolve one token under `policy`: its own vector, else the sentinel's
    /// vector under `SkipWithDefault`, else `None` (dropped).
    pub fn resolve(&self, token: &str, policy: OovPolicy) -> Result<Option<&[f32]>> {
        if let Some(v) = self.vector(token) {
            return Ok(Some(v));
        }
        match policy {
            OovPolicy::Error => Err(Error::UnknownToken(token.to_string())),
            OovPolicy::SkipWithDefault => {
                log::debug!("event=oov token={token} substitute={SENTINEL}");
                Ok(self.vector(SENTINEL))
            }
        }
    }

    /// Componentwise mean (in f64) of the vectors of `tokens` after OOV
    /// resolution. Not re-normalized.
    pub fn mean_vector<S: AsRef<str>>(&self, tokens: &[S], policy: OovPolicy) -> Result<Vec<f64>> {
        let mut sum = vec![0.0f64; self.dim];
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.resolve(t.as_ref(), policy)? {
                for (s, &x) in sum.iter_mut().zip(v) {
                    *s += f64::from(x);
                }
                n += 1;
            }
        }
        if n == 0 {
            let list: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
            return Err(Error::AllTokensUnknown(list.join(", ")));
        }
        sum.iter_mut().for_each(|s| *s /= n as f64);
        Ok(sum)
    }

    pub(crate) fn into_parts(self) -> (Vec<String>, Vec<f32>, Option<Vec<f32>>) {
        (self.words, self.vectors, self.output)
    }
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_to_unit_length() {
        let mut m =
            EmbeddingModel::from_vectors(vec![("a", vec![3.0, 4.0]), ("b", vec![0.0, 2.0])])
                .unwrap();
        assert!(!m.is_normalized());
        m.normalize();
        assert!(m.is_normalized());
        assert_eq!(m.vector("a").unwrap(), &[0.6, 0.8]);
        assert_eq!(m.vector("zzz"), None);
    }

    #[test]
    fn rejects_ragged_and_duplicate_input() {
        assert!(matches!(
            EmbeddingModel::from_vectors(vec![("a", vec![1.0]), ("b", vec![1.0, 2.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(EmbeddingModel::from_vectors(vec![("a", vec![1.0]), ("a", vec![2.0])]).is_err());
    }
}
