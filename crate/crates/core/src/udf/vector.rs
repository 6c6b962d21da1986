//! Vector arithmetic shared by the UDFs. All math is f64.

use crate::error::{Error, Result};

/// A meaning vector, optionally remembering the token it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MeaningVector {
    pub components: Vec<f64>,
    pub source_token: Option<String>,
}

impl MeaningVector {
    pub fn new(components: Vec<f64>) -> Self {
        MeaningVector {
            components,
            source_token: None,
        }
    }

    pub fn from_token(token: &str, components: Vec<f64>) -> Self {
        MeaningVector {
            components,
            source_token: Some(token.to_string()),
        }
    }
}

impl AsRef<[f64]> for MeaningVector {
    fn as_ref(&self) -> &[f64] {
        &self.components
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between `a` and `b`, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Componentwise mean of equally long vectors.
pub fn mean<V: AsRef<[f64]>>(vectors: &[V]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, |v| v.as_ref().len());
    let mut out = vec![0.0; dim];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.as_ref()) {
            *o += x;
        }
    }
    let n = vectors.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(
            cosine(&[0.3, 0.4], &[0.3, 0.4]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(
            cosine(&[s, s], &[1.0, 0.0]).unwrap(),
            0.7071,
            epsilon = 1e-4
        );
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn mean_of_vectors() {
        assert_eq!(mean(&[vec![1.0, 0.0], vec![0.0, 1.0]]), vec![0.5, 0.5]);
    }
}
