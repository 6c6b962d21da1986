use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::parallel::Parallelism;

pub const MAX_BITS: usize = 64;
pub const MAX_RADIUS: u32 = 2;

/// Sign-random-projection index: bit `i` of a signature is set iff the
/// vector's projection on plane `i` is nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct LshIndex {
    pub(crate) bits: usize,
    pub(crate) seed: u64,
    pub(crate) dim: usize,
    /// `bits × dim`, row-major.
    pub(crate) planes: Vec<f64>,
    /// One signature per model row.
    pub(crate) signatures: Vec<u64>,
    pub(crate) buckets: HashMap<u64, Vec<u32>>,
}

pub(crate) fn draw_planes(bits: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..bits * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

pub(crate) fn bucket_map(signatures: &[u64]) -> HashMap<u64, Vec<u32>> {
    let mut buckets: HashMap<u64, Vec<u32>> = HashMap::new();
    for (i, &s) in signatures.iter().enumerate() {
        buckets.entry(s).or_default().push(i as u32);
    }
    buckets
}

impl LshIndex {
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signatures(&self) -> &[u64] {
        &self.signatures
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn signature(&self, v: &[f64]) -> Result<u64> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(signature_of(&self.planes, self.dim, v.iter().copied()))
    }

    /// Row indices whose signature is within Hamming distance `radius` of
    /// the query's, in ascending order.
    pub fn candidates(&self, query: &[f64], radius: u32) -> Result<Vec<u32>> {
        if radius > MAX_RADIUS {
            return Err(Error::Config(format!(
                "LSH radius {radius} exceeds {MAX_RADIUS}"
            )));
        }
        let sig = self.signature(query)?;
        let mut out = Vec::new();
        let mut visit = |s: u64| {
            if let Some(b) = self.buckets.get(&s) {
                out.extend_from_slice(b);
            }
        };
        visit(sig);
        if radius >= 1 {
            for i in 0..self.bits {
                visit(sig ^ (1 << i));
            }
        }
        if radius >= 2 {
            for i in 0..self.bits {
                for j in i + 1..self.bits {
                    visit(sig ^ (1 << i) ^ (1 << j));
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

fn signature_of(planes: &[f64], dim: usize, v: impl Iterator<Item = f64> + Clone) -> u64 {
    let mut sig = 0u64;
    for (i, plane) in planes.chunks_exact(dim).enumerate() {
        let dot: f64 = plane.iter().zip(v.clone()).map(|(p, x)| p * x).sum();
        if dot >= 0.0 {
            sig |= 1 << i;
        }
    }
    sig
}

pub fn build_lsh(
    model: &EmbeddingModel,
    bits: usize,
    seed: u64,
    par: Parallelism,
) -> Result<LshIndex> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::Config(format!(
            "LSH signature length must be 1..={MAX_BITS}, got {bits}"
        )));
    }
    let dim = model.dim();
    let planes = draw_planes(bits, dim, seed);
    let signatures = par.map_range(model.len(), |i| {
        signature_of(
            &planes,
            dim,
            model.vector_at(i).iter().map(|&x| f64::from(x)),
        )
    });
    let buckets = bucket_map(&signatures);
    Ok(LshIndex {
        bits,
        seed,
        dim,
        planes,
        signatures,
        buckets,
    })
}
