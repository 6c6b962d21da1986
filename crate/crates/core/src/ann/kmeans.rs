use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::parallel::Parallelism;

/// Spherical k-means partition of the model's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalKMeansIndex {
    pub(crate) k: usize,
    pub(crate) dim: usize,
    pub(crate) seed: u64,
    pub(crate) max_iters: usize,
    /// `k × dim` unit vectors, row-major.
    pub(crate) centroids: Vec<f64>,
    pub(crate) assignment: Vec<u32>,
    /// Objective after each centroid update; not persisted.
    pub(crate) objective_history: Vec<f64>,
}

impl SphericalKMeansIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn objective_history(&self) -> &[f64] {
        &self.objective_history
    }

    /// Members of cluster `j` in ascending row order.
    pub fn members(&self, j: usize) -> Vec<u32> {
        (0..self.assignment.len() as u32)
            .filter(|&i| self.assignment[i as usize] == j as u32)
            .collect()
    }

    /// The `n_probe` centroids with highest dot product to `query`
    /// (ties to the lower id).
    pub fn nearest_centroids(&self, query: &[f64], n_probe: usize) -> Result<Vec<usize>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let mut scored: Vec<(usize, f64)> = (0..self.k)
            .map(|j| (j, dot(self.centroid(j), query)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(n_probe).map(|(j, _)| j).collect())
    }

    /// Rows of the `n_probe` clusters nearest to `query`, ascending.
    pub fn candidates(&self, query: &[f64], n_probe: usize) -> Result<Vec<u32>> {
        let probe = self.nearest_centroids(query, n_probe)?;
        let mut mark = vec![false; self.k];
        for j in probe {
            mark[j] = true;
        }
        Ok((0..self.assignment.len() as u32)
            .filter(|&i| mark[self.assignment[i as usize] as usize])
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_rows(model: &EmbeddingModel) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.len() * model.dim());
    for i in 0..model.len() {
        let v = model.vector_at(i);
        let n = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        let s = if n > 0.0 { 1.0 / n } else { 0.0 };
        out.extend(v.iter().map(|&x| f64::from(x) * s));
    }
    out
}

fn assign(units: &[f64], centroids: &[f64], dim: usize, par: Parallelism) -> Vec<(u32, f64)> {
    let n = units.len() / dim;
    par.map_range(n, |i| {
        let v = &units[i * dim..(i + 1) * dim];
        let mut best = (0u32, f64::NEG_INFINITY);
        for (j, c) in centroids.chunks_exact(dim).enumerate() {
            let s = dot(v, c);
            if s > best.1 {
                best = (j as u32, s);
            }
        }
        best
    })
}

/// Cluster the model rows into `k` groups by cosine. Initial centroids are
/// `k` distinct rows chosen with `seed`; each iteration re-centres clusters
/// on the normalized mean of their (unit) members, reseeds empty clusters
/// with the row farthest from its centroid, and reassigns. Stops after
/// `max_iters` or when no assignment changes.
pub fn spherical_kmeans(
    model: &EmbeddingModel,
    k: usize,
    max_iters: usize,
    seed: u64,
    par: Parallelism,
) -> Result<SphericalKMeansIndex> {
    let n = model.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let dim = model.dim();
    let units = unit_rows(model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = sample(&mut rng, n, k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<f64> = init
        .iter()
        .flat_map(|&i| units[i * dim..(i + 1) * dim].iter().copied())
        .collect();

    let mut current = assign(&units, &centroids, dim, par);
    let mut history = Vec::new();
    for _ in 0..max_iters {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(j, _)) in current.iter().enumerate() {
            let j = j as usize;
            counts[j] += 1;
            for (s, x) in sums[j * dim..(j + 1) * dim]
                .iter_mut()
                .zip(&units[i * dim..(i + 1) * dim])
            {
                *s += x;
            }
        }
        for j in 0..k {
            let s = &sums[j * dim..(j + 1) * dim];
            let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            if counts[j] > 0 && norm > 0.0 {
                for (c, x) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(s) {
                    *c = x / norm;
                }
            }
        }
        // reseed empty clusters with the rows farthest from their centroids
        let mut used = vec![false; n];
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = (0..n)
                .filter(|&i| !used[i])
                .min_by(|&a, &b| {
                    let ca = dot(
                        &units[a * dim..(a + 1) * dim],
                        &centroids[current[a].0 as usize * dim..][..dim],
                    );
                    let cb = dot(
                        &units[b * dim..(b + 1) * dim],
                        &centroids[current[b].0 as usize * dim..][..dim],
                    );
                    ca.total_cmp(&cb).then(a.cmp(&b))
                })
                .expect("k <= n leaves a row to reseed with");
            used[far] = true;
            centroids[j * dim..(j + 1) * dim].copy_from_slice(&units[far * dim..(far + 1) * dim]);
        }
        let objective: f64 = current
            .iter()
            .enumerate()
            .map(|(i, &(j, _))| {
                dot(
                    &units[i * dim..(i + 1) * dim],
                    &centroids[j as usize * dim..][..dim],
                )
            })
            .sum();
        history.push(objective);

        let next = assign(&units, &centroids, dim, par);
        let changed = next.iter().zip(&current).any(|(a, b)| a.0 != b.0);
        current = next;
        if !changed {
            break;
        }
    }

    Ok(SphericalKMeansIndex {
        k,
        dim,
        seed,
        max_iters,
        centroids,
        assignment: current.into_iter().map(|(j, _)| j).collect(),
        objective_history: history,
    })
}
