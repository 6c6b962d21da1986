//! Versioned binary index files.
//!
//! Layout (little-endian): magic `CGDBANN\0`, version u32, kind u8
//! (1 = LSH, 2 = spherical k-means), seed u64, dim u32, rows u32, then
//! LSH: bits u32, planes `bits × dim` f64, signatures `rows` u64;
//! k-means: k u32, max_iters u32, centroids `k × dim` f64, assignment `rows` u32.

use std::path::Path;

use crate::ann::kmeans::SphericalKMeansIndex;
use crate::ann::lsh::{bucket_map, LshIndex, MAX_BITS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CGDBANN\0";
pub const VERSION: u32 = 1;
const KIND_LSH: u8 = 1;
const KIND_KMEANS: u8 = 2;

/// A persisted index of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredIndex {
    Lsh(LshIndex),
    KMeans(SphericalKMeansIndex),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: usize) {
        self.0.extend_from_slice(&(x as u32).to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                "unexpected end of index file",
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.pos as u64, msg)
    }
}

fn header(w: &mut Writer, kind: u8, seed: u64, dim: usize, rows: usize) {
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u8(kind);
    w.u64(seed);
    w.u32(dim);
    w.u32(rows);
}

impl StoredIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        match self {
            StoredIndex::Lsh(l) => {
                header(&mut w, KIND_LSH, l.seed, l.dim, l.signatures.len());
                w.u32(l.bits);
                l.planes.iter().for_each(|&x| w.f64(x));
                l.signatures.iter().for_each(|&s| w.u64(s));
            }
            StoredIndex::KMeans(km) => {
                header(&mut w, KIND_KMEANS, km.seed, km.dim, km.assignment.len());
                w.u32(km.k);
                w.u32(km.max_iters);
                km.centroids.iter().for_each(|&x| w.f64(x));
                km.assignment.iter().for_each(|&a| w.u32(a as usize));
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format(0, "not an index file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::VersionMismatch(format!(
                "index file version {version}, expected {VERSION}"
            )));
        }
        let kind = r.u8()?;
        let seed = r.u64()?;
        let dim = r.u32()?;
        let rows = r.u32()?;
        let index = match kind {
            KIND_LSH => {
                let bits = r.u32()?;
                if bits == 0 || bits > MAX_BITS {
                    return Err(r.err(format!("bad signature length {bits}")));
                }
                let planes = (0..bits * dim)
                    .map(|_| r.f64())
                    .collect::<Result<Vec<_>>>()?;
                let signatures = (0..rows).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                StoredIndex::Lsh(LshIndex {
                    bits,
                    seed,
                    dim,
                    planes,
                    buckets: bucket_map(&signatures),
                    signatures,
                })
            }
            KIND_KMEANS => {
                let k = r.u32()?;
                let max_iters = r.u32()?;
                let centroids = (0..k * dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let mut assignment = Vec::with_capacity(rows);
                for _ in 0..rows {
                    let a = r.u32()?;
                    if a >= k {
                        return Err(r.err(format!("cluster id {a} out of range for k={k}")));
                    }
                    assignment.push(a as u32);
                }
                StoredIndex::KMeans(SphericalKMeansIndex {
                    k,
                    dim,
                    seed,
                    max_iters,
                    centroids,
                    assignment,
                    objective_history: Vec::new(),
                })
            }
            other => return Err(Error::format(12, format!("unknown index kind {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after index payload"));
        }
        Ok(index)
    }

    pub fn rows(&self) -> usize {
        match self {
            StoredIndex::Lsh(l) => l.signatures.len(),
            StoredIndex::KMeans(k) => k.assignment.len(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::{build_lsh, spherical_kmeans};
    use crate::embedding::EmbeddingModel;
    use crate::parallel::Parallelism;

    fn model() -> EmbeddingModel {
        EmbeddingModel::from_vectors(vec![
            ("a", vec![1.0, 0.2, -0.3]),
            ("b", vec![-0.5, 0.9, 0.1]),
            ("c", vec![0.3, -0.8, 0.6]),
            ("d", vec![0.9, 0.1, -0.2]),
        ])
        .unwrap()
    }

    #[test]
    fn lsh_round_trip() {
        let idx = StoredIndex::Lsh(build_lsh(&model(), 10, 3, Parallelism::Sequential).unwrap());
        let bytes = idx.to_bytes();
        assert_eq!(StoredIndex::from_bytes(&bytes).unwrap(), idx);
    }

    #[test]
    fn kmeans_round_trip_ignores_history() {
        let km = spherical_kmeans(&model(), 2, 10, 3, Parallelism::Sequential).unwrap();
        let bytes = StoredIndex::KMeans(km.clone()).to_bytes();
        match StoredIndex::from_bytes(&bytes).unwrap() {
            StoredIndex::KMeans(back) => {
                assert_eq!(back.centroids, km.centroids);
                assert_eq!(back.assignment, km.assignment);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corrupt_files() {
        let bytes = StoredIndex::Lsh(build_lsh(&model(), 4, 3, Parallelism::Sequential).unwrap())
            .to_bytes();
        assert!(matches!(
            StoredIndex::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            StoredIndex::from_bytes(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut v2 = bytes;
        v2[8] = 2;
        assert!(matches!(
            StoredIndex::from_bytes(&v2),
            Err(Error::VersionMismatch(_))
        ));
    }
}
