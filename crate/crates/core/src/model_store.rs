//! Flat-file artifact store: a model, optional row-attribute cache and ANN
//! indices, tied together by a JSON manifest carrying SHA-256 checksums and
//! the training config hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ann::{AnnIndex, StoredIndex};
use crate::embedding::io::parse_model;
use crate::embedding::{EmbeddingModel, ModelFormat, RowAttributeCache, RowVectors};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
const CACHE_MAGIC: &[u8; 8] = b"CGDBRC\0\0";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    /// Path relative to the store directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub file: String,
    pub format: ModelFormat,
    pub sha256: String,
    pub vocab_size: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub version: u32,
    pub model: ModelEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<FileEntry>,
    /// Index name → file.
    #[serde(default)]
    pub indices: BTreeMap<String, FileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_manifest(dir: &Path, manifest: &StoreManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<StoreManifest> {
    let manifest: StoreManifest =
        serde_json::from_slice(&fs::read(dir.as_ref().join(MANIFEST_FILE))?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::VersionMismatch(format!(
            "store manifest version {}, expected {MANIFEST_VERSION}",
            manifest.version
        )));
    }
    Ok(manifest)
}

fn read_checked(dir: &Path, file: &str, sha256: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(dir.join(file))?;
    if sha256_hex(&bytes) != sha256 {
        return Err(Error::ChecksumMismatch(file.to_string()));
    }
    Ok(bytes)
}

/// Start a store in `dir` (created if needed) holding `model`. Any previous
/// manifest is replaced, dropping its cache and index entries.
pub fn create_store(
    dir: impl AsRef<Path>,
    model: &EmbeddingModel,
    format: ModelFormat,
    seed: Option<u64>,
    config_hash: Option<String>,
) -> Result<StoreManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let file = match format {
        ModelFormat::Word2vecText => "model.txt",
        ModelFormat::Word2vecBinary => "model.bin",
    };
    let bytes = crate::embedding::io::model_to_bytes(model, format);
    fs::write(dir.join(file), &bytes)?;
    let manifest = StoreManifest {
        version: MANIFEST_VERSION,
        model: ModelEntry {
            file: file.to_string(),
            format,
            sha256: sha256_hex(&bytes),
            vocab_size: model.len(),
            dim: model.dim(),
        },
        cache: None,
        indices: BTreeMap::new(),
        seed,
        config_hash,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Save `cache` into the store and record it in the manifest.
pub fn add_cache(dir: impl AsRef<Path>, cache: &RowAttributeCache) -> Result<StoreManifest> {
    let dir = dir.as_ref();
    let mut manifest = read_manifest(dir)?;
    let file = "row_cache.bin";
    let bytes = row_cache_to_bytes(cache);
    fs::write(dir.join(file), &bytes)?;
    manifest.cache = Some(FileEntry {
        file: file.into(),
        sha256: sha256_hex(&bytes),
    });
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Save an index under `name` (e.g. `lsh`, `kmeans`).
pub fn add_index(dir: impl AsRef<Path>, name: &str, index: &StoredIndex) -> Result<StoreManifest> {
    let dir = dir.as_ref();
    let mut manifest = read_manifest(dir)?;
    let file = format!("index_{name}.ann");
    let bytes = index.to_bytes();
    fs::write(dir.join(&file), &bytes)?;
    manifest.indices.insert(
        name.to_string(),
        FileEntry {
            file,
            sha256: sha256_hex(&bytes),
        },
    );
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// An opened store: everything memory-resident, token lookup by hash map.
#[derive(Debug, Clone)]
pub struct ModelStore {
    pub dir: PathBuf,
    pub manifest: StoreManifest,
    pub model: EmbeddingModel,
    pub cache: Option<RowAttributeCache>,
    pub indices: BTreeMap<String, StoredIndex>,
}

impl ModelStore {
    /// Vector of `token` as stored; `None` for unknown tokens (callers
    /// apply their OOV policy).
    pub fn lookup(&self, token: &str) -> Option<&[f32]> {
        self.model.vector(token)
    }

    /// The first LSH and k-means indices, for approximate strategies.
    pub fn ann_index(&self) -> AnnIndex {
        let mut idx = AnnIndex::default();
        for stored in self.indices.values() {
            match stored {
                StoredIndex::Lsh(l) if idx.lsh.is_none() => idx.lsh = Some(l.clone()),
                StoredIndex::KMeans(k) if idx.kmeans.is_none() => idx.kmeans = Some(k.clone()),
                _ => {}
            }
        }
        idx
    }
}

/// Open a store, verifying every checksum. A cache whose config hash
/// differs from the manifest's is kept but logged as a version mismatch.
pub fn open_store(dir: impl AsRef<Path>) -> Result<ModelStore> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let m = &manifest.model;
    let model = parse_model(&read_checked(dir, &m.file, &m.sha256)?, m.format)?;
    if model.len() != m.vocab_size || model.dim() != m.dim {
        return Err(Error::Data(format!(
            "model `{}` has {}x{}, manifest says {}x{}",
            m.file,
            model.len(),
            model.dim(),
            m.vocab_size,
            m.dim
        )));
    }
    let cache = match &manifest.cache {
        Some(e) => {
            let cache = row_cache_from_bytes(&read_checked(dir, &e.file, &e.sha256)?)?;
            if let Some(w) = cache_mismatch(&cache, manifest.config_hash.as_deref()) {
                log::warn!("event=cache_version_mismatch detail=\"{w}\"");
            }
            Some(cache)
        }
        None => None,
    };
    let mut indices = BTreeMap::new();
    for (name, e) in &manifest.indices {
        let idx = StoredIndex::from_bytes(&read_checked(dir, &e.file, &e.sha256)?)?;
        if idx.rows() != model.len() {
            return Err(Error::VersionMismatch(format!(
                "index `{name}` covers {} rows, model has {}",
                idx.rows(),
                model.len()
            )));
        }
        indices.insert(name.clone(), idx);
    }
    Ok(ModelStore {
        dir: dir.to_path_buf(),
        manifest,
        model,
        cache,
        indices,
    })
}

/// A `VersionMismatch` describing why `cache` does not belong to the model
/// trained with `config_hash`, if it does not.
pub fn cache_mismatch(cache: &RowAttributeCache, config_hash: Option<&str>) -> Option<Error> {
    match (cache.config_hash(), config_hash) {
        (Some(c), Some(m)) if c != m => Some(Error::VersionMismatch(format!(
            "row cache built for config {c}, model trained with {m}"
        ))),
        _ => None,
    }
}

// Row cache layout (little-endian): magic, version u32, dim u32, config hash
// (u32 length + UTF-8, length 0 for none), entry count u32, then per entry:
// table, key, column count u32, and per column: name, `dim` f64.
// Strings are u32 length + UTF-8.

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn row_cache_to_bytes(cache: &RowAttributeCache) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(cache.dim() as u32).to_le_bytes());
    put_str(&mut out, cache.config_hash().unwrap_or(""));
    out.extend_from_slice(&(cache.len() as u32).to_le_bytes());
    for (table, key, row) in cache.iter() {
        put_str(&mut out, table);
        put_str(&mut out, key);
        out.extend_from_slice(&(row.columns.len() as u32).to_le_bytes());
        for (name, v) in &row.columns {
            put_str(&mut out, name);
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: "unexpected end of row cache".into(),
            });
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let start = self.pos;
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format {
            offset: start as u64,
            message: "invalid UTF-8 in row cache".into(),
        })
    }
}

pub fn row_cache_from_bytes(bytes: &[u8]) -> Result<RowAttributeCache> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CACHE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a row cache file (bad magic)".into(),
        });
    }
    let version = r.u32()? as u32;
    if version != CACHE_VERSION {
        return Err(Error::VersionMismatch(format!(
            "row cache version {version}, expected {CACHE_VERSION}"
        )));
    }
    let dim = r.u32()?;
    let hash = r.string()?;
    let mut cache = RowAttributeCache::new(dim);
    cache.set_config_hash((!hash.is_empty()).then_some(hash));
    for _ in 0..r.u32()? {
        let table = r.string()?;
        let key = r.string()?;
        let ncols = r.u32()?;
        let mut row = RowVectors::default();
        for _ in 0..ncols {
            let name = r.string()?;
            let v = r
                .take(dim * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            row.columns.push((name, v));
        }
        cache.insert(&table, &key, row)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            message: "trailing bytes after row cache".into(),
        });
    }
    Ok(cache)
}

pub fn save_row_cache(cache: &RowAttributeCache, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, row_cache_to_bytes(cache))?;
    Ok(())
}

pub fn load_row_cache(path: impl AsRef<Path>) -> Result<RowAttributeCache> {
    row_cache_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::build_lsh;
    use crate::parallel::Parallelism;

    fn model() -> EmbeddingModel {
        let mut m = EmbeddingModel::from_vectors(vec![
            ("</s>", vec![0.1, 0.2, 0.3]),
            ("cat", vec![1.0, -0.5, 0.25]),
            ("dog", vec![0.9, -0.4, 0.3]),
        ])
        .unwrap();
        m.normalize();
        m
    }

    fn cache(hash: Option<&str>) -> RowAttributeCache {
        let mut c = RowAttributeCache::new(3);
        c.set_config_hash(hash.map(str::to_string));
        for i in 0..10 {
            let x = i as f64 / 7.0;
            let row = RowVectors {
                columns: vec![
                    ("classA".into(), vec![x, -x, 1.0 / (x + 1.0)]),
                    ("classB".into(), vec![0.0, x * x, 3.0]),
                ],
            };
            c.insert("images", &format!("img{i}"), row).unwrap();
        }
        c
    }

    #[test]
    fn row_cache_round_trip() {
        for c in [cache(Some("abc")), cache(None), RowAttributeCache::new(5)] {
            assert_eq!(row_cache_from_bytes(&row_cache_to_bytes(&c)).unwrap(), c);
        }
    }

    #[test]
    fn store_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        create_store(
            dir.path(),
            &m,
            ModelFormat::Word2vecBinary,
            Some(7),
            Some("abc".into()),
        )
        .unwrap();
        add_cache(dir.path(), &cache(Some("abc"))).unwrap();
        let lsh = build_lsh(&m, 8, 3, Parallelism::Sequential).unwrap();
        add_index(dir.path(), "lsh", &StoredIndex::Lsh(lsh.clone())).unwrap();

        let store = open_store(dir.path()).unwrap();
        assert_eq!(store.model, m);
        assert_eq!(store.lookup("cat"), m.vector("cat"));
        assert!(store.lookup("zebra").is_none());
        assert_eq!(store.ann_index().lsh, Some(lsh));
        assert_eq!(store.manifest.seed, Some(7));

        let path = dir.path().join("model.bin");
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(
            matches!(open_store(dir.path()), Err(Error::ChecksumMismatch(f)) if f == "model.bin")
        );
    }

    #[test]
    fn mismatched_cache_is_flagged() {
        assert!(matches!(
            cache_mismatch(&cache(Some("a")), Some("b")),
            Some(Error::VersionMismatch(_))
        ));
        assert!(cache_mismatch(&cache(Some("a")), Some("a")).is_none());
        assert!(cache_mismatch(&cache(None), Some("a")).is_none());
    }
}
