//! The JSON project file. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use cognidb::embedding::{ModelFormat, OovPolicy, TrainingConfig};
use cognidb::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForeignKey {
    pub column: String,
    /// Referenced table; its primary key is the target.
    pub table: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSource {
    pub name: String,
    pub csv: PathBuf,
    /// `<table>.schema.json` sidecar; kinds are inferred without one.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

fn images_name() -> String {
    "images".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSource {
    #[serde(default = "images_name")]
    pub name: String,
    /// Directory of `<imagename>.json` responses.
    #[serde(default)]
    pub fixture_dir: Option<PathBuf>,
    /// Use the live tagging service instead of fixtures.
    #[serde(default)]
    pub live: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbSource {
    pub path: PathBuf,
    #[serde(default = "one")]
    pub repetitions: usize,
}

fn lsh_bits() -> Option<usize> {
    Some(16)
}

fn kmeans_iters() -> usize {
    25
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexSettings {
    /// `null` skips the LSH index.
    #[serde(default = "lsh_bits")]
    pub lsh_bits: Option<usize>,
    #[serde(default)]
    pub kmeans_k: Option<usize>,
    #[serde(default = "kmeans_iters")]
    pub kmeans_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for IndexSettings {
    fn default() -> Self {
        IndexSettings {
            lsh_bits: lsh_bits(),
            kmeans_k: None,
            kmeans_iters: kmeans_iters(),
            seed: 0,
        }
    }
}

fn model_format() -> ModelFormat {
    ModelFormat::Word2vecBinary
}

fn corpus_path() -> PathBuf {
    "corpus.txt".into()
}

fn store_path() -> PathBuf {
    "store".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default)]
    pub tables: Vec<TableSource>,
    #[serde(default)]
    pub images: Option<ImageSource>,
    /// Training config JSON.
    pub training: PathBuf,
    #[serde(default = "corpus_path")]
    pub corpus: PathBuf,
    #[serde(default = "store_path")]
    pub store: PathBuf,
    #[serde(default = "model_format")]
    pub model_format: ModelFormat,
    #[serde(default)]
    pub index: IndexSettings,
    #[serde(default)]
    pub external_kb: Vec<KbSource>,
    /// Store of a separately trained external-KB model.
    #[serde(default)]
    pub external_store: Option<PathBuf>,
    #[serde(default)]
    pub oov_policy: OovPolicy,
    #[serde(default)]
    pub stop_words: Option<PathBuf>,
}

pub const API_KEY_VAR: &str = "COGNIDB_IMAGE_API_KEY";

fn must_exist(p: &Path, what: &str) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} `{}` does not exist",
            p.display()
        )))
    }
}

impl ProjectConfig {
    /// Read, resolve relative paths and check every input path exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!(
                "cannot read project file `{}`: {e}",
                path.display()
            ))
        })?;
        let mut cfg: ProjectConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("project file `{}`: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for t in &mut self.tables {
            fix(&mut t.csv);
            t.schema.as_mut().map(fix);
        }
        if let Some(dir) = self.images.as_mut().and_then(|i| i.fixture_dir.as_mut()) {
            fix(dir);
        }
        fix(&mut self.training);
        fix(&mut self.corpus);
        fix(&mut self.store);
        self.external_kb.iter_mut().for_each(|k| fix(&mut k.path));
        self.external_store.as_mut().map(fix);
        self.stop_words.as_mut().map(fix);
    }

    fn validate(&self) -> Result<()> {
        if self.tables.is_empty() && self.images.is_none() {
            return Err(Error::Config(
                "project has no tables and no image source".into(),
            ));
        }
        for t in &self.tables {
            must_exist(&t.csv, &format!("CSV for table `{}`", t.name))?;
            if let Some(s) = &t.schema {
                must_exist(s, &format!("schema for table `{}`", t.name))?;
            }
            for fk in &t.foreign_keys {
                let known = self
                    .tables
                    .iter()
                    .any(|o| o.name.eq_ignore_ascii_case(&fk.table))
                    || self
                        .images
                        .as_ref()
                        .is_some_and(|i| i.name.eq_ignore_ascii_case(&fk.table));
                if !known {
                    return Err(Error::Config(format!(
                        "foreign key `{}.{}` references unknown table `{}`",
                        t.name, fk.column, fk.table
                    )));
                }
            }
        }
        if let Some(img) = &self.images {
            if img.live {
                if std::env::var_os(API_KEY_VAR).is_none() {
                    return Err(Error::Config(format!(
                        "live image transport needs ${API_KEY_VAR}"
                    )));
                }
            } else {
                let dir = img.fixture_dir.as_ref().ok_or_else(|| {
                    Error::Config("image source needs `fixture_dir` unless `live` is set".into())
                })?;
                must_exist(dir, "image fixture directory")?;
            }
        }
        must_exist(&self.training, "training config")?;
        for k in &self.external_kb {
            must_exist(&k.path, "external KB")?;
            if k.repetitions == 0 {
                return Err(Error::Config(format!(
                    "external KB `{}`: repetitions must be >= 1",
                    k.path.display()
                )));
            }
        }
        if let Some(p) = &self.external_store {
            must_exist(p, "external model store")?;
        }
        if let Some(p) = &self.stop_words {
            must_exist(p, "stop-word list")?;
        }
        Ok(())
    }

    pub fn training_config(&self) -> Result<TrainingConfig> {
        let text = std::fs::read_to_string(&self.training)?;
        TrainingConfig::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!(
                "training config `{}`: {j}",
                self.training.display()
            )),
            other => other,
        })
    }

    /// Row-key sidecar written next to the corpus.
    pub fn corpus_keys(&self) -> PathBuf {
        let mut name = self.corpus.file_name().unwrap_or_default().to_os_string();
        name.push(".keys");
        self.corpus.with_file_name(name)
    }
}
