use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Cbow,
    Skipgram,
}

/// Training hyper-parameters. `Default` reproduces the reference setting
/// `-size 300 -window 12 -negative 16 -hs 0 -sample 1e-4 -min-count 0 -cbow 1 -iter 17`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "d::dimension")]
    pub dimension: usize,
    #[serde(default = "d::window")]
    pub window: usize,
    #[serde(default = "d::negative")]
    pub negative_samples: usize,
    #[serde(default = "d::sample")]
    pub subsample_threshold: f64,
    #[serde(default)]
    pub min_count: u64,
    #[serde(default = "d::epochs")]
    pub epochs: usize,
    #[serde(default = "d::architecture")]
    pub architecture: Architecture,
    /// Context wraps around sentence ends.
    #[serde(default)]
    pub circular_window: bool,
    /// No random window shrinking: every in-window token counts fully.
    #[serde(default)]
    pub uniform_influence: bool,
    /// The sentence's row key joins every context set.
    #[serde(default)]
    pub pk_always_neighbor: bool,
    /// Gradient multiplier per column, matched on the `<column>_` token prefix.
    #[serde(default)]
    pub column_weights: BTreeMap<String, f64>,
    #[serde(default = "d::learning_rate")]
    pub learning_rate: f64,
    /// Required in config files so runs are reproducible.
    pub seed: u64,
    /// Worker count; 1 is the deterministic single-threaded mode.
    #[serde(default = "d::threads")]
    pub threads: usize,
    /// Flags of the reference tool kept for provenance only; they do not
    /// change training.
    #[serde(default = "d::one")]
    pub cbuffer: u32,
    #[serde(default = "d::one")]
    pub eweight: u32,
}

mod d {
    use super::Architecture;
    pub fn dimension() -> usize {
        300
    }
    pub fn window() -> usize {
        12
    }
    pub fn negative() -> usize {
        16
    }
    pub fn sample() -> f64 {
        1e-4
    }
    pub fn epochs() -> usize {
        17
    }
    pub fn architecture() -> Architecture {
        Architecture::Cbow
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn threads() -> usize {
        1
    }
    pub fn one() -> u32 {
        1
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dimension: d::dimension(),
            window: d::window(),
            negative_samples: d::negative(),
            subsample_threshold: d::sample(),
            min_count: 0,
            epochs: d::epochs(),
            architecture: d::architecture(),
            circular_window: false,
            uniform_influence: false,
            pk_always_neighbor: false,
            column_weights: BTreeMap::new(),
            learning_rate: d::learning_rate(),
            seed: 1,
            threads: d::threads(),
            cbuffer: 1,
            eweight: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dimension == 0 {
            return bad("dimension must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.threads == 0 {
            return bad("threads must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.subsample_threshold >= 0.0) {
            return bad("subsample_threshold must be >= 0");
        }
        if let Some((c, _)) = self
            .column_weights
            .iter()
            .find(|(_, w)| !(**w >= 0.0) || !w.is_finite())
        {
            return Err(Error::Config(format!(
                "column weight for `{c}` must be nonnegative"
            )));
        }
        Ok(())
    }

    /// The command-line form of the reference tool, for run logs.
    pub fn as_tool_args(&self) -> String {
        format!(
            "-size {} -window {} -negative {} -hs 0 -sample {} -min-count {} -cbuffer {} -cbow {} -eweight {} -threads {} -iter {}",
            self.dimension,
            self.window,
            self.negative_samples,
            format_sample(self.subsample_threshold),
            self.min_count,
            self.cbuffer,
            u8::from(self.architecture == Architecture::Cbow),
            self.eweight,
            self.threads,
            self.epochs
        )
    }

    /// Short stable hash tying artifacts to the configuration that made them.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainingConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn format_sample(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let s = format!("{x:e}");
    // 1e-4 rather than 1e-4 variants like 1.0e-4
    s.replace(".0e", "e")
}
