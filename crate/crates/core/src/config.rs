//! Pipeline configuration: a TOML file with one table per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::Grouping;
use crate::overlap::PoolMode;
use crate::screening::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of `<doc_id>.txt` files.
    pub corpus: PathBuf,
    pub perplexity: PathBuf,
    pub panel: PathBuf,
    pub meta: PathBuf,
    /// Directory of `<benchmark_id>.txt` question sets.
    pub questions: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus".into(),
            perplexity: "perplexity.sigp".into(),
            panel: "panel.tsv".into(),
            meta: "meta.tsv".into(),
            questions: "questions".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub window: usize,
    pub downsample_rate: f64,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            window: 30,
            downsample_rate: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenSection {
    pub alpha: f64,
    pub method: Method,
    pub preselect_raw_eq2: bool,
}

impl Default for ScreenSection {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            method: Method::Thrush,
            preselect_raw_eq2: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineSection {
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlapSection {
    pub replicates: usize,
    pub encoder_endpoint: String,
    /// Characters; 0 uses the limit reported by the encoder.
    pub truncation_limit: usize,
    pub zscore_pool: PoolMode,
}

impl Default for OverlapSection {
    fn default() -> Self {
        Self {
            replicates: 1000,
            encoder_endpoint: "mock".into(),
            truncation_limit: 0,
            zscore_pool: PoolMode::Session,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub clique_threshold: f64,
    /// Greedy clique search instead of the exact one (required above 200 benchmarks).
    pub clique_greedy: bool,
    pub groupings: Vec<Grouping>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            clique_threshold: 0.5,
            clique_greedy: false,
            groupings: Grouping::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub ingest: IngestSection,
    pub screen: ScreenSection,
    pub mine: MineSection,
    pub overlap: OverlapSection,
    pub analyze: AnalyzeSection,
    pub run: RunSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Invalid(msg) => Error::Invalid(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("config: {msg}")));
        if self.ingest.window == 0 {
            return bad("ingest.window must be at least 1".into());
        }
        let rate = self.ingest.downsample_rate;
        if !(rate > 0.0 && rate <= 1.0) {
            return bad(format!("ingest.downsample_rate {rate} outside (0, 1]"));
        }
        let alpha = self.screen.alpha;
        if !(alpha > 0.0 && alpha <= 0.5) {
            return bad(format!("screen.alpha {alpha} outside (0, 0.5]"));
        }
        if !(self.mine.delta.is_finite() && self.mine.delta >= 0.0) {
            return bad(format!("mine.delta {} must be finite and non-negative", self.mine.delta));
        }
        if self.overlap.replicates == 0 {
            return bad("overlap.replicates must be at least 1".into());
        }
        if self.overlap.encoder_endpoint.trim().is_empty() {
            return bad("overlap.encoder_endpoint is empty".into());
        }
        let t = self.analyze.clique_threshold;
        if !(-1.0..=1.0).contains(&t) {
            return bad(format!("analyze.clique_threshold {t} outside [-1, 1]"));
        }
        if self.analyze.groupings.is_empty() {
            return bad("analyze.groupings is empty".into());
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// the output directory and worker count left out: neither changes
    /// what any stage computes.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.paths.output_dir = PathBuf::new();
        canon.run.workers = 0;
        let text = canon.to_toml().unwrap_or_default();
        Sha256::digest(text.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn semantic_truncation(&self) -> Option<usize> {
        (self.overlap.truncation_limit > 0).then_some(self.overlap.truncation_limit)
    }
}
