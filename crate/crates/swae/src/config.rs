//! Run configuration files: TOML with flat dotted keys
//! (`train.lambda = 0.001`) or the equivalent `[train]` tables. Unknown
//! keys are rejected, and every error names a line of the file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use swae_core::data::{gen_gauss_ring, gen_glyphs, ring_geometry, Dataset, RingGeometry, Split, GLYPH_DIM};
use swae_core::nn::DEFAULT_LEAKY_SLOPE;
use swae_core::{Architecture, PriorFamily, TrainConfig};

use crate::checkpoint::{parse_recon_source, recon_source_name};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Ring,
    Glyphs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    /// Corpus seed; each split derives its own seed from it.
    #[serde(default)]
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    #[serde(default)]
    pub ring: RingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingSection {
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for RingSection {
    fn default() -> Self {
        RingSection {
            modes: 8,
            radius: 2.0,
            sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub z_dim: usize,
    /// Empty means the per-dataset default.
    pub stage1_hidden: Vec<usize>,
    pub stage2_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub heads: Vec<String>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let arch = Architecture::points();
        ModelSection {
            latent_dim: arch.latent_dim,
            z_dim: arch.z_dim,
            stage1_hidden: Vec::new(),
            stage2_hidden: arch.stage2_hidden,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            heads: vec!["gaussian".into(), "uniform".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub k: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub max_epochs: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    pub early_stop_patience: u64,
    pub seed: u64,
    pub stage2_recon_source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze_stage1_after: Option<u64>,
    pub eval_every: u64,
    pub scale_recon_by_lambda: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lambda: t.lambda,
            k: t.k,
            batch_size: t.batch_size,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            max_epochs: t.max_epochs,
            max_steps: t.max_steps,
            early_stop_patience: t.early_stop_patience,
            seed: t.seed,
            stage2_recon_source: recon_source_name(t.stage2_recon_source).into(),
            freeze_stage1_after: t.freeze_stage1_after,
            eval_every: t.eval_every,
            scale_recon_by_lambda: t.scale_recon_by_lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Sample grids are written every this many epochs; 0 disables them.
    pub samples_every: u64,
    pub grid_samples: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "runs/default".into(),
            samples_every: 1,
            grid_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Generated samples per head for FID, ICP and coverage.
    pub n_samples: usize,
    /// Toy classifier file for glyph metrics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier: Option<String>,
    /// `standard` or `paired`.
    pub icp: String,
    /// Minimum top-class probability for a glyph sample to count as high
    /// quality.
    pub confidence: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_samples: 10_000,
            classifier: None,
            icp: "standard".into(),
            confidence: 0.9,
        }
    }
}

/// 1-based line of `section.key` (dotted or inside a `[section]` table).
pub fn locate(text: &str, path: &[&str]) -> usize {
    let dotted = path.join(".");
    let mut table = String::new();
    let mut section_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            table = name.trim().to_string();
            if table == dotted {
                section_line = i + 1;
            }
            continue;
        }
        let Some((key, _)) = line.split_once('=') else { continue };
        let key: String = key.split('.').map(str::trim).collect::<Vec<_>>().join(".");
        let full = if table.is_empty() { key } else { format!("{table}.{key}") };
        if full == dotted {
            return i + 1;
        }
    }
    if section_line > 0 {
        return section_line;
    }
    if path.len() > 1 {
        return locate(text, &path[..path.len() - 1]);
    }
    1
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.into(),
            line: e.span().map_or(1, |s| line_of_offset(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.check(text, origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Semantic checks beyond the schema, reported at the offending key.
    fn check(&self, text: &str, origin: &str) -> Result<()> {
        let fail = |path: &[&str], message: String| Error::Config {
            path: origin.into(),
            line: locate(text, path),
            message,
        };
        let d = &self.data;
        for (key, n) in [("n_train", d.n_train), ("n_val", d.n_val), ("n_test", d.n_test)] {
            if n == 0 {
                return Err(fail(&["data", key], format!("data.{key} must be >= 1")));
            }
        }
        if d.kind == DataKind::Ring && (d.ring.modes < 2 || !(d.ring.sigma > 0.0) || !(d.ring.radius > 0.0)) {
            return Err(fail(&["data", "ring"], "ring needs modes >= 2, radius > 0, sigma > 0".into()));
        }
        if self.model.heads.is_empty() {
            return Err(fail(&["model", "heads"], "at least one stage-II head is required".into()));
        }
        for h in &self.model.heads {
            if PriorFamily::parse(h).is_none() {
                return Err(fail(&["model", "heads"], format!("unknown prior {h:?} (expected gaussian or uniform)")));
            }
        }
        if self.model.latent_dim == 0 || self.model.z_dim == 0 {
            return Err(fail(&["model"], "latent_dim and z_dim must be >= 1".into()));
        }
        if parse_recon_source(&self.train.stage2_recon_source).is_none() {
            return Err(fail(
                &["train", "stage2_recon_source"],
                format!("expected encoder or prior, got {:?}", self.train.stage2_recon_source),
            ));
        }
        if !["standard", "paired"].contains(&self.eval.icp.as_str()) {
            return Err(fail(&["eval", "icp"], format!("expected standard or paired, got {:?}", self.eval.icp)));
        }
        if self.eval.n_samples < 2 {
            return Err(fail(&["eval", "n_samples"], "eval.n_samples must be >= 2".into()));
        }
        if self.train.batch_size > self.data.n_train {
            return Err(fail(&["train", "batch_size"], "train.batch_size exceeds data.n_train".into()));
        }
        if let Err(swae_core::Error::InvalidArgument(msg)) = self.train_config().validate() {
            let key = msg.split_whitespace().next().unwrap_or("").to_string();
            return Err(fail(&["train", &key], msg));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lambda: t.lambda,
            k: t.k,
            batch_size: t.batch_size,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            max_epochs: t.max_epochs,
            max_steps: t.max_steps,
            early_stop_patience: t.early_stop_patience,
            seed: t.seed,
            stage2_recon_source: parse_recon_source(&t.stage2_recon_source).unwrap_or_default(),
            freeze_stage1_after: t.freeze_stage1_after,
            eval_every: t.eval_every,
            scale_recon_by_lambda: t.scale_recon_by_lambda,
        }
    }

    pub fn data_dim(&self) -> usize {
        match self.data.kind {
            DataKind::Ring => 2,
            DataKind::Glyphs => GLYPH_DIM,
        }
    }

    pub fn architecture(&self) -> Architecture {
        let base = match self.data.kind {
            DataKind::Ring => Architecture::points(),
            DataKind::Glyphs => Architecture::glyphs(),
        };
        let m = &self.model;
        Architecture {
            data_dim: self.data_dim(),
            latent_dim: m.latent_dim,
            z_dim: m.z_dim,
            stage1_hidden: if m.stage1_hidden.is_empty() { base.stage1_hidden } else { m.stage1_hidden.clone() },
            stage2_hidden: m.stage2_hidden.clone(),
            leaky_slope: m.leaky_slope,
        }
    }

    pub fn priors(&self) -> Vec<PriorFamily> {
        self.model.heads.iter().filter_map(|h| PriorFamily::parse(h)).collect()
    }

    pub fn dataset(&self, split: Split) -> Result<Dataset> {
        let d = &self.data;
        let n = match split {
            Split::Train => d.n_train,
            Split::Val => d.n_val,
            Split::Test => d.n_test,
        };
        let seed = split.seed(d.seed);
        let mut ds = match d.kind {
            DataKind::Ring => gen_gauss_ring(n, d.ring.modes, d.ring.radius, d.ring.sigma, seed)?,
            DataKind::Glyphs => gen_glyphs(n, seed)?,
        };
        ds.split = split;
        Ok(ds)
    }

    pub fn ring_geometry(&self) -> Option<RingGeometry> {
        (self.data.kind == DataKind::Ring)
            .then(|| ring_geometry(self.data.ring.modes, self.data.ring.radius, self.data.ring.sigma))
    }

    /// Flat `(dotted key, TOML value)` pairs, as stored in checkpoints.
    pub fn to_meta(&self) -> Vec<(String, String)> {
        fn walk(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
            match v {
                toml::Value::Table(t) => {
                    for (k, v) in t {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, v, out);
                    }
                }
                other => out.push((prefix.to_string(), other.to_string())),
            }
        }
        let value = toml::Value::try_from(self).expect("run config serializes");
        let mut out = Vec::new();
        walk("", &value, &mut out);
        out
    }

    pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        let text: String = meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        Self::parse(&text, "checkpoint metadata")
    }
}
