//! Run configuration.
//!
//! A TOML document with `[data]`, `[model]`, `[train]`, `[eval]`, `[sweep]`
//! and `[bench]` sections. Missing keys take their defaults, unknown keys
//! are rejected. Command-line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bmlp_core::model::HyperParams;
use serde::{Deserialize, Serialize};

use crate::ingest::{Columns, Format, IngestOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingTransform {
    pub purchase_rating: u32,
    #[serde(default = "default_purchase")]
    pub purchase: String,
    #[serde(default = "default_auxiliary")]
    pub auxiliary: String,
}

fn default_purchase() -> String {
    "buy".into()
}

fn default_auxiliary() -> String {
    "click".into()
}

/// Half-open `[start, end)` timestamp range dropped before deduplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw interaction log read by `preprocess`.
    pub path: PathBuf,
    pub format: Format,
    pub has_header: bool,
    pub columns: Columns,
    pub target_behavior: String,
    pub min_item_purchases: usize,
    pub min_user_purchases: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating_transform: Option<RatingTransform>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclude_time: Option<TimeRange>,
    /// Split directory read by the training and evaluation commands.
    /// Defaults to the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: PathBuf::new(),
            format: Format::Tsv,
            has_header: false,
            columns: Columns::default(),
            target_behavior: "buy".into(),
            min_item_purchases: 5,
            min_user_purchases: 5,
            rating_transform: None,
            exclude_time: None,
            split_dir: None,
        }
    }
}

impl DataConfig {
    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            format: self.format,
            has_header: self.has_header,
            columns: self.columns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Validate every this many epochs.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { eval_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Also report on the purchase-intent test set.
    pub intent: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![10, 20],
            intent: true,
            checkpoint: None,
        }
    }
}

/// Grid axes. An empty axis keeps the `[model]` value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub heads: Vec<usize>,
    pub aux_len: Vec<usize>,
    pub len: Vec<usize>,
    pub d: Vec<usize>,
    pub lr: Vec<f64>,
    pub dropout_rate: Vec<f64>,
    pub blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lens: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    pub d: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Hidden widths held fixed across lengths.
    pub d_t: usize,
    pub d_c: usize,
    pub aux_len: usize,
    pub num_items: usize,
    pub num_behaviors: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lens: vec![64, 128, 256, 512],
            repetitions: 100,
            warmup: 10,
            d: 32,
            heads: 2,
            blocks: 1,
            d_t: 32,
            d_c: 64,
            aux_len: 5,
            num_items: 32,
            num_behaviors: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: HyperParams,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
    /// Output directory. Not part of the manifest so reruns into different
    /// directories produce identical manifests.
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker cap; results do not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Loads a config file, resolving relative data paths against the
    /// file's directory, then applies overrides.
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.path);
        if let Some(p) = cfg.data.split_dir.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.eval.checkpoint.as_mut() {
            resolve(p);
        }
        cfg.apply(ov);
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(o) = &ov.out {
            self.out = o.clone();
        }
        if let Some(s) = ov.seed {
            self.model.seed = s;
        }
        if let Some(t) = ov.threads {
            self.threads = Some(t);
        }
        if let Some(c) = &ov.checkpoint {
            self.eval.checkpoint = Some(c.clone());
        }
    }

    pub fn split_dir(&self) -> &Path {
        self.data.split_dir.as_deref().unwrap_or(&self.out)
    }

    /// Checks shared by every command.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.out.as_os_str().is_empty() {
            bail!("no output directory given");
        }
        if self.data.min_item_purchases < 1 || self.data.min_user_purchases < 1 {
            bail!("purchase thresholds must be at least 1");
        }
        if self.data.target_behavior.is_empty() {
            bail!("target behavior must be non-empty");
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            bail!("eval.ks must be non-empty and positive");
        }
        if self.train.eval_every == 0 {
            bail!("train.eval_every must be at least 1");
        }
        if self.threads == Some(0) {
            bail!("--threads must be at least 1");
        }
        if let Some(r) = &self.data.exclude_time {
            if r.start > r.end {
                bail!("exclude_time start {} is after end {}", r.start, r.end);
            }
        }
        Ok(())
    }

    pub fn validate_preprocess(&self) -> Result<()> {
        self.validate()?;
        if self.data.path.as_os_str().is_empty() {
            bail!("data.path is empty");
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
