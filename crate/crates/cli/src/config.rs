//! Experiment configuration: a TOML file with one section per module,
//! named recipes, and `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fscnet::data::{AugmentConfig, Source, SplitRatios};
use fscnet::nn::ModelConfig;
use fscnet::optim::TrainConfig;
use fscnet::robustness::{PerturbKind, PerturbSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Tag for records read from `root`.
    pub source: Source,
    pub root: Option<PathBuf>,
    /// Second collection (tagged `II`) merged with `root`.
    pub root_ii: Option<PathBuf>,
    /// Generate this many synthetic images per class instead of reading files.
    pub synthetic_per_class: Option<usize>,
    pub synthetic_seed: u64,
    /// Reuse a saved split instead of computing one.
    pub manifest: Option<PathBuf>,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    /// Fixed test count drawn from each source.
    pub test_per_source: Option<usize>,
    /// Resize images to the training size while loading.
    pub resize_on_load: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self {
            source: Source::I,
            root: None,
            root_ii: None,
            synthetic_per_class: None,
            synthetic_seed: 1,
            manifest: None,
            train_ratio: r.train,
            val_ratio: r.val,
            test_ratio: r.test,
            test_per_source: None,
            resize_on_load: true,
        }
    }
}

impl DataConfig {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            val: self.val_ratio,
            test: self.test_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            threshold: fscnet::metrics::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/latest"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub data: DataConfig,
    pub perturb: Option<PerturbSpec>,
    pub metrics: MetricsConfig,
    pub output: OutputConfig,
}

pub const RECIPES: [&str; 6] = ["original", "bias", "noise", "occlusion", "smoke", "desk"];

/// Named starting points.
///
/// * `original`: 128 px, batch 32, patience 10.
/// * `bias`, `noise`, `occlusion`: 62 px (64 px for occlusion), batch 52,
///   patience 20, with the matching perturbation.
/// * `smoke`: 100 synthetic images per class, at most 10 epochs.
/// * `desk`: 1000 synthetic images per class with the 62 px settings,
///   at most 30 epochs, stopping once validation accuracy reaches 0.97.
pub fn recipe(name: &str) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let perturb = |kind| PerturbSpec {
        kind,
        ..PerturbSpec::default()
    };
    match name {
        "original" => {
            cfg.train.image_size = 128;
            cfg.train.batch_size = 32;
            cfg.train.patience = 10;
        }
        "bias" => cfg.perturb = Some(perturb(PerturbKind::Bias)),
        "noise" => cfg.perturb = Some(perturb(PerturbKind::Noise)),
        "occlusion" => {
            cfg.train.image_size = 64;
            cfg.perturb = Some(perturb(PerturbKind::Occlusion));
        }
        "smoke" => {
            cfg.data.source = Source::Synthetic;
            cfg.data.synthetic_per_class = Some(100);
            cfg.train.max_epochs = 10;
        }
        "desk" => {
            cfg.data.source = Source::Synthetic;
            cfg.data.synthetic_per_class = Some(1000);
            cfg.train.max_epochs = 30;
            cfg.train.target_val_accuracy = Some(0.97);
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown recipe `{other}` (expected one of {})",
                RECIPES.join(", ")
            )))
        }
    }
    Ok(cfg)
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(config_err)?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    /// Syncs derived fields and validates every section.
    pub fn resolved(mut self) -> CliResult<Self> {
        self.augment.target_size = self.train.image_size;
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.data.ratios().validate()?;
        if let Some(p) = &self.perturb {
            p.validate()?;
        }
        if !(0.0..=1.0).contains(&self.metrics.threshold) {
            return Err(CliError::Config(format!(
                "metrics.threshold must be in [0, 1], got {}",
                self.metrics.threshold
            )));
        }
        Ok(self)
    }

    /// Applies `section.key=value`. The value is read as a TOML literal
    /// (`0.5`, `true`, `"text"`, `[1, 2]`); anything else is taken as a string.
    pub fn with_override(&self, assignment: &str) -> CliResult<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(CliError::Config(format!("bad override key `{key}`")));
        }
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut root = toml::Value::try_from(self).map_err(config_err)?;
        let mut node = &mut root;
        for part in &path[..path.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("`{key}`: `{part}` is not a section")))?;
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        node.as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}` does not name a field")))?
            .insert(path[path.len() - 1].to_string(), value);
        let cfg: ExperimentConfig = root
            .try_into()
            .map_err(|e| CliError::Config(format!("override `{assignment}`: {e}")))?;
        cfg.resolved()
    }

    pub fn with_overrides<'a>(&self, assignments: impl IntoIterator<Item = &'a str>) -> CliResult<Self> {
        assignments.into_iter().try_fold(self.clone(), |cfg, a| cfg.with_override(a))
    }
}
