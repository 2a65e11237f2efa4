//! Run configuration, loaded from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infotheory::SigmaSettings;
use crate::linalg::EigenSolver;
use crate::nnet::{TrainConfig, DEFAULT_NEGATIVE_SLOPE, LENET5_FILTERS};
use crate::pruner::{LayerSchedule, PruneSchedule, SelectionMode};

/// MNIST-style IDX files. Relative paths resolve against the working
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    /// Use only the first `n` training samples.
    pub train_subset: Option<usize>,
    /// Use only the first `n` test samples.
    pub test_subset: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/mnist"),
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
            train_subset: None,
            test_subset: None,
        }
    }
}

impl DataConfig {
    /// Resolves a file name, accepting a `.gz` sibling when the plain file is
    /// absent.
    pub fn path(&self, name: &str) -> PathBuf {
        let plain = self.dir.join(name);
        if !plain.exists() {
            let gz = self.dir.join(format!("{name}.gz"));
            if gz.exists() {
                return gz;
            }
        }
        plain
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelevanceConfig {
    /// Mini-batch size used when scoring filters.
    pub batch_size: usize,
    pub solver: EigenSolver,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            solver: EigenSolver::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Information-plane probe: first `probe_batches * probe_batch_size`
    /// test samples.
    pub probe_batches: usize,
    pub probe_batch_size: usize,
    pub histogram_bins: usize,
    /// Compare pruned and zero-masked logits on this many random inputs after
    /// every surgery; 0 disables the check.
    pub surgery_check_inputs: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            probe_batches: 10,
            probe_batch_size: 100,
            histogram_bins: 10,
            surgery_check_inputs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    pub architecture: String,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_slope")]
    pub init_negative_slope: f64,
    /// Phase seeds are derived from the run seed.
    pub initial: TrainConfig,
    pub retrain: TrainConfig,
    pub schedule: PruneSchedule,
    #[serde(default = "default_mode")]
    pub mode: SelectionMode,
    #[serde(default)]
    pub sigma: SigmaSettings,
    #[serde(default)]
    pub relevance: RelevanceConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_slope() -> f64 {
    DEFAULT_NEGATIVE_SLOPE
}

fn default_mode() -> SelectionMode {
    SelectionMode::Layerwise
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

pub const PRESET_NAMES: [&str; 2] = ["lenet5_desk", "lenet5_paper"];

const DESK_PRESET: &str = include_str!("../../../presets/lenet5_desk.json");
const PAPER_PRESET: &str = include_str!("../../../presets/lenet5_paper.json");

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text, path)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "lenet5_desk" => DESK_PRESET,
            "lenet5_paper" => PAPER_PRESET,
            other => {
                return Err(Error::config(
                    "preset",
                    format!("unknown preset `{other}`, expected one of {PRESET_NAMES:?}"),
                ))
            }
        };
        Self::from_json(text, Path::new(&format!("presets/{name}.json")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.architecture != "lenet5" {
            return Err(Error::config(
                "architecture",
                format!("unsupported architecture `{}`", self.architecture),
            ));
        }
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(Error::config(
                "run_id",
                "must be non-empty and use only [A-Za-z0-9._-]",
            ));
        }
        self.initial.validate().map_err(|e| prefix("initial", e))?;
        self.retrain.validate().map_err(|e| prefix("retrain", e))?;
        self.schedule.validate(&LENET5_FILTERS)?;
        for (s, stage) in self.schedule.stages().iter().enumerate() {
            if stage.iter().zip(LENET5_FILTERS).any(|(&l, n)| l > n) {
                return Err(Error::config(
                    format!("schedule.limit_stages[{s}]"),
                    "limit exceeds the layer's filters",
                ));
            }
        }
        if let SelectionMode::Global { t } = self.mode {
            if !(t > 0.0 && t < 100.0) {
                return Err(Error::config("mode.t", "must lie in (0, 100)"));
            }
        }
        self.sigma.validate()?;
        if self.relevance.batch_size < 2 {
            return Err(Error::config("relevance.batch_size", "must be at least 2"));
        }
        if self.report.probe_batches == 0 || self.report.probe_batch_size < 2 {
            return Err(Error::config(
                "report",
                "probe needs at least one batch of two samples",
            ));
        }
        if self.report.histogram_bins == 0 {
            return Err(Error::config("report.histogram_bins", "must be positive"));
        }
        if !(self.init_negative_slope >= 0.0) {
            return Err(Error::config("init_negative_slope", "must be non-negative"));
        }
        Ok(())
    }

    /// Per-layer schedule with the given ratios and limits.
    pub fn ratio_schedule(ratios: &[f64], limits: &[usize], iterations: usize) -> PruneSchedule {
        PruneSchedule {
            layers: ratios
                .iter()
                .zip(limits)
                .enumerate()
                .map(|(layer_id, (&r, &limit))| LayerSchedule {
                    layer_id,
                    prune_ratio: Some(r),
                    fixed_count: None,
                    limit,
                })
                .collect(),
            iterations,
            limit_stages: Vec::new(),
        }
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    }
}
