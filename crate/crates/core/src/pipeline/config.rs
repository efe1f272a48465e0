use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::idx::{load_idx, Dataset};
use super::run::PipelineConfig;
use super::sim::{BackgroundLoadModel, ProfileGrid};
use super::stream::StreamConfig;
use crate::advtrain::TrainConfig;
use crate::error::{Error, Result};
use crate::hypernet::HyperNetSpec;
use crate::planner::{ModelKind, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub ood_images: PathBuf,
    pub ood_labels: PathBuf,
    /// Tail of the training file held out for validation.
    pub val_count: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let m = PathBuf::from("data/mnist");
        let o = PathBuf::from("data/notmnist");
        Self {
            train_images: m.join("train-images-idx3-ubyte"),
            train_labels: m.join("train-labels-idx1-ubyte"),
            test_images: m.join("t10k-images-idx3-ubyte"),
            test_labels: m.join("t10k-labels-idx1-ubyte"),
            ood_images: o.join("t10k-images-idx3-ubyte"),
            ood_labels: o.join("t10k-labels-idx1-ubyte"),
            val_count: 5000,
        }
    }
}

impl DatasetConfig {
    /// Training file split into `(train, validation)`.
    pub fn load_train(&self) -> Result<(Dataset, Dataset)> {
        let all = load_idx(&self.train_images, &self.train_labels)?;
        if self.val_count == 0 || self.val_count >= all.len() {
            return Err(Error::BadConfig(format!("val_count {} must be in [1, {})", self.val_count, all.len())));
        }
        let cut = all.len() - self.val_count;
        Ok((all.slice(0, cut), all.slice(cut, all.len())))
    }

    pub fn load_test(&self) -> Result<Dataset> {
        load_idx(&self.test_images, &self.test_labels)
    }

    pub fn load_ood(&self) -> Result<Dataset> {
        load_idx(&self.ood_images, &self.ood_labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub model: ModelKind,
    pub with_power: bool,
    pub tree: TreeParams,
    pub grid: ProfileGrid,
    pub profile_seed: u64,
    pub split_seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Dt,
            with_power: true,
            tree: TreeParams::default(),
            grid: ProfileGrid::default(),
            profile_seed: 3,
            split_seed: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub run: PipelineConfig,
    pub stream: StreamConfig,
}

/// Top-level JSON config; every section and field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SardinoConfig {
    pub dataset: DatasetConfig,
    pub hypernet: HyperNetSpec,
    pub train: TrainConfig,
    pub simulator: BackgroundLoadModel,
    pub planner: PlannerConfig,
    pub pipeline: PipelineSection,
}

impl Default for SardinoConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            hypernet: HyperNetSpec::mnist(),
            train: TrainConfig::default(),
            simulator: BackgroundLoadModel::default(),
            planner: PlannerConfig::default(),
            pipeline: PipelineSection::default(),
        }
    }
}

impl SardinoConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let c: Self = serde_json::from_str(&text).map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.hypernet.validate().map_err(|e| Error::BadConfig(e.to_string()))?;
        self.train.validate()?;
        self.simulator.validate()?;
        self.planner.grid.validate()?;
        self.pipeline.run.validate()?;
        self.pipeline.stream.validate()?;
        if (self.pipeline.run.fps - self.pipeline.stream.fps).abs() > 1e-12 {
            return Err(Error::BadConfig("pipeline.run.fps and pipeline.stream.fps differ".into()));
        }
        Ok(())
    }
}
