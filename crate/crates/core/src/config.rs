//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{LabelSpace, SplitName};
use crate::error::{Error, Result};
use crate::graph::{ntu_topology, SkeletonTopology};
use crate::model::ModelConfig;
use crate::preprocess::PreprocessConfig;
use crate::train::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub split: SplitName,
    /// Overrides the split's default class range and fall class.
    pub labels: Option<LabelSpace>,
    /// Edge-list file; the NTU skeleton when absent.
    pub topology: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            split: SplitName::Xsub60,
            labels: None,
            topology: None,
        }
    }
}

impl DataConfig {
    pub fn label_space(&self) -> LabelSpace {
        self.labels.unwrap_or_else(|| LabelSpace::for_split(self.split))
    }

    pub fn load_topology(&self) -> Result<SkeletonTopology> {
        match &self.topology {
            Some(p) => SkeletonTopology::load(p),
            None => Ok(ntu_topology()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let p = &self.preprocess;
        if p.window == 0 || p.window > p.max_frames {
            return Err(Error::Config(format!(
                "window {} must be in 1..={}",
                p.window, p.max_frames
            )));
        }
        if p.bodies != self.model.bodies {
            return Err(Error::Config(format!(
                "preprocess keeps {} bodies but the model expects {}",
                p.bodies, self.model.bodies
            )));
        }
        Ok(())
    }
}
