//! TOML configuration shared by the command-line tools.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{SamplingStrategy, StampingOptions, GROUND_TRUTH_EVENTS};
use crate::error::{Error, Result};
use crate::geometry::TargetGeometry;
use crate::physics::MaterialTable;
use crate::poca::ReconConfig;
use crate::sim::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryPreset {
    /// Tungsten C-shaped block with an air void.
    #[default]
    CBlock,
    /// No target; every muon passes straight through.
    None,
}

impl GeometryPreset {
    pub fn build(self, table: &MaterialTable) -> Result<TargetGeometry> {
        match self {
            GeometryPreset::CBlock => TargetGeometry::c_block(table),
            GeometryPreset::None => Ok(TargetGeometry::empty()),
        }
    }
}

impl std::str::FromStr for GeometryPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c-block" => Ok(GeometryPreset::CBlock),
            "none" => Ok(GeometryPreset::None),
            _ => Err(Error::Config(format!(
                "unknown geometry {s:?} (c-block, none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetOptions {
    pub strategy: SamplingStrategy,
    pub label_events: u64,
    pub stamping: Option<StampingOptions>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            strategy: SamplingStrategy::default(),
            label_events: GROUND_TRUTH_EVENTS,
            stamping: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub geometry: GeometryPreset,
    pub sim: SimConfig,
    pub recon: ReconConfig,
    pub dataset: DatasetOptions,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
