use std::path::{Path, PathBuf};

use afflow_core::data::Scenario;
use afflow_core::predictor::PredictorConfig;
use afflow_core::training::TrainConfig;
use afflow_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// JSON run description; every field is optional and command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<Scenario>,
    pub train: TrainConfig,
    pub predictor: PredictorConfig,
    /// Neighborhood radius of the grid graph.
    pub radius: Option<usize>,
    /// Uses only the first `images` images of a dataset.
    pub images: Option<usize>,
    pub data: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        if self.radius == Some(0) {
            return Err(Error::Config("radius must be positive".into()));
        }
        if self.images == Some(0) {
            return Err(Error::Config("images must be positive".into()));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.radius.unwrap_or(1)
    }
}
