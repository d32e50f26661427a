//! Run configuration: one JSON document with model, training, ablation,
//! endpoint and path settings.

use std::path::{Path, PathBuf};

use reviewgraph_core::graph::AblationMode;
use reviewgraph_core::hgt::ModelConfig;
use reviewgraph_core::orchestration::{EndpointConfig, Prompts};
use reviewgraph_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Root for stage outputs; defaults to `work/` next to the manifest.
    pub work_dir: Option<PathBuf>,
    /// Shared embedding cache; defaults to `<work_dir>/embedding_cache.jsonl`.
    pub embedding_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationMode,
    /// `null` selects the offline mock client.
    pub endpoint: Option<EndpointConfig>,
    pub prompts: Prompts,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.work_dir, &mut cfg.paths.embedding_cache]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies command-line overrides. A given seed drives every random
    /// choice: initialization, shuffling and the mock client.
    pub fn apply_overrides(&mut self, seed: Option<u64>, ablation: Option<AblationMode>, jobs: usize) {
        if let Some(s) = seed {
            self.model.seed = s;
            self.train.seed = s;
        }
        if let Some(a) = ablation {
            self.ablation = a;
        }
        self.train.jobs = jobs;
        self.model.homogeneous = self.ablation == AblationMode::Homogeneous;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(ep) = &self.endpoint {
            ep.validate().map_err(CliError::Usage)?;
        }
        Ok(())
    }
}
