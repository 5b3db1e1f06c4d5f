//! Serializable run configuration: one JSON file, overridden by flags.

use std::path::Path;

use aba_core::data::SynthTaskSpec;
use aba_core::io::read_to_string;
use aba_core::pipeline::{ModelConfig, TrainConfig};
use aba_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Defaults when `path` is `None`.
pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), read_json)
}

pub fn load_synth_spec(path: Option<&Path>) -> Result<SynthTaskSpec> {
    path.map_or_else(|| Ok(SynthTaskSpec::default()), read_json)
}
