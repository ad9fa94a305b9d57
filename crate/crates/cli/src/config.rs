use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use txrl_core::{PipelineConfig, SimConfig};

use crate::io::{read_json, write_bytes};

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub sim: SimConfig,
    pub pipeline: PipelineConfig,
    pub threads: Option<usize>,
}

/// Loaded config file plus whether the pipeline section was present, so
/// stages that read a model bundle know whether to keep its settings.
pub struct Loaded {
    pub config: FileConfig,
    pub has_pipeline: bool,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<Loaded> {
    let Some(path) = path else {
        return Ok(Loaded {
            config: FileConfig::default(),
            has_pipeline: false,
        });
    };
    let raw: serde_json::Value = read_json(path)?;
    let has_pipeline = raw.get("pipeline").is_some();
    let config = serde_json::from_value(raw).map_err(txrl_core::Error::from)?;
    Ok(Loaded { config, has_pipeline })
}

/// What a stage actually ran with. Feeding this file back through
/// `--config` together with the listed inputs reproduces the stage.
#[derive(Debug, Serialize)]
pub struct Resolved<'a> {
    pub command: &'a str,
    pub inputs: BTreeMap<&'a str, String>,
    #[serde(flatten)]
    pub config: &'a FileConfig,
}

/// Writes `resolved_config.json` and returns its SHA-256 hex digest.
pub fn write_resolved(out: &Path, resolved: &Resolved) -> anyhow::Result<String> {
    let mut bytes = serde_json::to_vec_pretty(resolved)?;
    bytes.push(b'\n');
    write_bytes(&out.join("resolved_config.json"), &bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
