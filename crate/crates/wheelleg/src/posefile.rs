//! Pose sequence files, stamped with the inputs they were solved for.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wheelleg_core::pose_opt::PoseSequence;

use crate::config::ScenarioConfig;
use crate::error::CliError;

pub const TOOL: &str = "wheelleg";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub tool: String,
    pub version: String,
    /// Hash of terrain, robot and optimizer settings.
    pub terrain_hash: String,
    /// Hash of the whole scenario config at solve time.
    pub config_hash: String,
    pub sequence: PoseSequence,
}

impl PoseFile {
    pub fn new(cfg: &ScenarioConfig, sequence: PoseSequence) -> Result<Self, CliError> {
        Ok(Self { tool: TOOL.into(), version: VERSION.into(), terrain_hash: cfg.terrain_hash()?, config_hash: cfg.config_hash(), sequence })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("pose file serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Rejects a pose file solved for different terrain, robot or optimizer settings.
    pub fn check(&self, cfg: &ScenarioConfig) -> Result<(), CliError> {
        let expected = cfg.terrain_hash()?;
        if self.terrain_hash != expected {
            return Err(CliError::Mismatch(format!("terrain hash {} in pose file, {} from config", short(&self.terrain_hash), short(&expected))));
        }
        if self.sequence.is_empty() {
            return Err(CliError::Mismatch("pose file holds no poses".into()));
        }
        Ok(())
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
