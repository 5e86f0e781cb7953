//! JSON scenario files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wheelleg_core::balance::BalanceConfig;
use wheelleg_core::kinematics::RobotModel;
use wheelleg_core::planner::PlannerConfig;
use wheelleg_core::pose_opt::{PoseOptConfig, PoseSequence};
use wheelleg_core::rolling::RollingConfig;
use wheelleg_core::scenario::{CommandSegment, ControllerConfig, Scenario};
use wheelleg_core::sim::ContactParams;
use wheelleg_core::terrain::{make_ramp, make_stairs, Terrain};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerrainSpec {
    Flat { x0: f64, x1: f64 },
    Stairs { rise: f64, run: f64, count: usize, lead_in: f64, platform: f64 },
    /// Slope in degrees.
    Ramp { height: f64, slope_deg: f64, lead_in: f64, platform: f64 },
    Polyline { vertices: Vec<[f64; 2]> },
}

impl TerrainSpec {
    pub fn build(&self) -> wheelleg_core::Result<Terrain> {
        match self {
            TerrainSpec::Flat { x0, x1 } => Terrain::flat(*x0, *x1, 0.0),
            TerrainSpec::Stairs { rise, run, count, lead_in, platform } => make_stairs(*rise, *run, *count, *lead_in, *platform),
            TerrainSpec::Ramp { height, slope_deg, lead_in, platform } => make_ramp(*height, slope_deg.to_radians(), *lead_in, *platform),
            TerrainSpec::Polyline { vertices } => Terrain::from_points(vertices),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub balance: BalanceConfig,
    pub rolling: RollingConfig,
    pub planner: PlannerConfig,
    pub pose_opt: PoseOptConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub poses: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub robot: RobotModel,
    pub terrain: TerrainSpec,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub contact: ContactParams,
    #[serde(default)]
    pub commands: Vec<CommandSegment>,
    pub duration: f64,
    /// Constant wheel torque replacing the speed loop, N·m.
    #[serde(default)]
    pub wheel_torque: Option<f64>,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn terrain(&self) -> Result<Terrain, CliError> {
        self.terrain.build().map_err(|e| CliError::Config(format!("terrain: {e}")))
    }

    /// Validated core scenario.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let c = &self.controller;
        c.pose_opt.validate().map_err(|e| CliError::Config(format!("controller.pose_opt: {e}")))?;
        let mut sc = Scenario::new(self.robot.clone(), self.terrain()?, self.commands.clone(), self.duration);
        sc.controller = ControllerConfig { balance: c.balance.clone(), rolling: c.rolling.clone(), planner: c.planner.clone() };
        sc.contact = self.contact;
        sc.wheel_torque_override = self.wheel_torque;
        sc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(sc)
    }

    /// Fingerprint of everything a pose sequence depends on: terrain, robot and optimizer settings.
    pub fn terrain_hash(&self) -> Result<String, CliError> {
        let terrain = self.terrain()?;
        let key = (terrain.vertices().iter().map(|v| [v.x, v.y]).collect::<Vec<_>>(), &self.robot, &self.controller.pose_opt);
        Ok(sha256_json(&key))
    }

    pub fn config_hash(&self) -> String {
        sha256_json(self)
    }

    /// First pose of a run without a pose file: the nominal stand at the start of the terrain.
    pub fn nominal_sequence(&self) -> Result<PoseSequence, CliError> {
        let terrain = self.terrain()?;
        let x = terrain.x_range().0 + self.controller.pose_opt.start_offset;
        let z = terrain.surface_query(x).map_err(|e| CliError::Config(format!("terrain: {e}")))?.0;
        Ok(PoseSequence::hold_nominal(&self.robot, x, z))
    }
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAIR: &str = r#"{
        "terrain": { "kind": "stairs", "rise": 0.36, "run": 0.6, "count": 1, "lead_in": 1.0, "platform": 1.0 },
        "commands": [{ "t": 0.0, "v_x": 0.3 }],
        "duration": 12.0
    }"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ScenarioConfig::from_json(STAIR).unwrap();
        assert_eq!(cfg.robot, RobotModel::default());
        assert_eq!(cfg.contact, ContactParams::default());
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.terrain.steps().len(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            STAIR.replace("\"duration\"", "\"durations\": 1, \"duration\""),
            STAIR.replace("\"rise\"", "\"height\": 1, \"rise\""),
            STAIR.replace("\"duration\": 12.0", "\"duration\": 12.0, \"controller\": { \"balance\": { \"mu2\": 1 } }"),
        ] {
            let err = ScenarioConfig::from_json(&text).unwrap_err();
            assert!(err.to_string().contains("unknown field"), "{err}");
        }
    }

    #[test]
    fn invalid_values_name_the_field() {
        let text = STAIR.replace("\"duration\": 12.0", "\"duration\": 12.0, \"contact\": { \"k_n\": -1 }");
        let err = ScenarioConfig::from_json(&text).unwrap().scenario().unwrap_err();
        assert!(err.to_string().contains("contact.k_n"), "{err}");
        let text = STAIR.replace("\"rise\": 0.36", "\"rise\": -0.36");
        let err = ScenarioConfig::from_json(&text).unwrap().scenario().unwrap_err();
        assert!(err.to_string().starts_with("config: terrain"), "{err}");
    }

    #[test]
    fn terrain_hash_ignores_commands_but_not_geometry() {
        let a = ScenarioConfig::from_json(STAIR).unwrap();
        let mut b = a.clone();
        b.commands.clear();
        b.duration = 3.0;
        assert_eq!(a.terrain_hash().unwrap(), b.terrain_hash().unwrap());
        assert_ne!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.terrain = TerrainSpec::Stairs { rise: 0.35, run: 0.6, count: 1, lead_in: 1.0, platform: 1.0 };
        assert_ne!(a.terrain_hash().unwrap(), c.terrain_hash().unwrap());
        assert_eq!(a.terrain_hash().unwrap().len(), 64);
    }
}
