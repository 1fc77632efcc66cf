//! Run configuration, read from a single JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpcc::MpccConfig;
use crate::nlp_solver::SolverSettings;
use crate::scenarios::{build_double_lane_change, DoubleLaneChange, Scenario};
use crate::sim::{ActuatorModel, Mismatch, PlantConfig};
use crate::tyre::TyreParams;
use crate::vehicle_model::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorSettings {
    pub steering: ActuatorModel,
    pub force: ActuatorModel,
}

impl Default for ActuatorSettings {
    fn default() -> Self {
        Self {
            steering: ActuatorModel::steering(),
            force: ActuatorModel::force(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSettings {
    /// Plant parameters relative to the controller's.
    pub mismatch: Mismatch,
    /// Integration substeps per control period.
    pub substeps: usize,
}

impl Default for PlantSettings {
    fn default() -> Self {
        Self {
            mismatch: Mismatch::default(),
            substeps: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub vehicle: VehicleParams,
    pub tyre: TyreParams,
    pub controller: MpccConfig,
    pub solver: SolverSettings,
    pub actuator: ActuatorSettings,
    pub plant: PlantSettings,
    pub scenario: DoubleLaneChange,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.tyre.validate()?;
        if (self.vehicle.mu - self.tyre.mu).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "vehicle mu {} and tyre mu {} must agree",
                self.vehicle.mu, self.tyre.mu
            )));
        }
        self.controller.validate()?;
        self.solver.validate()?;
        self.plant_config().validate()
    }

    pub fn plant_config(&self) -> PlantConfig {
        let mut p = PlantConfig::with_mismatch(&self.vehicle, &self.tyre, &self.plant.mismatch, self.plant.substeps);
        p.steering = self.actuator.steering;
        p.force = self.actuator.force;
        p
    }

    pub fn scenario(&self) -> Result<Scenario> {
        build_double_lane_change(&self.scenario, &self.vehicle, self.controller.weights.d_sft_obs)
    }
}
