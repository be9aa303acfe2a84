//! The JSON configuration file.
//!
//! Four optional sections, each falling back to defaults:
//!
//! ```json
//! {
//!   "scoring": {"tau_conf": 1.0, "tau_uncer": 1.0},
//!   "calibration": {"grid_lo": 0.05, "grid_hi": 2.0, "grid_step": 0.05, "bins": 10},
//!   "policy": {"kind": "as_uncer", "threshold": 0.4, "lambda_rand": 0.5, "history_window": null},
//!   "simulator": {"profile": {"miscal_scale": 1.0}, "experiment": {"replicates": 20}}
//! }
//! ```
//!
//! Command-line flags override these keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::TemperatureGrid;
use crate::error::{Error, Result};
use crate::policy::SelectionPolicy;
use crate::simulator::{ExperimentConfig, SimProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub tau_conf: f64,
    pub tau_uncer: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            tau_conf: 1.0,
            tau_uncer: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_step: f64,
    pub bins: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let grid = TemperatureGrid::default();
        CalibrationConfig {
            grid_lo: grid.lo,
            grid_hi: grid.hi,
            grid_step: grid.step,
            bins: 10,
        }
    }
}

impl CalibrationConfig {
    pub fn grid(&self) -> TemperatureGrid {
        TemperatureGrid {
            lo: self.grid_lo,
            hi: self.grid_hi,
            step: self.grid_step,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub profile: SimProfile,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scoring: ScoringConfig,
    pub calibration: CalibrationConfig,
    pub policy: Option<SelectionPolicy>,
    pub simulator: SimulatorConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Config =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Config::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, tau) in [
            ("scoring.tau_conf", self.scoring.tau_conf),
            ("scoring.tau_uncer", self.scoring.tau_uncer),
        ] {
            if !(tau > 0.0 && tau.is_finite()) {
                return bad(format!("{name} must be > 0, got {tau}"));
            }
        }
        if self.calibration.bins < 1 {
            return bad("calibration.bins must be >= 1".into());
        }
        self.calibration
            .grid()
            .candidates()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.simulator
            .profile
            .validate()
            .map_err(|e| Error::Config(format!("simulator.profile: {e}")))?;
        Ok(())
    }
}
