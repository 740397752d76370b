//! Bio-inspired balance controllers and the closed-loop trial runner.

mod dec;
mod em;
mod ic;
mod trial;
mod tune;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::plant::{DipParams, JointTorques, SensorSet};

pub use dec::{DecConfig, DecController, DecModule, DecModuleConfig, ModuleSignals};
pub use em::{em_decompose, EmBasis, EmConfig, EmController};
pub use ic::{IcConfig, IcController};
pub use trial::{
    burn_in_response, effective_plant, run_trial, BurnInTrace, TrialConfig, TrialResult,
};
pub use tune::{apply_factors, settling_time, tune, TuneCandidate, TuneReport};

/// `sign(x) * max(|x| - threshold, 0)`.
pub fn dead_zone(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        0.0
    }
}

/// Maps sensor readouts to joint torques, one controller tick at a time.
pub trait Controller: Send {
    fn step(&mut self, sensors: &SensorSet) -> JointTorques;
}

/// Controller parameter file, discriminated by `type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ControllerConfig {
    Ic(IcConfig),
    Dec(DecConfig),
    Em(EmConfig),
}

impl ControllerConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerConfig::Ic(_) => "ic",
            ControllerConfig::Dec(_) => "dec",
            ControllerConfig::Em(_) => "em",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControllerConfig::Ic(c) => c.validate(),
            ControllerConfig::Dec(c) => c.validate(),
            ControllerConfig::Em(c) => c.validate(),
        }
    }

    /// Instantiates a controller ticking every `dt` seconds for the given body.
    pub fn build(&self, plant: &DipParams, dt: f64) -> Result<Box<dyn Controller>> {
        Ok(match self {
            ControllerConfig::Ic(c) => Box::new(IcController::new(c.clone(), dt)?),
            ControllerConfig::Dec(c) => Box::new(DecController::new(c.clone(), plant, dt)?),
            ControllerConfig::Em(c) => Box::new(EmController::new(c.clone(), plant, dt)?),
        })
    }

    /// IC drives a single inverted pendulum, so its trials lock the hip.
    pub fn requires_hip_lock(&self) -> bool {
        matches!(self, ControllerConfig::Ic(_))
    }

    /// Same controller with every feedback gain multiplied by `factor`.
    pub fn scale_gains(&self, factor: f64) -> Self {
        match self {
            ControllerConfig::Ic(c) => ControllerConfig::Ic(IcConfig {
                kp: c.kp * factor,
                kd: c.kd * factor,
                ..c.clone()
            }),
            ControllerConfig::Dec(c) => {
                let scale = |m: &DecModuleConfig| DecModuleConfig {
                    kp: m.kp * factor,
                    ki: m.ki * factor,
                    kd: m.kd * factor,
                    ..m.clone()
                };
                ControllerConfig::Dec(DecConfig {
                    ankle: scale(&c.ankle),
                    hip: scale(&c.hip),
                })
            }
            ControllerConfig::Em(c) => ControllerConfig::Em(EmConfig {
                kp: c.kp.map(|k| k * factor),
                kd: c.kd.map(|k| k * factor),
                ..c.clone()
            }),
        }
    }
}
