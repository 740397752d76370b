use serde::{Deserialize, Serialize};

use super::Controller;
use crate::error::{Error, Result};
use crate::plant::{DelayLine, JointTorques, SensorSet};

/// Independent-channel controller: weighted sensory error, delayed PD and
/// low-passed positive torque feedback. Ankle only; the hip is locked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcConfig {
    pub w_prop: f64,
    pub w_vest: f64,
    pub w_vis: f64,
    /// [Nm/rad]
    pub kp: f64,
    /// [Nm s/rad]
    pub kd: f64,
    /// Lumped sensorimotor delay [s].
    pub delay: f64,
    /// Positive torque feedback gain (dimensionless, < 1).
    pub force_gain: f64,
    /// Torque feedback low-pass time constant [s].
    pub force_time_constant: f64,
}

impl Default for IcConfig {
    fn default() -> Self {
        Self {
            w_prop: 0.15,
            w_vest: 0.85,
            w_vis: 0.0,
            kp: 2124.1813725000006,
            kd: 637.2544117500003,
            delay: 0.1,
            force_gain: 0.1,
            force_time_constant: 20.0,
        }
    }
}

impl IcConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_prop, self.w_vest, self.w_vis];
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config(format!(
                "IC weights must lie in [0, 1], got {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "IC weights must sum to 1, got {sum}"
            )));
        }
        for (name, v) in [
            ("kp", self.kp),
            ("kd", self.kd),
            ("delay", self.delay),
            ("force_time_constant", self.force_time_constant),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("IC {name} must be finite and >= 0")));
            }
        }
        if !(self.force_gain.is_finite() && self.force_gain < 1.0) {
            return Err(Error::Config(format!(
                "IC force_gain must be < 1, got {}",
                self.force_gain
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IcController {
    cfg: IcConfig,
    dt: f64,
    delay: DelayLine<(f64, f64)>,
    feedback: f64,
    last_torque: f64,
}

impl IcController {
    pub fn new(cfg: IcConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        let delay = DelayLine::from_delay(cfg.delay, dt, (0.0, 0.0))?;
        Ok(Self {
            cfg,
            dt,
            delay,
            feedback: 0.0,
            last_torque: 0.0,
        })
    }

    /// Low-passed torque fed back positively.
    pub fn feedback_state(&self) -> f64 {
        self.feedback
    }

    pub fn ankle_torque(&mut self, s: &SensorSet) -> f64 {
        let c = &self.cfg;
        let space = c.w_vest + c.w_vis;
        let error = c.w_prop * s.alpha_bf + space * s.alpha_bs;
        let error_rate = c.w_prop * s.alpha_bf_rate + space * s.alpha_bs_rate;
        let (e, e_rate) = self.delay.push((error, error_rate));
        let pd = -(c.kp * e + c.kd * e_rate);

        let alpha = if c.force_time_constant > 0.0 {
            1.0 - (-self.dt / c.force_time_constant).exp()
        } else {
            1.0
        };
        self.feedback += alpha * (self.last_torque - self.feedback);
        let torque = pd + c.force_gain * self.feedback;
        self.last_torque = torque;
        torque
    }
}

impl Controller for IcController {
    fn step(&mut self, sensors: &SensorSet) -> JointTorques {
        JointTorques::new(self.ankle_torque(sensors), 0.0)
    }
}
