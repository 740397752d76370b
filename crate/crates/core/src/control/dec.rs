//! Disturbance estimation and compensation.
//!
//! One module per joint. Each module runs a servo PID on its joint angle and
//! feeds forward sensor-fusion estimates of the disturbances acting on the
//! segment it controls: rotation of the supporting link (the platform for the
//! ankle, the legs for the hip) and the gravity torque. The estimators carry
//! sensory dead-zone thresholds, which make the controller nonlinear.

use serde::{Deserialize, Serialize};

use super::{dead_zone, Controller};
use crate::error::{Error, Result};
use crate::plant::{DelayLine, DipParams, JointTorques, SensorSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecModuleConfig {
    /// Servo PID gains [Nm/rad, Nm/(rad s), Nm s/rad].
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Passive (undelayed) joint PD.
    pub passive_kp: f64,
    pub passive_kd: f64,
    /// Lumped delay of the module [s].
    pub delay: f64,
    /// Dead zone on the support rotation rate [rad/s].
    pub tilt_threshold: f64,
    /// Dead zone on the gravity-estimator angle [rad].
    pub gravity_threshold: f64,
    /// Low-pass time constant of the support-rotation estimator [s].
    pub tilt_time_constant: f64,
    /// Fraction of the estimated gravity torque compensated.
    pub gravity_gain: f64,
}

impl DecModuleConfig {
    fn validate(&self, which: &str) -> Result<()> {
        let all = [
            ("kp", self.kp),
            ("ki", self.ki),
            ("kd", self.kd),
            ("passive_kp", self.passive_kp),
            ("passive_kd", self.passive_kd),
            ("delay", self.delay),
            ("tilt_threshold", self.tilt_threshold),
            ("gravity_threshold", self.gravity_threshold),
            ("tilt_time_constant", self.tilt_time_constant),
            ("gravity_gain", self.gravity_gain),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "DEC {which} {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.gravity_gain > 0.0 && self.kp == 0.0 {
            return Err(Error::Config(format!(
                "DEC {which}: gravity compensation needs kp > 0"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecConfig {
    pub ankle: DecModuleConfig,
    pub hip: DecModuleConfig,
}

impl Default for DecConfig {
    fn default() -> Self {
        Self {
            ankle: DecModuleConfig {
                kp: 2317.2887700000006,
                ki: 120.37863740259743,
                kd: 579.3221925000001,
                passive_kp: 80.0,
                passive_kd: 30.0,
                delay: 0.1,
                tilt_threshold: 0.003,
                gravity_threshold: 0.0005,
                tilt_time_constant: 0.3,
                gravity_gain: 1.0,
            },
            hip: DecModuleConfig {
                kp: 526.38498,
                ki: 17.546166,
                kd: 131.596245,
                passive_kp: 40.0,
                passive_kd: 10.0,
                delay: 0.03,
                tilt_threshold: 0.003,
                gravity_threshold: 0.0005,
                tilt_time_constant: 0.3,
                gravity_gain: 1.0,
            },
        }
    }
}

impl DecConfig {
    pub fn validate(&self) -> Result<()> {
        self.ankle.validate("ankle")?;
        self.hip.validate("hip")
    }
}

/// Delayed sensory inputs of one module.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModuleSignals {
    /// Proprioceptive angle of the controlled segment relative to its support.
    pub joint: f64,
    pub joint_rate: f64,
    /// Sensor-fusion measure of the support link's orientation in space.
    pub support: f64,
    /// Controlled segment orientation in space (gravity estimator input).
    pub controlled: f64,
}

/// Servo loop plus support-rotation and gravity estimators for one joint.
#[derive(Debug, Clone)]
pub struct DecModule {
    cfg: DecModuleConfig,
    dt: f64,
    /// `m g h` of the controlled segment about its joint.
    load_mgh: f64,
    delay: DelayLine<ModuleSignals>,
    prev_support: Option<f64>,
    support_rate: f64,
    support_estimate: f64,
    integral: f64,
}

impl DecModule {
    pub fn new(cfg: DecModuleConfig, load_mgh: f64, dt: f64) -> Result<Self> {
        cfg.validate("module")?;
        let delay = DelayLine::from_delay(cfg.delay, dt, ModuleSignals::default())?;
        Ok(Self {
            cfg,
            dt,
            load_mgh,
            delay,
            prev_support: None,
            support_rate: 0.0,
            support_estimate: 0.0,
            integral: 0.0,
        })
    }

    /// Current support-rotation estimate [rad].
    pub fn support_estimate(&self) -> f64 {
        self.support_estimate
    }

    /// Advances the support-rotation estimator by one tick: the rate of the
    /// support signal is dead-zoned, low-passed and integrated.
    pub fn update_support_estimate(&mut self, support: f64) -> f64 {
        let prev = self.prev_support.replace(support).unwrap_or(support);
        let rate = dead_zone((support - prev) / self.dt, self.cfg.tilt_threshold);
        let alpha = if self.cfg.tilt_time_constant > 0.0 {
            1.0 - (-self.dt / self.cfg.tilt_time_constant).exp()
        } else {
            1.0
        };
        self.support_rate += alpha * (rate - self.support_rate);
        self.support_estimate += self.support_rate * self.dt;
        self.support_estimate
    }

    /// Gravity torque estimate expressed as an equivalent servo-error angle.
    fn gravity_angle(&self, controlled: f64) -> f64 {
        if self.cfg.gravity_gain == 0.0 {
            return 0.0;
        }
        let torque = self.cfg.gravity_gain
            * self.load_mgh
            * dead_zone(controlled.sin(), self.cfg.gravity_threshold);
        torque / self.cfg.kp
    }

    /// Joint torque from current (undelayed) inputs and the local joint state.
    pub fn step(&mut self, signals: ModuleSignals, local: f64, local_rate: f64) -> f64 {
        let s = self.delay.push(signals);
        let support = self.update_support_estimate(s.support);
        let error = -(s.joint + support + self.gravity_angle(s.controlled));
        let error_rate = -(s.joint_rate + self.support_rate);
        self.integral += error * self.dt;
        let c = &self.cfg;
        let servo = c.kp * error + c.ki * self.integral + c.kd * error_rate;
        servo - (c.passive_kp * local + c.passive_kd * local_rate)
    }
}

#[derive(Debug, Clone)]
pub struct DecController {
    ankle: DecModule,
    hip: DecModule,
}

impl DecController {
    pub fn new(cfg: DecConfig, plant: &DipParams, dt: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            ankle: DecModule::new(cfg.ankle, plant.mgh(), dt)?,
            hip: DecModule::new(cfg.hip, plant.trunk_mgh(), dt)?,
        })
    }
}

impl Controller for DecController {
    fn step(&mut self, s: &SensorSet) -> JointTorques {
        // Ankle: body COM relative to the foot; the support is the platform,
        // seen as the mismatch between leg-in-space and the ankle angle.
        let ankle = ModuleSignals {
            joint: s.alpha_bf,
            joint_rate: s.alpha_bf_rate,
            support: s.vest_star - s.q1,
            controlled: s.alpha_bs,
        };
        // Hip: trunk relative to the legs; the support is leg-in-space.
        let hip = ModuleSignals {
            joint: s.q2,
            joint_rate: s.q2_rate,
            support: s.vest_star,
            controlled: s.alpha_ts,
        };
        JointTorques::new(
            self.ankle.step(ankle, s.q1, s.q1_rate),
            self.hip.step(hip, s.q2, s.q2_rate),
        )
    }
}
