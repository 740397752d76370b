use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ControllerConfig;
use crate::error::{Error, Result};
use crate::plant::{dip_step, sensors, DipParams, DipState, JointTorques, Platform};
use crate::prts::TiltTrajectory;

/// Integration and pre-check settings for a closed-loop trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    /// Plant integration step [s].
    pub plant_dt: f64,
    /// Controller tick [s]; an integer multiple of `plant_dt`.
    pub controller_dt: f64,
    /// Length of the zero-stimulus stability pre-check [s].
    pub burn_in_s: f64,
    /// Initial rigid lean for the pre-check [deg].
    pub burn_in_lean_deg: f64,
    /// Largest COM sway tolerated during the pre-check [deg].
    pub burn_in_limit_deg: f64,
    /// Hip lock applied to IC trials when the plant has none.
    pub sip_lock_stiffness: f64,
    pub sip_lock_damping: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            plant_dt: 1e-3,
            controller_dt: 1e-3,
            burn_in_s: 5.0,
            burn_in_lean_deg: 0.02,
            burn_in_limit_deg: 0.1,
            sip_lock_stiffness: 1e5,
            sip_lock_damping: 500.0,
        }
    }
}

/// Trial traces sampled on the stimulus grid, all angles in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub t: Vec<f64>,
    pub tilt_deg: Vec<f64>,
    pub q1_deg: Vec<f64>,
    pub q2_deg: Vec<f64>,
    pub com_sway_deg: Vec<f64>,
    pub tau_ankle: Vec<f64>,
    pub tau_hip: Vec<f64>,
    pub fell: bool,
    pub fall_time: Option<f64>,
    /// The fall happened during the stability pre-check.
    pub fell_in_burn_in: bool,
    /// Largest |hip angle| over the whole trial at plant resolution [deg].
    pub max_hip_deg: f64,
}

impl TrialResult {
    fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            tilt_deg: Vec::with_capacity(n),
            q1_deg: Vec::with_capacity(n),
            q2_deg: Vec::with_capacity(n),
            com_sway_deg: Vec::with_capacity(n),
            tau_ankle: Vec::with_capacity(n),
            tau_hip: Vec::with_capacity(n),
            fell: false,
            fall_time: None,
            fell_in_burn_in: false,
            max_hip_deg: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV `t_s,tilt_deg,q1_deg,q2_deg,com_sway_deg,tau_ankle_Nm,tau_hip_Nm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 120);
        out.push_str("t_s,tilt_deg,q1_deg,q2_deg,com_sway_deg,tau_ankle_Nm,tau_hip_Nm\n");
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.t[i],
                self.tilt_deg[i],
                self.q1_deg[i],
                self.q2_deg[i],
                self.com_sway_deg[i],
                self.tau_ankle[i],
                self.tau_hip[i]
            )
            .unwrap();
        }
        out
    }
}

/// The plant actually simulated for `controller`: IC trials get a hip lock.
pub fn effective_plant(
    controller: &ControllerConfig,
    plant: &DipParams,
    trial: &TrialConfig,
) -> DipParams {
    if controller.requires_hip_lock() && plant.hip_lock_stiffness == 0.0 {
        plant
            .clone()
            .with_hip_lock(trial.sip_lock_stiffness, trial.sip_lock_damping)
    } else {
        plant.clone()
    }
}

struct Tick {
    stride: usize,
    control_every: usize,
}

fn whole_ratio(a: f64, b: f64, what: &str) -> Result<usize> {
    let r = a / b;
    if !(r >= 1.0) || (r - r.round()).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "{what}: {a} s is not an integer multiple of {b} s"
        )));
    }
    Ok(r.round() as usize)
}

impl TrialConfig {
    fn control_every(&self) -> Result<usize> {
        whole_ratio(self.controller_dt, self.plant_dt, "controller tick")
    }

    fn ticks(&self, sample_rate: f64) -> Result<Tick> {
        Ok(Tick {
            stride: whole_ratio(1.0 / sample_rate, self.plant_dt, "stimulus sample period")?,
            control_every: self.control_every()?,
        })
    }
}

/// COM sway recorded during the zero-stimulus pre-check, one sample per plant step.
#[derive(Debug, Clone, PartialEq)]
pub struct BurnInTrace {
    pub dt: f64,
    /// α_BS [rad].
    pub sway: Vec<f64>,
    pub fall_time: Option<f64>,
}

impl BurnInTrace {
    pub fn peak_deg(&self) -> f64 {
        self.sway
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .to_degrees()
    }
}

/// Releases the body from a small rigid lean on a still platform and records
/// the sway until `burn_in_s` elapses or the body falls.
pub fn burn_in_response(
    controller: &ControllerConfig,
    plant: &DipParams,
    trial: &TrialConfig,
) -> Result<BurnInTrace> {
    let plant = effective_plant(controller, plant, trial);
    let control_every = trial.control_every()?;
    let mut ctrl = controller.build(&plant, trial.controller_dt)?;
    let mut state = DipState::leaning(trial.burn_in_lean_deg.to_radians());
    let steps = (trial.burn_in_s / trial.plant_dt).round() as usize;
    let mut torque = JointTorques::default();
    let mut sway = Vec::with_capacity(steps);
    for k in 0..steps {
        let s = sensors(&state, 0.0, 0.0, &plant);
        sway.push(s.alpha_bs);
        if k % control_every == 0 {
            torque = ctrl.step(&s);
        }
        state = dip_step(&state, torque, &plant, Platform::default(), trial.plant_dt);
        if state.is_fallen() || !state.alpha_ls.is_finite() {
            return Ok(BurnInTrace {
                dt: trial.plant_dt,
                sway,
                fall_time: Some(state.t),
            });
        }
    }
    Ok(BurnInTrace {
        dt: trial.plant_dt,
        sway,
        fall_time: None,
    })
}

/// Closed-loop simulation of `controller` on `plant` driven by `stimulus`.
///
/// The controller is first checked for stability at upright; one that leaves
/// the burn-in band and then falls on a still platform is reported as a fall
/// at that time, one that stays up but out of band is `Unstable`. Traces are
/// recorded at the stimulus sample instants; a fall stops the simulation and
/// returns the partial trace with `fell` set.
pub fn run_trial(
    controller: &ControllerConfig,
    plant: &DipParams,
    stimulus: &TiltTrajectory,
    trial: &TrialConfig,
) -> Result<TrialResult> {
    controller.validate()?;
    plant.validate()?;
    let plant = effective_plant(controller, plant, trial);
    let ticks = trial.ticks(stimulus.sample_rate())?;

    let mut check = burn_in_response(controller, &plant, trial)?;
    if check.fall_time.is_none() && !(check.peak_deg() < trial.burn_in_limit_deg) {
        // Out of limits: let it run for the trial length to see whether it falls.
        let long = TrialConfig {
            burn_in_s: stimulus.duration().max(trial.burn_in_s),
            ..trial.clone()
        };
        check = burn_in_response(controller, &plant, &long)?;
    }
    if let Some(t) = check.fall_time {
        let mut r = TrialResult::with_capacity(0);
        r.fell = true;
        r.fall_time = Some(t);
        r.fell_in_burn_in = true;
        return Ok(r);
    }
    let worst = check.peak_deg();
    if !(worst < trial.burn_in_limit_deg) {
        return Err(Error::Unstable(format!(
            "{} controller swayed {worst:.4} deg during the {} s burn-in (limit {} deg)",
            controller.kind(),
            trial.burn_in_s,
            trial.burn_in_limit_deg
        )));
    }

    let tilt: Vec<f64> = stimulus.samples().iter().map(|x| x.to_radians()).collect();
    let n = tilt.len();
    let sample_dt = 1.0 / stimulus.sample_rate();
    let mut ctrl = controller.build(&plant, trial.controller_dt)?;
    let mut state = DipState::upright();
    let mut torque = JointTorques::default();
    let mut out = TrialResult::with_capacity(n);
    let mut max_hip: f64 = 0.0;

    'outer: for i in 0..n {
        let rate = (tilt[(i + 1) % n] - tilt[i]) / sample_dt;
        for j in 0..ticks.stride {
            let angle = tilt[i] + rate * (j as f64 * trial.plant_dt);
            let s = sensors(&state, angle, rate, &plant);
            let k = i * ticks.stride + j;
            if k % ticks.control_every == 0 {
                torque = ctrl.step(&s);
            }
            if j == 0 {
                out.t.push(i as f64 * sample_dt);
                out.tilt_deg.push(stimulus.samples()[i]);
                out.q1_deg.push(s.q1.to_degrees());
                out.q2_deg.push(s.q2.to_degrees());
                out.com_sway_deg.push(s.alpha_bs.to_degrees());
                out.tau_ankle.push(torque.ankle);
                out.tau_hip.push(torque.hip);
            }
            state = dip_step(
                &state,
                torque,
                &plant,
                Platform { angle, rate },
                trial.plant_dt,
            );
            max_hip = max_hip.max(state.hip_angle().abs());
            if state.is_fallen() || !state.alpha_ls.is_finite() {
                out.fell = true;
                out.fall_time = Some(state.t);
                break 'outer;
            }
        }
    }
    out.max_hip_deg = max_hip.to_degrees();
    Ok(out)
}
