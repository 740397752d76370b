//! Default-gain search: a grid over `Kp ∈ [1, 3]·mgh` and `Kd ∈ [0.1, 0.5]·Kp`
//! scored by how quickly the burn-in release settles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trial::{burn_in_response, TrialConfig};
use super::{ControllerConfig, DecConfig, DecModuleConfig, EmConfig, IcConfig};
use crate::control::em_decompose;
use crate::error::{Error, Result};
use crate::plant::{linearize, DipParams};

/// Grid resolution per axis.
pub const TUNE_STEPS: usize = 9;
pub const KP_RANGE: (f64, f64) = (1.0, 3.0);
pub const KD_RANGE: (f64, f64) = (0.1, 0.5);
/// Settling band as a fraction of the initial lean.
pub const SETTLING_FRACTION: f64 = 0.05;

/// Time after which `|x|` stays within `tol`; `None` if the last sample is outside.
pub fn settling_time(x: &[f64], dt: f64, tol: f64) -> Option<f64> {
    match x.iter().rposition(|v| !(v.abs() <= tol)) {
        None => Some(0.0),
        Some(i) if i + 1 == x.len() => None,
        Some(i) => Some((i + 1) as f64 * dt),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneCandidate {
    pub kp_factor: f64,
    pub kd_factor: f64,
    /// `None` when the release did not settle or the body fell.
    pub settling_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub best: ControllerConfig,
    pub kp_factor: f64,
    pub kd_factor: f64,
    pub settling_time_s: f64,
    pub candidates: Vec<TuneCandidate>,
}

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `template` with its stiffness set to `kp_factor` times the relevant gravity
/// load and its damping to `kd_factor` times that stiffness.
pub fn apply_factors(
    template: &ControllerConfig,
    plant: &DipParams,
    kp_factor: f64,
    kd_factor: f64,
) -> Result<ControllerConfig> {
    Ok(match template {
        ControllerConfig::Ic(c) => {
            let kp = kp_factor * plant.mgh();
            ControllerConfig::Ic(IcConfig {
                kp,
                kd: kd_factor * kp,
                ..c.clone()
            })
        }
        ControllerConfig::Dec(c) => {
            let module = |m: &DecModuleConfig, load: f64| {
                let kp = kp_factor * load;
                let ki = if m.kp > 0.0 { m.ki * kp / m.kp } else { m.ki };
                DecModuleConfig {
                    kp,
                    ki,
                    kd: kd_factor * kp,
                    ..m.clone()
                }
            };
            ControllerConfig::Dec(DecConfig {
                ankle: module(&c.ankle, plant.mgh()),
                hip: module(&c.hip, plant.trunk_mgh()),
            })
        }
        ControllerConfig::Em(c) => {
            let lambda = em_decompose(&linearize(plant))?.eigenvalues;
            let kp = [kp_factor * lambda[0], kp_factor * lambda[1]];
            ControllerConfig::Em(EmConfig {
                kp,
                kd: kp.map(|k| kd_factor * k),
                ..c.clone()
            })
        }
    })
}

/// Grid search around `template`, keeping everything but Kp and Kd fixed.
pub fn tune(
    template: &ControllerConfig,
    plant: &DipParams,
    trial: &TrialConfig,
) -> Result<TuneReport> {
    template.validate()?;
    let tol = SETTLING_FRACTION * trial.burn_in_lean_deg.to_radians();
    let grid: Vec<(f64, f64)> = linspace(KP_RANGE, TUNE_STEPS)
        .into_iter()
        .flat_map(|kp| {
            linspace(KD_RANGE, TUNE_STEPS)
                .into_iter()
                .map(move |kd| (kp, kd))
        })
        .collect();
    let candidates = grid
        .par_iter()
        .map(|&(kp_factor, kd_factor)| -> Result<TuneCandidate> {
            let cfg = apply_factors(template, plant, kp_factor, kd_factor)?;
            let trace = burn_in_response(&cfg, plant, trial)?;
            let settling_time_s = match trace.fall_time {
                Some(_) => None,
                None => settling_time(&trace.sway, trace.dt, tol),
            };
            Ok(TuneCandidate {
                kp_factor,
                kd_factor,
                settling_time_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = candidates
        .iter()
        .filter_map(|c| c.settling_time_s.map(|t| (t, c)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.clone())
        .ok_or_else(|| {
            Error::Unstable(format!(
                "no {} candidate settled within {} s",
                template.kind(),
                trial.burn_in_s
            ))
        })?;
    Ok(TuneReport {
        best: apply_factors(template, plant, best.kp_factor, best.kd_factor)?,
        kp_factor: best.kp_factor,
        kd_factor: best.kd_factor,
        settling_time_s: best.settling_time_s.unwrap_or_default(),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settling_time_examples() {
        let x = [1.0, 0.5, 0.2, 0.01, 0.0];
        assert_eq!(settling_time(&x, 0.1, 0.05), Some(0.30000000000000004));
        assert_eq!(settling_time(&[0.0; 4], 0.1, 0.05), Some(0.0));
        assert_eq!(settling_time(&[0.0, 1.0], 0.1, 0.05), None);
        assert_eq!(settling_time(&[f64::NAN, 0.0], 0.1, 0.05), Some(0.1));
    }

    #[test]
    fn factors_map_to_gravity_load() {
        let p = DipParams::default();
        let cfg = apply_factors(&ControllerConfig::Ic(IcConfig::default()), &p, 2.0, 0.25).unwrap();
        let ControllerConfig::Ic(ic) = cfg else {
            unreachable!()
        };
        assert!((ic.kp - 2.0 * p.mgh()).abs() < 1e-9);
        assert!((ic.kd - 0.5 * p.mgh()).abs() < 1e-9);
    }
}
