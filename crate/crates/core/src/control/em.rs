//! Eigenmovement control: PD loops on the modal coordinates of the
//! linearised body, `xi = W^-1 q`, with `W` solving `G0 w = lambda B0 w`.

use nalgebra::{Cholesky, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::Controller;
use crate::error::{Error, Result};
use crate::plant::{linearize, DelayLine, DipParams, JointTorques, Linearization, SensorSet};

/// Modal matrix with `W^T B0 W = I` and `W^T G0 W = diag(eigenvalues)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmBasis {
    pub w: Matrix2<f64>,
    /// Ascending.
    pub eigenvalues: Vector2<f64>,
}

impl EmBasis {
    pub fn to_modal(&self, q: Vector2<f64>) -> Vector2<f64> {
        self.w.lu().solve(&q).expect("modal matrix is invertible")
    }

    pub fn from_modal(&self, xi: Vector2<f64>) -> Vector2<f64> {
        self.w * xi
    }
}

pub fn em_decompose(lin: &Linearization) -> Result<EmBasis> {
    let Linearization { b0, g0 } = *lin;
    if (g0 - g0.transpose()).amax() > 1e-12 * g0.amax().max(1.0) {
        return Err(Error::Decomposition(
            "G0 is not symmetric; the pencil may have complex modes".into(),
        ));
    }
    let chol = Cholesky::new(b0)
        .ok_or_else(|| Error::Decomposition("B0 is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Decomposition("singular Cholesky factor".into()))?;
    let c = l_inv * g0 * l_inv.transpose();
    let c = (c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Decomposition("non-finite eigenvalues".into()));
    }
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let v = Matrix2::from_columns(&[
        eig.eigenvectors.column(order[0]),
        eig.eigenvectors.column(order[1]),
    ]);
    let mut w = l_inv.transpose() * v;
    for mut col in w.column_iter_mut() {
        let lead = if col[0].abs() >= col[1].abs() {
            col[0]
        } else {
            col[1]
        };
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    Ok(EmBasis {
        w,
        eigenvalues: Vector2::new(eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]),
    })
}

/// PD gains per eigenmovement, in modal units (`kp` in 1/s^2, `kd` in 1/s),
/// and the physiological delay of each joint loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    pub kp: [f64; 2],
    pub kd: [f64; 2],
    pub ankle_delay: f64,
    pub hip_delay: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            kp: [12.391893989752747, 81.18767197682025],
            kd: [3.7175681969258245, 24.35630159304608],
            ankle_delay: 0.06,
            hip_delay: 0.06,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        for v in self
            .kp
            .iter()
            .chain(&self.kd)
            .chain([&self.ankle_delay, &self.hip_delay])
        {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Config(format!(
                    "EM gains and delays must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Added delays that bring both joints to the longer of the two.
    pub fn equalization_delays(&self) -> [f64; 2] {
        let total = self.ankle_delay.max(self.hip_delay);
        [total - self.ankle_delay, total - self.hip_delay]
    }

    /// Physiological plus added delay per joint; identical by construction.
    pub fn effective_delays(&self) -> [f64; 2] {
        let extra = self.equalization_delays();
        [self.ankle_delay + extra[0], self.hip_delay + extra[1]]
    }
}

#[derive(Debug, Clone)]
pub struct EmController {
    cfg: EmConfig,
    basis: EmBasis,
    w_inv: Matrix2<f64>,
    w_inv_t: Matrix2<f64>,
    ankle_delay: DelayLine<(f64, f64)>,
    hip_delay: DelayLine<(f64, f64)>,
}

impl EmController {
    pub fn new(cfg: EmConfig, plant: &DipParams, dt: f64) -> Result<Self> {
        Self::with_basis(cfg, em_decompose(&linearize(plant))?, dt)
    }

    pub fn with_basis(cfg: EmConfig, basis: EmBasis, dt: f64) -> Result<Self> {
        cfg.validate()?;
        let w_inv = basis
            .w
            .try_inverse()
            .ok_or_else(|| Error::Decomposition("modal matrix is singular".into()))?;
        let [d1, d2] = cfg.effective_delays();
        Ok(Self {
            ankle_delay: DelayLine::from_delay(d1, dt, (0.0, 0.0))?,
            hip_delay: DelayLine::from_delay(d2, dt, (0.0, 0.0))?,
            w_inv_t: w_inv.transpose(),
            w_inv,
            basis,
            cfg,
        })
    }

    pub fn basis(&self) -> &EmBasis {
        &self.basis
    }

    /// Joint torques for joint coordinates `q = [leg-in-space, hip]` and rates,
    /// before the delays are applied.
    pub fn modal_torques(&self, q: Vector2<f64>, q_rate: Vector2<f64>) -> Vector2<f64> {
        let xi = self.w_inv * q;
        let xi_rate = self.w_inv * q_rate;
        let u = Vector2::new(
            -(self.cfg.kp[0] * xi[0] + self.cfg.kd[0] * xi_rate[0]),
            -(self.cfg.kp[1] * xi[1] + self.cfg.kd[1] * xi_rate[1]),
        );
        self.w_inv_t * u
    }

    /// Delayed step on raw joint coordinates.
    pub fn step_joint(&mut self, q: Vector2<f64>, q_rate: Vector2<f64>) -> Vector2<f64> {
        let (q1, r1) = self.ankle_delay.push((q[0], q_rate[0]));
        let (q2, r2) = self.hip_delay.push((q[1], q_rate[1]));
        self.modal_torques(Vector2::new(q1, q2), Vector2::new(r1, r2))
    }
}

impl Controller for EmController {
    fn step(&mut self, s: &SensorSet) -> JointTorques {
        // Leg-in-space from the vestibular trunk orientation minus hip angle.
        let tau = self.step_joint(
            Vector2::new(s.vest_star, s.q2),
            Vector2::new(s.vest_star_rate, s.q2_rate),
        );
        JointTorques::new(tau[0], tau[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pencil() {
        let lin = Linearization {
            b0: Matrix2::new(4.0, 0.0, 0.0, 9.0),
            g0: Matrix2::new(2.0, 0.0, 0.0, 27.0),
        };
        let basis = em_decompose(&lin).unwrap();
        assert!((basis.eigenvalues[0] - 0.5).abs() < 1e-14);
        assert!((basis.eigenvalues[1] - 3.0).abs() < 1e-14);
        let expected = Matrix2::new(0.5, 0.0, 0.0, 1.0 / 3.0);
        assert!((basis.w - expected).amax() < 1e-14);
    }

    #[test]
    fn non_spd_inertia_is_rejected() {
        let lin = Linearization {
            b0: Matrix2::new(1.0, 2.0, 2.0, 1.0),
            g0: Matrix2::identity(),
        };
        assert!(matches!(em_decompose(&lin), Err(Error::Decomposition(_))));
    }

    #[test]
    fn zero_modal_state_gives_zero_torque() {
        let c = EmController::new(EmConfig::default(), &DipParams::default(), 1e-3).unwrap();
        assert_eq!(
            c.modal_torques(Vector2::zeros(), Vector2::zeros()),
            Vector2::zeros()
        );
    }

    #[test]
    fn torques_scale_with_gains() {
        let p = DipParams::default();
        let cfg = EmConfig::default();
        let scaled = EmConfig {
            kp: cfg.kp.map(|k| 2.5 * k),
            kd: cfg.kd.map(|k| 2.5 * k),
            ..cfg.clone()
        };
        let a = EmController::new(cfg, &p, 1e-3).unwrap();
        let b = EmController::new(scaled, &p, 1e-3).unwrap();
        let q = Vector2::new(0.01, -0.02);
        let r = Vector2::new(0.1, 0.05);
        assert!((a.modal_torques(q, r) * 2.5 - b.modal_torques(q, r)).amax() < 1e-10);
    }

    #[test]
    fn delays_are_equalized() {
        let cfg = EmConfig {
            ankle_delay: 0.08,
            hip_delay: 0.05,
            ..EmConfig::default()
        };
        let [a, h] = cfg.effective_delays();
        assert_eq!(a, h);
        assert!((cfg.equalization_delays()[1] - 0.03).abs() < 1e-15);
    }
}
