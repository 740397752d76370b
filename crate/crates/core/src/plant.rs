//! Double inverted pendulum standing on a support surface that tilts about
//! the ankle axis.
//!
//! State is kept in absolute (in-space) angles: `alpha_ls` for the legs and
//! `alpha_ts` for the trunk (head-arms-trunk), both measured from the gravity
//! vertical, positive forward. The ankle sits on the platform rotation axis,
//! so tilting the platform moves no mass; it only changes the ankle joint
//! angle seen by proprioception and by the passive ankle spring.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anthropometric and passive-joint parameters. Link 1 is the legs, link 2 the trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipParams {
    pub leg_mass: f64,
    /// Leg COM distance from the ankle.
    pub leg_com: f64,
    /// Ankle-to-hip length.
    pub leg_length: f64,
    /// Leg moment of inertia about its own COM.
    pub leg_inertia: f64,
    pub trunk_mass: f64,
    /// Trunk COM distance from the hip.
    pub trunk_com: f64,
    pub trunk_length: f64,
    pub trunk_inertia: f64,
    pub gravity: f64,
    /// Passive ankle spring/damper, referenced to the foot (platform).
    pub ankle_stiffness: f64,
    pub ankle_damping: f64,
    /// Passive hip spring/damper, referenced to the legs.
    pub hip_stiffness: f64,
    pub hip_damping: f64,
    /// Extra hip stiffness that locks the hip (single-pendulum mode). Zero disables it.
    pub hip_lock_stiffness: f64,
    pub hip_lock_damping: f64,
}

impl Default for DipParams {
    /// 80 kg, 1.80 m body with a Winter-style segment split; the feet stay on the platform.
    fn default() -> Self {
        Self {
            leg_mass: 23.4,
            leg_com: 0.553,
            leg_length: 0.884,
            leg_inertia: 1.45,
            trunk_mass: 54.2,
            trunk_com: 0.33,
            trunk_length: 0.82,
            trunk_inertia: 3.6,
            gravity: 9.81,
            ankle_stiffness: 80.0,
            ankle_damping: 10.0,
            hip_stiffness: 10.0,
            hip_damping: 5.0,
            hip_lock_stiffness: 0.0,
            hip_lock_damping: 0.0,
        }
    }
}

impl DipParams {
    /// Default body with the hip locked by a stiff spring.
    pub fn hip_locked() -> Self {
        Self::default().with_hip_lock(1e5, 500.0)
    }

    pub fn with_hip_lock(mut self, stiffness: f64, damping: f64) -> Self {
        self.hip_lock_stiffness = stiffness;
        self.hip_lock_damping = damping;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("leg_mass", self.leg_mass),
            ("leg_length", self.leg_length),
            ("trunk_length", self.trunk_length),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("trunk_mass", self.trunk_mass),
            ("leg_com", self.leg_com),
            ("trunk_com", self.trunk_com),
            ("leg_inertia", self.leg_inertia),
            ("trunk_inertia", self.trunk_inertia),
            ("ankle_stiffness", self.ankle_stiffness),
            ("ankle_damping", self.ankle_damping),
            ("hip_stiffness", self.hip_stiffness),
            ("hip_damping", self.hip_damping),
            ("hip_lock_stiffness", self.hip_lock_stiffness),
            ("hip_lock_damping", self.hip_lock_damping),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.trunk_inertia + self.trunk_mass * self.trunk_com.powi(2) <= 0.0 {
            return Err(Error::Config("trunk has no rotational inertia".into()));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.leg_mass + self.trunk_mass
    }

    /// Height of the whole-body COM above the ankle when upright.
    pub fn com_height(&self) -> f64 {
        (self.leg_mass * self.leg_com + self.trunk_mass * (self.leg_length + self.trunk_com))
            / self.total_mass()
    }

    /// Gravitational stiffness `m g h` of the whole body about the ankle.
    pub fn mgh(&self) -> f64 {
        self.total_mass() * self.gravity * self.com_height()
    }

    /// Gravitational stiffness of the trunk about the hip.
    pub fn trunk_mgh(&self) -> f64 {
        self.trunk_mass * self.gravity * self.trunk_com
    }

    /// Moment of inertia of the rigid (hip-locked) body about the ankle.
    pub fn rigid_inertia(&self) -> f64 {
        let (a, b, d) = self.inertia_terms();
        a + 2.0 * b + d
    }

    /// Constant terms of the absolute-angle mass matrix `[[a, b cos], [b cos, d]]`.
    fn inertia_terms(&self) -> (f64, f64, f64) {
        let a = self.leg_inertia
            + self.leg_mass * self.leg_com.powi(2)
            + self.trunk_mass * self.leg_length.powi(2);
        let b = self.trunk_mass * self.leg_length * self.trunk_com;
        let d = self.trunk_inertia + self.trunk_mass * self.trunk_com.powi(2);
        (a, b, d)
    }

    fn gravity_terms(&self) -> (f64, f64) {
        (
            (self.leg_mass * self.leg_com + self.trunk_mass * self.leg_length) * self.gravity,
            self.trunk_mass * self.trunk_com * self.gravity,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DipState {
    /// Leg-in-space angle [rad].
    pub alpha_ls: f64,
    /// Trunk-in-space angle [rad].
    pub alpha_ts: f64,
    pub omega_ls: f64,
    pub omega_ts: f64,
    pub t: f64,
}

pub const FALL_ANGLE: f64 = std::f64::consts::FRAC_PI_2;

impl DipState {
    pub fn upright() -> Self {
        Self::default()
    }

    /// Rigid lean of the whole body by `angle` rad.
    pub fn leaning(angle: f64) -> Self {
        Self {
            alpha_ls: angle,
            alpha_ts: angle,
            ..Self::default()
        }
    }

    pub fn is_fallen(&self) -> bool {
        !(self.alpha_ls.abs() < FALL_ANGLE && self.alpha_ts.abs() < FALL_ANGLE)
    }

    pub fn hip_angle(&self) -> f64 {
        self.alpha_ts - self.alpha_ls
    }
}

/// Active joint torques [Nm]; positive ankle torque pushes the legs forward,
/// positive hip torque pushes the trunk forward relative to the legs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointTorques {
    pub ankle: f64,
    pub hip: f64,
}

impl JointTorques {
    pub fn new(ankle: f64, hip: f64) -> Self {
        Self { ankle, hip }
    }
}

/// Platform tilt over one integration step: `angle + rate * (t - t0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Platform {
    pub angle: f64,
    pub rate: f64,
}

/// Angular accelerations of the absolute angles.
pub fn accelerations(
    params: &DipParams,
    angles: [f64; 2],
    rates: [f64; 2],
    torques: JointTorques,
    tilt: f64,
    tilt_rate: f64,
) -> [f64; 2] {
    let [th1, th2] = angles;
    let [w1, w2] = rates;
    let (a, b, d) = params.inertia_terms();
    let (g1, g2) = params.gravity_terms();

    let q1 = th1 - tilt;
    let q1_rate = w1 - tilt_rate;
    let q2 = th2 - th1;
    let q2_rate = w2 - w1;
    let ankle = torques.ankle - params.ankle_stiffness * q1 - params.ankle_damping * q1_rate;
    let hip = torques.hip
        - (params.hip_stiffness + params.hip_lock_stiffness) * q2
        - (params.hip_damping + params.hip_lock_damping) * q2_rate;

    let delta = th1 - th2;
    let (s, c) = delta.sin_cos();
    let m12 = b * c;
    let r1 = ankle - hip - b * s * w2 * w2 + g1 * th1.sin();
    let r2 = hip + b * s * w1 * w1 + g2 * th2.sin();
    let det = a * d - m12 * m12;
    [(d * r1 - m12 * r2) / det, (a * r2 - m12 * r1) / det]
}

/// One fixed-step RK4 advance of the nonlinear two-link dynamics.
pub fn dip_step(
    state: &DipState,
    torques: JointTorques,
    params: &DipParams,
    platform: Platform,
    dt: f64,
) -> DipState {
    let f = |tau: f64, th: [f64; 2], w: [f64; 2]| {
        let tilt = platform.angle + platform.rate * tau;
        accelerations(params, th, w, torques, tilt, platform.rate)
    };
    let th0 = [state.alpha_ls, state.alpha_ts];
    let w0 = [state.omega_ls, state.omega_ts];
    let add = |x: [f64; 2], y: [f64; 2], h: f64| [x[0] + h * y[0], x[1] + h * y[1]];

    let k1v = f(0.0, th0, w0);
    let k1x = w0;
    let k2x = add(w0, k1v, dt / 2.0);
    let k2v = f(dt / 2.0, add(th0, k1x, dt / 2.0), k2x);
    let k3x = add(w0, k2v, dt / 2.0);
    let k3v = f(dt / 2.0, add(th0, k2x, dt / 2.0), k3x);
    let k4x = add(w0, k3v, dt);
    let k4v = f(dt, add(th0, k3x, dt), k4x);

    let comb = |a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2], i: usize| {
        (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) * dt / 6.0
    };
    DipState {
        alpha_ls: th0[0] + comb(k1x, k2x, k3x, k4x, 0),
        alpha_ts: th0[1] + comb(k1x, k2x, k3x, k4x, 1),
        omega_ls: w0[0] + comb(k1v, k2v, k3v, k4v, 0),
        omega_ts: w0[1] + comb(k1v, k2v, k3v, k4v, 1),
        t: state.t + dt,
    }
}

/// Kinetic plus gravitational potential energy (passive springs excluded).
pub fn mechanical_energy(state: &DipState, params: &DipParams) -> f64 {
    let (a, b, d) = params.inertia_terms();
    let (g1, g2) = params.gravity_terms();
    let c = (state.alpha_ls - state.alpha_ts).cos();
    let (w1, w2) = (state.omega_ls, state.omega_ts);
    0.5 * a * w1 * w1
        + b * c * w1 * w2
        + 0.5 * d * w2 * w2
        + g1 * state.alpha_ls.cos()
        + g2 * state.alpha_ts.cos()
}

/// Upright linearisation `B0 q'' - G0 q = tau` with `q = [leg-in-space, hip]`
/// and `tau = [ankle, hip]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub b0: Matrix2<f64>,
    pub g0: Matrix2<f64>,
}

pub fn linearize(params: &DipParams) -> Linearization {
    let (a, b, d) = params.inertia_terms();
    let (g1, g2) = params.gravity_terms();
    Linearization {
        b0: Matrix2::new(a + 2.0 * b + d, b + d, b + d, d),
        g0: Matrix2::new(g1 + g2, g2, g2, g2),
    }
}

impl Linearization {
    /// `q'' = B0^-1 (G0 q + tau)`.
    pub fn accel(&self, q: Vector2<f64>, tau: Vector2<f64>) -> Vector2<f64> {
        self.b0
            .lu()
            .solve(&(self.g0 * q + tau))
            .expect("B0 is positive definite")
    }
}

/// Sensory readouts derived from the body state and platform tilt (all rad, rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SensorSet {
    /// Whole-body COM angle about the ankle, from vertical.
    pub alpha_bs: f64,
    pub alpha_bs_rate: f64,
    /// Body (COM) relative to the foot: `alpha_bs - tilt`.
    pub alpha_bf: f64,
    pub alpha_bf_rate: f64,
    /// Trunk in space, as reported by the vestibular system.
    pub alpha_ts: f64,
    pub alpha_ts_rate: f64,
    /// Leg in space reconstructed from vestibular trunk-in-space and hip angle.
    pub vest_star: f64,
    pub vest_star_rate: f64,
    /// Ankle angle, legs relative to the foot.
    pub q1: f64,
    pub q1_rate: f64,
    /// Hip angle, trunk relative to the legs.
    pub q2: f64,
    pub q2_rate: f64,
}

pub fn sensors(state: &DipState, tilt: f64, tilt_rate: f64, params: &DipParams) -> SensorSet {
    let (m1, m2) = (params.leg_mass, params.trunk_mass);
    let m = m1 + m2;
    let (s1, c1) = state.alpha_ls.sin_cos();
    let (s2, c2) = state.alpha_ts.sin_cos();
    let (w1, w2) = (state.omega_ls, state.omega_ts);
    let r1 = m1 * params.leg_com + m2 * params.leg_length;
    let r2 = m2 * params.trunk_com;
    let x = (r1 * s1 + r2 * s2) / m;
    let y = (r1 * c1 + r2 * c2) / m;
    let xd = (r1 * c1 * w1 + r2 * c2 * w2) / m;
    let yd = -(r1 * s1 * w1 + r2 * s2 * w2) / m;
    let alpha_bs = x.atan2(y);
    let alpha_bs_rate = (xd * y - x * yd) / (x * x + y * y);

    let q1 = state.alpha_ls - tilt;
    let q2 = state.alpha_ts - state.alpha_ls;
    let q2_rate = w2 - w1;
    SensorSet {
        alpha_bs,
        alpha_bs_rate,
        alpha_bf: alpha_bs - tilt,
        alpha_bf_rate: alpha_bs_rate - tilt_rate,
        alpha_ts: state.alpha_ts,
        alpha_ts_rate: w2,
        vest_star: state.alpha_ts - q2,
        vest_star_rate: w2 - q2_rate,
        q1,
        q1_rate: w1 - tilt_rate,
        q2,
        q2_rate,
    }
}

/// Number of whole steps in `delay`; errors unless it is an integer multiple of `dt`.
pub fn delay_steps(delay: f64, dt: f64) -> Result<usize> {
    if !(delay >= 0.0) || !(dt > 0.0) {
        return Err(Error::Config(format!(
            "delay ({delay}) must be >= 0 and dt ({dt}) > 0"
        )));
    }
    let steps = (delay / dt).round();
    if (delay / dt - steps).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "delay {delay} s is not a multiple of the {dt} s tick"
        )));
    }
    Ok(steps as usize)
}

/// Fixed-length ring buffer returning the input from `steps` pushes ago.
#[derive(Debug, Clone)]
pub struct DelayLine<T> {
    buf: Vec<T>,
    head: usize,
}

impl<T: Clone> DelayLine<T> {
    /// History starts filled with `initial`.
    pub fn new(steps: usize, initial: T) -> Self {
        Self {
            buf: vec![initial; steps],
            head: 0,
        }
    }

    pub fn from_delay(delay: f64, dt: f64, initial: T) -> Result<Self> {
        Ok(Self::new(delay_steps(delay, dt)?, initial))
    }

    pub fn steps(&self) -> usize {
        self.buf.len()
    }

    pub fn push(&mut self, input: T) -> T {
        if self.buf.is_empty() {
            return input;
        }
        let out = std::mem::replace(&mut self.buf[self.head], input);
        self.head = (self.head + 1) % self.buf.len();
        out
    }
}
