#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use posture_bench::prts::StimulusConfig;
use posture_bench::spectral::StimulusAnalysis;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn default_analysis() -> StimulusAnalysis {
    StimulusAnalysis::from_config(&StimulusConfig::default()).unwrap()
}

/// Textbook DFT coefficient `sum x[n] exp(-i 2 pi k n / N)`.
pub fn naive_dft(x: &[f64], k: usize) -> Complex64 {
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(j, &v)| Complex64::from_polar(v, -2.0 * std::f64::consts::PI * (k * j) as f64 / n))
        .sum()
}

/// Gauss-Jordan inverse with partial pivoting on plain nested vectors.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[row][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// `A A^T + eps I` with standard normal `A`, well conditioned enough for the oracles.
pub fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| normal(rng));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Periodic steady-state response of `y' = (u - y) / tau` to the linearly
/// interpolated samples `u`, found by integrating `periods` repetitions from rest.
pub fn first_order_response(u: &[f64], sample_rate: f64, tau: f64, substeps: usize) -> Vec<f64> {
    let h = 1.0 / (sample_rate * substeps as f64);
    let n = u.len();
    let mut y = 0.0;
    let mut out = Vec::with_capacity(n);
    let f = |y: f64, u: f64| (u - y) / tau;
    for i in 0..n {
        out.push(y);
        let (u0, u1) = (u[i], u[(i + 1) % n]);
        for s in 0..substeps {
            let a = s as f64 / substeps as f64;
            let b = (s as f64 + 0.5) / substeps as f64;
            let c = (s as f64 + 1.0) / substeps as f64;
            let (ua, ub, uc) = (u0 + (u1 - u0) * a, u0 + (u1 - u0) * b, u0 + (u1 - u0) * c);
            let k1 = f(y, ua);
            let k2 = f(y + 0.5 * h * k1, ub);
            let k3 = f(y + 0.5 * h * k2, ub);
            let k4 = f(y + h * k3, uc);
            y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        }
    }
    out
}

/// Wrapped phase difference in degrees.
pub fn phase_diff_deg(a: Complex64, b: Complex64) -> f64 {
    (a / b).arg().to_degrees()
}
