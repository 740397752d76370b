//! Pseudorandom ternary stimulus.
//!
//! A maximal-length shift register over GF(3) produces a ternary sequence
//! that is used as the angular *velocity* of the support surface. Integrating
//! it gives a periodic tilt whose spectrum only contains odd harmonics of the
//! fundamental `1 / period`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ternary symbols in `{-1, 0, +1}` emitted by a GF(3) feedback register.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernarySequence {
    values: Vec<i8>,
    stages: usize,
}

impl TernarySequence {
    /// Wraps raw symbols; every entry must be -1, 0 or +1.
    pub fn from_symbols(values: Vec<i8>, stages: usize) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(-1..=1).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "ternary symbol {bad} outside {{-1, 0, 1}}"
            )));
        }
        Ok(Self { values, stages })
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn symbol(digit: u8) -> i8 {
    match digit {
        0 => 0,
        1 => 1,
        _ => -1,
    }
}

/// Runs the recurrence `a[n] = sum_j taps[j] * a[n-1-j] (mod 3)` from
/// `seed_state` (most recent symbol first) until the register returns to the
/// seed. The output is the newly shifted-in digit, mapped `{0,1,2} -> {0,+1,-1}`.
pub fn generate_ternary_sequence(
    stages: usize,
    taps: &[u8],
    seed_state: &[u8],
) -> Result<TernarySequence> {
    if stages < 2 {
        return Err(Error::InvalidArgument(format!(
            "register needs at least 2 stages, got {stages}"
        )));
    }
    if taps.len() != stages || seed_state.len() != stages {
        return Err(Error::InvalidArgument(format!(
            "taps ({}) and seed ({}) must both have {stages} entries",
            taps.len(),
            seed_state.len()
        )));
    }
    if taps.iter().chain(seed_state).any(|&d| d > 2) {
        return Err(Error::InvalidArgument(
            "taps and seed digits must lie in {0, 1, 2}".into(),
        ));
    }
    if seed_state.iter().all(|&d| d == 0) {
        return Err(Error::InvalidArgument(
            "all-zero seed state is absorbing".into(),
        ));
    }

    let expected = 3usize.pow(stages as u32) - 1;
    let mut state = seed_state.to_vec();
    let mut values = Vec::with_capacity(expected);
    for _ in 0..expected {
        let next = taps
            .iter()
            .zip(&state)
            .map(|(&c, &s)| u32::from(c) * u32::from(s))
            .sum::<u32>()
            % 3;
        state.rotate_right(1);
        state[0] = next as u8;
        values.push(symbol(next as u8));
        if state == seed_state {
            break;
        }
    }
    if values.len() != expected || state != seed_state {
        return Err(Error::NonMaximalTaps {
            period: if state == seed_state { values.len() } else { 0 },
            expected,
        });
    }
    Ok(TernarySequence { values, stages })
}

/// Exhaustive search for every tap vector that yields a maximal-length register.
pub fn maximal_taps(stages: usize) -> Vec<Vec<u8>> {
    let mut seed = vec![0u8; stages];
    seed[0] = 1;
    let total = 3usize.pow(stages as u32);
    (0..total)
        .map(|code| {
            let mut taps = vec![0u8; stages];
            let mut c = code;
            for t in taps.iter_mut().rev() {
                *t = (c % 3) as u8;
                c /= 3;
            }
            taps
        })
        .filter(|taps| taps[stages - 1] != 0)
        .filter(|taps| generate_ternary_sequence(stages, taps, &seed).is_ok())
        .collect()
}

/// Sampled support-surface tilt in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltTrajectory {
    samples: Vec<f64>,
    sample_rate: f64,
    period: f64,
    n_periods: usize,
    degenerate: bool,
}

impl TiltTrajectory {
    /// Builds a trajectory from raw samples. `samples.len()` must equal
    /// `sample_rate * period * n_periods`.
    pub fn from_samples(
        samples: Vec<f64>,
        sample_rate: f64,
        period: f64,
        n_periods: usize,
    ) -> Result<Self> {
        let spp = samples_per_period(period, sample_rate)?;
        if samples.len() != spp * n_periods {
            return Err(Error::InvalidArgument(format!(
                "{} samples do not cover {n_periods} periods of {spp}",
                samples.len()
            )));
        }
        let degenerate = samples.iter().all(|&x| x == 0.0);
        Ok(Self {
            samples,
            sample_rate,
            period,
            n_periods,
            degenerate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn samples_per_period(&self) -> usize {
        self.samples.len() / self.n_periods.max(1)
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// True when the stimulus is identically zero and no rescaling happened.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn base_freq(&self) -> f64 {
        1.0 / self.period
    }

    pub fn peak_to_peak(&self) -> f64 {
        let (lo, hi) = min_max(&self.samples);
        hi - lo
    }

    /// The trailing periods after dropping `skip` leading ones.
    pub fn tail_periods(&self, skip: usize) -> &[f64] {
        let spp = self.samples_per_period();
        &self.samples[(skip * spp).min(self.samples.len())..]
    }

    /// CSV with header `t_s,tilt_deg`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 32);
        out.push_str("t_s,tilt_deg\n");
        for (n, x) in self.samples.iter().enumerate() {
            let t = n as f64 / self.sample_rate;
            writeln!(out, "{t:.6},{x:.12}").unwrap();
        }
        out
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

fn samples_per_period(period: f64, sample_rate: f64) -> Result<usize> {
    if !(period > 0.0 && sample_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "period ({period}) and sample rate ({sample_rate}) must be positive"
        )));
    }
    let exact = period * sample_rate;
    let rounded = exact.round();
    if rounded < 1.0 || (exact - rounded).abs() > 1e-9 * exact {
        return Err(Error::InvalidArgument(format!(
            "period x sample rate = {exact} is not an integer sample count"
        )));
    }
    Ok(rounded as usize)
}

/// Integrates the ternary velocity into a tilt trajectory.
///
/// Each symbol is a constant angular velocity held for `state_duration`. The
/// position is the exact piecewise-linear integral, evaluated at the sample
/// instants, so the state boundaries need not coincide with samples. The mean
/// velocity is removed first so that one period integrates to zero; the trace
/// is then mean-removed, scaled to `peak_to_peak` and tiled `n_periods` times.
pub fn ternary_to_tilt(
    seq: &TernarySequence,
    state_duration: f64,
    sample_rate: f64,
    peak_to_peak: f64,
    n_periods: usize,
) -> Result<TiltTrajectory> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument("empty ternary sequence".into()));
    }
    if !(peak_to_peak > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "peak-to-peak amplitude must be positive, got {peak_to_peak}"
        )));
    }
    if n_periods == 0 {
        return Err(Error::InvalidArgument("n_periods must be >= 1".into()));
    }
    let len = seq.len();
    let period = state_duration * len as f64;
    let spp = samples_per_period(period, sample_rate)?;

    let mean_v = seq.values().iter().map(|&v| f64::from(v)).sum::<f64>() / len as f64;
    let velocity: Vec<f64> = seq
        .values()
        .iter()
        .map(|&v| f64::from(v) - mean_v)
        .collect();
    // Position at the start of each state, in units of state_duration.
    let mut boundary = Vec::with_capacity(len + 1);
    boundary.push(0.0);
    let mut acc = 0.0;
    for v in &velocity {
        acc += v;
        boundary.push(acc);
    }

    let mut one: Vec<f64> = (0..spp)
        .map(|n| {
            // t / state_duration = n * len / spp, split exactly in integers.
            let num = n * len;
            let state = num / spp;
            let frac = (num % spp) as f64 / spp as f64;
            state_duration * (boundary[state] + velocity[state] * frac)
        })
        .collect();

    let mean = one.iter().sum::<f64>() / spp as f64;
    one.iter_mut().for_each(|x| *x -= mean);
    let (lo, hi) = min_max(&one);
    let degenerate = !(hi - lo > f64::EPSILON * state_duration);
    if degenerate {
        one.iter_mut().for_each(|x| *x = 0.0);
    } else {
        let scale = peak_to_peak / (hi - lo);
        one.iter_mut().for_each(|x| *x *= scale);
    }

    let samples = one.iter().copied().cycle().take(spp * n_periods).collect();
    Ok(TiltTrajectory {
        samples,
        sample_rate,
        period,
        n_periods,
        degenerate,
    })
}

/// Odd multiples of the fundamental where the stimulus carries power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakGrid {
    f_peak: Vec<f64>,
    base_freq: f64,
}

impl PeakGrid {
    pub fn frequencies(&self) -> &[f64] {
        &self.f_peak
    }

    pub fn base_freq(&self) -> f64 {
        self.base_freq
    }

    pub fn len(&self) -> usize {
        self.f_peak.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_peak.is_empty()
    }

    /// Harmonic number of peak `i` (always odd).
    pub fn harmonic(&self, i: usize) -> usize {
        2 * i + 1
    }
}

/// All odd multiples of `base_freq` up to and including `max_freq`.
pub fn analysis_peaks(base_freq: f64, max_freq: f64) -> Result<PeakGrid> {
    if !(base_freq > 0.0) || !(max_freq >= base_freq) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < base_freq <= max_freq, got {base_freq}, {max_freq}"
        )));
    }
    let count = ((max_freq / base_freq + 1.0) / 2.0 + 1e-9).floor() as usize;
    let f_peak = (0..count).map(|i| (2 * i + 1) as f64 * base_freq).collect();
    Ok(PeakGrid { f_peak, base_freq })
}

/// Stimulus parameters, serialized into every artifact that depends on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusConfig {
    pub stages: usize,
    pub taps: Vec<u8>,
    pub seed_state: Vec<u8>,
    pub period_s: f64,
    pub sample_rate_hz: f64,
    pub peak_to_peak_deg: f64,
    pub n_periods: usize,
    /// Leading periods treated as transient and excluded from analysis.
    pub transient_periods: usize,
    /// Upper end of the analysis peak grid.
    pub max_analysis_freq_hz: f64,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        Self {
            stages: 5,
            taps: vec![0, 0, 0, 1, 2],
            seed_state: vec![1, 0, 0, 0, 0],
            period_s: 20.0,
            sample_rate_hz: 100.0,
            peak_to_peak_deg: 1.0,
            n_periods: 6,
            transient_periods: 1,
            max_analysis_freq_hz: 4.95,
        }
    }
}

impl StimulusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.transient_periods >= self.n_periods {
            return Err(Error::Config(format!(
                "transient_periods ({}) must be less than n_periods ({})",
                self.transient_periods, self.n_periods
            )));
        }
        Ok(())
    }

    pub fn sequence(&self) -> Result<TernarySequence> {
        generate_ternary_sequence(self.stages, &self.taps, &self.seed_state)
    }

    pub fn generate(&self) -> Result<TiltTrajectory> {
        self.validate()?;
        let seq = self.sequence()?;
        ternary_to_tilt(
            &seq,
            self.period_s / seq.len() as f64,
            self.sample_rate_hz,
            self.peak_to_peak_deg,
            self.n_periods,
        )
    }

    pub fn peaks(&self) -> Result<PeakGrid> {
        analysis_peaks(1.0 / self.period_s, self.max_analysis_freq_hz)
    }
}

/// Sidecar metadata written next to an exported trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusMeta {
    pub config: StimulusConfig,
    pub sequence_length: usize,
    pub n_samples: usize,
    pub degenerate: bool,
    pub config_hash: String,
}
