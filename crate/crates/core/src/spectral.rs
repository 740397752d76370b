//! Peak-grid DFT, band averaging and FRF estimation.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prts::{PeakGrid, TiltTrajectory};

pub const NUM_BANDS: usize = 11;

/// Centre frequencies of the 11-component FRF representation, in Hz.
pub const PUBLISHED_CENTERS_HZ: [f64; NUM_BANDS] =
    [0.1, 0.3, 0.6, 0.8, 1.1, 1.4, 1.8, 2.2, 2.7, 3.5, 4.4];

/// Inclusive peak-index ranges of each band on the odd-harmonic grid.
/// Contiguous bands share their boundary peak.
pub const BAND_TABLE: [(usize, usize); NUM_BANDS] = [
    (0, 1),
    (1, 4),
    (4, 7),
    (7, 8),
    (8, 13),
    (13, 14),
    (14, 21),
    (21, 22),
    (22, 31),
    (31, 38),
    (38, 49),
];

pub const DEFAULT_U_FLOOR: f64 = 1e-12;

/// `(2/N) * sum x[n] exp(-i 2 pi f n / fs)`: the complex amplitude of the
/// component of `signal` at `freq`. The record must hold an integer number of
/// cycles of `freq`.
pub fn single_bin_dft(signal: &[f64], freq: f64, sample_rate: f64) -> Result<Complex64> {
    let n = signal.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty signal".into()));
    }
    let cycles = freq * n as f64 / sample_rate;
    let k = cycles.round();
    if (cycles - k).abs() > 1e-9 * cycles.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "{n} samples at {sample_rate} Hz hold {cycles} cycles of {freq} Hz, not an integer"
        )));
    }
    let k = k.rem_euclid(n as f64) as u64;
    let n64 = n as u64;
    let step = 2.0 * PI / n as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &x) in signal.iter().enumerate() {
        // Reduce the phase index exactly before converting to an angle.
        let angle = step * ((k * i as u64) % n64) as f64;
        let (s, c) = angle.sin_cos();
        acc += Complex64::new(x * c, -x * s);
    }
    Ok(acc * (2.0 / n as f64))
}

/// Complex amplitudes of a signal at every frequency of a peak grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSpectrum {
    values: Vec<Complex64>,
    grid: PeakGrid,
}

impl PeakSpectrum {
    pub fn new(values: Vec<Complex64>, grid: PeakGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} spectrum values for a {}-peak grid",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { values, grid })
    }

    /// Evaluates the single-bin DFT of `signal` at each peak.
    pub fn of_signal(signal: &[f64], sample_rate: f64, grid: &PeakGrid) -> Result<Self> {
        let values = grid
            .frequencies()
            .iter()
            .map(|&f| single_bin_dft(signal, f, sample_rate))
            .collect::<Result<_>>()?;
        Ok(Self {
            values,
            grid: grid.clone(),
        })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn grid(&self) -> &PeakGrid {
        &self.grid
    }
}

/// Index sets `B_k` into the peak grid and their centre frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    grid: PeakGrid,
    bands: Vec<Vec<usize>>,
    centers_hz: Vec<f64>,
}

impl BandSpec {
    /// Builds bands from inclusive index ranges on `grid`.
    pub fn from_ranges(grid: &PeakGrid, ranges: &[(usize, usize)]) -> Result<Self> {
        if ranges.len() != NUM_BANDS {
            return Err(Error::InvalidArgument(format!(
                "expected {NUM_BANDS} bands, got {}",
                ranges.len()
            )));
        }
        let bands: Vec<Vec<usize>> = ranges.iter().map(|&(a, b)| (a..=b).collect()).collect();
        Self::from_index_sets(grid, bands)
    }

    pub fn from_index_sets(grid: &PeakGrid, bands: Vec<Vec<usize>>) -> Result<Self> {
        let f = grid.frequencies();
        for (k, band) in bands.iter().enumerate() {
            if band.is_empty() {
                return Err(Error::InvalidArgument(format!("band {} is empty", k + 1)));
            }
            if let Some(&last) = band.iter().max() {
                if last >= f.len() {
                    let needed = (2 * last + 1) as f64 * grid.base_freq();
                    return Err(Error::Coverage {
                        band: k + 1,
                        grid_max_hz: f.last().copied().unwrap_or(0.0),
                        needed_hz: needed,
                    });
                }
            }
        }
        let centers_hz: Vec<f64> = bands
            .iter()
            .map(|b| b.iter().map(|&i| f[i]).sum::<f64>() / b.len() as f64)
            .collect();
        if centers_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "band centres must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            grid: grid.clone(),
            bands,
            centers_hz,
        })
    }

    pub fn bands(&self) -> &[Vec<usize>] {
        &self.bands
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn grid(&self) -> &PeakGrid {
        &self.grid
    }

    pub fn centers_array(&self) -> [f64; NUM_BANDS] {
        let mut c = [0.0; NUM_BANDS];
        c.copy_from_slice(&self.centers_hz);
        c
    }
}

/// The pinned 11-band table on `grid`.
pub fn make_bands(grid: &PeakGrid) -> Result<BandSpec> {
    BandSpec::from_ranges(grid, &BAND_TABLE)
}

/// Complex-domain mean of the spectrum over each band.
pub fn band_average_complex(
    spec: &PeakSpectrum,
    bands: &BandSpec,
) -> Result<[Complex64; NUM_BANDS]> {
    if spec.grid() != bands.grid() {
        return Err(Error::InvalidArgument(
            "spectrum and band spec use different peak grids".into(),
        ));
    }
    let mut out = [Complex64::new(0.0, 0.0); NUM_BANDS];
    for (slot, band) in out.iter_mut().zip(bands.bands()) {
        let sum: Complex64 = band.iter().map(|&i| spec.values[i]).sum();
        *slot = sum / band.len() as f64;
    }
    Ok(out)
}

/// Frequency response at the 11 band centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frf11 {
    pub values: [Complex64; NUM_BANDS],
    pub centers_hz: [f64; NUM_BANDS],
}

impl Frf11 {
    pub fn new(values: [Complex64; NUM_BANDS], centers_hz: [f64; NUM_BANDS]) -> Result<Self> {
        if values
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::InvalidArgument("FRF has non-finite entries".into()));
        }
        Ok(Self { values, centers_hz })
    }

    pub fn gain(&self) -> [f64; NUM_BANDS] {
        self.values.map(|z| z.norm())
    }

    pub fn phase_deg(&self) -> [f64; NUM_BANDS] {
        self.values.map(|z| z.arg().to_degrees())
    }

    pub fn to_json_value(&self) -> FrfJson {
        FrfJson {
            centers_hz: self.centers_hz.to_vec(),
            re: self.values.iter().map(|z| z.re).collect(),
            im: self.values.iter().map(|z| z.im).collect(),
        }
    }

    /// CSV `f_hz,re,im,gain,phase_deg`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("f_hz,re,im,gain,phase_deg\n");
        for (f, z) in self.centers_hz.iter().zip(&self.values) {
            writeln!(
                out,
                "{f},{},{},{},{}",
                z.re,
                z.im,
                z.norm(),
                z.arg().to_degrees()
            )
            .unwrap();
        }
        out
    }
}

/// On-disk FRF layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrfJson {
    pub centers_hz: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl TryFrom<FrfJson> for Frf11 {
    type Error = Error;

    fn try_from(j: FrfJson) -> Result<Self> {
        if j.centers_hz.len() != NUM_BANDS || j.re.len() != NUM_BANDS || j.im.len() != NUM_BANDS {
            return Err(Error::InvalidArgument(format!(
                "FRF needs {NUM_BANDS} centres, re and im values"
            )));
        }
        let mut values = [Complex64::new(0.0, 0.0); NUM_BANDS];
        let mut centers = [0.0; NUM_BANDS];
        for k in 0..NUM_BANDS {
            values[k] = Complex64::new(j.re[k], j.im[k]);
            centers[k] = j.centers_hz[k];
        }
        Frf11::new(values, centers)
    }
}

/// `G_UY / G_U` per band, i.e. `conj(U) Y / (conj(U) U)`.
pub fn estimate_frf(
    u_banded: &[Complex64; NUM_BANDS],
    y_banded: &[Complex64; NUM_BANDS],
    centers_hz: &[f64; NUM_BANDS],
    floor: f64,
) -> Result<Frf11> {
    let mut values = [Complex64::new(0.0, 0.0); NUM_BANDS];
    for k in 0..NUM_BANDS {
        let u = u_banded[k];
        if !(u.norm() >= floor) {
            return Err(Error::DegenerateStimulus {
                band: k + 1,
                center_hz: centers_hz[k],
                magnitude: u.norm(),
            });
        }
        let g_uy = u.conj() * y_banded[k];
        let g_u = (u.conj() * u).re;
        values[k] = g_uy / g_u;
    }
    Frf11::new(values, *centers_hz)
}

/// Normalised per-band stimulus weights (max = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralWeights {
    pub w: [f64; NUM_BANDS],
}

/// `sqrt(sum_{i in B_k} |P_i|^2)` per band, before normalisation.
pub fn raw_band_power(p: &PeakSpectrum, bands: &BandSpec) -> [f64; NUM_BANDS] {
    let mut out = [0.0; NUM_BANDS];
    for (slot, band) in out.iter_mut().zip(bands.bands()) {
        *slot = band
            .iter()
            .map(|&i| p.values[i].norm_sqr())
            .sum::<f64>()
            .sqrt();
    }
    out
}

pub fn spectral_weights(p: &PeakSpectrum, bands: &BandSpec) -> Result<SpectralWeights> {
    if p.grid() != bands.grid() {
        return Err(Error::InvalidArgument(
            "stimulus spectrum and band spec use different peak grids".into(),
        ));
    }
    let raw = raw_band_power(p, bands);
    let max = raw.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::InvalidArgument(
            "stimulus spectrum is all zero".into(),
        ));
    }
    Ok(SpectralWeights {
        w: raw.map(|x| x / max),
    })
}

/// Everything derived from the stimulus that FRF estimation needs.
#[derive(Debug, Clone)]
pub struct StimulusAnalysis {
    sample_rate: f64,
    samples_per_period: usize,
    skip_periods: usize,
    bands: BandSpec,
    stimulus: PeakSpectrum,
    u_banded: [Complex64; NUM_BANDS],
    weights: SpectralWeights,
    floor: f64,
}

impl StimulusAnalysis {
    /// Analyses the stimulus over all periods after the first `skip_periods`.
    pub fn new(tilt: &TiltTrajectory, skip_periods: usize, max_freq_hz: f64) -> Result<Self> {
        if skip_periods >= tilt.n_periods() {
            return Err(Error::InvalidArgument(format!(
                "cannot skip {skip_periods} of {} periods",
                tilt.n_periods()
            )));
        }
        let grid = crate::prts::analysis_peaks(tilt.base_freq(), max_freq_hz)?;
        let bands = make_bands(&grid)?;
        let stimulus =
            PeakSpectrum::of_signal(tilt.tail_periods(skip_periods), tilt.sample_rate(), &grid)?;
        let u_banded = band_average_complex(&stimulus, &bands)?;
        let weights = spectral_weights(&stimulus, &bands)?;
        Ok(Self {
            sample_rate: tilt.sample_rate(),
            samples_per_period: tilt.samples_per_period(),
            skip_periods,
            bands,
            stimulus,
            u_banded,
            weights,
            floor: DEFAULT_U_FLOOR,
        })
    }

    /// Generates the stimulus described by `cfg` and analyses it with the
    /// configured transient and frequency limit.
    pub fn from_config(cfg: &crate::prts::StimulusConfig) -> Result<Self> {
        Self::new(
            &cfg.generate()?,
            cfg.transient_periods,
            cfg.max_analysis_freq_hz,
        )
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn bands(&self) -> &BandSpec {
        &self.bands
    }

    pub fn stimulus_spectrum(&self) -> &PeakSpectrum {
        &self.stimulus
    }

    pub fn weights(&self) -> &SpectralWeights {
        &self.weights
    }

    pub fn u_banded(&self) -> &[Complex64; NUM_BANDS] {
        &self.u_banded
    }

    /// Response spectrum at the peaks, using the same analysis window as the stimulus.
    pub fn response_spectrum(&self, response: &[f64]) -> Result<PeakSpectrum> {
        let start = self.skip_periods * self.samples_per_period;
        if response.len() <= start || (response.len() - start) % self.samples_per_period != 0 {
            return Err(Error::InvalidArgument(format!(
                "response of {} samples does not span whole periods after the transient",
                response.len()
            )));
        }
        PeakSpectrum::of_signal(&response[start..], self.sample_rate, self.bands.grid())
    }

    /// FRF of a response sampled on the stimulus grid.
    pub fn frf(&self, response: &[f64]) -> Result<Frf11> {
        let y = self.response_spectrum(response)?;
        let y_banded = band_average_complex(&y, &self.bands)?;
        estimate_frf(
            &self.u_banded,
            &y_banded,
            &self.bands.centers_array(),
            self.floor,
        )
    }
}
