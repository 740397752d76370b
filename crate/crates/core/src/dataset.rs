//! Reference cohorts: loading, saving, synthesis and reduction to a
//! [`ReferenceModel`].
//!
//! On disk a cohort is a `manifest.json` next to per-subject files:
//!
//! ```text
//! {"stimulus": {...}, "provenance": "measured",
//!  "subjects": [{"id": "S01", "age_y": 25, "mass_kg": 70, "height_m": 1.75,
//!                "trace": "traces/S01.csv"}, ...]}
//! ```
//!
//! Traces are CSV `t_s,sway_deg` sampled at the stimulus rate; FRF files use
//! the `{centers_hz, re, im}` layout.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{config_hash, read_json, read_text, write_json, write_text};
use crate::control::{run_trial, ControllerConfig, IcConfig, TrialConfig};
use crate::error::{Error, Result};
use crate::metric::{
    cohort_scores, cohort_scores_leave_one_out, expand, mean_and_covariance, FrfVector22, Mat22,
    Provenance, ReferenceModel, DIM,
};
use crate::plant::{delay_steps, DipParams};
use crate::prts::StimulusConfig;
use crate::spectral::{BandSpec, Frf11, FrfJson, SpectralWeights, StimulusAnalysis, NUM_BANDS};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub age_y: f64,
    pub mass_kg: f64,
    pub height_m: f64,
    /// COM sway [deg] on the stimulus sample grid.
    pub trace: Option<Vec<f64>>,
    pub frf: Option<Frf11>,
}

impl SubjectRecord {
    fn validate(&self) -> Result<()> {
        let ok_id = !self.id.is_empty()
            && self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if !ok_id {
            return Err(Error::InvalidArgument(format!(
                "subject id {:?} must be non-empty and use only [A-Za-z0-9_.-]",
                self.id
            )));
        }
        for (name, v) in [
            ("age_y", self.age_y),
            ("mass_kg", self.mass_kg),
            ("height_m", self.height_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "subject {}: {name} must be positive, got {v}",
                    self.id
                )));
            }
        }
        if self.trace.is_none() && self.frf.is_none() {
            return Err(Error::InvalidArgument(format!(
                "subject {} has neither a trace nor an FRF",
                self.id
            )));
        }
        Ok(())
    }

    /// The stored FRF, or the one estimated from the trace.
    pub fn resolve_frf(&self, analysis: &StimulusAnalysis) -> Result<Frf11> {
        match (&self.frf, &self.trace) {
            (Some(f), _) => Ok(*f),
            (None, Some(trace)) => analysis.frf(trace),
            (None, None) => Err(Error::InvalidArgument(format!(
                "subject {} has neither a trace nor an FRF",
                self.id
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    pub stimulus: StimulusConfig,
    pub records: Vec<SubjectRecord>,
    pub provenance: Provenance,
}

impl CohortManifest {
    pub fn validate(&self) -> Result<()> {
        self.stimulus.validate()?;
        let mut seen = HashSet::new();
        for r in &self.records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if let Some(trace) = &r.trace {
                let expected = expected_trace_len(&self.stimulus);
                if trace.len() != expected {
                    return Err(Error::InvalidArgument(format!(
                        "subject {}: trace has {} samples, stimulus has {expected}",
                        r.id,
                        trace.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// FRF of every record, in record order.
    pub fn frfs(&self, analysis: &StimulusAnalysis) -> Result<Vec<Frf11>> {
        self.records
            .par_iter()
            .map(|r| r.resolve_frf(analysis))
            .collect()
    }
}

fn expected_trace_len(stimulus: &StimulusConfig) -> usize {
    (stimulus.period_s * stimulus.sample_rate_hz).round() as usize * stimulus.n_periods
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    stimulus: StimulusConfig,
    subjects: Vec<SubjectEntry>,
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubjectEntry {
    id: String,
    age_y: f64,
    mass_kg: f64,
    height_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frf: Option<String>,
}

/// Reads a cohort from a manifest file or a directory holding `manifest.json`.
pub fn load_cohort(path: &Path) -> Result<CohortManifest> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let file: ManifestFile = read_json(&manifest_path)?;
    let records = file
        .subjects
        .into_iter()
        .map(|s| {
            if s.trace.is_none() && s.frf.is_none() {
                return Err(Error::schema(
                    &manifest_path,
                    format!("subject {} needs a trace or an frf file", s.id),
                ));
            }
            let trace = s
                .trace
                .as_deref()
                .map(|rel| read_trace(&base.join(rel), &s.id, &file.stimulus))
                .transpose()?;
            let frf = s
                .frf
                .as_deref()
                .map(|rel| read_frf(&base.join(rel)))
                .transpose()?;
            Ok(SubjectRecord {
                id: s.id,
                age_y: s.age_y,
                mass_kg: s.mass_kg,
                height_m: s.height_m,
                trace,
                frf,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CohortManifest {
        stimulus: file.stimulus,
        records,
        provenance: file.provenance,
    };
    manifest.validate().map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::schema(&manifest_path, msg),
        other => other,
    })?;
    Ok(manifest)
}

fn read_frf(path: &Path) -> Result<Frf11> {
    let json: FrfJson = read_json(path)?;
    Frf11::try_from(json).map_err(|e| Error::schema(path, e.to_string()))
}

fn read_trace(path: &Path, id: &str, stimulus: &StimulusConfig) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("t_s,sway_deg") => {}
        other => {
            return Err(Error::schema(
                path,
                format!("expected header `t_s,sway_deg`, found {other:?}"),
            ))
        }
    }
    let mut t = Vec::new();
    let mut sway = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parse = |field: Option<&str>| -> Result<f64> {
            field
                .and_then(|f| f.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::schema(path, format!("row {}: expected two numbers", i + 2)))
        };
        let mut fields = line.split(',');
        t.push(parse(fields.next())?);
        sway.push(parse(fields.next())?);
        if fields.next().is_some() {
            return Err(Error::schema(
                path,
                format!("row {}: too many columns", i + 2),
            ));
        }
    }
    if t.len() < 2 {
        return Err(Error::schema(path, "trace needs at least two samples"));
    }
    let fs = stimulus.sample_rate_hz;
    let found = (t.len() - 1) as f64 / (t[t.len() - 1] - t[0]);
    if !((found - fs).abs() <= 1e-6 * fs) {
        return Err(Error::RateMismatch {
            id: id.to_string(),
            expected: fs,
            found,
        });
    }
    if let Some(i) = (0..t.len()).find(|&i| (t[i] - t[0] - i as f64 / fs).abs() > 1e-6 / fs) {
        return Err(Error::schema(
            path,
            format!("non-uniform sampling at row {}", i + 2),
        ));
    }
    Ok(sway)
}

fn trace_csv(trace: &[f64], sample_rate: f64) -> String {
    let mut out = String::with_capacity(trace.len() * 32);
    out.push_str("t_s,sway_deg\n");
    for (i, x) in trace.iter().enumerate() {
        writeln!(out, "{},{}", i as f64 / sample_rate, x).unwrap();
    }
    out
}

/// Writes `manifest.json` plus `traces/<id>.csv` and `frf/<id>.json` under `dir`.
pub fn save_cohort(cohort: &CohortManifest, dir: &Path) -> Result<PathBuf> {
    cohort.validate()?;
    let mut subjects = Vec::with_capacity(cohort.records.len());
    for r in &cohort.records {
        let trace = match &r.trace {
            Some(trace) => {
                let rel = format!("traces/{}.csv", r.id);
                write_text(
                    &dir.join(&rel),
                    &trace_csv(trace, cohort.stimulus.sample_rate_hz),
                )?;
                Some(rel)
            }
            None => None,
        };
        let frf = match &r.frf {
            Some(frf) => {
                let rel = format!("frf/{}.json", r.id);
                write_json(&dir.join(&rel), &frf.to_json_value())?;
                Some(rel)
            }
            None => None,
        };
        subjects.push(SubjectEntry {
            id: r.id.clone(),
            age_y: r.age_y,
            mass_kg: r.mass_kg,
            height_m: r.height_m,
            trace,
            frf,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    write_json(
        &path,
        &ManifestFile {
            stimulus: cohort.stimulus.clone(),
            subjects,
            provenance: cohort.provenance,
        },
    )?;
    Ok(path)
}

/// How cohort members are scored for the CDF.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceOptions {
    /// Diagonal shrinkage of the covariance, in `[0, 1]`.
    pub lambda: f64,
    /// Score each member against a reference built without it.
    pub leave_one_out: bool,
}

/// Mean, covariance and self-scores of a cohort under `analysis`.
pub fn build_reference(
    cohort: &CohortManifest,
    analysis: &StimulusAnalysis,
    options: ReferenceOptions,
) -> Result<ReferenceModel> {
    cohort.validate()?;
    let frfs = cohort.frfs(analysis)?;
    let centers = analysis.bands().centers_array();
    let differs = |f: &&Frf11| {
        f.centers_hz
            .iter()
            .zip(&centers)
            .any(|(a, b)| (a - b).abs() > 1e-9)
    };
    if let Some(f) = frfs.iter().find(differs) {
        return Err(Error::ReferenceMismatch(format!(
            "FRF centres {:?} differ from band centres {centers:?}",
            f.centers_hz
        )));
    }
    let vectors: Vec<FrfVector22> = frfs.iter().map(expand).collect();
    let (mu, sigma) = mean_and_covariance(&vectors, options.lambda)?;
    let reference = ReferenceModel::new(
        mu,
        sigma,
        *analysis.weights(),
        analysis.bands().clone(),
        frfs.len(),
        options.lambda,
    )
    .map_err(|e| match e {
        Error::InvalidReference(_) => Error::SingularReference {
            lambda: options.lambda,
        },
        other => other,
    })?;
    let scores = if options.leave_one_out {
        cohort_scores_leave_one_out(&frfs, analysis.weights(), analysis.bands(), options.lambda)?
    } else {
        cohort_scores(&reference, &frfs)?
    };
    Ok(reference.with_cohort_scores(scores))
}

/// A reference model together with the context needed to use it safely.
#[derive(Debug, Clone)]
pub struct StoredReference {
    pub model: ReferenceModel,
    pub stimulus: StimulusConfig,
    pub provenance: Provenance,
    pub options: ReferenceOptions,
}

/// JSON layout of a reference model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceFile {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub weights: [f64; NUM_BANDS],
    pub centers_hz: [f64; NUM_BANDS],
    pub n_subjects: usize,
    pub lambda: f64,
    pub leave_one_out: bool,
    pub bands: BandSpec,
    pub cohort_scores: Vec<f64>,
    pub provenance: Provenance,
    pub stimulus: StimulusConfig,
    pub stimulus_hash: String,
    pub band_hash: String,
}

impl StoredReference {
    pub fn band_hash(&self) -> Result<String> {
        config_hash(self.model.bands())
    }

    pub fn to_file(&self) -> Result<ReferenceFile> {
        let m = &self.model;
        Ok(ReferenceFile {
            mu: m.mu().0.iter().copied().collect(),
            sigma: m
                .sigma()
                .row_iter()
                .map(|row| row.iter().copied().collect())
                .collect(),
            weights: m.weights().w,
            centers_hz: m.bands().centers_array(),
            n_subjects: m.n_subjects(),
            lambda: m.lambda(),
            leave_one_out: self.options.leave_one_out,
            bands: m.bands().clone(),
            cohort_scores: m.cohort_scores().to_vec(),
            provenance: self.provenance,
            stimulus: self.stimulus.clone(),
            stimulus_hash: config_hash(&self.stimulus)?,
            band_hash: self.band_hash()?,
        })
    }

    pub fn from_file(file: ReferenceFile) -> Result<Self> {
        let invalid = |msg: String| Error::InvalidReference(msg);
        if file.mu.len() != DIM {
            return Err(invalid(format!(
                "mu has {} entries, expected {DIM}",
                file.mu.len()
            )));
        }
        if file.sigma.len() != DIM || file.sigma.iter().any(|r| r.len() != DIM) {
            return Err(invalid(format!("sigma must be {DIM}x{DIM}")));
        }
        if file.bands.centers_array() != file.centers_hz {
            return Err(invalid(
                "centers_hz disagree with the band specification".into(),
            ));
        }
        if config_hash(&file.bands)? != file.band_hash {
            return Err(invalid("band_hash does not match the stored bands".into()));
        }
        if config_hash(&file.stimulus)? != file.stimulus_hash {
            return Err(invalid(
                "stimulus_hash does not match the stored stimulus".into(),
            ));
        }
        let mu = FrfVector22(crate::metric::Vec22::from_column_slice(&file.mu));
        let sigma = Mat22::from_fn(|i, j| file.sigma[i][j]);
        let model = ReferenceModel::new(
            mu,
            sigma,
            SpectralWeights { w: file.weights },
            file.bands,
            file.n_subjects,
            file.lambda,
        )?
        .with_cohort_scores(file.cohort_scores);
        Ok(Self {
            model,
            stimulus: file.stimulus,
            provenance: file.provenance,
            options: ReferenceOptions {
                lambda: file.lambda,
                leave_one_out: file.leave_one_out,
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ReferenceFile = read_json(path)?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_file()?)
    }
}

/// Relative log-normal spread applied to each perturbed parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dispersion {
    /// Kp and Kd.
    pub gain: f64,
    pub delay: f64,
    /// Proprioceptive weight; the vestibular weight takes the remainder.
    pub weight: f64,
}

impl Default for Dispersion {
    fn default() -> Self {
        Self {
            gain: 0.1,
            delay: 0.1,
            weight: 0.1,
        }
    }
}

/// Recipe for a synthetic stand-in cohort of IC-controlled bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub seed: u64,
    pub nominal: ControllerConfig,
    #[serde(default)]
    pub plant: DipParams,
    #[serde(default)]
    pub stimulus: StimulusConfig,
    #[serde(default)]
    pub dispersion: Dispersion,
    #[serde(default)]
    pub trial: TrialConfig,
    /// Redraws allowed per subject when a perturbed body falls or is unstable.
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    /// Standard deviation of white noise added to each recorded sway sample [deg].
    #[serde(default = "default_noise")]
    pub sway_noise_deg: f64,
}

fn default_retries() -> usize {
    20
}

fn default_noise() -> f64 {
    0.01
}

impl SynthSpec {
    pub fn new(n_subjects: usize, seed: u64) -> Self {
        Self {
            n_subjects,
            seed,
            nominal: ControllerConfig::Ic(IcConfig::default()),
            plant: DipParams::default(),
            stimulus: StimulusConfig::default(),
            dispersion: Dispersion::default(),
            trial: TrialConfig::default(),
            max_retries: default_retries(),
            sway_noise_deg: default_noise(),
        }
    }
}

fn lognormal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (sigma * z).exp()
}

/// Draws one subject's controller around `nominal`.
pub fn perturb_ic(
    nominal: &IcConfig,
    d: &Dispersion,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<IcConfig> {
    let kp = nominal.kp * lognormal(rng, d.gain);
    let kd = nominal.kd * lognormal(rng, d.gain);
    let delay = delay_steps(nominal.delay, dt)? as f64 * lognormal(rng, d.delay);
    let w_prop = (nominal.w_prop * lognormal(rng, d.weight)).min(1.0 - nominal.w_vis);
    Ok(IcConfig {
        kp,
        kd,
        delay: delay.round() * dt,
        w_prop,
        w_vest: 1.0 - nominal.w_vis - w_prop,
        ..nominal.clone()
    })
}

/// Simulates `spec.n_subjects` perturbed IC bodies on the spec's stimulus.
pub fn synthesize_cohort(spec: &SynthSpec) -> Result<CohortManifest> {
    let ControllerConfig::Ic(nominal) = &spec.nominal else {
        return Err(Error::Config(format!(
            "synthetic cohorts use an IC nominal controller, got {}",
            spec.nominal.kind()
        )));
    };
    if !(spec.sway_noise_deg.is_finite() && spec.sway_noise_deg >= 0.0) {
        return Err(Error::Config(format!(
            "sway_noise_deg must be finite and >= 0, got {}",
            spec.sway_noise_deg
        )));
    }
    if spec.n_subjects == 0 {
        return Err(Error::InvalidArgument(
            "n_subjects must be at least 1".into(),
        ));
    }
    let stimulus = spec.stimulus.generate()?;
    let check = run_trial(&spec.nominal, &spec.plant, &stimulus, &spec.trial)?;
    if check.fell {
        return Err(Error::Unstable(
            "nominal controller falls on the stimulus".into(),
        ));
    }
    let width = spec.n_subjects.to_string().len().max(2);
    let records = (0..spec.n_subjects)
        .into_par_iter()
        .map(|i| -> Result<SubjectRecord> {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let age_y = rng.random_range(20..=35) as f64;
            let height_m = 1.75 + 0.07 * rng.sample::<f64, _>(StandardNormal);
            let mass_kg = 23.0 * height_m * height_m * lognormal(&mut rng, 0.1);
            for _ in 0..=spec.max_retries {
                let cfg = perturb_ic(
                    nominal,
                    &spec.dispersion,
                    spec.trial.controller_dt,
                    &mut rng,
                )?;
                let cfg = ControllerConfig::Ic(cfg);
                match run_trial(&cfg, &spec.plant, &stimulus, &spec.trial) {
                    Ok(r) if !r.fell => {
                        let mut trace = r.com_sway_deg;
                        if spec.sway_noise_deg > 0.0 {
                            for x in &mut trace {
                                *x += spec.sway_noise_deg * rng.sample::<f64, _>(StandardNormal);
                            }
                        }
                        return Ok(SubjectRecord {
                            id: format!("S{:0width$}", i + 1),
                            age_y,
                            mass_kg: (mass_kg * 10.0).round() / 10.0,
                            height_m: (height_m * 1000.0).round() / 1000.0,
                            trace: Some(trace),
                            frf: None,
                        });
                    }
                    Ok(_) | Err(Error::Unstable(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Unstable(format!(
                "subject {} fell on every one of {} draws",
                i + 1,
                spec.max_retries + 1
            )))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CohortManifest {
        stimulus: spec.stimulus.clone(),
        records,
        provenance: Provenance::Synthetic,
    })
}
