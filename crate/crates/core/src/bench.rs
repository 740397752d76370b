//! End-to-end benchmark runs: simulate, estimate the FRF, score, report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::{config_hash, read_json, read_text, write_json, write_text};
use crate::control::{effective_plant, run_trial, ControllerConfig, TrialConfig, TrialResult};
use crate::dataset::StoredReference;
use crate::error::{Error, Result};
use crate::metric::{bootstrap_cdf, likeness_score, BootstrapCdf, Provenance, ScoreReport};
use crate::plant::DipParams;
use crate::plot::{plot_cdf, plot_frf, Figure};
use crate::prts::StimulusConfig;
use crate::spectral::{Frf11, FrfJson, StimulusAnalysis, NUM_BANDS};

pub const TRACE_FILE: &str = "trace.csv";
pub const TRIAL_FILE: &str = "trial.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const FRF_FILE: &str = "frf.csv";

fn default_n_boot() -> usize {
    1000
}

/// Everything needed to run the benchmark once. Relative paths are resolved
/// against the directory of the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRunSpec {
    #[serde(default)]
    pub stimulus: StimulusConfig,
    #[serde(default)]
    pub plant: DipParams,
    /// Controller config file.
    pub controller: PathBuf,
    /// Reference model file.
    pub reference: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trial: TrialConfig,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    /// Series name in reports and plots; defaults to the controller type.
    #[serde(default)]
    pub label: Option<String>,
}

impl BenchRunSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut spec.controller,
            &mut spec.reference,
            &mut spec.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(spec)
    }
}

/// Config hashes embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hashes {
    pub stimulus: String,
    pub bands: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub seed: u64,
    pub n_boot: usize,
    pub stimulus: StimulusConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    /// Plant as simulated, including any hip lock applied for the trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<DipParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<TrialConfig>,
    pub reference_provenance: Provenance,
    pub reference_lambda: f64,
    pub reference_n_subjects: usize,
    pub hashes: Hashes,
}

/// Bootstrap mean and variance of the CDF at the report's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfEstimate {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub score: ScoreReport,
    /// Absent when the reference carries no cohort scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdf_bootstrap: Option<CdfEstimate>,
    pub frf: FrfJson,
    pub reference_mean: FrfJson,
    pub cohort_scores: Vec<f64>,
    pub meta: RunMeta,
}

impl BenchReport {
    pub fn frf(&self) -> Result<Frf11> {
        Frf11::try_from(self.frf.clone())
    }

    pub fn reference_mean(&self) -> Result<Frf11> {
        Frf11::try_from(self.reference_mean.clone())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Plain-text summary.
    pub fn to_table(&self) -> String {
        let s = &self.score;
        let mut out = String::new();
        writeln!(out, "controller      {}", self.label).unwrap();
        writeln!(out, "score D         {:.4}", s.d).unwrap();
        writeln!(out, "mahalanobis     {:.4}", s.mahalanobis).unwrap();
        match s.cdf_percentile {
            Some(p) => writeln!(out, "CDF             {:.4}%", 100.0 * p).unwrap(),
            None => writeln!(out, "CDF             n/a").unwrap(),
        }
        if let Some(b) = &self.cdf_bootstrap {
            writeln!(
                out,
                "CDF bootstrap   {:.4}% (sd {:.4}%)",
                100.0 * b.mean,
                100.0 * b.variance.sqrt()
            )
            .unwrap();
        }
        writeln!(
            out,
            "reference       {:?}, n = {}, lambda = {}",
            self.meta.reference_provenance,
            self.meta.reference_n_subjects,
            self.meta.reference_lambda
        )
        .unwrap();
        writeln!(out).unwrap();
        writeln!(out, "  f_hz     gain   phase_deg   ref_gain  contribution").unwrap();
        let frf = self.frf().ok();
        let reference = self.reference_mean().ok();
        for k in 0..NUM_BANDS {
            let (g, p) = frf
                .map(|f| (f.gain()[k], f.phase_deg()[k]))
                .unwrap_or((f64::NAN, f64::NAN));
            let rg = reference.map(|f| f.gain()[k]).unwrap_or(f64::NAN);
            writeln!(
                out,
                "{:6.2} {:8.4} {:11.2} {:10.4} {:13.6}",
                self.frf.centers_hz[k], g, p, rg, s.per_band_contribution[k]
            )
            .unwrap();
        }
        out
    }
}

/// Sidecar written next to a simulated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialMeta {
    pub version: String,
    pub controller: ControllerConfig,
    pub plant: DipParams,
    pub stimulus: StimulusConfig,
    pub trial: TrialConfig,
    pub fell: bool,
    pub fall_time: Option<f64>,
    pub stimulus_hash: String,
    pub controller_hash: String,
    pub plant_hash: String,
}

fn version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Refuses references built on a different stimulus or band layout.
pub fn check_compatible(
    stimulus: &StimulusConfig,
    analysis: &StimulusAnalysis,
    reference: &StoredReference,
) -> Result<()> {
    let bands = config_hash(analysis.bands())?;
    let expected = reference.band_hash()?;
    if bands != expected {
        return Err(Error::ReferenceMismatch(format!(
            "band spec hash {bands} differs from the reference's {expected}"
        )));
    }
    let stim = config_hash(stimulus)?;
    let expected = config_hash(&reference.stimulus)?;
    if stim != expected {
        return Err(Error::ReferenceMismatch(format!(
            "stimulus hash {stim} differs from the reference's {expected}"
        )));
    }
    Ok(())
}

/// Trial-specific parts of a report's metadata.
#[derive(Debug, Clone, Default)]
pub struct TrialContext {
    pub controller: Option<ControllerConfig>,
    pub plant: Option<DipParams>,
    pub trial: Option<TrialConfig>,
}

/// Scores `frf` against `reference` and assembles a self-contained report.
pub fn score_frf(
    label: &str,
    frf: &Frf11,
    stimulus: &StimulusConfig,
    reference: &StoredReference,
    seed: u64,
    n_boot: usize,
    context: TrialContext,
) -> Result<BenchReport> {
    let model = &reference.model;
    let score = likeness_score(frf, model)?;
    let cohort = model.cohort_scores().to_vec();
    let cdf_bootstrap = if cohort.is_empty() {
        None
    } else {
        let b = bootstrap_cdf(&cohort, n_boot, &[score.d], seed)?;
        Some(CdfEstimate {
            mean: b.mean[0],
            variance: b.variance[0],
        })
    };
    let hashes = Hashes {
        stimulus: config_hash(stimulus)?,
        bands: reference.band_hash()?,
        reference: config_hash(&reference.to_file()?)?,
        controller: context.controller.as_ref().map(config_hash).transpose()?,
        plant: context.plant.as_ref().map(config_hash).transpose()?,
    };
    Ok(BenchReport {
        label: label.to_string(),
        score,
        cdf_bootstrap,
        frf: frf.to_json_value(),
        reference_mean: model.mean_frf().to_json_value(),
        cohort_scores: cohort,
        meta: RunMeta {
            version: version(),
            seed,
            n_boot,
            stimulus: stimulus.clone(),
            controller: context.controller,
            plant: context.plant,
            trial: context.trial,
            reference_provenance: reference.provenance,
            reference_lambda: model.lambda(),
            reference_n_subjects: model.n_subjects(),
            hashes,
        },
    })
}

/// FRF of a full-length sway trace, after checking the reference fits the stimulus.
pub fn trace_frf(
    sway_deg: &[f64],
    stimulus: &StimulusConfig,
    reference: &StoredReference,
) -> Result<Frf11> {
    let analysis = StimulusAnalysis::from_config(stimulus)?;
    check_compatible(stimulus, &analysis, reference)?;
    analysis.frf(sway_deg)
}

pub fn simulate(
    controller: &ControllerConfig,
    plant: &DipParams,
    stimulus: &StimulusConfig,
    trial: &TrialConfig,
) -> Result<(TrialResult, TrialMeta)> {
    let tilt = stimulus.generate()?;
    let result = run_trial(controller, plant, &tilt, trial)?;
    let meta = TrialMeta {
        version: version(),
        controller: controller.clone(),
        plant: plant.clone(),
        stimulus: stimulus.clone(),
        trial: trial.clone(),
        fell: result.fell,
        fall_time: result.fall_time,
        stimulus_hash: config_hash(stimulus)?,
        controller_hash: config_hash(controller)?,
        plant_hash: config_hash(plant)?,
    };
    Ok((result, meta))
}

pub fn write_trial(dir: &Path, result: &TrialResult, meta: &TrialMeta) -> Result<()> {
    write_text(&dir.join(TRACE_FILE), &result.to_csv())?;
    write_json(&dir.join(TRIAL_FILE), meta)
}

/// Reads the COM sway column of a trace written by [`write_trial`].
pub fn read_trace_sway(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::schema(path, "empty trace file"))?;
    let col = header
        .split(',')
        .position(|h| h == "com_sway_deg")
        .ok_or_else(|| Error::schema(path, "missing com_sway_deg column"))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .nth(col)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::schema(path, format!("row {}: bad com_sway_deg", i + 2)))
        })
        .collect()
}

/// Loads a simulation output directory: its metadata and COM sway trace.
pub fn load_trial(dir: &Path) -> Result<(TrialMeta, Vec<f64>)> {
    let meta: TrialMeta = read_json(&dir.join(TRIAL_FILE))?;
    if meta.fell {
        return Err(Error::InvalidArgument(format!(
            "trial in {} ended in a fall; there is no full trace to score",
            dir.display()
        )));
    }
    let sway = read_trace_sway(&dir.join(TRACE_FILE))?;
    Ok((meta, sway))
}

/// Writes the report as JSON and as a text table.
pub fn write_report(dir: &Path, report: &BenchReport) -> Result<()> {
    write_json(&dir.join(REPORT_FILE), report)?;
    write_text(&dir.join(TABLE_FILE), &report.to_table())?;
    write_text(&dir.join(FRF_FILE), &report.frf()?.to_csv())
}

/// Log-spaced score grid covering the cohort and the marked scores.
pub fn cdf_grid(cohort: &[f64], extra: &[f64], n: usize) -> Vec<f64> {
    let positive = cohort
        .iter()
        .chain(extra)
        .copied()
        .filter(|x| *x > 0.0 && x.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return vec![0.0, 1.0];
    }
    let (lo, hi) = ((lo / 2.0).ln(), (hi * 2.0).ln());
    (0..n)
        .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// FRF and CDF figures for a set of reports sharing one reference.
pub fn plot_reports(reports: &[BenchReport]) -> Result<(Figure, Figure, BootstrapCdf)> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to plot".into()))?;
    if let Some(r) = reports
        .iter()
        .find(|r| r.meta.hashes.reference != first.meta.hashes.reference)
    {
        return Err(Error::InvalidArgument(format!(
            "report {:?} was scored against a different reference than {:?}",
            r.label, first.label
        )));
    }
    let series = reports
        .iter()
        .map(|r| Ok((r.label.clone(), r.frf()?)))
        .collect::<Result<Vec<_>>>()?;
    let frf_fig = plot_frf(&series, Some(&first.reference_mean()?))?;
    let scores: Vec<f64> = reports.iter().map(|r| r.score.d).collect();
    if first.cohort_scores.is_empty() {
        return Err(Error::InvalidArgument(
            "reports carry no cohort scores for a CDF plot".into(),
        ));
    }
    let grid = cdf_grid(&first.cohort_scores, &scores, 200);
    let curve = bootstrap_cdf(
        &first.cohort_scores,
        first.meta.n_boot,
        &grid,
        first.meta.seed,
    )?;
    let markers: Vec<(String, f64, f64)> = reports
        .iter()
        .map(|r| {
            (
                r.label.clone(),
                r.score.d,
                r.score.cdf_percentile.unwrap_or(f64::NAN),
            )
        })
        .collect();
    let cdf_fig = plot_cdf(&curve, &markers)?;
    Ok((frf_fig, cdf_fig, curve))
}

pub fn write_figures(dir: &Path, reports: &[BenchReport]) -> Result<()> {
    let (frf, cdf, _) = plot_reports(reports)?;
    write_text(&dir.join("frf_plot.svg"), &frf.svg)?;
    write_text(&dir.join("frf_plot.csv"), &frf.csv)?;
    write_text(&dir.join("cdf_plot.svg"), &cdf.svg)?;
    write_text(&dir.join("cdf_plot.csv"), &cdf.csv)
}

/// Result of a full run.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchOutcome {
    Scored(Box<BenchReport>),
    Fell { time: f64 },
}

/// Simulates, scores and writes every artifact of `spec` into its output directory.
pub fn run_bench(spec: &BenchRunSpec) -> Result<BenchOutcome> {
    let controller: ControllerConfig = read_json(&spec.controller)?;
    let reference = StoredReference::load(&spec.reference)?;
    let analysis = StimulusAnalysis::from_config(&spec.stimulus)?;
    check_compatible(&spec.stimulus, &analysis, &reference)?;

    let (result, meta) = simulate(&controller, &spec.plant, &spec.stimulus, &spec.trial)?;
    write_trial(&spec.output_dir, &result, &meta)?;
    if result.fell {
        return Ok(BenchOutcome::Fell {
            time: result.fall_time.unwrap_or(0.0),
        });
    }
    let frf = analysis.frf(&result.com_sway_deg)?;
    let label = spec
        .label
        .clone()
        .unwrap_or_else(|| controller.kind().to_string());
    let context = TrialContext {
        plant: Some(effective_plant(&controller, &spec.plant, &spec.trial)),
        controller: Some(controller),
        trial: Some(spec.trial.clone()),
    };
    let report = score_frf(
        &label,
        &frf,
        &spec.stimulus,
        &reference,
        spec.seed,
        spec.n_boot,
        context,
    )?;
    write_report(&spec.output_dir, &report)?;
    write_figures(&spec.output_dir, std::slice::from_ref(&report))?;
    Ok(BenchOutcome::Scored(Box::new(report)))
}
