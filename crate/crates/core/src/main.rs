use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use posture_bench::artifact::{config_hash, read_json, write_json, write_text};
use posture_bench::bench::{
    load_trial, run_bench, score_frf, simulate, trace_frf, write_figures, write_report,
    write_trial, BenchOutcome, BenchReport, BenchRunSpec, TrialContext,
};
use posture_bench::control::{
    effective_plant, tune, ControllerConfig, DecConfig, EmConfig, IcConfig, TrialConfig,
};
use posture_bench::dataset::{
    build_reference, load_cohort, save_cohort, synthesize_cohort, ReferenceOptions,
    StoredReference, SynthSpec,
};
use posture_bench::plant::DipParams;
use posture_bench::prts::{StimulusConfig, StimulusMeta};
use posture_bench::spectral::{Frf11, FrfJson, StimulusAnalysis};
use posture_bench::{Error, Result};

/// Exit code for a trial that ended in a fall.
const EXIT_FALL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "posture-bench",
    version,
    about = "Human-likeness benchmark for posture control"
)]
struct Cli {
    /// JSON run spec supplying defaults for every subcommand.
    #[arg(long, global = true)]
    run_spec: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the PRTS tilt trajectory.
    Stimulus(StimulusArgs),
    /// Run a closed-loop trial and write its traces.
    Simulate(SimulateArgs),
    /// Score a trial or an FRF against a reference model.
    Score(ScoreArgs),
    /// Draw FRF and CDF figures from reports.
    Plot(PlotArgs),
    /// Build a reference model from a cohort or a synthetic recipe.
    MakeReference(MakeReferenceArgs),
    /// Grid-search controller gains.
    Tune(TuneArgs),
    /// Simulate, score and plot everything described by --run-spec.
    Run,
}

#[derive(Debug, Args)]
struct StimulusArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    controller: Option<PathBuf>,
    #[arg(long)]
    plant: Option<PathBuf>,
    #[arg(long)]
    stimulus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Output directory of `simulate`.
    #[arg(long, conflicts_with = "frf", required_unless_present = "frf")]
    trace: Option<PathBuf>,
    /// FRF file with `centers_hz`, `re` and `im`.
    #[arg(long)]
    frf: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long = "report", required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MakeReferenceArgs {
    /// Cohort manifest or directory.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    cohort: Option<PathBuf>,
    /// Synthetic cohort recipe.
    #[arg(long)]
    synth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    leave_one_out: bool,
    /// Also write the synthesized cohort here.
    #[arg(long)]
    save_cohort: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Ic,
    Dec,
    Em,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(
        long = "type",
        conflicts_with = "template",
        required_unless_present = "template"
    )]
    kind: Option<Kind>,
    /// Controller file whose non-gain settings are kept.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    plant: Option<PathBuf>,
    /// Where to write the tuned config; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full grid search report.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn missing(what: &str) -> Error {
    Error::Config(format!("{what} is required (flag or run spec)"))
}

fn dispatch(cli: Cli) -> Result<u8> {
    let spec = cli
        .run_spec
        .as_deref()
        .map(BenchRunSpec::load)
        .transpose()?;
    let spec = spec.as_ref();
    match cli.command {
        Command::Stimulus(a) => cmd_stimulus(a, spec),
        Command::Simulate(a) => cmd_simulate(a, spec),
        Command::Score(a) => cmd_score(a, spec),
        Command::Plot(a) => cmd_plot(a),
        Command::MakeReference(a) => cmd_make_reference(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Run => {
            let spec = spec.ok_or_else(|| missing("--run-spec"))?;
            match run_bench(spec)? {
                BenchOutcome::Scored(report) => {
                    print!("{}", report.to_table());
                    Ok(0)
                }
                BenchOutcome::Fell { time } => {
                    eprintln!("fall at t = {time:.3} s");
                    Ok(EXIT_FALL)
                }
            }
        }
    }
}

fn stimulus_config(path: Option<&Path>, spec: Option<&BenchRunSpec>) -> Result<StimulusConfig> {
    let cfg = match (path, spec) {
        (Some(p), _) => read_json(p)?,
        (None, Some(s)) => s.stimulus.clone(),
        (None, None) => StimulusConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_stimulus(a: StimulusArgs, spec: Option<&BenchRunSpec>) -> Result<u8> {
    let cfg = stimulus_config(a.config.as_deref(), spec)?;
    let out = a
        .out
        .or_else(|| spec.map(|s| s.output_dir.clone()))
        .ok_or_else(|| missing("--out"))?;
    let tilt = cfg.generate()?;
    let meta = StimulusMeta {
        sequence_length: cfg.sequence()?.len(),
        n_samples: tilt.samples().len(),
        degenerate: tilt.is_degenerate(),
        config_hash: config_hash(&cfg)?,
        config: cfg,
    };
    write_text(&out.join("stimulus.csv"), &tilt.to_csv())?;
    write_json(&out.join("stimulus.json"), &meta)?;
    println!(
        "{} samples, peak-to-peak {:.6} deg -> {}",
        meta.n_samples,
        tilt.peak_to_peak(),
        out.display()
    );
    Ok(0)
}

fn cmd_simulate(a: SimulateArgs, spec: Option<&BenchRunSpec>) -> Result<u8> {
    let controller_path = a
        .controller
        .or_else(|| spec.map(|s| s.controller.clone()))
        .ok_or_else(|| missing("--controller"))?;
    let controller: ControllerConfig = read_json(&controller_path)?;
    let plant = match (&a.plant, spec) {
        (Some(p), _) => read_json(p)?,
        (None, Some(s)) => s.plant.clone(),
        (None, None) => DipParams::default(),
    };
    let stimulus = stimulus_config(a.stimulus.as_deref(), spec)?;
    let trial = spec.map(|s| s.trial.clone()).unwrap_or_default();
    let out = a
        .out
        .or_else(|| spec.map(|s| s.output_dir.clone()))
        .ok_or_else(|| missing("--out"))?;
    let (result, meta) = simulate(&controller, &plant, &stimulus, &trial)?;
    write_trial(&out, &result, &meta)?;
    if result.fell {
        eprintln!(
            "fall at t = {:.3} s{}",
            result.fall_time.unwrap_or(0.0),
            if result.fell_in_burn_in {
                " (burn-in)"
            } else {
                ""
            }
        );
        return Ok(EXIT_FALL);
    }
    println!(
        "{} trial completed: {} samples, max |hip| {:.3e} deg -> {}",
        controller.kind(),
        result.len(),
        result.max_hip_deg,
        out.display()
    );
    Ok(0)
}

fn cmd_score(a: ScoreArgs, spec: Option<&BenchRunSpec>) -> Result<u8> {
    let reference_path = a
        .reference
        .or_else(|| spec.map(|s| s.reference.clone()))
        .ok_or_else(|| missing("--reference"))?;
    let reference = StoredReference::load(&reference_path)?;
    let seed = a.seed.or(spec.map(|s| s.seed)).unwrap_or(0);
    let n_boot = a.n_boot.or(spec.map(|s| s.n_boot)).unwrap_or(1000);
    let report = if let Some(dir) = a.trace {
        let (meta, sway) = load_trial(&dir)?;
        let frf = trace_frf(&sway, &meta.stimulus, &reference)?;
        let label = a
            .label
            .unwrap_or_else(|| meta.controller.kind().to_string());
        let context = TrialContext {
            plant: Some(effective_plant(&meta.controller, &meta.plant, &meta.trial)),
            controller: Some(meta.controller),
            trial: Some(meta.trial),
        };
        score_frf(
            &label,
            &frf,
            &meta.stimulus,
            &reference,
            seed,
            n_boot,
            context,
        )?
    } else {
        let path = a.frf.expect("clap enforces --trace or --frf");
        let json: FrfJson = read_json(&path)?;
        let frf = Frf11::try_from(json).map_err(|e| Error::Schema {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let label = a.label.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "frf".into())
        });
        let stimulus = reference.stimulus.clone();
        score_frf(
            &label,
            &frf,
            &stimulus,
            &reference,
            seed,
            n_boot,
            TrialContext::default(),
        )?
    };
    if let Some(out) = a.out.or_else(|| spec.map(|s| s.output_dir.clone())) {
        write_report(&out, &report)?;
    }
    print!("{}", report.to_table());
    Ok(0)
}

fn cmd_plot(a: PlotArgs) -> Result<u8> {
    let reports = a
        .reports
        .iter()
        .map(|p| BenchReport::load(p))
        .collect::<Result<Vec<_>>>()?;
    write_figures(&a.out, &reports)?;
    println!("figures -> {}", a.out.display());
    Ok(0)
}

fn cmd_make_reference(a: MakeReferenceArgs) -> Result<u8> {
    let cohort = match (&a.cohort, &a.synth) {
        (Some(path), _) => load_cohort(path)?,
        (None, Some(path)) => {
            let recipe: SynthSpec = read_json(path)?;
            synthesize_cohort(&recipe)?
        }
        (None, None) => unreachable!("clap enforces --cohort or --synth"),
    };
    if let Some(dir) = &a.save_cohort {
        save_cohort(&cohort, dir)?;
    }
    let options = ReferenceOptions {
        lambda: a.lambda,
        leave_one_out: a.leave_one_out,
    };
    let analysis = StimulusAnalysis::from_config(&cohort.stimulus)?;
    let model = build_reference(&cohort, &analysis, options)?;
    let stored = StoredReference {
        model,
        stimulus: cohort.stimulus.clone(),
        provenance: cohort.provenance,
        options,
    };
    stored.save(&a.out)?;
    println!(
        "{} subjects ({:?}), lambda = {} -> {}",
        stored.model.n_subjects(),
        stored.provenance,
        a.lambda,
        a.out.display()
    );
    Ok(0)
}

fn cmd_tune(a: TuneArgs) -> Result<u8> {
    let template = match (&a.template, a.kind) {
        (Some(p), _) => read_json(p)?,
        (None, Some(Kind::Ic)) => ControllerConfig::Ic(IcConfig::default()),
        (None, Some(Kind::Dec)) => ControllerConfig::Dec(DecConfig::default()),
        (None, Some(Kind::Em)) => ControllerConfig::Em(EmConfig::default()),
        (None, None) => unreachable!("clap enforces --type or --template"),
    };
    let plant = match &a.plant {
        Some(p) => read_json(p)?,
        None => DipParams::default(),
    };
    let report = tune(&template, &plant, &TrialConfig::default())?;
    eprintln!(
        "{}: Kp = {} x load, Kd = {} x Kp, settles in {:.3} s",
        template.kind(),
        report.kp_factor,
        report.kd_factor,
        report.settling_time_s
    );
    match &a.out {
        Some(path) => write_json(path, &report.best)?,
        None => {
            let mut text = serde_json::to_string_pretty(&report.best)?;
            text.push('\n');
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                })?;
        }
    }
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    Ok(0)
}
