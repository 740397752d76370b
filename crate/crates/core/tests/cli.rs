mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posture_bench::artifact::read_text;
use posture_bench::bench::{BenchReport, REPORT_FILE, TRACE_FILE};
use posture_bench::dataset::StoredReference;
use posture_bench::metric::{empirical_cdf, likeness_score};
use posture_bench::plot::embedded_csv;
use posture_bench::prts::StimulusMeta;
use posture_bench::spectral::StimulusAnalysis;

use common::fixture;

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posture-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_into(dir: &Path, controller: &str) -> Output {
    bench(&[
        "simulate",
        "--controller",
        s(&fixture(controller)),
        "--out",
        s(dir),
    ])
}

fn score_trace(trace_dir: &Path, out: &Path) -> Output {
    bench(&[
        "score",
        "--trace",
        s(trace_dir),
        "--reference",
        s(&fixture("reference.json")),
        "--seed",
        "3",
        "--n-boot",
        "200",
        "--out",
        s(out),
    ])
}

fn run_spec(dir: &Path) -> PathBuf {
    let spec = serde_json::json!({
        "controller": fixture("ic.json"),
        "reference": fixture("reference.json"),
        "output_dir": "out",
        "seed": 11,
        "n_boot": 300
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

#[test]
fn stimulus_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["stimulus", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read(dir.path().join("stimulus.csv")).unwrap();
    assert!(csv == std::fs::read(fixture("stimulus/stimulus.csv")).unwrap());
    let meta: StimulusMeta =
        serde_json::from_str(&read_text(&dir.path().join("stimulus.json")).unwrap()).unwrap();
    assert_eq!(meta.config_hash.len(), 64);
    assert_eq!(meta.sequence_length, 242);
}

#[test]
fn malformed_config_exits_with_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"stages\": \"five\"}").unwrap();
    let out = bench(&["stimulus", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("schema error"), "{}", stderr(&out));
}

#[test]
fn missing_output_is_a_usage_error() {
    assert_eq!(code(&bench(&["stimulus"])), 2);
    assert_eq!(code(&bench(&["plot", "--out", "x"])), 2);
}

#[test]
fn zero_stiffness_exits_with_fall_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = read_text(&fixture("ic.json")).unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&text).unwrap();
    cfg["kp"] = 0.0.into();
    let path = dir.path().join("kp0.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = bench(&["simulate", "--controller", s(&path), "--out", s(dir.path())]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("fall"));
}

#[test]
fn simulation_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        assert_eq!(code(&simulate_into(dir.path(), "em.json")), 0);
    }
    let read = |d: &Path| std::fs::read(d.join(TRACE_FILE)).unwrap();
    assert!(read(a.path()) == read(b.path()));
}

#[test]
fn score_equals_library_call_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let trial = dir.path().join("trial");
    assert_eq!(code(&simulate_into(&trial, "dec.json")), 0);
    let out = score_trace(&trial, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("score D"));

    let path = dir.path().join(REPORT_FILE);
    let report = BenchReport::load(&path).unwrap();
    let reference = StoredReference::load(&fixture("reference.json")).unwrap();
    let sway = posture_bench::bench::read_trace_sway(&trial.join(TRACE_FILE)).unwrap();
    let analysis = StimulusAnalysis::from_config(&reference.stimulus).unwrap();
    let direct = likeness_score(&analysis.frf(&sway).unwrap(), &reference.model).unwrap();
    assert_eq!(report.score, direct);
    assert_eq!(report.meta.seed, 3);

    let text = read_text(&path).unwrap();
    assert_eq!(serde_json::to_string_pretty(&report).unwrap() + "\n", text);
}

#[test]
fn reference_mean_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let reference = StoredReference::load(&fixture("reference.json")).unwrap();
    let mean = dir.path().join("mean.json");
    std::fs::write(
        &mean,
        serde_json::to_string(&reference.model.mean_frf().to_json_value()).unwrap(),
    )
    .unwrap();
    let out = bench(&[
        "score",
        "--frf",
        s(&mean),
        "--reference",
        s(&fixture("reference.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = BenchReport::load(&dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(report.score.d, 0.0);
    assert_eq!(report.score.cdf_percentile, Some(0.0));
}

#[test]
fn mismatched_reference_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let trial = dir.path().join("trial");
    assert_eq!(code(&simulate_into(&trial, "ic.json")), 0);

    let mut file = StoredReference::load(&fixture("reference.json"))
        .unwrap()
        .to_file()
        .unwrap();
    file.stimulus.n_periods = 4;
    file.stimulus_hash = posture_bench::artifact::config_hash(&file.stimulus).unwrap();
    let other = dir.path().join("other.json");
    std::fs::write(&other, serde_json::to_string(&file).unwrap()).unwrap();

    let out = bench(&["score", "--trace", s(&trial), "--reference", s(&other)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("mismatch"), "{}", stderr(&out));
}

#[test]
fn plot_embeds_its_data_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let trial = dir.path().join("trial");
    assert_eq!(code(&simulate_into(&trial, "ic.json")), 0);
    assert_eq!(code(&score_trace(&trial, dir.path())), 0);
    let report_path = dir.path().join(REPORT_FILE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = bench(&["plot", "--report", s(&report_path), "--out", s(d)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for name in [
        "frf_plot.svg",
        "frf_plot.csv",
        "cdf_plot.svg",
        "cdf_plot.csv",
    ] {
        assert!(std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap());
    }
    let svg = read_text(&a.join("frf_plot.svg")).unwrap();
    let csv = read_text(&a.join("frf_plot.csv")).unwrap();
    assert_eq!(embedded_csv(&svg), Some(csv.as_str()));

    let frf = BenchReport::load(&report_path).unwrap().frf().unwrap();
    let gains = frf.gain();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let ours: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0] == "ic").collect();
    assert_eq!(ours.len(), gains.len());
    for (row, g) in ours.iter().zip(gains) {
        let parsed: f64 = row[2].parse().unwrap();
        assert!((parsed - g).abs() <= 1e-12 * g);
    }
    assert!(read_text(&a.join("cdf_plot.svg"))
        .unwrap()
        .starts_with("<svg"));
}

#[test]
fn synthetic_reference_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for p in [&a, &b] {
        let out = bench(&[
            "make-reference",
            "--synth",
            s(&fixture("synth.json")),
            "--out",
            s(p),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert!(bytes == std::fs::read(&b).unwrap());
    assert!(bytes == std::fs::read(fixture("reference.json")).unwrap());

    let shrunk = dir.path().join("shrunk.json");
    let cohort = dir.path().join("cohort");
    let out = bench(&[
        "make-reference",
        "--synth",
        s(&fixture("synth.json")),
        "--lambda",
        "0.3",
        "--save-cohort",
        s(&cohort),
        "--out",
        s(&shrunk),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let base = StoredReference::load(&a).unwrap();
    let other = StoredReference::load(&shrunk).unwrap();
    assert_eq!(base.model.mu(), other.model.mu());
    assert!(base.model.sigma() != other.model.sigma());

    // Rebuilding from the saved cohort directory gives the same file.
    let rebuilt = dir.path().join("rebuilt.json");
    let out = bench(&[
        "make-reference",
        "--cohort",
        s(&cohort),
        "--out",
        s(&rebuilt),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(std::fs::read(&rebuilt).unwrap() == bytes);
}

#[test]
fn own_cohort_spreads_evenly_over_the_cdf() {
    let reference = StoredReference::load(&fixture("reference.json")).unwrap();
    let scores = reference.model.cohort_scores();
    let n = scores.len();
    let mut cdf: Vec<f64> = scores
        .iter()
        .map(|&d| empirical_cdf(d, scores).unwrap())
        .collect();
    cdf.sort_by(f64::total_cmp);
    let expected: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    assert_eq!(cdf, expected);
}

#[test]
fn tune_writes_a_loadable_controller() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("em.json");
    let out = bench(&["tune", "--type", "em", "--out", s(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        read_text(&path).unwrap(),
        read_text(&fixture("em.json")).unwrap()
    );
}

#[test]
fn full_run_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = bench(&["--run-spec", s(&run_spec(dir.path())), "run"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for name in [
        REPORT_FILE,
        "report.txt",
        "frf.csv",
        "trace.csv",
        "frf_plot.svg",
        "cdf_plot.svg",
    ] {
        let read = |d: &Path| std::fs::read(d.join("out").join(name)).unwrap();
        assert!(read(a.path()) == read(b.path()), "{name}");
    }
}
