//! Acceptance checks. Each criterion prints one PASS or FAIL line; the process
//! exits non-zero when any criterion fails.

mod common;

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posture_bench::artifact::read_json;
use posture_bench::bench::{run_bench, BenchOutcome, BenchRunSpec};
use posture_bench::control::{
    effective_plant, em_decompose, run_trial, ControllerConfig, EmConfig, EmController, TrialConfig,
};
use posture_bench::dataset::{build_reference, synthesize_cohort, ReferenceOptions, SynthSpec};
use posture_bench::metric::{
    bootstrap_cdf, collapse, empirical_cdf, likeness_score, mahalanobis_score, FrfVector22, Mat22,
    ReferenceModel, Vec22, DIM,
};
use posture_bench::plant::{
    accelerations, dip_step, linearize, mechanical_energy, DipParams, DipState, JointTorques,
    Linearization, Platform,
};
use posture_bench::prts::StimulusConfig;
use posture_bench::spectral::{BandSpec, Frf11, SpectralWeights, NUM_BANDS};

use common::{
    default_analysis, first_order_response, fixture, gauss_jordan_inverse, naive_dft, normal,
    phase_diff_deg, random_spd,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn controller(name: &str) -> ControllerConfig {
    read_json(&fixture(name)).unwrap()
}

fn prts_structure() -> Check {
    let cfg = StimulusConfig::default();
    let tilt = cfg.generate().map_err(|e| e.to_string())?;
    let samples = tilt.samples();
    let n = (cfg.period_s * cfg.sample_rate_hz).round() as usize;
    let period = &samples[n..2 * n];

    let dc = naive_dft(period, 0).norm_sqr();
    let total = n as f64 * period.iter().map(|x| x * x).sum::<f64>() - dc;
    let odd: f64 = (1..n / 2)
        .step_by(2)
        .map(|k| 2.0 * naive_dft(period, k).norm_sqr())
        .sum();
    let share = odd / total;

    let max = samples.iter().copied().fold(f64::MIN, f64::max);
    let min = samples.iter().copied().fold(f64::MAX, f64::min);
    let p2p = max - min;
    ensure(share >= 0.99, format!("odd-harmonic share {share:.6}"))?;
    ensure((p2p - 1.0).abs() <= 1e-9, format!("peak-to-peak {p2p:.12}"))?;
    Ok(format!(
        "odd-harmonic power {:.4}%, peak-to-peak {p2p:.10} deg",
        100.0 * share
    ))
}

fn pipeline_oracle() -> Check {
    let cfg = StimulusConfig::default();
    let analysis = default_analysis();
    let tilt = cfg.generate().map_err(|e| e.to_string())?;
    let tau = 0.5;
    let y = first_order_response(tilt.samples(), cfg.sample_rate_hz, tau, 10);
    let frf = analysis.frf(&y).map_err(|e| e.to_string())?;
    let h = |f: f64| Complex64::new(1.0, 2.0 * std::f64::consts::PI * f * tau).inv();

    // Same band averaging applied to the analytic response, for context.
    let u = analysis.stimulus_spectrum();
    let freqs = u.grid().frequencies();
    let hold = |f: f64| {
        let x = std::f64::consts::PI * f / cfg.sample_rate_hz;
        (x.sin() / x).powi(2)
    };
    let mut consistent: f64 = 0.0;
    for (k, band) in analysis.bands().bands().iter().enumerate() {
        let num: Complex64 = band
            .iter()
            .map(|&i| h(freqs[i]) * hold(freqs[i]) * u.values()[i])
            .sum();
        let den: Complex64 = band.iter().map(|&i| u.values()[i]).sum();
        consistent = consistent.max((frf.values[k] - num / den).norm() / (num / den).norm());
    }

    let (mut worst_gain, mut worst_phase): (f64, f64) = (0.0, 0.0);
    for (k, &fc) in analysis.bands().centers().iter().enumerate() {
        if fc > 1.5 {
            continue;
        }
        let target = h(fc);
        worst_gain = worst_gain.max((frf.values[k].norm() / target.norm() - 1.0).abs());
        worst_phase = worst_phase.max(phase_diff_deg(frf.values[k], target).abs());
    }
    let detail = format!(
        "vs H at band centres: gain {:.2}%, phase {worst_phase:.2} deg; band-averaged oracle {:.3}%",
        100.0 * worst_gain,
        100.0 * consistent
    );
    ensure(worst_gain <= 0.02 && worst_phase <= 2.0, detail.clone())?;
    Ok(detail)
}

fn bands() -> &'static BandSpec {
    static BANDS: OnceLock<BandSpec> = OnceLock::new();
    BANDS.get_or_init(|| default_analysis().bands().clone())
}

fn bands_model(mu: Vec22, sigma: Mat22, w: [f64; NUM_BANDS]) -> ReferenceModel {
    ReferenceModel::new(
        FrfVector22(mu),
        sigma,
        SpectralWeights { w },
        bands().clone(),
        38,
        0.0,
    )
    .unwrap()
}

fn as_frf(v: Vec22) -> Frf11 {
    collapse(&FrfVector22(v), bands().centers_array())
}

fn random_vec(rng: &mut ChaCha8Rng) -> Vec22 {
    Vec22::from_fn(|_, _| normal(rng))
}

fn random_weights(rng: &mut ChaCha8Rng) -> [f64; NUM_BANDS] {
    std::array::from_fn(|_| rng.random_range(0.0..=1.0))
}

fn naive_score(mu: &Vec22, sigma: &Mat22, w: &[f64; NUM_BANDS], x: &Vec22) -> f64 {
    let rows: Vec<Vec<f64>> = (0..DIM)
        .map(|i| (0..DIM).map(|j| sigma[(i, j)]).collect())
        .collect();
    let p = gauss_jordan_inverse(&rows);
    let s: Vec<f64> = (0..DIM)
        .map(|i| w[i % NUM_BANDS] * (x[i] - mu[i]))
        .collect();
    let mut acc = 0.0;
    for i in 0..DIM {
        for j in 0..DIM {
            acc += s[i] * p[i][j] * s[j];
        }
    }
    acc.sqrt()
}

fn metric_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let d = |x: Vec22, m: &ReferenceModel| likeness_score(&as_frf(x), m).unwrap().d;

    let (mut worst_naive, mut worst_euclid, mut worst_homog): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let s = random_spd(DIM, &mut rng);
        let sigma = Mat22::from_fn(|i, j| s[(i, j)]);
        let (mu, x, w) = (
            random_vec(&mut rng),
            random_vec(&mut rng),
            random_weights(&mut rng),
        );
        let m = bands_model(mu, sigma, w);
        ensure(d(mu, &m) == 0.0, "D(mu) is not exactly zero")?;

        let oracle = naive_score(&mu, &sigma, &w, &x);
        let base = d(x, &m);
        worst_naive = worst_naive.max((base - oracle).abs() / oracle);

        let c: f64 = rng.random_range(-50.0..50.0);
        let scaled = d(mu + (x - mu) * c, &m);
        worst_homog = worst_homog.max((scaled - c.abs() * base).abs() / (c.abs() * base));

        let plain = bands_model(mu, Mat22::identity(), [1.0; NUM_BANDS]);
        let norm = (x - mu).norm();
        worst_euclid = worst_euclid.max((d(x, &plain) - norm).abs() / norm);
    }
    ensure(
        worst_naive <= 1e-10,
        format!("naive oracle error {worst_naive:e}"),
    )?;
    ensure(
        worst_homog <= 1e-12,
        format!("homogeneity error {worst_homog:e}"),
    )?;
    ensure(
        worst_euclid <= 1e-12,
        format!("euclidean error {worst_euclid:e}"),
    )?;
    Ok(format!(
        "naive {worst_naive:.1e}, homogeneity {worst_homog:.1e}, euclidean {worst_euclid:.1e}"
    ))
}

fn weighted_vs_mahalanobis() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let sigma = Mat22::from_diagonal(&Vec22::from_fn(|_, _| rng.random_range(0.05..5.0)));
        let (mu, x, w) = (
            random_vec(&mut rng),
            random_vec(&mut rng),
            random_weights(&mut rng),
        );
        let m = bands_model(mu, sigma, w);
        let f = as_frf(x);
        let (dw, dm) = (
            likeness_score(&f, &m).unwrap().d,
            mahalanobis_score(&f, &m).unwrap(),
        );
        ensure(dw <= dm, format!("D {dw} > D_M {dm}"))?;
        worst = worst.max(dw / dm);
    }
    Ok(format!("1000 cases, largest D/D_M {worst:.4}"))
}

fn cdf_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..500 {
        let n = rng.random_range(1..60);
        let cohort: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..20) as f64 / 4.0)
            .collect();
        let score = rng.random_range(-1..22) as f64 / 4.0;
        let below = cohort.iter().filter(|&&s| s < score).count();
        ensure(
            empirical_cdf(score, &cohort).unwrap() == below as f64 / n as f64,
            "empirical CDF differs from counting",
        )?;
    }
    let mut ratios = Vec::new();
    for n in [10usize, 40, 160] {
        let mut sum = 0.0;
        for seed in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            let mut cohort: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            cohort.sort_by(f64::total_cmp);
            let median = cohort[n / 2];
            let p = empirical_cdf(median, &cohort).unwrap();
            let b = bootstrap_cdf(&cohort, 400, &[median], seed).unwrap();
            sum += b.variance[0] / (p * (1.0 - p) / n as f64);
        }
        let r = sum / 200.0;
        ensure(
            (1.0 / 3.0..=3.0).contains(&r),
            format!("n = {n}: variance ratio {r:.3}"),
        )?;
        ratios.push(format!("{r:.3}"));
    }
    Ok(format!(
        "counting exact, bootstrap/binomial variance ratios {}",
        ratios.join(", ")
    ))
}

fn sip_lock() -> Check {
    let tilt = StimulusConfig::default()
        .generate()
        .map_err(|e| e.to_string())?;
    let ic = controller("ic.json");
    let trial = TrialConfig::default();
    let plant = effective_plant(&ic, &DipParams::default(), &trial);
    ensure(
        plant.hip_lock_stiffness == 1e5,
        "hip lock stiffness is not 1e5",
    )?;
    let r = run_trial(&ic, &DipParams::default(), &tilt, &trial).map_err(|e| e.to_string())?;
    ensure(!r.fell, format!("fell at {:?}", r.fall_time))?;
    ensure(
        r.max_hip_deg <= 1e-3,
        format!("max hip {:.2e} deg", r.max_hip_deg),
    )?;
    Ok(format!("max |hip| {:.2e} deg, no fall", r.max_hip_deg))
}

fn plant_physics() -> Check {
    let p = DipParams {
        ankle_stiffness: 2.0 * DipParams::default().mgh(),
        ankle_damping: 0.0,
        hip_stiffness: 2.0 * DipParams::default().trunk_mgh(),
        hip_damping: 0.0,
        ..DipParams::default()
    };
    let total = |s: &DipState| {
        mechanical_energy(s, &p)
            + 0.5 * p.ankle_stiffness * s.alpha_ls.powi(2)
            + 0.5 * p.hip_stiffness * (s.alpha_ts - s.alpha_ls).powi(2)
    };
    let mut s = DipState {
        alpha_ls: 5f64.to_radians(),
        alpha_ts: -3f64.to_radians(),
        ..DipState::upright()
    };
    let e0 = total(&s);
    let mut drift = 0.0f64;
    for _ in 0..10_000 {
        s = dip_step(&s, JointTorques::default(), &p, Platform::default(), 1e-3);
        drift = drift.max((total(&s) - e0).abs());
    }
    let energy = drift / e0.abs();
    ensure(energy <= 1e-6, format!("energy drift {energy:e}"))?;

    let passive = DipParams {
        ankle_stiffness: 0.0,
        hip_stiffness: 0.0,
        ..p.clone()
    };
    let lin = linearize(&passive);
    let expected = lin.b0.try_inverse().unwrap() * lin.g0;
    let q_accel = |q: Vector2<f64>| {
        let [a1, a2] = accelerations(
            &passive,
            [q[0], q[0] + q[1]],
            [0.0, 0.0],
            JointTorques::default(),
            0.0,
            0.0,
        );
        Vector2::new(a1, a2 - a1)
    };
    let h = 1e-6;
    let mut jac = Matrix2::zeros();
    for j in 0..2 {
        let mut e = Vector2::zeros();
        e[j] = h;
        jac.set_column(j, &((q_accel(e) - q_accel(-e)) / (2.0 * h)));
    }
    let lin_err = (jac - expected).amax() / expected.amax();
    ensure(lin_err <= 1e-6, format!("linearization error {lin_err:e}"))?;
    Ok(format!(
        "energy drift {energy:.1e}, linearization error {lin_err:.1e}"
    ))
}

fn em_leak(lin: &Linearization, cfg: EmConfig, excited: usize) -> f64 {
    let dt = 1e-3;
    let basis = em_decompose(lin).unwrap();
    let mut ctrl = EmController::with_basis(cfg, basis.clone(), dt).unwrap();
    let mut xi0 = Vector2::zeros();
    xi0[excited] = 0.01;
    let mut q = basis.from_modal(xi0);
    let mut v = Vector2::zeros();
    let (mut own, mut other) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let xi = basis.to_modal(q);
        own = own.max(xi[excited].abs());
        other = other.max(xi[1 - excited].abs());
        let tau = ctrl.step_joint(q, v);
        let f = |q: Vector2<f64>| lin.accel(q, tau);
        let (k1q, k1v) = (v, f(q));
        let (k2q, k2v) = (v + k1v * (dt / 2.0), f(q + k1q * (dt / 2.0)));
        let (k3q, k3v) = (v + k2v * (dt / 2.0), f(q + k2q * (dt / 2.0)));
        let (k4q, k4v) = (v + k3v * dt, f(q + k3q * dt));
        q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
    }
    other / own
}

fn em_decoupling() -> Check {
    let lin = linearize(&DipParams::default());
    let cfg = match controller("em.json") {
        ControllerConfig::Em(c) => c,
        other => return Err(format!("em.json holds a {} controller", other.kind())),
    };
    let worst = (0..2)
        .map(|m| em_leak(&lin, cfg.clone(), m))
        .fold(0.0, f64::max);
    ensure(worst < 1e-6, format!("leak {worst:e}"))?;
    Ok(format!("largest cross-mode amplitude ratio {worst:.1e}"))
}

fn controllers_survive() -> Check {
    let tilt = StimulusConfig::default()
        .generate()
        .map_err(|e| e.to_string())?;
    let analysis = default_analysis();
    let mut parts = Vec::new();
    for name in ["ic.json", "dec.json", "em.json"] {
        let r = run_trial(
            &controller(name),
            &DipParams::default(),
            &tilt,
            &TrialConfig::default(),
        )
        .map_err(|e| format!("{name}: {e}"))?;
        ensure(!r.fell, format!("{name} fell at {:?}", r.fall_time))?;
        let frf = analysis.frf(&r.com_sway_deg).map_err(|e| e.to_string())?;
        ensure(
            frf.values
                .iter()
                .all(|z| z.re.is_finite() && z.im.is_finite()),
            format!("{name}: non-finite FRF"),
        )?;
        parts.push(format!(
            "{} |H1| {:.3}",
            name.trim_end_matches(".json"),
            frf.values[0].norm()
        ));
    }
    Ok(parts.join(", "))
}

fn synthetic_cohort_ordering() -> Check {
    let spec = SynthSpec::new(38, 2024);
    let analysis = default_analysis();
    let cohort = synthesize_cohort(&spec).map_err(|e| e.to_string())?;
    let model = build_reference(&cohort, &analysis, ReferenceOptions::default())
        .map_err(|e| e.to_string())?;

    let scores = model.cohort_scores();
    let n = scores.len();
    let mut cdf: Vec<f64> = scores
        .iter()
        .map(|&d| empirical_cdf(d, scores).unwrap())
        .collect();
    cdf.sort_by(f64::total_cmp);
    let uniform: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    ensure(
        n == 38 && cdf == uniform,
        "member percentiles are not {0, 1/n, ...}",
    )?;

    let tilt = spec.stimulus.generate().map_err(|e| e.to_string())?;
    let score = |c: &ControllerConfig| -> Result<f64, String> {
        let r = run_trial(c, &spec.plant, &tilt, &spec.trial).map_err(|e| e.to_string())?;
        ensure(!r.fell, format!("{} fell", c.kind()))?;
        let frf = analysis.frf(&r.com_sway_deg).map_err(|e| e.to_string())?;
        Ok(likeness_score(&frf, &model).map_err(|e| e.to_string())?.d)
    };
    let nominal = score(&spec.nominal)?;
    let detuned = score(&spec.nominal.scale_gains(0.5))?;
    ensure(
        detuned > nominal,
        format!("detuned {detuned:.4} <= nominal {nominal:.4}"),
    )?;
    Ok(format!(
        "percentiles uniform over {n}, D nominal {nominal:.4} < detuned {detuned:.4}"
    ))
}

fn end_to_end_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = BenchRunSpec {
        stimulus: StimulusConfig::default(),
        plant: DipParams::default(),
        controller: fixture("dec.json"),
        reference: fixture("reference.json"),
        output_dir: dir.path().join("out"),
        seed: 5,
        trial: TrialConfig::default(),
        n_boot: 500,
        label: None,
    };
    let names = [
        "report.json",
        "report.txt",
        "frf.csv",
        "trace.csv",
        "frf_plot.svg",
        "cdf_plot.svg",
    ];
    let snapshot = |out: &Path| -> Vec<Vec<u8>> {
        names
            .iter()
            .map(|n| std::fs::read(out.join(n)).unwrap_or_default())
            .collect()
    };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let outcome = run_bench(&spec).map_err(|e| e.to_string())?;
        ensure(
            matches!(outcome, BenchOutcome::Scored(_)),
            "run did not produce a score",
        )?;
        runs.push(snapshot(&spec.output_dir));
    }
    ensure(runs[0].iter().all(|b| !b.is_empty()), "missing artifact")?;
    ensure(runs[0] == runs[1], "reports differ between runs")?;
    let bytes: usize = runs[0].iter().map(Vec::len).sum();
    Ok(format!(
        "{} artifacts, {bytes} bytes identical",
        names.len()
    ))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit_s: Option<f64>,
    check: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "stimulus spectral structure",
            limit_s: Some(1.0),
            check: prts_structure,
        },
        Criterion {
            id: 2,
            name: "pipeline against known transfer function",
            limit_s: Some(5.0),
            check: pipeline_oracle,
        },
        Criterion {
            id: 3,
            name: "metric identities",
            limit_s: Some(5.0),
            check: metric_identities,
        },
        Criterion {
            id: 4,
            name: "weighted score below Mahalanobis",
            limit_s: Some(2.0),
            check: weighted_vs_mahalanobis,
        },
        Criterion {
            id: 5,
            name: "CDF and bootstrap",
            limit_s: Some(30.0),
            check: cdf_correctness,
        },
        Criterion {
            id: 6,
            name: "single-link lock",
            limit_s: Some(10.0),
            check: sip_lock,
        },
        Criterion {
            id: 7,
            name: "plant physics",
            limit_s: None,
            check: plant_physics,
        },
        Criterion {
            id: 8,
            name: "eigenmovement decoupling",
            limit_s: None,
            check: em_decoupling,
        },
        Criterion {
            id: 9,
            name: "controllers survive the trial",
            limit_s: None,
            check: controllers_survive,
        },
        Criterion {
            id: 10,
            name: "synthetic cohort ordering",
            limit_s: Some(60.0),
            check: synthetic_cohort_ordering,
        },
        Criterion {
            id: 11,
            name: "end-to-end determinism",
            limit_s: None,
            check: end_to_end_determinism,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.check)();
        let secs = start.elapsed().as_secs_f64();
        let outcome = match (outcome, c.limit_s) {
            (Ok(_), Some(limit)) if secs >= limit => {
                Err(format!("took {secs:.2} s, limit {limit} s"))
            }
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("AC{:<2} {tag}  {} ({detail}; {secs:.2} s)", c.id, c.name);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
