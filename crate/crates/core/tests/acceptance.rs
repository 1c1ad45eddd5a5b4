//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sncov::clt::{contour_cov, contour_mean, log_limit_moments, moment_mu, moment_sigma2, ContourSpec};
use sncov::datagen::{gen_panel, GenModel, ModelKind, SigmaSpec};
use sncov::empirical::{rolling_diag_test, summarize_values, FactorModel};
use sncov::montecarlo::{cell_z_values, run_design, ExperimentConfig, ExperimentReport, DEFAULT_ALPHA, DEFAULT_SEED};
use sncov::mp::{mp_moment, mp_quadrature};
use sncov::spectra::{esd_ks_distance, snc_eigenvalues, ObservationMatrix, SpectralFunction};
use sncov::sphericity::{run_test, two_sided_p_value, TestKind};

const REPLICATIONS: usize = 2000;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn moments_vs_quadrature() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &y in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        for k in 0..=8u32 {
            let closed = mp_moment(k, y).unwrap();
            let quad: f64 = mp_quadrature(|x| x.powi(k as i32), y).unwrap();
            worst = worst.max((closed - quad).abs() / closed.max(1.0));
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("max rel err {worst:.1e} (limit 1e-9), {:.3} s (limit 1 s)", elapsed.as_secs_f64()),
    )
}

fn clt_vs_contour() -> Outcome {
    let start = Instant::now();
    let mut log_worst = 0.0f64;
    for &y in &[0.25, 0.5, 0.75] {
        let f = SpectralFunction::Log;
        let (inner, outer) = ContourSpec::default_pair(f, y).unwrap();
        let (mean, var) = log_limit_moments(y).unwrap();
        log_worst = log_worst
            .max((contour_mean(f, y, &inner).unwrap() - mean).abs())
            .max((contour_cov(f, f, y, &inner, &outer).unwrap() - var).abs());
    }
    let (mut mean_worst, mut var_worst) = (0.0f64, 0.0f64);
    for &y in &[0.5, 2.0] {
        for k in 2..=4u32 {
            let f = SpectralFunction::Power(k);
            let (inner, outer) = ContourSpec::default_pair(f, y).unwrap();
            let mu = moment_mu(k, y).unwrap();
            let s2 = moment_sigma2(k, y).unwrap();
            mean_worst = mean_worst.max((contour_mean(f, y, &inner).unwrap() - mu).abs() / mu.abs().max(1.0));
            var_worst = var_worst.max((contour_cov(f, f, y, &inner, &outer).unwrap() - s2).abs() / s2.max(1.0));
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        log_worst <= 1e-6 && mean_worst <= 1e-5 && var_worst <= 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "log err {log_worst:.1e} (1e-6), power mean {mean_worst:.1e} (1e-5), power var {var_worst:.1e} (1e-4), {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn moment_two_equals_jhn() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let p = rng.random_range(2..=80);
        let n = rng.random_range(2..=80);
        let obs = ObservationMatrix::new(common::gaussian_matrix(p, n, 1000 + i)).unwrap();
        let jhn = run_test(&obs, TestKind::JhnSn, 0.05).unwrap().z;
        let k2 = run_test(&obs, TestKind::MomentK(2), 0.05).unwrap().z;
        worst = worst.max((jhn - k2).abs());
    }
    Outcome::new(worst <= 1e-10, format!("max |z diff| {worst:.1e} over 100 panels (limit 1e-10)"))
}

/// Expected rejection rate in percent with its tolerance.
struct Target {
    p: usize,
    y: f64,
    test: TestKind,
    percent: f64,
    tol: f64,
}

fn target(p: usize, y: f64, test: TestKind, percent: f64, tol: f64) -> Target {
    Target { p, y, test, percent, tol }
}

fn config(model: ModelKind, sigma: SigmaSpec, tests: Vec<TestKind>, p_list: Vec<usize>, y: f64) -> ExperimentConfig {
    ExperimentConfig {
        model,
        sigma,
        tests,
        p_list,
        y_list: vec![y],
        replications: REPLICATIONS,
        alpha: DEFAULT_ALPHA,
        master_seed: DEFAULT_SEED,
    }
}

fn check_cells(name: &str, configs: &[ExperimentConfig], targets: &[Target]) -> Outcome {
    let report: ExperimentReport = run_design(name, configs, threads()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for t in targets {
        let cell = report.cell(t.p, t.y, t.test).expect("cell was simulated");
        let got = 100.0 * cell.rejection_rate;
        let ok = (got - t.percent).abs() <= t.tol;
        pass &= ok;
        parts.push(format!(
            "{} ({},{}) {got:.1} vs {:.1}±{}{}",
            t.test,
            t.p,
            t.y,
            t.percent,
            t.tol,
            if ok { "" } else { " !" }
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn elliptical_sizes() -> Outcome {
    use TestKind::{JhnSn, LrSn};
    let (m, s) = (ModelKind::Elliptical, SigmaSpec::Identity);
    let configs = [
        config(m, s, vec![LrSn, JhnSn], vec![100, 200, 500], 0.5),
        config(m, s, vec![JhnSn], vec![100, 500], 2.0),
    ];
    let targets = [
        target(100, 0.5, JhnSn, 5.2, 1.5),
        target(200, 0.5, JhnSn, 4.9, 1.5),
        target(500, 0.5, JhnSn, 5.2, 1.5),
        target(100, 2.0, JhnSn, 4.9, 1.5),
        target(500, 2.0, JhnSn, 5.2, 1.5),
        target(100, 0.5, LrSn, 4.6, 1.5),
        target(500, 0.5, LrSn, 4.9, 1.5),
    ];
    check_cells("elliptical-sizes", &configs, &targets)
}

fn elliptical_powers() -> Outcome {
    use TestKind::{JhnSn, LrSn};
    let (m, s) = (ModelKind::Elliptical, SigmaSpec::Toeplitz(0.1));
    let configs = [config(m, s, vec![LrSn, JhnSn], vec![200], 0.5), config(m, s, vec![JhnSn], vec![500], 2.0)];
    let targets = [
        target(200, 0.5, JhnSn, 97.0, 3.0),
        target(200, 0.5, LrSn, 88.7, 3.0),
        target(500, 2.0, JhnSn, 70.5, 4.0),
    ];
    check_cells("elliptical-powers", &configs, &targets)
}

fn garch_sizes_and_powers() -> Outcome {
    use TestKind::{JhnSn, LrSn};
    let m = ModelKind::GarchT4;
    let size = check_cells(
        "garch-sizes",
        &[config(m, SigmaSpec::Identity, vec![LrSn, JhnSn], vec![200], 0.5)],
        &[target(200, 0.5, LrSn, 5.7, 1.5), target(200, 0.5, JhnSn, 5.4, 1.5)],
    );
    let power = check_cells(
        "garch-powers",
        &[config(m, SigmaSpec::Toeplitz(0.1), vec![LrSn, JhnSn], vec![200], 0.5)],
        &[target(200, 0.5, LrSn, 87.8, 3.0), target(200, 0.5, JhnSn, 96.6, 3.0)],
    );
    Outcome::new(size.pass && power.pass, format!("size: {}; power: {}", size.detail, power.detail))
}

fn esd_convergence() -> Outcome {
    let mut worst = 0.0f64;
    let mut passed = 0;
    for seed in 1..=10u64 {
        let obs = gen_panel(&GenModel { kind: ModelKind::Iid, sigma: SigmaSpec::Identity, p: 1000, n: 2000, seed }).unwrap();
        let d = esd_ks_distance(&snc_eigenvalues(&obs).unwrap());
        worst = worst.max(d);
        passed += usize::from(d < 0.05);
    }
    Outcome::new(passed == 10, format!("{passed}/10 seeds below 0.05, max KS distance {worst:.4}"))
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for trial in 0..200u64 {
        let p = rng.random_range(2..=60);
        let n = rng.random_range(2..=60);
        let base = common::gaussian_matrix(p, n, 5000 + trial);
        let mut scaled = base.clone();
        for mut col in scaled.column_iter_mut() {
            col *= rng.random_range(-5.0f64..5.0).exp();
        }
        let a = ObservationMatrix::new(base).unwrap();
        let b = ObservationMatrix::new(scaled).unwrap();
        for kind in [TestKind::LrSn, TestKind::JhnSn, TestKind::MomentK(3), TestKind::MomentK(4)] {
            match (run_test(&a, kind, 0.05), run_test(&b, kind, 0.05)) {
                (Ok(ra), Ok(rb)) => {
                    worst = worst.max((ra.z - rb.z).abs());
                    compared += 1;
                }
                (Err(_), Err(_)) => {}
                _ => return Outcome::new(false, format!("trial {trial}: {kind} succeeded on only one panel")),
            }
        }
    }
    let mut spectra_worst = 0.0f64;
    for seed in 0..200u64 {
        let p = 2 + (seed as usize * 7) % 59;
        let n = 2 + (seed as usize * 13) % 59;
        let sigma = if seed % 2 == 0 { SigmaSpec::Identity } else { SigmaSpec::Toeplitz(0.4) };
        let iid = snc_eigenvalues(&gen_panel(&GenModel { kind: ModelKind::Iid, sigma, p, n, seed }).unwrap()).unwrap();
        let ell =
            snc_eigenvalues(&gen_panel(&GenModel { kind: ModelKind::Elliptical, sigma, p, n, seed }).unwrap()).unwrap();
        for (x, y) in iid.eigenvalues.iter().zip(&ell.eigenvalues) {
            spectra_worst = spectra_worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    Outcome::new(
        worst <= 1e-12 && spectra_worst <= 1e-12,
        format!(
            "max |z diff| {worst:.1e} over {compared} reports in 200 trials; elliptical vs iid spectra {spectra_worst:.1e} (limit 1e-12)"
        ),
    )
}

fn rolling_pipeline() -> Outcome {
    let histories = 20u64;
    let mut z = Vec::new();
    for seed in 0..histories {
        let (returns, factors) = common::ThreeFactorSim::new(seed).simulate();
        let out = rolling_diag_test(&returns, &factors, FactorModel::Ff3, 0.05).unwrap();
        z.extend(out.results.iter().map(|r| r.report.z));
    }
    let s = summarize_values(&z).unwrap();
    let within = 100.0 * s.within_95;
    let pass = (within - 94.5).abs() <= 4.0 && (s.mean - 0.6).abs() <= 0.3 && (s.sd - 0.9).abs() <= 0.3;
    Outcome::new(
        pass,
        format!(
            "{} months over {histories} histories: within ±1.96 {within:.1}% (94.5±4), mean {:.3} (0.6±0.3), sd {:.3} (0.9±0.3)",
            s.count, s.mean, s.sd
        ),
    )
}

fn null_p_value_uniformity() -> Outcome {
    let z = cell_z_values(ModelKind::Iid, SigmaSpec::Identity, 100, 0.5, &[TestKind::JhnSn], 5000, 2024).unwrap();
    let p_values: Vec<f64> = z[0].iter().map(|&z| two_sided_p_value(z)).collect();
    let d = common::ks_uniform_statistic(&p_values);
    let pv = common::kolmogorov_p_value(d, p_values.len());
    Outcome::new(pv > 0.01, format!("KS D = {d:.4}, p = {pv:.3} over 5000 replications (reject below 0.01)"))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4", "16"] {
        let out = dir.path().join(format!("t{threads}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_sncov"))
            .args(["--threads", threads, "--seed", "7", "simulate", "--design", "table3", "--reps", "25", "--out"])
            .arg(&out)
            .env_remove("SNCOV_THREADS")
            .status()
            .unwrap();
        if !status.success() {
            return Outcome::new(false, format!("simulate failed at {threads} threads"));
        }
        outputs.push(std::fs::read(&out).unwrap());
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    Outcome::new(same, format!("table3 JSON at 1/4/16 threads, {} bytes, identical: {same}", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 11] = [
        ("moment closed forms vs quadrature", moments_vs_quadrature),
        ("CLT closed forms vs contour integrals", clt_vs_contour),
        ("moment test k=2 equals JHN-SN", moment_two_equals_jhn),
        ("elliptical sizes, identity", elliptical_sizes),
        ("elliptical powers, Toeplitz(0.1)", elliptical_powers),
        ("GARCH-t(4) sizes and powers", garch_sizes_and_powers),
        ("ESD converges to the MP law", esd_convergence),
        ("scale invariance", scale_invariance),
        ("rolling factor-residual pipeline", rolling_pipeline),
        ("null p-value uniformity", null_p_value_uniformity),
        ("CLI determinism across threads", cli_determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Outcome::new(false, "panicked"));
        failures += usize::from(!outcome.pass);
        println!(
            "{} criterion {:>2}: {name}: {} [{:.1} s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
