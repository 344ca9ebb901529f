//! Acceptance criteria 1 to 11. Each test writes one `PASS`/`FAIL` line
//! straight to stdout, so the lines show up without `--nocapture`.

use std::io::Write;
use std::time::Instant;

use serde_json::Value;
use spdelab::cli::{self, Command, RunConfig};
use spdelab::covariance::KernelConfig;
use spdelab::gaussian::{inner_h_u0, sample_paths, uniform_times, wiener_integral_path, StepFunction};
use spdelab::malliavin::{battery_kernels, battery_q, quadratic_process, skorohod_elementary, skorohod_moment_check, standard_battery};
use spdelab::solver::{self, Estimator, FieldSpec, GConfig, ProblemConfig};
use spdelab::spectral::{evolution_apply, Field, GridSpec};
use spdelab::stats;
use spdelab::symbols::{self, CheckOptions, SymbolConfig, SymbolKind, SymbolSpec};
use spdelab::verify::{self, LpTest};

const SEED: u64 = 20_240_601;

fn report(n: u32, title: &str, passed: bool, detail: &str) {
    let line = format!("criterion {n:>2} {:<4} {title}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(passed, "criterion {n} ({title}) failed: {detail}");
}

fn step(bps: &[f64], rows: &[[f64; 2]]) -> StepFunction {
    StepFunction::new(bps.to_vec(), rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

#[test]
fn c01_wiener_integral_isometry() {
    let start = Instant::now();
    let hs = [
        step(&[0.0, 1.0], &[[1.0, 0.0]]),
        step(&[0.0, 1.0, 2.0], &[[1.0, 0.0], [-1.0, 0.5]]),
        step(&[0.5, 1.5], &[[0.3, 1.0]]),
        step(&[0.0, 0.25, 1.25, 2.0], &[[2.0, 0.0], [0.0, -1.0], [0.5, 0.5]]),
    ];
    let q = battery_q();
    let times = uniform_times(2.0, 8);
    let mut worst = 0.0f64;
    for (ki, k) in battery_kernels().iter().enumerate() {
        let paths = sample_paths(k, &times, &q, 100_000, SEED + ki as u64).unwrap();
        for h in &hs {
            let x = wiener_integral_path(h, &paths).unwrap();
            let m = stats::moments(&x);
            let exact = inner_h_u0(h, h, k).unwrap();
            worst = worst.max((m.var - exact).abs() / m.se_var);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(1, "Wiener-integral isometry", worst <= 4.0 && secs < 30.0, &format!("8 processes, max |Var - <h,h>|/SE = {worst:.2}, {secs:.1} s"));
}

#[test]
fn c02_skorohod_exact_case() {
    let mut detail = Vec::new();
    let mut ok = true;
    for k in battery_kernels() {
        let u = quadratic_process(&k, vec![1.0, 0.0]).unwrap();
        let d = skorohod_elementary(&u, &k, &battery_q(), 100_000, SEED).unwrap();
        let x: Vec<f64> = d.iter().map(|v| v[0]).collect();
        let m = stats::moments(&x);
        let zm = m.mean.abs() / m.se_mean;
        let zv = (m.var - 2.0).abs() / m.se_var;
        ok &= zm <= 4.0 && zv <= 4.0;
        detail.push(format!("{}: mean z = {zm:.2}, var {:.4} (z = {zv:.2})", k.name, m.var));
    }
    report(2, "Skorohod exact case", ok, &detail.join("; "));
}

#[test]
fn c03_skorohod_isometry_battery() {
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in battery_kernels() {
        for (name, u) in standard_battery(&k).unwrap() {
            let r = skorohod_moment_check(&name, &u, &k, &battery_q(), 100_000, SEED).unwrap();
            worst = worst.max(r.z_score);
            count += 1;
        }
    }
    report(3, "Skorohod isometry formula", count == 8 && worst <= 4.0, &format!("{count} processes, max z = {worst:.2}"));
}

fn random_field(grid: &GridSpec, seed: u64) -> Field {
    symbols::band_limited_field(grid, 1, seed, 0)
}

#[test]
fn c04_evolution_system_law() {
    let (t, r, s) = (1.3, 0.55, 0.1);
    let mut worst = [0.0f64; 2];
    for (i, psi) in [SymbolSpec::neg_power(2.0, 1.0, 1), SymbolSpec::heat_time_varying(1)].iter().enumerate() {
        for (n, l) in [(64, 10.0), (128, 2.0 * std::f64::consts::PI)] {
            let grid = GridSpec::new(1, n, l).unwrap();
            let f = random_field(&grid, SEED + n as u64);
            let two = evolution_apply(psi, t, r, &evolution_apply(psi, r, s, &f).unwrap()).unwrap();
            let one = evolution_apply(psi, t, s, &f).unwrap();
            worst[i] = worst[i].max(two.sub(&one).unwrap().l2_discrete() / f.l2_discrete());
        }
    }
    let ok = worst[0] <= 1e-12 && worst[1] <= 1e-6;
    report(4, "evolution-system law", ok, &format!("time-independent {:.1e}, time-dependent {:.1e}", worst[0], worst[1]));
}

fn heat_noise_problem(kernel: KernelConfig) -> ProblemConfig {
    let sym = |name: &str| SymbolConfig { gamma: Some(2.0), ..SymbolConfig::named(name) };
    ProblemConfig {
        grid: GridSpec { d: 1, n: 16, l: 2.0 * std::f64::consts::PI, dt_quad: None },
        psi: sym("neg_power"),
        phi: sym("power"),
        kernel,
        lambdas: vec![1.0],
        t_end: 1.0,
        n_t: 4,
        m: 1,
        u0: FieldSpec::Zero,
        f: FieldSpec::Zero,
        g: GConfig::Diagonal(FieldSpec::Bump { amplitude: 1.0, width: 1.0 }),
        p: 2.0,
        q: 2.0,
        r: None,
    }
}

fn mode_second_moments(ens: &solver::SolutionEnsemble, node: usize) -> Vec<(f64, f64)> {
    let nx = ens.spectra[0][node].values.len();
    (0..nx)
        .map(|k| {
            let x: Vec<f64> = ens.spectra.iter().map(|s| s[node].values[k].norm_sqr()).collect();
            stats::mean_se(&x)
        })
        .collect()
}

#[test]
fn c05_cross_estimator_agreement() {
    let mut detail = Vec::new();
    let mut ok = true;
    let fbm = KernelConfig { h: Some(0.75), ..KernelConfig::named("fbm") };
    for kc in [KernelConfig::named("wiener"), fbm] {
        let problem = heat_noise_problem(kc.clone()).build().unwrap();
        let a = solver::solve(&problem, 10_000, SEED, Estimator::Modewise, 8).unwrap();
        let b = solver::solve(&problem, 10_000, SEED + 1, Estimator::Pathwise, 8).unwrap();
        let mut worst = 0.0f64;
        for node in 1..=problem.n_t {
            for ((ma, sa), (mb, sb)) in mode_second_moments(&a, node).into_iter().zip(mode_second_moments(&b, node)) {
                worst = worst.max(stats::z_score(ma, sa, mb, sb));
            }
        }
        ok &= worst <= 4.0;
        detail.push(format!("{}: max z = {worst:.2}", kc.kernel));
    }
    report(5, "modewise vs pathwise variances", ok, &detail.join("; "));
}

#[test]
fn c06_multiplier_checkers() {
    let start = Instant::now();
    let opts = CheckOptions::default();
    let sq = || Box::new(SymbolKind::Power { gamma: 2.0 });
    let mut ok = true;
    let mut failures = Vec::new();
    for (s, t) in cli::MULTIPLIER_PAIRS {
        let kinds = [
            ("m1", SymbolKind::ResolventPower { base: sq(), s }),
            ("m2", SymbolKind::RatioPower { phi: sq(), psi: sq(), t, s }),
            ("m3", SymbolKind::MixedRatio { phi: sq(), psi: sq(), t, s }),
        ];
        for (name, kind) in kinds {
            let r = symbols::check_mihlin(&SymbolSpec::multiplier(kind, 2), None, &opts).unwrap();
            if !r.passed {
                ok = false;
                failures.push(format!("{name}(s={s},t={t})"));
            }
        }
    }
    let ex = SymbolSpec::multiplier(SymbolKind::ProductRatio { exponents: vec![1.0, 1.0] }, 2);
    let marc = symbols::check_marcinkiewicz(&ex, 10_000, &opts).unwrap().passed;
    let xi1 = symbols::check_mihlin(&SymbolSpec::multiplier(SymbolKind::Coordinate { index: 0 }, 2), None, &opts).unwrap().passed;
    let log = symbols::check_mihlin(&SymbolSpec::multiplier(SymbolKind::LogOnePlus, 1), None, &opts).unwrap().passed;
    let secs = start.elapsed().as_secs_f64();
    ok &= marc && !xi1 && !log && secs < 10.0;
    report(
        6,
        "multiplier checkers",
        ok,
        &format!("12 Mihlin cases failing: {failures:?}; product ratio Marcinkiewicz {marc}; xi1 {xi1}; log1p {log}; {secs:.2} s"),
    );
}

#[test]
fn c07_littlewood_paley() {
    let phi = SymbolSpec::power(2.0, 1);
    let psi = SymbolSpec::neg_power(2.0, 1.0, 1);
    let levels = [(32, 16), (64, 32), (128, 64)];
    let cases = [("scalar", LpTest::default(), 2.0), ("theta4", LpTest { n_theta: 4, ..LpTest::default() }, 4.0 / 3.0)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, test, r) in cases {
        let mut slowest = 0.0f64;
        for &lv in &levels {
            let start = Instant::now();
            verify::lp_level(&phi, &psi, &test, 2.0, 2.0, r, lv.0, lv.1).unwrap();
            slowest = slowest.max(start.elapsed().as_secs_f64());
        }
        let rep = verify::lp_inequality_check(name, &phi, &psi, &test, 2.0, 2.0, r, &levels).unwrap();
        ok &= rep.passed && rep.ratio.is_finite() && rep.drift < 0.25 && slowest < 60.0;
        detail.push(format!("{name}: ratio {:.4}, drift {:.2}%, slowest level {slowest:.2} s", rep.ratio, 100.0 * rep.drift));
    }
    report(7, "Littlewood-Paley ratio", ok, &detail.join("; "));
}

#[test]
fn c08_maximal_inequality() {
    let mut ok = true;
    let mut worst = 0.0f64;
    for k in battery_kernels() {
        for (name, u) in standard_battery(&k).unwrap() {
            let r = verify::maximal_inequality_check(&name, &u, &k, &battery_q(), 2.0, 2.0, 3000, SEED, &[16, 32, 64]).unwrap();
            ok &= r.passed && r.ratio.is_finite();
            worst = worst.max(r.drift);
        }
    }
    let o = cli::maximal_oracle(2.0, 64, 20_000, SEED).unwrap();
    ok &= o.passed;
    report(
        8,
        "maximal-inequality ratio",
        ok,
        &format!("battery max drift {:.1}%; deterministic Wiener lhs {:.4} vs random walk {:.4} (z = {:.2})", 100.0 * worst, o.lhs, o.oracle, o.z_score),
    );
}

#[test]
fn c09_kernel_envelope() {
    let phi = SymbolSpec::power(2.0, 1);
    let psi = SymbolSpec::neg_power(2.0, 1.0, 1);
    let grid = GridSpec::new(1, 256, 16.0).unwrap();
    let r = verify::kernel_envelope_check(&phi, &psi, &[0.1, 0.2, 0.4], &grid).unwrap();
    let worst = r.spreads.iter().cloned().fold(0.0, f64::max);
    report(9, "kernel envelope", r.passed && worst < 0.2, &format!("constant spreads {:.2e} {:.2e} {:.2e}", r.spreads[0], r.spreads[1], r.spreads[2]));
}

#[test]
fn c10_apriori_estimate() {
    let start = Instant::now();
    let fbm = KernelConfig { h: Some(0.75), ..KernelConfig::named("fbm") };
    let levels = [(32, 16), (64, 32), (128, 64)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, kc) in [("heat/wiener", KernelConfig::named("wiener")), ("heat/fbm(0.75)", fbm)] {
        let cfg = verify::heat_apriori_config(kc);
        let r = verify::apriori_estimate_check(name, &cfg, &levels, 400, SEED, 4).unwrap();
        ok &= r.passed && r.ratio.is_finite() && r.drift < 0.25;
        detail.push(format!("{name}: ratio {:.3}, drift {:.2}%", r.ratio, 100.0 * r.drift));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    report(10, "a-priori estimate", ok, &format!("{}; {secs:.1} s", detail.join("; ")));
}

fn light_params(command: Command) -> Value {
    match command {
        Command::Simulate => serde_json::json!({
            "problem": serde_json::to_value(heat_noise_problem(KernelConfig { h: Some(0.75), ..KernelConfig::named("fbm") })).unwrap(),
            "n_samples": 64,
            "estimator": "pathwise",
            "refine": 2
        }),
        Command::VerifyMaximal => serde_json::json!({ "n_samples": 300, "levels": [8, 16], "oracle_samples": 2000 }),
        Command::VerifyApriori => serde_json::json!({ "levels": [[16, 8], [32, 16]], "n_samples": 40 }),
        Command::VerifySkorohod => serde_json::json!({ "n_samples": 4000 }),
        _ => serde_json::json!({}),
    }
}

#[test]
fn c11_determinism() {
    let commands = [
        Command::Simulate,
        Command::VerifyMaximal,
        Command::VerifyLp,
        Command::VerifyBessel,
        Command::VerifyMultiplier,
        Command::VerifyKernelenv,
        Command::VerifyGoperator,
        Command::VerifyApriori,
        Command::VerifySkorohod,
        Command::Kernels,
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for c in commands {
        let cfg = RunConfig { params: light_params(c), emit_plots: true, ..RunConfig::default() };
        let mut outs = Vec::new();
        for d in &dirs {
            outs.push(cli::run(c, &cfg, SEED, d.path()).unwrap());
        }
        for (a, b) in outs[0].artifacts.iter().zip(&outs[1].artifacts) {
            let ext = a.extension().and_then(|e| e.to_str()).unwrap_or("");
            if !matches!(ext, "json" | "csv" | "bin") {
                continue;
            }
            compared += 1;
            if std::fs::read(a).unwrap() != std::fs::read(b).unwrap() {
                mismatches.push(a.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
    }
    let ledgers: Vec<Vec<u8>> = dirs.iter().map(|d| std::fs::read(d.path().join("ledger.jsonl")).unwrap()).collect();
    if ledgers[0] != ledgers[1] {
        mismatches.push("ledger.jsonl".into());
    }
    report(11, "determinism", mismatches.is_empty() && compared >= 20, &format!("{compared} artifacts compared across 10 commands, mismatches {mismatches:?}"));
}
