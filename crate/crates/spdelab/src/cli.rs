//! Batch front-end: `spdelab <command> --config path.json [--seed N] [--out dir]`.
//!
//! A run reads one JSON [`RunConfig`], executes the command, and writes
//! `<out>/<command>.json`, `<out>/<command>.csv`, an optional SVG plot and a
//! line in `<out>/ledger.jsonl`. Exit status: 0 when every report passed, 1
//! on a numerical failure, 2 on a schema or hypothesis violation.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::covariance::{builtin_summaries, CovarianceKernel, KernelConfig};
use crate::gaussian::{QSpec, StepFunction};
use crate::io;
use crate::malliavin::{self, CylinderFunctional, ElementaryProcess, ProcessConfig, Term};
use crate::solver::{self, Estimator, ProblemConfig};
use crate::spectral::{self, GridSpec};
use crate::stats;
use crate::symbols::{self, CheckOptions, SymbolConfig, SymbolSpec};
use crate::verify::{self, GTest, LpTest, RatioReport};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    VerifyMaximal,
    VerifyLp,
    VerifyBessel,
    VerifyMultiplier,
    VerifyKernelenv,
    VerifyGoperator,
    VerifyApriori,
    VerifySkorohod,
    Kernels,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::VerifyMaximal => "verify-maximal",
            Command::VerifyLp => "verify-lp",
            Command::VerifyBessel => "verify-bessel",
            Command::VerifyMultiplier => "verify-multiplier",
            Command::VerifyKernelenv => "verify-kernelenv",
            Command::VerifyGoperator => "verify-goperator",
            Command::VerifyApriori => "verify-apriori",
            Command::VerifySkorohod => "verify-skorohod",
            Command::Kernels => "kernels",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spdelab", about = "Spectral SPDE simulation and inequality checks")]
pub struct Cli {
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The configuration file. `params` holds the command-specific parameters;
/// every field inside it has a default, so `{}` runs the standard battery.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub emit_plots: bool,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug)]
pub enum CliError {
    /// Malformed configuration or violated hypothesis: exit 2.
    Schema(String),
    /// Numerical failure: exit 1.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Hypothesis(_)
            | Error::Invalid(_)
            | Error::Shape(_)
            | Error::OutOfRange(_)
            | Error::UnsupportedParameter(_)
            | Error::SymbolDomain(_)
            | Error::ClassViolation(_)
            | Error::KernelValidity(_) => CliError::Schema(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// What a finished run wrote.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub passed: bool,
    pub config_hash: String,
    pub artifacts: Vec<PathBuf>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

struct Outcome {
    reports: Vec<Value>,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    plot: Vec<(String, Vec<(f64, f64)>)>,
    plot_title: String,
    extra: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(header: Vec<&'static str>, plot_title: &str) -> Self {
        Outcome { reports: Vec::new(), header, rows: Vec::new(), plot: Vec::new(), plot_title: plot_title.into(), extra: Vec::new() }
    }

    fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.get("passed").and_then(Value::as_bool).unwrap_or(false))
    }

    fn push_ratio(&mut self, r: &RatioReport) -> CliResult<()> {
        for (level, ratio) in &r.refinement_trace {
            self.rows.push(vec![r.name.clone(), level.to_string(), io::fmt_f64(*ratio), io::fmt_f64(r.drift), r.passed.to_string()]);
        }
        self.plot.push((r.name.clone(), r.refinement_trace.iter().map(|(l, v)| (*l as f64, *v)).collect()));
        self.reports.push(to_value(r)?);
        Ok(())
    }
}

const RATIO_HEADER: [&str; 5] = ["name", "level", "ratio", "drift", "passed"];

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Numerical(format!("serialising report: {e}")))
}

fn parse_params<T: DeserializeOwned>(v: &Value) -> CliResult<T> {
    let v = if v.is_null() { json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| CliError::Schema(format!("params: {e}")))
}

/// Parse a configuration file's contents.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    serde_json::from_str(text).map_err(|e| CliError::Schema(format!("config: {e}")))
}

/// Execute `command` and write its artifacts to `out`.
pub fn run(command: Command, config: &RunConfig, seed: u64, out: &Path) -> CliResult<RunSummary> {
    if let Some(c) = config.command {
        if c != command {
            return Err(CliError::Schema(format!("config is for '{}' but '{}' was requested", c.name(), command.name())));
        }
    }
    let name = command.name();
    let hash = io::config_hash(&json!({ "params": config.params, "emit_plots": config.emit_plots }), name, seed);
    std::fs::create_dir_all(out).map_err(|e| CliError::Numerical(format!("creating {}: {e}", out.display())))?;
    let result = match command {
        Command::Simulate => simulate(&parse_params(&config.params)?, seed),
        Command::VerifyMaximal => verify_maximal(&parse_params(&config.params)?, seed),
        Command::VerifyLp => verify_lp(&parse_params(&config.params)?),
        Command::VerifyBessel => verify_bessel(&parse_params(&config.params)?, seed),
        Command::VerifyMultiplier => verify_multiplier(&parse_params(&config.params)?),
        Command::VerifyKernelenv => verify_kernelenv(&parse_params(&config.params)?),
        Command::VerifyGoperator => verify_goperator(&parse_params(&config.params)?),
        Command::VerifyApriori => verify_apriori(&parse_params(&config.params)?, seed),
        Command::VerifySkorohod => verify_skorohod(&parse_params(&config.params)?, seed),
        Command::Kernels => kernels(&parse_params(&config.params)?),
    };
    let json_path = out.join(format!("{name}.json"));
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            if let CliError::Numerical(msg) = &e {
                let doc = json!({ "command": name, "config_hash": hash, "seed": seed, "passed": false, "error": msg });
                write_text(&json_path, &pretty(&doc)?)?;
                append(out, &json!({ "command": name, "config_hash": hash, "seed": seed, "passed": false, "artifacts": [file_name(&json_path)] }))?;
            }
            return Err(e);
        }
    };
    let passed = outcome.passed();
    let mut artifacts = vec![json_path.clone()];
    let doc = json!({ "command": name, "config_hash": hash, "seed": seed, "passed": passed, "reports": outcome.reports });
    write_text(&json_path, &pretty(&doc)?)?;
    let csv_path = out.join(format!("{name}.csv"));
    io::write_csv(&csv_path, &outcome.header, &outcome.rows)?;
    artifacts.push(csv_path);
    for (file, bytes) in &outcome.extra {
        let p = out.join(file);
        std::fs::write(&p, bytes).map_err(|e| CliError::Numerical(format!("writing {}: {e}", p.display())))?;
        artifacts.push(p);
    }
    if config.emit_plots && !outcome.plot.is_empty() {
        let series: Vec<(&str, Vec<(f64, f64)>)> = outcome.plot.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        let p = out.join(format!("{name}.svg"));
        write_text(&p, &io::svg_line_plot(&outcome.plot_title, &series))?;
        artifacts.push(p);
    }
    let names: Vec<String> = artifacts.iter().map(|p| file_name(p)).collect();
    append(out, &json!({ "command": name, "config_hash": hash, "seed": seed, "passed": passed, "artifacts": names }))?;
    Ok(RunSummary { passed, config_hash: hash, artifacts })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn pretty(v: &Value) -> CliResult<String> {
    Ok(io::to_pretty_json(v)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Numerical(format!("writing {}: {e}", path.display())))
}

fn append(out: &Path, entry: &Value) -> CliResult<()> {
    Ok(io::append_ledger(out, entry)?)
}

/// Process entry point; returns the exit status.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Ok(v) = std::env::var("TOOL_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("schema error: TOOL_THREADS must be a positive integer, got '{v}'");
                return 2;
            }
        }
    }
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("schema error: cannot read {}: {e}", cli.config.display());
            return 2;
        }
    };
    let config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let out = cli.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    match run(cli.command, &config, seed, &out) {
        Ok(s) => {
            println!("{} {} (config {})", cli.command.name(), if s.passed { "passed" } else { "FAILED" }, s.config_hash);
            for a in &s.artifacts {
                println!("  {}", a.display());
            }
            s.exit_code()
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

// ==========================================================================
// Parameter defaults
// ==========================================================================

fn two() -> f64 {
    2.0
}

fn one_usize() -> usize {
    1
}

fn sym(name: &str, gamma: f64) -> SymbolConfig {
    SymbolConfig { gamma: Some(gamma), ..SymbolConfig::named(name) }
}

fn heat_phi() -> SymbolConfig {
    sym("power", 2.0)
}

fn heat_psi() -> SymbolConfig {
    sym("neg_power", 2.0)
}

fn dim_one() -> usize {
    1
}

fn default_levels3() -> Vec<(usize, usize)> {
    vec![(32, 16), (64, 32), (128, 64)]
}

// ==========================================================================
// simulate
// ==========================================================================

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateParams {
    problem: ProblemConfig,
    #[serde(default = "d_sim_samples")]
    n_samples: usize,
    #[serde(default = "d_estimator")]
    estimator: Estimator,
    #[serde(default = "one_usize")]
    refine: usize,
}

fn d_sim_samples() -> usize {
    100
}

fn d_estimator() -> Estimator {
    Estimator::Modewise
}

fn simulate(p: &SimulateParams, seed: u64) -> CliResult<Outcome> {
    let problem = p.problem.build()?;
    let ens = solver::solve(&problem, p.n_samples, seed, p.estimator, p.refine)?;
    let norms = verify::solution_norms(&problem, &ens)?;
    let mut out = Outcome::new(vec!["node", "t", "mean_l2", "sd_l2", "mean_field_l2"], "ensemble l2 norm");
    let mut means = Vec::with_capacity(ens.times.len());
    let mut series = Vec::new();
    let mut finite = true;
    for (i, &t) in ens.times.iter().enumerate() {
        let norms_i: Vec<f64> = (0..ens.n_samples).map(|s| ens.spectra[s][i].l2_discrete()).collect();
        let m = stats::moments(&norms_i);
        let mean_field = spectral::inverse_transform(&ens.mean_spectrum(i))?;
        let mf = mean_field.l2_discrete();
        finite &= m.mean.is_finite() && m.var.is_finite() && mf.is_finite();
        out.rows.push(vec![i.to_string(), io::fmt_f64(t), io::fmt_f64(m.mean), io::fmt_f64(m.var.sqrt()), io::fmt_f64(mf)]);
        series.push((t, m.mean));
        means.push(mean_field);
    }
    out.plot.push(("mean l2 norm".into(), series));
    out.extra.push(("simulate.bin".into(), io::encode_fields(&means)?));
    let residual = if problem.is_noise_free() || ens.paths.is_some() {
        {
        let mut k = vec![0; problem.grid.d];
        k[0] = 1;
        Some(solver::mode_residual(&problem, &ens, &k)?)
    }
    } else {
        None
    };
    out.reports.push(json!({
        "name": "simulate",
        "estimator": p.estimator,
        "n_samples": ens.n_samples,
        "refine": ens.refine,
        "seed": seed,
        "norms": to_value(&norms)?,
        "mode_residual": residual.map(|r| to_value(&r)).transpose()?,
        "passed": finite,
    }));
    Ok(out)
}

// ==========================================================================
// verify-maximal / verify-skorohod
// ==========================================================================

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedProcess {
    name: String,
    kernel: KernelConfig,
    process: ProcessConfig,
}

type Battery = Vec<(String, CovarianceKernel, ElementaryProcess, QSpec)>;

fn battery(custom: &Option<Vec<NamedProcess>>, lambdas: &Option<Vec<f64>>) -> CliResult<Battery> {
    match custom {
        None => {
            let q = match lambdas {
                Some(l) => QSpec::new(l.clone())?,
                None => malliavin::battery_q(),
            };
            let mut out = Vec::new();
            for k in malliavin::battery_kernels() {
                for (name, u) in malliavin::standard_battery(&k)? {
                    out.push((format!("{}/{name}", k.name), k.clone(), u, q.clone()));
                }
            }
            Ok(out)
        }
        Some(list) => list
            .iter()
            .map(|np| {
                let k = np.kernel.build().map_err(|e| CliError::Schema(e.to_string()))?;
                let u = np.process.build()?;
                let q = match lambdas {
                    Some(l) => QSpec::new(l.clone())?,
                    None => QSpec::new(vec![1.0; u.j().max(1)])?,
                };
                Ok((np.name.clone(), k, u, q))
            })
            .collect(),
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaximalParams {
    #[serde(default)]
    processes: Option<Vec<NamedProcess>>,
    #[serde(default)]
    lambdas: Option<Vec<f64>>,
    #[serde(default = "two")]
    p: f64,
    #[serde(default = "two")]
    q: f64,
    #[serde(default = "d_max_samples")]
    n_samples: usize,
    #[serde(default = "d_max_levels")]
    levels: Vec<usize>,
    #[serde(default = "yes")]
    oracle: bool,
    #[serde(default = "d_oracle_samples")]
    oracle_samples: usize,
}

fn d_max_samples() -> usize {
    3000
}

fn d_max_levels() -> Vec<usize> {
    vec![16, 32, 64]
}

fn d_oracle_samples() -> usize {
    20_000
}

fn yes() -> bool {
    true
}

/// `u = 1_{(0,1]} e_1` with a constant functional: the running integral is a
/// Brownian motion on `[0, 1]`.
pub fn unit_deterministic_process() -> ElementaryProcess {
    let e = StepFunction::indicator(0.0, 1.0, vec![1.0]).expect("valid indicator");
    ElementaryProcess::new(vec![Term { f: CylinderFunctional::constant(1.0, e.clone()), k: vec![1.0], phi: e }]).expect("valid process")
}

/// Oracle comparison for the deterministic Wiener case at the finest level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub nodes: usize,
    pub lhs: f64,
    pub lhs_se: f64,
    pub isometry_bound: f64,
    pub oracle: f64,
    pub oracle_se: f64,
    pub z_score: f64,
    pub passed: bool,
}

pub fn maximal_oracle(p: f64, nodes: usize, n_samples: usize, seed: u64) -> crate::Result<OracleReport> {
    let k = CovarianceKernel::wiener(1.0);
    let lvl = verify::maximal_level(&unit_deterministic_process(), &k, p, 2.0, nodes, n_samples, seed)?;
    let (o, ose) = verify::random_walk_sup(nodes, 1.0, p, n_samples, seed);
    let z = stats::z_score(lvl.lhs, lvl.lhs_se, o, ose);
    let bound = lvl.mean_term;
    let lower_ok = lvl.lhs >= bound - 4.0 * lvl.lhs_se;
    Ok(OracleReport { name: "wiener/unit_oracle".into(), nodes, lhs: lvl.lhs, lhs_se: lvl.lhs_se, isometry_bound: bound, oracle: o, oracle_se: ose, z_score: z, passed: z <= 4.0 && lower_ok })
}

fn verify_maximal(p: &MaximalParams, seed: u64) -> CliResult<Outcome> {
    let mut out = Outcome::new(RATIO_HEADER.to_vec(), "maximal inequality ratio vs time-grid nodes");
    for (name, k, u, q) in battery(&p.processes, &p.lambdas)? {
        let r = verify::maximal_inequality_check(&name, &u, &k, &q, p.p, p.q, p.n_samples, seed, &p.levels)?;
        out.push_ratio(&r)?;
    }
    if p.oracle {
        let nodes = *p.levels.iter().max().ok_or_else(|| CliError::Schema("levels must not be empty".into()))?;
        let o = maximal_oracle(p.p, nodes, p.oracle_samples, seed)?;
        out.rows.push(vec![o.name.clone(), nodes.to_string(), io::fmt_f64(o.lhs / o.oracle), "0".into(), o.passed.to_string()]);
        out.reports.push(to_value(&o)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkorohodParams {
    #[serde(default)]
    processes: Option<Vec<NamedProcess>>,
    #[serde(default)]
    lambdas: Option<Vec<f64>>,
    #[serde(default = "d_sk_samples")]
    n_samples: usize,
}

fn d_sk_samples() -> usize {
    20_000
}

fn verify_skorohod(p: &SkorohodParams, seed: u64) -> CliResult<Outcome> {
    let mut out = Outcome::new(vec!["name", "kernel", "lhs", "lhs_se", "rhs", "rhs_se", "z_score", "passed"], "");
    for (name, k, u, q) in battery(&p.processes, &p.lambdas)? {
        let r = malliavin::skorohod_moment_check(&name, &u, &k, &q, p.n_samples, seed)?;
        out.rows.push(vec![
            r.name.clone(),
            r.kernel.clone(),
            io::fmt_f64(r.lhs),
            io::fmt_f64(r.lhs_se),
            io::fmt_f64(r.rhs),
            io::fmt_f64(r.rhs_se),
            io::fmt_f64(r.z_score),
            r.passed.to_string(),
        ]);
        out.reports.push(to_value(&r)?);
    }
    Ok(out)
}

// ==========================================================================
// verify-lp
// ==========================================================================

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LpCase {
    name: String,
    #[serde(default)]
    test: LpTest,
    #[serde(default = "two")]
    p: f64,
    #[serde(default = "two")]
    q: f64,
    #[serde(default = "two")]
    r: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LpParams {
    #[serde(default = "heat_phi")]
    phi: SymbolConfig,
    #[serde(default = "heat_psi")]
    psi: SymbolConfig,
    #[serde(default = "dim_one")]
    dim: usize,
    #[serde(default = "d_lp_cases")]
    cases: Vec<LpCase>,
    #[serde(default = "default_levels3")]
    levels: Vec<(usize, usize)>,
}

fn d_lp_cases() -> Vec<LpCase> {
    vec![
        LpCase { name: "scalar".into(), test: LpTest::default(), p: 2.0, q: 2.0, r: 2.0 },
        LpCase { name: "theta4".into(), test: LpTest { n_theta: 4, ..LpTest::default() }, p: 2.0, q: 2.0, r: 4.0 / 3.0 },
    ]
}

fn verify_lp(p: &LpParams) -> CliResult<Outcome> {
    let phi = p.phi.to_spec(p.dim)?;
    let psi = p.psi.to_spec(p.dim)?;
    let mut out = Outcome::new(RATIO_HEADER.to_vec(), "Littlewood-Paley ratio vs grid size");
    for c in &p.cases {
        let r = verify::lp_inequality_check(&c.name, &phi, &psi, &c.test, c.p, c.q, c.r, &p.levels)?;
        out.push_ratio(&r)?;
    }
    Ok(out)
}

// ==========================================================================
// verify-bessel
// ==========================================================================

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BesselParams {
    #[serde(default = "heat_phi")]
    phi: SymbolConfig,
    #[serde(default = "two")]
    alpha: f64,
    #[serde(default = "two")]
    p: f64,
    #[serde(default = "d_bessel_grid")]
    grid: GridSpec,
    #[serde(default = "d_bessel_count")]
    count: usize,
    #[serde(default = "d_bessel_factors")]
    factors: Vec<usize>,
}

fn d_bessel_grid() -> GridSpec {
    GridSpec { d: 1, n: 32, l: 2.0 * std::f64::consts::PI, dt_quad: None }
}

fn d_bessel_count() -> usize {
    16
}

fn d_bessel_factors() -> Vec<usize> {
    vec![1, 2, 4]
}

fn verify_bessel(p: &BesselParams, seed: u64) -> CliResult<Outcome> {
    p.grid.validate().map_err(|e| CliError::Schema(e.to_string()))?;
    if p.factors.is_empty() || p.factors.contains(&0) {
        return Err(CliError::Schema("factors must be positive and non-empty".into()));
    }
    let phi = p.phi.to_spec(p.grid.d)?;
    let base = verify::bessel_battery(&p.grid, p.count, seed);
    let mut out = Outcome::new(vec!["factor", "n", "c1_hat", "c2_hat", "passed"], "Bessel equivalence constants vs refinement");
    let (mut c1s, mut c2s) = (Vec::new(), Vec::new());
    for &f in &p.factors {
        let bat: Vec<_> = base.iter().map(|u| verify::upsample(u, f)).collect::<crate::Result<_>>()?;
        let r = verify::bessel_equivalence_check(&phi, p.alpha, p.p, &bat)?;
        out.rows.push(vec![f.to_string(), (p.grid.n * f).to_string(), io::fmt_f64(r.c1_hat), io::fmt_f64(r.c2_hat), r.passed.to_string()]);
        c1s.push(((p.grid.n * f) as f64, r.c1_hat));
        c2s.push(((p.grid.n * f) as f64, r.c2_hat));
        let mut v = to_value(&r)?;
        v["factor"] = json!(f);
        out.reports.push(v);
    }
    let drift = stats::max_relative_drift(&c1s.iter().map(|x| x.1).collect::<Vec<_>>())
        .max(stats::max_relative_drift(&c2s.iter().map(|x| x.1).collect::<Vec<_>>()));
    out.reports.push(json!({ "name": "refinement", "drift": drift, "passed": drift < verify::DRIFT_TOL }));
    out.plot.push(("c1_hat".into(), c1s));
    out.plot.push(("c2_hat".into(), c2s));
    Ok(out)
}

// ==========================================================================
// verify-multiplier
// ==========================================================================

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CheckKind {
    Mihlin,
    Marcinkiewicz,
    Hormander,
    ClassM,
    ClassS,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiplierCase {
    name: String,
    symbol: SymbolConfig,
    dim: usize,
    check: CheckKind,
    #[serde(default = "yes")]
    expect_pass: bool,
    #[serde(default = "d_budget")]
    budget: usize,
    #[serde(default = "d_points")]
    points: usize,
    #[serde(default = "d_max_order")]
    max_order: usize,
    #[serde(default = "d_t_samples")]
    t_samples: Vec<f64>,
}

fn d_budget() -> usize {
    10_000
}

fn d_points() -> usize {
    24
}

fn d_max_order() -> usize {
    2
}

fn d_t_samples() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5, 2.0]
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiplierParams {
    #[serde(default = "default_multiplier_cases")]
    cases: Vec<MultiplierCase>,
}

fn case(name: String, symbol: SymbolConfig, dim: usize, check: CheckKind, expect_pass: bool) -> MultiplierCase {
    MultiplierCase { name, symbol, dim, check, expect_pass, budget: d_budget(), points: d_points(), max_order: d_max_order(), t_samples: d_t_samples() }
}

/// Exponent pairs `(s, t)` with `s ≥ t ≥ 0` for the resolvent-type multipliers.
pub const MULTIPLIER_PAIRS: [(f64, f64); 4] = [(0.5, 0.0), (1.0, 0.5), (1.0, 1.0), (2.0, 1.0)];

fn default_multiplier_cases() -> Vec<MultiplierCase> {
    let sq = || Box::new(sym("power", 2.0));
    let mut v = Vec::new();
    for (s, t) in MULTIPLIER_PAIRS {
        let m1 = SymbolConfig { base: Some(sq()), s: Some(s), ..SymbolConfig::named("resolvent_power") };
        let m2 = SymbolConfig { phi: Some(sq()), psi: Some(sq()), s: Some(s), t: Some(t), ..SymbolConfig::named("ratio_power") };
        let m3 = SymbolConfig { phi: Some(sq()), psi: Some(sq()), s: Some(s), t: Some(t), ..SymbolConfig::named("mixed_ratio") };
        v.push(case(format!("m1(s={s},t={t})"), m1, 2, CheckKind::Mihlin, true));
        v.push(case(format!("m2(s={s},t={t})"), m2, 2, CheckKind::Mihlin, true));
        v.push(case(format!("m3(s={s},t={t})"), m3, 2, CheckKind::Mihlin, true));
    }
    let pr = SymbolConfig { exponents: Some(vec![1.0, 1.0]), ..SymbolConfig::named("product_ratio") };
    v.push(case("product_ratio".into(), pr, 2, CheckKind::Marcinkiewicz, true));
    let xi1 = SymbolConfig { index: Some(0), ..SymbolConfig::named("coordinate") };
    v.push(case("xi1".into(), xi1.clone(), 2, CheckKind::Mihlin, false));
    v.push(case("xi1_marcinkiewicz".into(), xi1, 2, CheckKind::Marcinkiewicz, false));
    v.push(case("log1p".into(), SymbolConfig::named("log1p"), 1, CheckKind::Mihlin, false));
    v
}

fn verify_multiplier(p: &MultiplierParams) -> CliResult<Outcome> {
    let opts = CheckOptions::default();
    let mut out = Outcome::new(vec!["name", "check", "worst_constant", "condition_passed", "expected", "passed"], "");
    for c in &p.cases {
        let spec: SymbolSpec = c.symbol.to_spec(c.dim)?;
        let r = match c.check {
            CheckKind::Mihlin => symbols::check_mihlin(&spec, None, &opts)?,
            CheckKind::Marcinkiewicz => symbols::check_marcinkiewicz(&spec, c.budget, &opts)?,
            CheckKind::Hormander => symbols::check_hormander(&spec, c.points, &opts)?,
            CheckKind::ClassM => symbols::check_class_m(&spec, None, c.max_order, &opts)?,
            CheckKind::ClassS => symbols::check_class_s(&spec, &c.t_samples, None, &opts)?,
        };
        let ok = r.passed == c.expect_pass;
        out.rows.push(vec![
            c.name.clone(),
            to_value(&c.check)?.as_str().unwrap_or_default().to_string(),
            io::fmt_f64(r.worst_constant),
            r.passed.to_string(),
            c.expect_pass.to_string(),
            ok.to_string(),
        ]);
        out.reports.push(json!({ "name": c.name, "expect_pass": c.expect_pass, "report": to_value(&r)?, "passed": ok }));
    }
    Ok(out)
}

// ==========================================================================
// verify-kernelenv / verify-goperator
// ==========================================================================

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelEnvParams {
    #[serde(default = "heat_phi")]
    phi: SymbolConfig,
    #[serde(default = "heat_psi")]
    psi: SymbolConfig,
    #[serde(default = "d_taus")]
    taus: Vec<f64>,
    #[serde(default = "d_env_grid")]
    grid: GridSpec,
}

fn d_taus() -> Vec<f64> {
    vec![0.1, 0.2, 0.4]
}

fn d_env_grid() -> GridSpec {
    GridSpec { d: 1, n: 256, l: 16.0, dt_quad: None }
}

fn verify_kernelenv(p: &KernelEnvParams) -> CliResult<Outcome> {
    p.grid.validate().map_err(|e| CliError::Schema(e.to_string()))?;
    let phi = p.phi.to_spec(p.grid.d)?;
    let psi = p.psi.to_spec(p.grid.d)?;
    let r = verify::kernel_envelope_check(&phi, &psi, &p.taus, &p.grid)?;
    let mut out = Outcome::new(vec!["tau", "c_kernel", "c_gradient", "c_time_derivative"], "fitted envelope constants vs t - s");
    for (i, t) in r.taus.iter().enumerate() {
        out.rows.push(vec![io::fmt_f64(*t), io::fmt_f64(r.constants[0][i]), io::fmt_f64(r.constants[1][i]), io::fmt_f64(r.constants[2][i])]);
    }
    for (label, row) in ["kernel", "gradient", "time_derivative"].iter().zip(&r.constants) {
        out.plot.push((label.to_string(), r.taus.iter().cloned().zip(row.iter().cloned()).collect()));
    }
    out.reports.push(to_value(&r)?);
    Ok(out)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GOperatorParams {
    #[serde(default = "heat_phi")]
    phi: SymbolConfig,
    #[serde(default = "heat_psi")]
    psi: SymbolConfig,
    #[serde(default = "dim_one")]
    dim: usize,
    #[serde(default = "two")]
    p: f64,
    #[serde(default = "d_g_l", rename = "L")]
    l: f64,
    #[serde(default = "d_g_levels")]
    levels: Vec<(usize, usize)>,
    #[serde(default = "verify::default_g_battery")]
    battery: Vec<GTest>,
}

fn d_g_l() -> f64 {
    16.0
}

fn d_g_levels() -> Vec<(usize, usize)> {
    vec![(32, 64), (64, 128), (128, 256)]
}

fn verify_goperator(p: &GOperatorParams) -> CliResult<Outcome> {
    let phi = p.phi.to_spec(p.dim)?;
    let psi = p.psi.to_spec(p.dim)?;
    let r = verify::g_operator_check(&phi, &psi, &p.battery, p.p, p.l, &p.levels)?;
    let mut out = Outcome::new(RATIO_HEADER.to_vec(), "operator norm ratio vs grid size");
    out.push_ratio(&r)?;
    Ok(out)
}

// ==========================================================================
// verify-apriori
// ==========================================================================

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AprioriCase {
    name: String,
    problem: ProblemConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AprioriParams {
    #[serde(default = "d_apriori_cases")]
    configs: Vec<AprioriCase>,
    #[serde(default = "default_levels3")]
    levels: Vec<(usize, usize)>,
    #[serde(default = "d_apriori_samples")]
    n_samples: usize,
    #[serde(default = "d_apriori_refine")]
    refine: usize,
}

fn d_apriori_cases() -> Vec<AprioriCase> {
    let fbm = KernelConfig { h: Some(0.75), ..KernelConfig::named("fbm") };
    vec![
        AprioriCase { name: "heat/wiener".into(), problem: verify::heat_apriori_config(KernelConfig::named("wiener")) },
        AprioriCase { name: "heat/fbm(0.75)".into(), problem: verify::heat_apriori_config(fbm) },
    ]
}

fn d_apriori_samples() -> usize {
    400
}

fn d_apriori_refine() -> usize {
    4
}

fn verify_apriori(p: &AprioriParams, seed: u64) -> CliResult<Outcome> {
    let mut out = Outcome::new(RATIO_HEADER.to_vec(), "a-priori ratio vs grid size");
    for c in &p.configs {
        let r = verify::apriori_estimate_check(&c.name, &c.problem, &p.levels, p.n_samples, seed, p.refine)?;
        out.push_ratio(&r)?;
    }
    Ok(out)
}

// ==========================================================================
// kernels
// ==========================================================================

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelsParams {}

fn kernels(_: &KernelsParams) -> CliResult<Outcome> {
    let mut out = Outcome::new(vec!["kernel", "r", "s", "c_r", "singular_density"], "");
    for k in builtin_summaries() {
        let s = if k.s_exp.is_infinite() { "inf".to_string() } else { io::fmt_f64(k.s_exp) };
        out.rows.push(vec![
            k.kernel.clone(),
            io::fmt_f64(k.r_exp),
            s,
            k.c_r.map(io::fmt_f64).unwrap_or_default(),
            k.singular_density.to_string(),
        ]);
        let mut v = to_value(&k)?;
        v["passed"] = json!(true);
        out.reports.push(v);
    }
    Ok(out)
}
