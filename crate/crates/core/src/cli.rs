//! Command-line front end: instance generation, solver runs, sweeps and
//! verification reports driven by a JSON experiment file.
//!
//! ```text
//! demix generate|run|sweep|verify --config <file> [--seed N] [--out DIR] [--check NAME]
//! ```
//!
//! Exit codes: 0 success, 1 divergence or failed verification, 2 usage error.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand_core::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::DemixError;
use crate::io;
use crate::problem::{Dimensions, ProblemInstance};
use crate::rng::{self, Domain};
use crate::solver::{self, RunOutput, SolverConfig};
use crate::verify::{self, RscParams, VerifyReport};

pub const SCHEMA_VERSION: u32 = 1;

pub const TRAJECTORY_COLUMNS: [&str; 8] =
    ["iter", "loss", "relative_error", "dist", "inc_a", "inc_b", "max_alignment_ratio", "error"];

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "s",
    "m",
    "K",
    "kappa",
    "sigma",
    "seed",
    "snr_db",
    "iterations",
    "final_loss",
    "final_relative_error",
    "final_dist",
    "error",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    /// A run diverged or a verification check did not pass; outputs were written.
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Demix(#[from] DemixError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Demix(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "demix", version, about = "Blind demixing by regularization-free Wirtinger flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write instance files (binary plus JSON metadata) for every job.
    Generate(CommonArgs),
    /// Solve every job and write one trajectory CSV per job.
    Run(CommonArgs),
    /// Like `run`, plus a summary CSV with one row per job.
    Sweep(CommonArgs),
    /// Run a verification check and write one JSON report per seed.
    Verify(CommonArgs),
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the configured seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replaces the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Verification check: rsc, loo or spectral.
    #[arg(long)]
    pub check: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Convergence,
    ConditionNumber,
    NoiseSweep,
    Incoherence,
    VerifyRsc,
    VerifyLoo,
    VerifySpectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Rsc,
    Loo,
    Spectral,
}

impl Check {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name.strip_prefix("verify_").unwrap_or(name) {
            "rsc" => Ok(Check::Rsc),
            "loo" => Ok(Check::Loo),
            "spectral" => Ok(Check::Spectral),
            _ => Err(CliError::Usage(format!("unknown check {name:?}; expected rsc, loo or spectral"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Check::Rsc => "verify_rsc",
            Check::Loo => "verify_loo",
            Check::Spectral => "verify_spectral",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LooSettings {
    /// Number of held-out measurement indices, drawn without replacement.
    #[serde(default = "default_l_count")]
    pub l_count: usize,
    /// Pass threshold as a fraction of `dist(z^0, z^nat)`.
    #[serde(default = "default_loo_ratio")]
    pub ratio: f64,
}

fn default_l_count() -> usize {
    8
}

fn default_loo_ratio() -> f64 {
    0.1
}

impl Default for LooSettings {
    fn default() -> Self {
        Self { l_count: default_l_count(), ratio: default_loo_ratio() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSettings {
    pub m_values: Vec<usize>,
    pub trials: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySettings {
    #[serde(default)]
    pub rsc: Option<RscParams>,
    #[serde(default)]
    pub loo: Option<LooSettings>,
    #[serde(default)]
    pub spectral: Option<SpectralSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub dims: OneOrMany<Dimensions>,
    pub eta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: OneOrMany<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: OneOrMany<f64>,
    pub max_iters: usize,
    #[serde(default)]
    pub stop_tol: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Solve this stored instance instead of generating one per job.
    #[serde(default)]
    pub instance: Option<PathBuf>,
    #[serde(default)]
    pub verify: VerifySettings,
}

fn default_kappa() -> OneOrMany<f64> {
    OneOrMany::One(1.0)
}

fn default_sigma() -> OneOrMany<f64> {
    OneOrMany::One(0.0)
}

fn default_record_every() -> usize {
    1
}

/// One point of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub dims: Dimensions,
    pub kappa: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Job {
    pub fn tag(&self) -> String {
        let Dimensions { s, m, k } = self.dims;
        format!("s{s}_m{m}_K{k}_kappa{}_sigma{}_seed{}", self.kappa, self.sigma, self.seed)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        if self.schema_version != SCHEMA_VERSION {
            return usage(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.seeds.is_empty() {
            return usage("seeds must be nonempty".into());
        }
        let dims = self.dims.to_vec();
        if dims.is_empty() || self.kappa.to_vec().is_empty() || self.sigma.to_vec().is_empty() {
            return usage("sweep lists must be nonempty".into());
        }
        for d in &dims {
            d.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        for &kappa in &self.kappa.to_vec() {
            if !(kappa >= 1.0) || !kappa.is_finite() {
                return usage(format!("kappa must be >= 1, got {kappa}"));
            }
            if kappa != 1.0 && dims.iter().any(|d| d.s == 1) {
                return usage("kappa != 1 needs at least two sources".into());
            }
        }
        if self.sigma.to_vec().iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return usage("sigma must be finite and >= 0".into());
        }
        self.solver_config(0).validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn solver_config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            eta: self.eta,
            max_iters: self.max_iters,
            stop_tol: self.stop_tol,
            record_every: self.record_every,
            seed,
        }
    }

    /// Cartesian product of dims, kappa, sigma and seeds, in that nesting order.
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for dims in self.dims.to_vec() {
            for kappa in self.kappa.to_vec() {
                for sigma in self.sigma.to_vec() {
                    for &seed in &self.seeds {
                        jobs.push(Job { dims, kappa, sigma, seed });
                    }
                }
            }
        }
        jobs
    }

    fn apply_overrides(&mut self, args: &CommonArgs) {
        if let Some(seed) = args.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &args.out {
            self.output_dir = out.clone();
        }
    }

    fn instance_for(&self, job: &Job) -> Result<ProblemInstance, CliError> {
        match &self.instance {
            Some(path) => Ok(io::load_instance(path)?),
            None => Ok(ProblemInstance::generate(job.dims, job.kappa, job.sigma, job.seed)?),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn error_code(e: &DemixError) -> &'static str {
    match e {
        DemixError::Diverged { .. } => "diverged",
        DemixError::DegenerateIterate { .. } => "degenerate_iterate",
        DemixError::NoConvergence => "no_convergence",
        _ => "error",
    }
}

/// Trajectory CSV text. A failed run ends with a row carrying the error code.
pub fn trajectory_csv(out: Option<&RunOutput>, err: Option<&DemixError>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_COLUMNS)?;
    let records = out.map(|o| o.trajectory.as_slice()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.iter.to_string(),
            fmt_f64(r.loss),
            opt(r.relative_error),
            opt(r.dist),
            opt(r.incoherence_a),
            opt(r.incoherence_b),
            opt(r.max_alignment_ratio()),
            String::new(),
        ])?;
    }
    if let Some(e) = err {
        let (iter, loss) = match e {
            DemixError::Diverged { iter, loss } => (iter.to_string(), fmt_f64(*loss)),
            _ => (out.map(|o| o.iterations.to_string()).unwrap_or_default(), String::new()),
        };
        w.write_record([iter, loss, String::new(), String::new(), String::new(), String::new(), String::new(), error_code(e).into()])?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = w.into_inner().map_err(|e| CliError::Demix(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

struct JobResult {
    job: Job,
    snr_db: Option<f64>,
    out: Option<RunOutput>,
    err: Option<DemixError>,
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    prepare_dir(&cfg.output_dir)?;
    cfg.jobs()
        .par_iter()
        .map(|job| {
            let inst = ProblemInstance::generate(job.dims, job.kappa, job.sigma, job.seed)?;
            let path = cfg.output_dir.join(format!("instance_{}.bin", job.tag()));
            io::save_instance(&inst, &path)?;
            Ok(path)
        })
        .collect()
}

fn solve_all(cfg: &ExperimentConfig) -> Result<Vec<JobResult>, CliError> {
    cfg.validate()?;
    prepare_dir(&cfg.output_dir)?;
    let mut jobs = cfg.jobs();
    if cfg.instance.is_some() {
        jobs.truncate(1);
    }
    let results: Vec<Result<JobResult, CliError>> = jobs
        .par_iter()
        .map(|job| {
            let inst = cfg.instance_for(job)?;
            let job = Job { dims: inst.dims, sigma: inst.sigma, seed: inst.seed, kappa: job.kappa };
            let (out, err) = solver::run_partial(&inst, &cfg.solver_config(job.seed));
            let csv = trajectory_csv(out.as_ref(), err.as_ref())?;
            fs::write(cfg.output_dir.join(format!("traj_{}.csv", job.tag())), csv)?;
            Ok(JobResult { job, snr_db: inst.snr_db().ok(), out, err })
        })
        .collect();
    results.into_iter().collect()
}

fn failures(results: &[JobResult]) -> Option<CliError> {
    let failed: Vec<String> =
        results.iter().filter_map(|r| r.err.as_ref().map(|e| format!("{}: {e}", r.job.tag()))).collect();
    (!failed.is_empty()).then(|| CliError::Failed(failed.join("; ")))
}

/// Writes one trajectory CSV per job; returns their paths.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let results = solve_all(cfg)?;
    if let Some(e) = failures(&results) {
        return Err(e);
    }
    Ok(results.iter().map(|r| cfg.output_dir.join(format!("traj_{}.csv", r.job.tag()))).collect())
}

fn summary_csv(results: &[JobResult]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS)?;
    for r in results {
        let last = r.out.as_ref().and_then(|o| o.trajectory.last());
        let cell = |v: Option<f64>| opt(v);
        w.write_record([
            r.job.dims.s.to_string(),
            r.job.dims.m.to_string(),
            r.job.dims.k.to_string(),
            r.job.kappa.to_string(),
            r.job.sigma.to_string(),
            r.job.seed.to_string(),
            cell(r.snr_db),
            r.out.as_ref().map(|o| o.iterations.to_string()).unwrap_or_default(),
            cell(last.map(|l| l.loss)),
            cell(last.and_then(|l| l.relative_error)),
            cell(last.and_then(|l| l.dist)),
            r.err.as_ref().map(|e| error_code(e).to_string()).unwrap_or_default(),
        ])?;
    }
    into_string(w)
}

/// Trajectory CSVs plus `summary.csv`; returns the summary path.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let results = solve_all(cfg)?;
    let path = cfg.output_dir.join("summary.csv");
    fs::write(&path, summary_csv(&results)?)?;
    match failures(&results) {
        Some(e) => Err(e),
        None => Ok(path),
    }
}

/// `count` distinct indices below `m`, sorted.
pub fn held_out_indices(m: usize, count: usize, seed: u64) -> Vec<usize> {
    let count = count.min(m);
    let mut r = rng::stream(seed, Domain::Verify, u64::from(u32::MAX));
    let mut pool: Vec<usize> = (0..m).collect();
    for n in 0..count {
        let pick = n + (r.next_u64() % (m - n) as u64) as usize;
        pool.swap(n, pick);
    }
    let mut out = pool[..count].to_vec();
    out.sort_unstable();
    out
}

pub fn run_check(cfg: &ExperimentConfig, check: Check, seed: u64) -> Result<VerifyReport, CliError> {
    let dims = cfg.dims.to_vec()[0];
    let kappa = cfg.kappa.to_vec()[0];
    let sigma = cfg.sigma.to_vec()[0];
    let report = match check {
        Check::Rsc => {
            let inst = ProblemInstance::generate(dims, kappa, sigma, seed)?;
            verify::rsc_report(&inst, &cfg.verify.rsc.unwrap_or_default(), seed)?
        }
        Check::Loo => {
            let inst = ProblemInstance::generate(dims, kappa, sigma, seed)?;
            let loo = cfg.verify.loo.clone().unwrap_or_default();
            let l_set = held_out_indices(dims.m, loo.l_count, seed);
            verify::loo_report(&inst, &cfg.solver_config(seed), &l_set, loo.ratio)?
        }
        Check::Spectral => {
            let sp = cfg
                .verify
                .spectral
                .clone()
                .ok_or_else(|| CliError::Usage("verify_spectral needs verify.spectral settings".into()))?;
            verify::spectral_report(dims.s, dims.k, &sp.m_values, sigma, sp.trials, seed)?
        }
    };
    Ok(report)
}

/// One JSON report per seed; fails when any report does not pass.
pub fn cmd_verify(cfg: &ExperimentConfig, check: Option<&str>) -> Result<Vec<VerifyReport>, CliError> {
    let check = match check {
        Some(name) => Check::parse(name)?,
        None => match cfg.experiment {
            Experiment::VerifyRsc => Check::Rsc,
            Experiment::VerifyLoo => Check::Loo,
            Experiment::VerifySpectral => Check::Spectral,
            other => return Err(CliError::Usage(format!("experiment {other:?} is not a verification check; pass --check"))),
        },
    };
    cfg.validate()?;
    prepare_dir(&cfg.output_dir)?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let report = run_check(cfg, check, seed)?;
        let path = cfg.output_dir.join(format!("{}_seed{seed}.json", check.name()));
        fs::write(path, serde_json::to_string_pretty(&report).map_err(DemixError::from)? + "\n")?;
        reports.push(report);
    }
    let failed: Vec<String> = reports.iter().filter(|r| !r.pass).map(|r| format!("seed {}", r.seed)).collect();
    if !failed.is_empty() {
        return Err(CliError::Failed(format!("{} did not pass for {}", check.name(), failed.join(", "))));
    }
    Ok(reports)
}

/// Sizes the global rayon pool from `DEMIX_THREADS` (unset or 0 means automatic).
pub fn configure_threads() -> Result<(), CliError> {
    match std::env::var("DEMIX_THREADS") {
        Ok(value) => configure_threads_from(&value),
        Err(_) => Ok(()),
    }
}

fn configure_threads_from(value: &str) -> Result<(), CliError> {
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("DEMIX_THREADS must be a nonnegative integer, got {value:?}")))?;
    if n > 0 {
        // A pool may already exist when embedded; keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn report_line(msg: impl Display) {
    println!("{msg}");
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (Command::Generate(args) | Command::Run(args) | Command::Sweep(args) | Command::Verify(args)) = &cli.command;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply_overrides(args);
    match &cli.command {
        Command::Generate(_) => {
            for p in cmd_generate(&cfg)? {
                report_line(p.display());
            }
        }
        Command::Run(_) => {
            for p in cmd_run(&cfg)? {
                report_line(p.display());
            }
        }
        Command::Sweep(_) => report_line(cmd_sweep(&cfg)?.display()),
        Command::Verify(_) => {
            for r in cmd_verify(&cfg, args.check.as_deref())? {
                report_line(format!("{} seed {}: {}", r.check, r.seed, if r.pass { "pass" } else { "fail" }));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("demix: {e}");
            e.exit_code()
        }
    }
}
