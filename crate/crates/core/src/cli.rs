//! Experiment runner: resolves a run configuration from flags and/or a JSON
//! config file, drives a full run and writes its artifacts.
//!
//! Artifacts written to the output directory:
//!
//! - `record.csv`: one row per epoch (see [`crate::harness::RECORD_HEADER`])
//! - `eigen.csv`: square-root covariance spectra of three logged kernels
//! - `incumbents.txt`: one line per kernel, `x_1 .. x_n f_1 f_2`
//! - `archive.txt`: the non-dominated archive, one `f_1 f_2` line per point
//! - `metadata.json`: resolved config, derived seeds, offsets, accounting

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cma::CmaParams;
use crate::error::{invalid, Error, Result};
use crate::harness::{problem_key, record_run, update_offsets, GapOffsets, OffsetStore, Recorder};
use crate::hv::ReferencePoint;
use crate::problems::{make_problem, true_front_value, DiagonalKind, DiagonalSpec, ProblemClass, RotationSeeds};
use crate::sofomore::{Sofomore, SofomoreConfig, UpdateMode};

pub const OUTPUT_DIR_ENV: &str = "COMOCMA_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "comocma-out";
const DEFAULT_EVALS_PER_KERNEL: u64 = 10_000;
const BENCHMARK_REFERENCE: [f64; 2] = [1.1, 1.1];

pub const RECORD_FILE: &str = "record.csv";
pub const EIGEN_FILE: &str = "eigen.csv";
pub const INCUMBENTS_FILE: &str = "incumbents.txt";
pub const ARCHIVE_FILE: &str = "archive.txt";
pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Sep,
    One,
    Two,
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sep" => Ok(Self::Sep),
            "one" => Ok(Self::One),
            "two" => Ok(Self::Two),
            _ => Err(format!("unknown problem class {s:?} (expected sep, one or two)")),
        }
    }
}

impl FromStr for DiagonalKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "elli" => Ok(Self::Elli),
            "cigtab" => Ok(Self::Cigtab),
            _ => Err(format!("unknown diagonal {s:?} (expected sphere, elli or cigtab)")),
        }
    }
}

impl FromStr for UpdateMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "postponed" => Ok(Self::Postponed),
            _ => Err(format!("unknown mode {s:?} (expected sequential or postponed)")),
        }
    }
}

/// Box bound given either as one scalar for every coordinate or per
/// coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Bound {
    fn from_values(v: Vec<f64>) -> Self {
        if v.len() == 1 {
            Bound::Scalar(v[0])
        } else {
            Bound::Vector(v)
        }
    }

    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Bound::Scalar(v) => Ok(vec![*v; n]),
            Bound::Vector(v) if v.len() == n => Ok(v.clone()),
            Bound::Vector(v) => Err(invalid(format!("bound has {} entries, expected 1 or {n}", v.len()))),
        }
    }
}

/// Every field optional; used for config files and for flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub problem: Option<ProblemKind>,
    pub k: Option<usize>,
    pub diag: Option<DiagonalKind>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub sigma0: Option<f64>,
    pub lower: Option<Bound>,
    pub upper: Option<Bound>,
    #[serde(rename = "ref")]
    pub reference: Option<[f64; 2]>,
    pub budget: Option<u64>,
    pub seed: Option<u64>,
    pub mode: Option<UpdateMode>,
    pub lambda: Option<usize>,
    pub workers: Option<usize>,
    pub rotation_seeds: Option<[u64; 2]>,
    pub out: Option<PathBuf>,
}

impl PartialConfig {
    /// Fields set in `other` win.
    pub fn merge(mut self, other: PartialConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(problem, k, diag, n, p, sigma0, lower, upper, reference, budget, seed, mode, lambda, workers, rotation_seeds, out);
        self
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let need = |name: &str| invalid(format!("missing required setting --{name}"));
        let problem = self.problem.ok_or_else(|| need("problem"))?;
        let n = self.n.ok_or_else(|| need("n"))?;
        let p = self.p.ok_or_else(|| need("p"))?;
        let k = match problem {
            ProblemKind::Sep => Some(self.k.unwrap_or(1)),
            _ => None,
        };
        let lower = self.lower.ok_or_else(|| need("lower"))?;
        let upper = self.upper.ok_or_else(|| need("upper"))?;
        let config = RunConfig {
            problem,
            k,
            diag: self.diag.ok_or_else(|| need("diag"))?,
            n,
            p,
            sigma0: self.sigma0.ok_or_else(|| need("sigma0"))?,
            lower: Bound::from_values(lower.resolve(n)?),
            upper: Bound::from_values(upper.resolve(n)?),
            reference: self.reference.unwrap_or(BENCHMARK_REFERENCE),
            budget: self.budget.unwrap_or(DEFAULT_EVALS_PER_KERNEL * p as u64),
            seed: self.seed.unwrap_or(1),
            mode: self.mode.unwrap_or_default(),
            lambda: self.lambda,
            workers: self.workers.unwrap_or(1),
            rotation_seeds: self.rotation_seeds.unwrap_or([1, 2]),
            out: self.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub k: Option<usize>,
    pub diag: DiagonalKind,
    pub n: usize,
    pub p: usize,
    pub sigma0: f64,
    pub lower: Bound,
    pub upper: Bound,
    #[serde(rename = "ref")]
    pub reference: [f64; 2],
    /// Total objective evaluations.
    pub budget: u64,
    pub seed: u64,
    pub mode: UpdateMode,
    pub lambda: Option<usize>,
    pub workers: usize,
    pub rotation_seeds: [u64; 2],
    pub out: PathBuf,
}

impl RunConfig {
    pub fn class(&self) -> ProblemClass {
        match self.problem {
            ProblemKind::Sep => ProblemClass::SepK(self.k.unwrap_or(1)),
            ProblemKind::One => ProblemClass::One,
            ProblemKind::Two => ProblemClass::Two,
        }
    }

    pub fn rotation_seeds(&self) -> RotationSeeds {
        RotationSeeds {
            first: self.rotation_seeds[0],
            second: self.rotation_seeds[1],
        }
    }

    pub fn reference_point(&self) -> Result<ReferencePoint> {
        ReferencePoint::new(self.reference[0], self.reference[1])
    }

    pub fn validate(&self) -> Result<()> {
        DiagonalSpec::new(self.diag, self.n)?;
        if let ProblemClass::SepK(k) = self.class() {
            if k < 1 || k > self.n {
                return Err(invalid(format!("--k {k} outside 1..={}", self.n)));
            }
        }
        if self.p < 1 {
            return Err(invalid("--p must be at least 1"));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(invalid(format!("--sigma0 {} must be positive", self.sigma0)));
        }
        let lower = self.lower.resolve(self.n)?;
        let upper = self.upper.resolve(self.n)?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(invalid("--lower must be strictly below --upper"));
        }
        self.reference_point()?;
        if let Some(l) = self.lambda {
            CmaParams::new(self.n, Some(l))?;
        }
        if self.workers < 1 {
            return Err(invalid("--workers must be at least 1"));
        }
        Ok(())
    }

    pub fn sofomore_config(&self) -> Result<SofomoreConfig> {
        let mut c = SofomoreConfig::new(
            self.p,
            self.sigma0,
            self.lower.resolve(self.n)?,
            self.upper.resolve(self.n)?,
            self.reference_point()?,
            self.seed,
        );
        c.mode = self.mode;
        c.lambda = self.lambda;
        c.workers = self.workers;
        Ok(c)
    }

    /// Key under which gap offsets are stored for this configuration.
    pub fn offsets_key(&self, problem_name: &str) -> Result<String> {
        let rotated = self.diag != DiagonalKind::Sphere && !matches!(self.problem, ProblemKind::Sep);
        let name = if rotated {
            format!("{problem_name}[rot{},{}]", self.rotation_seeds[0], self.rotation_seeds[1])
        } else {
            problem_name.to_string()
        };
        Ok(problem_key(&name, self.n, self.p, &self.reference_point()?))
    }
}

/// Where gap offsets come from.
#[derive(Debug, Clone)]
pub enum OffsetPolicy {
    /// Bootstrap from this run only.
    InMemory,
    /// Merge with (and update) a persisted store.
    Store(PathBuf),
    /// Use exactly these offsets.
    Fixed(GapOffsets),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSettings {
    pub problem_name: String,
    pub problem_key: String,
    pub lambda: usize,
    pub mu: usize,
    pub evaluations_per_step: u64,
    pub kernel_seeds: Vec<u64>,
    pub logged_kernels: Vec<usize>,
    pub budget_per_kernel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: usize,
    pub eval_count: u64,
    pub evals_per_kernel: f64,
    pub kernel_steps: u64,
    pub problem_evaluations: u64,
    pub final_hv: f64,
    pub final_hvarchive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: RunConfig,
    pub resolved: ResolvedSettings,
    pub offsets: GapOffsets,
    pub summary: RunSummary,
    pub notes: Vec<String>,
}

/// In-memory contents of every artifact file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub record_csv: String,
    pub eigen_csv: String,
    pub incumbents: String,
    pub archive: String,
    pub metadata: Metadata,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs the experiment described by `config` without touching the output
/// directory.
pub fn execute(config: &RunConfig, policy: &OffsetPolicy) -> Result<Artifacts> {
    config.validate()?;
    let class = config.class();
    let problem = make_problem(class, DiagonalSpec::new(config.diag, config.n)?, config.rotation_seeds())?;
    let problem_name = problem.name().to_string();
    let mut state = Sofomore::new(problem, &config.sofomore_config()?)?;
    let mut recorder = Recorder::new(config.p, config.seed, true);
    let logged_kernels = recorder.logged_kernels().to_vec();
    let epochs = record_run(&mut state, config.budget, &mut recorder)?;
    let mut record = recorder.finish();

    let key = config.offsets_key(&problem_name)?;
    let analytic = if config.reference == BENCHMARK_REFERENCE {
        true_front_value(class)
    } else {
        None
    };
    let mut notes = Vec::new();
    if analytic.is_none() {
        notes.push("hvarchive_max is the best archive hypervolume observed (no closed form available)".to_string());
    }
    let (observed_hv, observed_archive) = (record.max_hv(), record.max_hvarchive());
    let offsets = match policy {
        OffsetPolicy::Fixed(o) => o.clone(),
        OffsetPolicy::InMemory => {
            update_offsets(&mut OffsetStore::default(), &key, observed_hv, observed_archive, analytic)
        }
        OffsetPolicy::Store(path) => {
            let mut store = OffsetStore::load(path).unwrap_or_else(|e| {
                eprintln!("warning: {e}; continuing with in-memory offsets");
                OffsetStore::default()
            });
            let o = update_offsets(&mut store, &key, observed_hv, observed_archive, analytic);
            if let Err(e) = store.save(path) {
                eprintln!("warning: {e}; offsets not persisted");
            }
            o
        }
    };
    record.apply_offsets(&offsets);

    let mut incumbents = String::new();
    for (x, f) in state.incumbents().iter().zip(state.incumbent_objectives()) {
        let mut fields: Vec<String> = x.iter().map(|v| fmt17(*v)).collect();
        fields.push(fmt17(f.f1()));
        fields.push(fmt17(f.f2()));
        let _ = writeln!(incumbents, "{}", fields.join(" "));
    }
    let mut archive = String::new();
    for f in state.archive().iter() {
        let _ = writeln!(archive, "{} {}", fmt17(f.f1()), fmt17(f.f2()));
    }

    let kernel = &state.kernels()[0];
    let metadata = Metadata {
        config: config.clone(),
        resolved: ResolvedSettings {
            problem_name,
            problem_key: key,
            lambda: kernel.lambda(),
            mu: kernel.params().mu,
            evaluations_per_step: state.evaluations_per_step(),
            kernel_seeds: state.kernel_seeds().to_vec(),
            logged_kernels,
            budget_per_kernel: config.budget as f64 / config.p as f64,
        },
        offsets,
        summary: RunSummary {
            epochs,
            eval_count: state.eval_count(),
            evals_per_kernel: state.eval_count() as f64 / config.p as f64,
            kernel_steps: state.kernel_steps(),
            problem_evaluations: state.problem().evaluation_count(),
            final_hv: state.incumbent_front().hypervolume(),
            final_hvarchive: state.archive().hypervolume(),
        },
        notes,
    };

    Ok(Artifacts {
        record_csv: record.to_csv(),
        eigen_csv: record.eigen_csv(),
        incumbents,
        archive,
        metadata,
    })
}

pub fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(RECORD_FILE), &artifacts.record_csv)?;
    std::fs::write(dir.join(EIGEN_FILE), &artifacts.eigen_csv)?;
    std::fs::write(dir.join(INCUMBENTS_FILE), &artifacts.incumbents)?;
    std::fs::write(dir.join(ARCHIVE_FILE), &artifacts.archive)?;
    let meta = serde_json::to_string_pretty(&artifacts.metadata)?;
    std::fs::write(dir.join(METADATA_FILE), meta + "\n")?;
    Ok(())
}

/// Runs `config` and writes all artifacts into `config.out`.
pub fn run_experiment(config: &RunConfig, policy: &OffsetPolicy) -> Result<Artifacts> {
    let artifacts = execute(config, policy)?;
    write_artifacts(&config.out, &artifacts)?;
    Ok(artifacts)
}

pub fn read_metadata(dir: &Path) -> Result<Metadata> {
    let text = std::fs::read_to_string(dir.join(METADATA_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Re-runs the experiment recorded in `dir` from its metadata and checks
/// that every artifact is reproduced byte for byte.
pub fn replay_check(dir: &Path) -> Result<bool> {
    let metadata = read_metadata(dir)?;
    let on_disk = [RECORD_FILE, EIGEN_FILE, INCUMBENTS_FILE, ARCHIVE_FILE]
        .map(|name| std::fs::read_to_string(dir.join(name)));
    let [record, eigen, incumbents, archive] = on_disk;
    let (record, eigen, incumbents, archive) = (record?, eigen?, incumbents?, archive?);
    let replay = execute(&metadata.config, &OffsetPolicy::Fixed(metadata.offsets.clone()))?;
    Ok(replay.record_csv == record
        && replay.eigen_csv == eigen
        && replay.incumbents == incumbents
        && replay.archive == archive
        && replay.metadata.resolved == metadata.resolved)
}

fn parse_budget(s: &str) -> std::result::Result<u64, String> {
    let v: f64 = s.parse().map_err(|e| format!("invalid budget {s:?}: {e}"))?;
    if !(v >= 0.0) || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(format!("budget {s:?} is not a non-negative integer"));
    }
    Ok(v as u64)
}

#[derive(Debug, Parser)]
#[command(name = "comocma", version, about = "Multiobjective CMA-ES experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its artifacts.
    Run(RunArgs),
    /// Re-run a recorded experiment and compare artifacts bitwise.
    ReplayCheck {
        /// Output directory of the recorded run.
        dir: PathBuf,
    },
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON config file with the same field names as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Problem class: sep, one or two.
    #[arg(long)]
    pub problem: Option<ProblemKind>,
    /// Index k of the sep-k class (1-based).
    #[arg(long)]
    pub k: Option<usize>,
    /// Hessian diagonal: sphere, elli or cigtab.
    #[arg(long)]
    pub diag: Option<DiagonalKind>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of kernels.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma0: Option<f64>,
    /// Lower corner of the initialization box (scalar or n values).
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    pub lower: Option<Vec<f64>>,
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    pub upper: Option<Vec<f64>>,
    /// Reference point (two values).
    #[arg(long = "ref", num_args = 2, allow_negative_numbers = true)]
    pub reference: Option<Vec<f64>>,
    /// Total objective evaluations, e.g. 5e6.
    #[arg(long, value_parser = parse_budget)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// sequential or postponed.
    #[arg(long)]
    pub mode: Option<UpdateMode>,
    /// Population size override.
    #[arg(long)]
    pub lambda: Option<usize>,
    /// Worker threads for postponed mode.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "rotation-seeds", num_args = 2)]
    pub rotation_seeds: Option<Vec<u64>>,
    /// Output directory (overridden by COMOCMA_OUTPUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON offset store updated with this run's best hypervolumes.
    #[arg(long = "offset-store")]
    pub offset_store: Option<PathBuf>,
}

impl RunArgs {
    fn as_partial(&self) -> PartialConfig {
        PartialConfig {
            problem: self.problem,
            k: self.k,
            diag: self.diag,
            n: self.n,
            p: self.p,
            sigma0: self.sigma0,
            lower: self.lower.clone().map(Bound::from_values),
            upper: self.upper.clone().map(Bound::from_values),
            reference: self.reference.as_ref().map(|r| [r[0], r[1]]),
            budget: self.budget,
            seed: self.seed,
            mode: self.mode,
            lambda: self.lambda,
            workers: self.workers,
            rotation_seeds: self.rotation_seeds.as_ref().map(|s| [s[0], s[1]]),
            out: self.out.clone(),
        }
    }

    /// Config file, then flags, then the output-directory variable.
    pub fn resolve(&self, env_out: Option<PathBuf>) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
            }
            None => PartialConfig::default(),
        };
        let mut merged = base.merge(self.as_partial());
        if env_out.is_some() {
            merged.out = env_out;
        }
        merged.resolve()
    }
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::InvalidArgument(_) => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let env_out = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
            let config = match args.resolve(env_out) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit_for(&e);
                }
            };
            let policy = match &args.offset_store {
                Some(path) => OffsetPolicy::Store(path.clone()),
                None => OffsetPolicy::InMemory,
            };
            match run_experiment(&config, &policy) {
                Ok(a) => {
                    let s = &a.metadata.summary;
                    println!(
                        "{}: {} epochs, {} evaluations ({} per kernel), hv {:.16e}, hvarchive {:.16e} -> {}",
                        a.metadata.resolved.problem_name,
                        s.epochs,
                        s.eval_count,
                        s.evals_per_kernel,
                        s.final_hv,
                        s.final_hvarchive,
                        config.out.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_for(&e)
                }
            }
        }
        Command::ReplayCheck { dir } => match replay_check(&dir) {
            Ok(true) => {
                println!("replay matches: {}", dir.display());
                ExitCode::SUCCESS
            }
            Ok(false) => {
                println!("replay MISMATCH: {}", dir.display());
                ExitCode::FAILURE
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
