//! Command-line front end: `solve-cell`, `solve-system`, `sweep-lambda`,
//! `optimal-partition` and `verify`, all driven by one JSON configuration.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use polyseg::oracles::battery_passes;
use polyseg::partition::DEFAULT_THETA;
use polyseg::solvers::SignStats;
use polyseg::{
    optimize_partition, profile_to_euclidean, run_suite, solve_cell, solve_system, lambda_sweep,
    Discretization, EnergyReport, OracleReport, Profile, SolveOptions, Suite,
};
use serde::Serialize;

pub use config::RunConfig;

/// Exit code of a successful run.
pub const EXIT_OK: i32 = 0;
/// Malformed input or configuration.
pub const EXIT_INVALID: i32 = 1;
/// A solver did not converge.
pub const EXIT_NOT_CONVERGED: i32 = 2;
/// An oracle of the `verify` battery failed.
pub const EXIT_ORACLE: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Io(String),
    Solver(polyseg::Error),
    NotConverged(String),
    OracleFailure(Vec<String>),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Solver(e) => write!(f, "{e}"),
            CliError::NotConverged(m) => write!(f, "not converged: {m}"),
            CliError::OracleFailure(names) => write!(f, "failed oracles: {}", names.join(", ")),
        }
    }
}

impl std::error::Error for CliError {}

impl From<polyseg::Error> for CliError {
    fn from(e: polyseg::Error) -> Self {
        CliError::Solver(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_INVALID,
            CliError::Solver(e) if is_nonconvergence(e) => EXIT_NOT_CONVERGED,
            CliError::Solver(_) => EXIT_INVALID,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
            CliError::OracleFailure(_) => EXIT_ORACLE,
        }
    }
}

fn is_nonconvergence(e: &polyseg::Error) -> bool {
    match e {
        polyseg::Error::NotConverged { .. } => true,
        polyseg::Error::Cell { source, .. } => is_nonconvergence(source),
        _ => false,
    }
}

#[derive(Debug, Parser)]
#[command(name = "polyseg", version, about = "Reduced solvers for symmetric critical polyharmonic systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for every random choice; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also sample `u(x) = ψ(x) w(q̃(x))` along this direction of ℝ^N (comma separated).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub euclidean_ray: Option<String>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Least-energy level of one Dirichlet cell `(a, b)`.
    SolveCell {
        #[arg(allow_hyphen_values = true)]
        a: f64,
        #[arg(allow_hyphen_values = true)]
        b: f64,
    },
    /// Least-energy solution of the coupled system at `couplings.lambda`.
    SolveSystem,
    /// Continuation in λ along the configured schedule.
    SweepLambda,
    /// Optimal partition of `(0, π)` into `ell` cells.
    OptimalPartition {
        #[arg(long)]
        ell: usize,
    },
    /// Runs the oracle battery.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SolveCell { .. } => "solve-cell",
            Command::SolveSystem => "solve-system",
            Command::SweepLambda => "sweep-lambda",
            Command::OptimalPartition { .. } => "optimal-partition",
            Command::Verify { .. } => "verify",
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, inside a pool of `--jobs` threads when given.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.solver.seed = cfg.seed;
    let ray = cli.euclidean_ray.as_deref().map(|r| parse_ray(r, cfg.params.n)).transpose()?;
    let ctx = Context { cfg, svg: cli.svg, ray };
    match cli.jobs {
        Some(0) => Err(CliError::Config("--jobs must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(|| ctx.dispatch(&cli.command)),
        None => ctx.dispatch(&cli.command),
    }
}

fn parse_ray(text: &str, dim: usize) -> Result<Vec<f64>, CliError> {
    let dir: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("--euclidean-ray: {e}")))?;
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if dir.len() != dim || !(norm > 0.0) || !norm.is_finite() {
        return Err(CliError::Config(format!("--euclidean-ray needs {dim} components, not all zero")));
    }
    Ok(dir.into_iter().map(|v| v / norm).collect())
}

/// Radii sampled along `--euclidean-ray`.
pub const RAY_RADII: usize = 201;
/// Largest radius sampled along `--euclidean-ray`.
pub const RAY_MAX: f64 = 10.0;

#[derive(Serialize)]
struct Summary<'a, R: Serialize> {
    command: &'a str,
    config: &'a RunConfig,
    result: R,
}

#[derive(Serialize)]
struct CellResult {
    a: f64,
    b: f64,
    mu: f64,
    level: f64,
    quotient: f64,
    iterations: usize,
    residual: f64,
}

#[derive(Serialize)]
struct SystemResult<'a> {
    lambda: f64,
    report: &'a EnergyReport,
    psi: f64,
    iterations: usize,
    converged: bool,
    residual: f64,
    start_levels: &'a [Option<f64>],
    signs: &'a [SignStats],
    nehari_identity_gap: f64,
}

#[derive(Serialize)]
struct StepResult<'a> {
    lambda: f64,
    report: &'a EnergyReport,
    converged: bool,
    iterations: usize,
    warm_started: bool,
    /// `β_ij O_ij ≤ |λ|⁻¹ ∫ μ_i |u_i|^{2*}` for every pair.
    overlap_bound_holds: bool,
}

#[derive(Serialize)]
struct PartitionResult<'a> {
    ell: usize,
    mu: &'a [f64],
    points: &'a [f64],
    energies: &'a [f64],
    total: f64,
    labels: &'a [String],
    starts: &'a [(Vec<f64>, f64)],
    sweeps: usize,
    converged: bool,
    support_theta: f64,
}

#[derive(Serialize)]
struct VerifyResult<'a> {
    suite: &'a str,
    pass: bool,
    reports: &'a [OracleReport],
}

struct Context {
    cfg: RunConfig,
    svg: bool,
    ray: Option<Vec<f64>>,
}

impl Context {
    fn dispatch(&self, command: &Command) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.cfg.out).map_err(|e| CliError::Io(format!("{}: {e}", self.cfg.out.display())))?;
        match command {
            Command::SolveCell { a, b } => self.solve_cell(*a, *b),
            Command::SolveSystem => self.solve_system(),
            Command::SweepLambda => self.sweep(),
            Command::OptimalPartition { ell } => self.partition(*ell),
            Command::Verify { suite } => self.verify(suite),
        }
        .map_err(|e| {
            if let CliError::Solver(inner) = &e {
                eprintln!("{}: {inner}", command.name());
            }
            e
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn opts(&self) -> &SolveOptions {
        &self.cfg.solver
    }

    fn summary(&self, command: &str, result: impl Serialize) -> Result<(), CliError> {
        output::write_json(&self.path("summary.json"), &Summary { command, config: &self.cfg, result })
    }

    fn profiles(&self, disc: &Discretization, profiles: &[&Profile], title: &str) -> Result<(), CliError> {
        output::write_profiles(&self.path("profile.csv"), disc.grid(), profiles)?;
        if self.svg {
            output::write_text(&self.path("profile.svg"), &output::profile_plot(disc.grid(), profiles, title))?;
        }
        if let Some(dir) = &self.ray {
            write_ray(&self.path("ray.csv"), disc, profiles, dir)?;
        }
        Ok(())
    }

    fn solve_cell(&self, a: f64, b: f64) -> Result<(), CliError> {
        let disc = self.cfg.discretization()?;
        let mu = self.cfg.mu(self.cfg.couplings.ell)?[0];
        let s = solve_cell(a, b, mu, &disc, self.opts())?;
        self.profiles(&disc, &[&s.profile], &format!("cell ({a:.4}, {b:.4})"))?;
        self.summary(
            "solve-cell",
            CellResult {
                a,
                b,
                mu,
                level: s.level,
                quotient: s.quotient,
                iterations: s.iterations,
                residual: s.residual,
            },
        )
    }

    fn solve_system(&self) -> Result<(), CliError> {
        let disc = self.cfg.discretization()?;
        let lambda = self.cfg.couplings.lambda;
        let cm = self.cfg.coupling(lambda)?;
        let s = solve_system(&cm, &disc, None, self.opts())?;
        let comps: Vec<&Profile> = s.bundle.components.iter().collect();
        self.profiles(&disc, &comps, &format!("λ = {lambda}"))?;
        self.summary(
            "solve-system",
            SystemResult {
                lambda,
                report: &s.report,
                psi: s.psi,
                iterations: s.iterations,
                converged: s.converged,
                residual: s.residual,
                start_levels: &s.start_levels,
                signs: &s.signs,
                nehari_identity_gap: s.report.nehari_identity_gap(disc.params().energy_factor()),
            },
        )?;
        if !s.converged {
            return Err(CliError::NotConverged(format!("system solve, residual {:e}", s.residual)));
        }
        Ok(())
    }

    fn sweep(&self) -> Result<(), CliError> {
        let disc = self.cfg.discretization()?;
        let schedule = self.cfg.schedule()?;
        let cm = self.cfg.coupling(schedule.lambdas[0])?;
        let steps = lambda_sweep(&schedule, &cm, &disc)?;
        let last = steps.last().expect("nonempty schedule");
        let comps: Vec<&Profile> = last.bundle.components.iter().collect();
        self.profiles(&disc, &comps, &format!("λ = {}", last.lambda))?;

        let ell = cm.ell();
        let mut header = vec!["lambda".to_string(), "energy".to_string()];
        for i in 0..ell {
            for j in i + 1..ell {
                header.push(format!("overlap_{}{}", i + 1, j + 1));
            }
        }
        let rows = steps.iter().map(|s| {
            let mut row = vec![s.lambda, s.report.energy];
            for i in 0..ell {
                for j in i + 1..ell {
                    row.push(s.report.overlap_weighted[i][j]);
                }
            }
            row
        });
        output::write_csv(&self.path("energies.csv"), &header, rows)?;
        if self.svg {
            let curve: Vec<(f64, f64)> = steps.iter().map(|s| (s.lambda.abs().log2(), s.report.energy)).collect();
            let plot = output::line_plot("energy along the sweep", "log2 |λ|", &[("J".to_string(), curve)]);
            output::write_text(&self.path("energies.svg"), &plot)?;
        }

        let results: Vec<StepResult> = steps
            .iter()
            .map(|s| StepResult {
                lambda: s.lambda,
                report: &s.report,
                converged: s.converged,
                iterations: s.iterations,
                warm_started: s.warm_started,
                overlap_bound_holds: overlap_bound_holds(&s.report, s.lambda),
            })
            .collect();
        self.summary("sweep-lambda", &results)?;
        let failed: Vec<String> = steps.iter().filter(|s| !s.converged).map(|s| s.lambda.to_string()).collect();
        if !failed.is_empty() {
            return Err(CliError::NotConverged(format!("sweep steps λ = {}", failed.join(", "))));
        }
        Ok(())
    }

    fn partition(&self, ell: usize) -> Result<(), CliError> {
        let disc = self.cfg.discretization()?;
        let mu = self.cfg.mu(ell)?;
        let opt = optimize_partition(ell, &mu, &disc, self.opts())?;
        let comps: Vec<&Profile> = opt.report.profiles.iter().collect();
        self.profiles(&disc, &comps, &format!("optimal {ell}-partition"))?;
        self.summary(
            "optimal-partition",
            PartitionResult {
                ell,
                mu: &mu,
                points: &opt.partition.points,
                energies: &opt.report.energies,
                total: opt.report.total,
                labels: &opt.report.labels,
                starts: &opt.starts,
                sweeps: opt.sweeps,
                converged: opt.converged,
                support_theta: DEFAULT_THETA,
            },
        )?;
        if !opt.converged {
            return Err(CliError::NotConverged(format!("coordinate descent after {} sweeps", opt.sweeps)));
        }
        Ok(())
    }

    fn verify(&self, suite: &str) -> Result<(), CliError> {
        let parsed: Suite = suite.parse()?;
        let disc = self.cfg.discretization()?;
        let reports = run_suite(parsed, &disc, self.cfg.seed)?;
        let pass = battery_passes(&reports);
        output::write_json(&self.path("oracles.json"), &reports)?;
        self.summary("verify", VerifyResult { suite: parsed.name(), pass, reports: &reports })?;
        if !pass {
            let failed = reports.iter().filter(|r| r.counts() && !r.pass).map(|r| r.name.clone()).collect();
            return Err(CliError::OracleFailure(failed));
        }
        Ok(())
    }
}

/// The exact pairwise bound `β_ij O_ij ≤ |λ|⁻¹ ∫ μ_i |u_i|^{2*}`.
pub fn overlap_bound_holds(report: &EnergyReport, lambda: f64) -> bool {
    let ell = report.nonlinear.len();
    (0..ell).all(|i| {
        (0..ell).filter(|&j| j != i).all(|j| {
            let bound = report.nonlinear[i] / lambda.abs();
            report.overlap_weighted[i][j] <= bound * (1.0 + 1e-9)
        })
    })
}

fn write_ray(path: &Path, disc: &Discretization, profiles: &[&Profile], dir: &[f64]) -> Result<(), CliError> {
    let mut header = vec!["r".to_string()];
    header.extend((1..=profiles.len()).map(|i| format!("u_{i}")));
    let mut rows = Vec::with_capacity(RAY_RADII);
    for k in 0..RAY_RADII {
        let r = RAY_MAX * k as f64 / (RAY_RADII - 1) as f64;
        let x: Vec<f64> = dir.iter().map(|d| r * d).collect();
        let mut row = vec![r];
        for p in profiles {
            row.push(profile_to_euclidean(p, disc.grid(), &x)?);
        }
        rows.push(row);
    }
    output::write_csv(path, &header, rows)
}
