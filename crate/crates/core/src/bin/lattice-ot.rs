use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use lattice_ot::continuum::heat_continuous;
use lattice_ot::error::{Error, Result};
use lattice_ot::experiments::{
    all_pass, load_density, random_density, run_convergence, run_gh_maps, run_inequality_suite, save_density, save_rows,
    AnyDensity, ExperimentConfig,
};
use lattice_ot::fields::Density;
use lattice_ot::grid::GridShape;
use lattice_ot::heat::heat_apply_density;
use lattice_ot::regularize::{build_regularized_path, choose_constants};
use lattice_ot::solver::{solve_distance, Metric, SolverOptions};

#[derive(Parser)]
#[command(name = "lattice-ot", version, about = "Transport metrics on the discrete torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    dim: Option<usize>,
    /// Lattice side; experiments accept a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    tsteps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (distance, heat, regpath) or directory (experiments).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file; its keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Log,
    Harmonic,
    Regular,
}

#[derive(Subcommand)]
enum Command {
    /// Distance between two lattice densities (random D_δ pair if files are omitted).
    Distance {
        #[arg(long)]
        rho0: Option<PathBuf>,
        #[arg(long)]
        rho1: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "log")]
        metric: MetricArg,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        /// Double the time grid until the objective settles.
        #[arg(long)]
        refine: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Heat flow of a lattice or trigonometric density.
    Heat {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        time: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Inequality suite.
    Suite {
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Error of the smoothed projections against W_2 as N grows.
    Converge {
        #[arg(long, value_delimiter = ',')]
        s: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Isometry and surjectivity defects of the smoothing maps.
    Ghmaps {
        #[arg(long, value_delimiter = ',')]
        s: Option<Vec<f64>>,
        #[arg(long)]
        cases: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Regularised path between two D_δ densities, with its action bounds.
    Regpath {
        #[arg(long)]
        rho0: Option<PathBuf>,
        #[arg(long)]
        rho1: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
}

/// Exit status for a failed run.
enum Failure {
    Checks,
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Malformed(_)
            | Error::InvalidShape(_)
            | Error::Io(_)
            | Error::MassViolation { .. }
            | Error::NegativeValue { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Config(m)) => {
            eprintln!("{m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Distance {
            rho0,
            rho1,
            metric,
            delta,
            refine,
            common,
        } => {
            let (r0, r1) = endpoints(rho0.as_deref(), rho1.as_deref(), &common, delta)?;
            let metric = match metric {
                MetricArg::Log => Metric::Logarithmic,
                MetricArg::Harmonic => Metric::Harmonic,
                MetricArg::Regular => Metric::ConstrainedLog(delta),
            };
            let mut opts = solver_options(&common, metric);
            opts.refinement = refine;
            let rep = solve_distance(&r0, &r1, &opts)?;
            if let Some(out) = &common.out {
                rep.path.save_json(out)?;
            }
            let summary = json!({
                "metric": metric.name(),
                "value": rep.value,
                "objective": rep.objective,
                "steps": rep.path.steps(),
                "residual": rep.feasibility_residual,
                "iterations": rep.iterations,
                "converged": rep.converged,
                "refinement": rep.refinement_history,
            });
            println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
            if rep.converged {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
        Command::Heat { input, time, common } => {
            let out = match load_density(&input)? {
                AnyDensity::Lattice(d) => {
                    let (h, diag) = heat_apply_density(time, &d)?;
                    eprintln!("clamped entries: {}", diag.clamped);
                    AnyDensity::Lattice(h)
                }
                AnyDensity::Continuum(c) => AnyDensity::Continuum(heat_continuous(time, &c)?),
            };
            match &common.out {
                Some(p) => save_density(p, &out)?,
                None => println!(
                    "{}",
                    match &out {
                        AnyDensity::Lattice(d) => d.to_json()?,
                        AnyDensity::Continuum(c) => c.to_json()?,
                    }
                ),
            }
            Ok(())
        }
        Command::Suite { cases, delta, common } => {
            let mut cfg = experiment_config("suite", &common)?;
            if let Some(c) = cases {
                cfg.cases = c;
            }
            if let Some(d) = delta {
                cfg.delta = d;
            }
            let cfg = overlay(cfg, common.config.as_deref())?;
            finish(&cfg, run_inequality_suite(&cfg)?)
        }
        Command::Converge { s, common } => {
            let mut cfg = experiment_config("converge", &common)?;
            if let Some(s) = s {
                cfg.s = s;
            }
            let cfg = overlay(cfg, common.config.as_deref())?;
            finish(&cfg, run_convergence(&cfg)?)
        }
        Command::Ghmaps { s, cases, common } => {
            let mut cfg = experiment_config("ghmaps", &common)?;
            if let Some(s) = s {
                cfg.s = s;
            }
            if let Some(c) = cases {
                cfg.cases = c;
            }
            let cfg = overlay(cfg, common.config.as_deref())?;
            finish(&cfg, run_gh_maps(&cfg)?)
        }
        Command::Regpath {
            rho0,
            rho1,
            eps,
            delta,
            samples,
            common,
        } => {
            let (r0, r1) = endpoints(rho0.as_deref(), rho1.as_deref(), &common, delta)?;
            let opts = solver_options(&common, Metric::Logarithmic);
            let base = solve_distance(&r0, &r1, &opts)?;
            let sched = choose_constants(eps, delta, r0.shape())?;
            let (path, rep) = build_regularized_path(&r0, &r1, &base.path, &sched, samples)?;
            if let Some(out) = &common.out {
                path.save_json(out)?;
            }
            println!("{}", serde_json::to_string_pretty(&rep).map_err(Error::from)?);
            let ok = rep.step1_actions.iter().all(|&a| a <= rep.step1_bound + 1e-9)
                && rep.step2_actions.iter().all(|&a| a <= rep.step2_bound + 1e-9)
                && rep.middle_action <= rep.middle_bound + 1e-9
                && rep.total_action <= rep.total_bound + 2.0 * opts.tol
                && rep.residual <= 1e-8;
            if ok {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
    }
}

fn solver_options(common: &Common, metric: Metric) -> SolverOptions {
    let mut o = SolverOptions::with_metric(metric);
    if let Some(t) = common.tsteps {
        o.steps = t;
        o.max_steps = o.max_steps.max(t);
    }
    if let Some(t) = common.tol {
        o.tol = t;
    }
    o
}

fn endpoints(a: Option<&Path>, b: Option<&Path>, common: &Common, delta: f64) -> Result<(Density, Density)> {
    let lattice = |p: &Path| -> Result<Density> {
        match load_density(p)? {
            AnyDensity::Lattice(d) => Ok(d),
            AnyDensity::Continuum(_) => Err(Error::Config(format!("{} is not a lattice density", p.display()))),
        }
    };
    match (a, b) {
        (Some(a), Some(b)) => Ok((lattice(a)?, lattice(b)?)),
        (None, None) => {
            let n = common.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(8);
            let shape = GridShape::new(common.dim.unwrap_or(1), n)?;
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed.unwrap_or(42));
            let r0 = random_density(&mut rng, shape, 0.6, Some(delta));
            let r1 = random_density(&mut rng, shape, 0.6, Some(delta));
            Ok((r0, r1))
        }
        _ => Err(Error::Config("give both --rho0 and --rho1 or neither".into())),
    }
}

fn experiment_config(name: &str, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::preset(name)?;
    if let Some(d) = common.dim {
        cfg.dim = d;
    }
    if let Some(n) = &common.n {
        cfg.n = n.clone();
    }
    if let Some(t) = common.tsteps {
        cfg.tsteps = t;
    }
    if let Some(t) = common.tol {
        cfg.tol = t;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

/// Keys present in the TOML file replace the flag-derived values.
fn overlay(cfg: ExperimentConfig, file: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = file else {
        cfg.validate()?;
        return Ok(cfg);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let over: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let mut base = toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    base.extend(over);
    let merged: ExperimentConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    merged.validate()?;
    Ok(merged)
}

fn finish(cfg: &ExperimentConfig, rows: Vec<lattice_ot::experiments::ResultRow>) -> std::result::Result<(), Failure> {
    let path = save_rows(cfg, &rows)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!("{}: {} rows, {} failed -> {}", cfg.experiment, rows.len(), failed, path.display());
    for r in rows.iter().filter(|r| !r.pass) {
        println!("FAIL {} {} measured={:e} bound={:e}", r.anchor, r.params, r.measured, r.bound);
    }
    if all_pass(&rows) {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}
