//! Experiment drivers: configuration, result rows, the inequality suite, the
//! convergence sweep and the isometry/surjectivity measurements.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuum::{circle_w2, heat_continuous, ContinuumDensity, ContinuumField, DEFAULT_RESOLUTION};
use crate::error::{Error, Result};
use crate::fields::{self, lift_density, project_density, Density, MomentumField};
use crate::grid::GridShape;
use crate::heat::{heat_apply_density, heat_apply_momentum, poincare_check};
use crate::means::MeanKind;
use crate::regularize::{heat_lift, projection_action_bound, COMPARISON_CONSTANT};
use crate::solver::{solve_distance, Metric, SolverOptions};
use crate::transport::w2n_exact;

/// First line of every results file.
pub const SCHEMA_LINE: &str = "# lattice-ot results v1";

/// Allowed relative growth between successive errors in a trend row.
pub const TREND_WIGGLE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub dim: usize,
    pub n: Vec<usize>,
    pub s: Vec<f64>,
    pub tsteps: usize,
    pub tol: f64,
    pub seed: u64,
    pub cases: usize,
    pub out_dir: PathBuf,
    /// Regularity level for the `D_δ` comparisons.
    pub delta: f64,
    /// Coefficient files for the convergence endpoints; the sine pair when absent.
    pub mu0: Option<PathBuf>,
    pub mu1: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "suite".into(),
            dim: 1,
            n: vec![8],
            s: vec![0.02],
            tsteps: 16,
            tol: 1e-7,
            seed: 42,
            cases: 20,
            out_dir: PathBuf::from("results"),
            delta: 0.5,
            mu0: None,
            mu1: None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for one of `suite`, `converge`, `ghmaps`.
    pub fn preset(experiment: &str) -> Result<Self> {
        let base = Self {
            experiment: experiment.into(),
            ..Self::default()
        };
        match experiment {
            "suite" => Ok(base),
            "converge" => Ok(Self {
                n: vec![4, 8, 16, 32],
                s: vec![0.02],
                cases: 1,
                ..base
            }),
            "ghmaps" => Ok(Self {
                n: vec![5, 10, 20],
                s: vec![0.04, 0.01, 0.0025],
                cases: 4,
                ..base
            }),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.s.is_empty() {
            return Err(Error::Config("N and s lists must be nonempty".into()));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Config(format!("dim = {} outside 1..=3", self.dim)));
        }
        if let Some(&n) = self.n.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("N = {n} below 2")));
        }
        if let Some(&s) = self.s.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("smoothing time {s} must be positive")));
        }
        if self.tsteps == 0 || !(self.tol > 0.0) || self.cases == 0 {
            return Err(Error::Config("tsteps, tol and cases must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("δ = {} outside (0,1)", self.delta)));
        }
        Ok(())
    }

    fn solver(&self, metric: Metric) -> SolverOptions {
        SolverOptions {
            steps: self.tsteps,
            tol: self.tol,
            max_steps: SolverOptions::default().max_steps.max(self.tsteps),
            ..SolverOptions::with_metric(metric)
        }
    }

    /// Per-distance slack of the comparison rows.
    fn slack(&self, evaluations: usize) -> f64 {
        2.0 * self.tol * evaluations as f64
    }
}

/// One checked inequality: `pass ⇔ measured ≤ bound + slack`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub anchor: String,
    pub params: String,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
}

impl ResultRow {
    pub fn new(experiment: &str, anchor: &str, params: &[(&str, String)], measured: f64, bound: f64, slack: f64) -> Self {
        Self {
            experiment: experiment.into(),
            anchor: anchor.into(),
            params: join_params(params),
            measured,
            bound,
            slack,
            pass: measured <= bound + slack,
        }
    }

    /// Row for a computation that failed: never passes.
    pub fn failed(experiment: &str, anchor: &str, params: &[(&str, String)], err: &Error) -> Self {
        let mut p: Vec<(&str, String)> = params.to_vec();
        p.push(("error", err.to_string().replace([';', '\n', ','], " ")));
        Self {
            experiment: experiment.into(),
            anchor: anchor.into(),
            params: join_params(&p),
            measured: f64::NAN,
            bound: f64::NAN,
            slack: 0.0,
            pass: false,
        }
    }
}

fn join_params(params: &[(&str, String)]) -> String {
    params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn write_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["experiment", "anchor", "params", "measured", "bound", "slack", "pass"])?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.anchor.clone(),
            r.params.clone(),
            fmt(r.measured),
            fmt(r.bound),
            fmt(r.slack),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(text: &str) -> Result<Vec<ResultRow>> {
    let body = text
        .strip_prefix(SCHEMA_LINE)
        .ok_or_else(|| Error::Malformed("missing schema line".into()))?;
    let mut r = csv::Reader::from_reader(body.trim_start_matches('\n').as_bytes());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| Error::Malformed(format!("column {i}: {e}")))
        };
        rows.push(ResultRow {
            experiment: rec[0].to_string(),
            anchor: rec[1].to_string(),
            params: rec[2].to_string(),
            measured: num(3)?,
            bound: num(4)?,
            slack: num(5)?,
            pass: rec[6] == *"true",
        });
    }
    Ok(rows)
}

/// Writes `<out_dir>/<experiment>.csv` and returns its path.
pub fn save_rows(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(format!("{}.csv", cfg.experiment));
    write_csv(std::fs::File::create(&path)?, rows)?;
    Ok(path)
}

pub fn all_pass(rows: &[ResultRow]) -> bool {
    rows.iter().all(|r| r.pass)
}

/// Normalised `exp(f)` for a random smooth `f` of low frequency, rejected
/// until it lies in `D_δ` when `delta` is given.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, shape: GridShape, amp: f64, delta: Option<f64>) -> Density {
    let d = shape.dim();
    let n = shape.side() as f64;
    loop {
        let modes: Vec<(Vec<f64>, f64, f64)> = (0..3)
            .map(|_| {
                let k: Vec<f64> = (0..d).map(|_| rng.random_range(-1i64..=1) as f64).collect();
                (k, rng.random_range(-amp..amp), rng.random_range(0.0..1.0))
            })
            .collect();
        let w: Vec<f64> = (0..shape.num_sites())
            .map(|a| {
                let f: f64 = modes
                    .iter()
                    .map(|(k, c, ph)| {
                        let dot: f64 = (0..d).map(|ax| k[ax] * shape.coord(a, ax) as f64 / n).sum();
                        c * (2.0 * PI * (dot + ph)).sin()
                    })
                    .sum();
                f.exp()
            })
            .collect();
        let rho = Density::normalized(shape, w).expect("positive weights");
        match delta {
            Some(dl) if !rho.regularity().in_d_delta(dl) => continue,
            _ => return rho,
        }
    }
}

/// Random smooth momentum field with a constant mode.
fn random_field<R: Rng + ?Sized>(rng: &mut R, dim: usize, amp: f64) -> Result<ContinuumField> {
    let comps = (0..dim)
        .map(|_| {
            let c0 = rng.random_range(-amp..amp);
            let mu = ContinuumDensity::random(rng, dim, 1, amp, f64::NEG_INFINITY);
            mu.series().add(&crate::continuum::TrigSeries::from_coeffs(dim, [(vec![0; dim], num_complex::Complex64::new(c0 - 1.0, 0.0))])?)
        })
        .collect::<Result<Vec<_>>>()?;
    ContinuumField::new(comps)
}

/// Inputs of one suite case.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub index: usize,
    /// Four lattice densities in `D_δ`.
    pub rho: [Density; 4],
    pub mu: [ContinuumDensity; 2],
    pub field: ContinuumField,
    /// Zero-mean function for the Poincaré rows.
    pub zero_mean: Vec<f64>,
    /// Heat time for the monotonicity row.
    pub heat_time: f64,
}

impl SuiteCase {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, index: usize, shape: GridShape, delta: f64) -> Result<Self> {
        let rho = [0, 1, 2, 3].map(|_| random_density(rng, shape, 0.6, Some(delta)));
        let mu = [0, 1].map(|_| ContinuumDensity::random(rng, shape.dim(), 2, 0.4, 0.1));
        let field = random_field(rng, shape.dim(), 0.5)?;
        let mut zero_mean: Vec<f64> = (0..shape.num_sites()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = zero_mean.iter().sum::<f64>() / zero_mean.len() as f64;
        zero_mean.iter_mut().for_each(|v| *v -= mean);
        Ok(Self {
            index,
            rho,
            mu,
            field,
            zero_mean,
            heat_time: rng.random_range(1e-4..1e-2),
        })
    }

    /// All four lattice densities uniform, both continuum densities equal.
    pub fn degenerate(index: usize, shape: GridShape) -> Result<Self> {
        let u = Density::uniform(shape);
        let mu = ContinuumDensity::sine(0.3, 0.1)?;
        let mu = if shape.dim() == 1 { mu } else { ContinuumDensity::uniform(shape.dim()) };
        let mut zero_mean = vec![0.0; shape.num_sites()];
        zero_mean[0] = 1.0;
        zero_mean[1] = -1.0;
        Ok(Self {
            index,
            rho: [u.clone(), u.clone(), u.clone(), u],
            mu: [mu.clone(), mu],
            field: ContinuumField::new(vec![crate::continuum::TrigSeries::from_coeffs(shape.dim(), [(vec![0; shape.dim()], num_complex::Complex64::new(0.3, 0.0))])?; shape.dim()])?,
            zero_mean,
            heat_time: 1e-3,
        })
    }
}

/// `(1 - 1/(δ⁴N²))^{-1/2}`, or `None` when `N ≤ δ^{-2}`.
pub fn harmonic_factor(delta: f64, n: usize) -> Option<f64> {
    let q = 1.0 / (delta.powi(4) * (n * n) as f64);
    (q < 1.0).then(|| 1.0 / (1.0 - q).sqrt())
}

/// All suite rows of one case.
pub fn case_rows(case: &SuiteCase, shape: GridShape, cfg: &ExperimentConfig) -> Vec<ResultRow> {
    let d = shape.dim();
    let n = shape.side();
    let base: Vec<(&str, String)> = vec![
        ("case", case.index.to_string()),
        ("dim", d.to_string()),
        ("n", n.to_string()),
    ];
    let mut rows = Vec::new();
    let exp = "suite";
    let mut push = |anchor: &str, extra: &[(&str, String)], r: Result<(f64, f64, f64)>| {
        let mut p = base.clone();
        p.extend_from_slice(extra);
        rows.push(match r {
            Ok((m, b, s)) => ResultRow::new(exp, anchor, &p, m, b, s),
            Err(e) => ResultRow::failed(exp, anchor, &p, &e),
        });
    };
    let [r0, r1, r2, r3] = &case.rho;
    let solve = |a: &Density, b: &Density, metric: Metric, refined: bool| -> Result<f64> {
        let mut o = cfg.solver(metric);
        o.refinement = refined;
        let rep = solve_distance(a, b, &o)?;
        if !rep.converged {
            return Err(Error::Solver(format!("{} solve hit the iteration cap", metric.name())));
        }
        Ok(rep.value)
    };

    let w = solve(r0, r1, Metric::Logarithmic, false);
    let wt = solve(r0, r1, Metric::Harmonic, false);
    let both = |w: &Result<f64>, wt: &Result<f64>| -> Result<(f64, f64)> {
        match (w, wt) {
            (Ok(a), Ok(b)) => Ok((*a, *b)),
            (Err(e), _) | (_, Err(e)) => Err(Error::Solver(e.to_string())),
        }
    };
    push(
        "log-below-harmonic",
        &[("steps", cfg.tsteps.to_string())],
        both(&w, &wt).map(|(a, b)| (a, b, cfg.slack(2))),
    );

    if let Some(factor) = harmonic_factor(cfg.delta, n) {
        let wd = solve(r0, r1, Metric::ConstrainedLog(cfg.delta), false);
        push(
            "harmonic-vs-regular",
            &[("delta", cfg.delta.to_string()), ("factor", fmt(factor))],
            both(&wt, &wd).map(|(a, b)| (a, factor * b, cfg.slack(2))),
        );
    }

    if d == 1 {
        let r = solve(r0, r1, Metric::Harmonic, true).and_then(|wt| {
            let w2 = circle_w2(&lift_density(r0), &lift_density(r1), DEFAULT_RESOLUTION)?;
            Ok((w2.value, wt, cfg.slack(1)))
        });
        push("lift-below-harmonic", &[], r);
    }

    push(
        "log-vs-lattice-w2",
        &[("c", COMPARISON_CONSTANT.to_string())],
        w.as_ref()
            .map_err(|e| Error::Solver(e.to_string()))
            .and_then(|&w| {
                let w2n = w2n_exact(r0, r1)?.value;
                Ok((w, COMPARISON_CONSTANT * (d as f64).sqrt() * w2n, cfg.slack(1)))
            }),
    );

    let conv = (|| -> Result<(f64, f64, f64)> {
        let w01 = w.as_ref().map_err(|e| Error::Solver(e.to_string()))?;
        let w23 = solve(r2, r3, Metric::Logarithmic, false)?;
        let m0 = r0.mix(r2, 0.5)?;
        let m1 = r1.mix(r3, 0.5)?;
        let wm = solve(&m0, &m1, Metric::Logarithmic, false)?;
        let bound = 0.5 * (w01 * w01 + w23 * w23);
        // slack in squared units: 2·tol per evaluation, times the largest value
        let scale = 2.0 * w01.max(w23).max(wm);
        Ok((wm * wm, bound, cfg.slack(3) * scale))
    })();
    push("midpoint-convexity", &[], conv);

    let kin = projection_action_bound(case.mu[0].series(), &case.field, &shape).map(|b| (b.discrete_action, b.bound(), 0.0));
    push("projection-kinetic", &[], kin);

    if d == 1 {
        let cube = (|| -> Result<(f64, f64, f64)> {
            let p = project_density(&case.mu[0], &shape)?;
            let w2 = circle_w2(&lift_density(&p), &case.mu[0], DEFAULT_RESOLUTION)?;
            Ok((w2.value, (d as f64).sqrt() / n as f64, 0.0))
        })();
        push("cube-projection", &[], cube);

        let cmp = (|| -> Result<(f64, f64, f64)> {
            let p0 = project_density(&case.mu[0], &shape)?;
            let p1 = project_density(&case.mu[1], &shape)?;
            let w2n = w2n_exact(&p0, &p1)?.value;
            let w2 = circle_w2(&case.mu[0], &case.mu[1], DEFAULT_RESOLUTION)?;
            Ok((w2n, w2.value + (d as f64).sqrt() / n as f64, 1e-9))
        })();
        push("cell-map-comparison", &[], cmp);
    }

    match poincare_check(&shape, &case.zero_mean) {
        Ok(pc) => {
            push("poincare", &[], Ok((pc.norm_sq, pc.constant * pc.energy, 1e-12 * pc.norm_sq)));
            push(
                "poincare-inverse",
                &[],
                Ok((pc.inverse_energy, pc.constant * pc.norm_sq, 1e-12 * pc.norm_sq)),
            );
        }
        Err(e) => push("poincare", &[], Err(e)),
    }

    let heat = (|| -> Result<(f64, f64, f64)> {
        let s = case.heat_time;
        let v = fields::project_momentum(&case.field, &shape)?;
        let before = fields::action(r0, &v, MeanKind::Logarithmic)?;
        let (hr, _) = heat_apply_density(s, r0)?;
        let hv: MomentumField = heat_apply_momentum(s, &v)?;
        let after = fields::action(&hr, &hv, MeanKind::Logarithmic)?;
        Ok((after, before, 1e-10))
    })();
    push("heat-action-decay", &[("s", fmt(case.heat_time))], heat);
    rows
}

/// Runs every case for every `N` in the configuration; rows are ordered by `(N, case)`.
pub fn run_inequality_suite(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &n in &cfg.n {
        let shape = GridShape::new(cfg.dim, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let cases = (0..cfg.cases)
            .map(|i| SuiteCase::random(&mut rng, i, shape, cfg.delta))
            .collect::<Result<Vec<_>>>()?;
        let mut per: Vec<(usize, Vec<ResultRow>)> = cases
            .par_iter()
            .map(|c| (c.index, case_rows(c, shape, cfg)))
            .collect();
        per.sort_by_key(|(i, _)| *i);
        rows.extend(per.into_iter().flat_map(|(_, r)| r));
    }
    Ok(rows)
}

/// Canonical pair `1 + ½ sin(2πx)` and `1 + ½ sin(2π(x - 0.3))`.
pub fn canonical_pair() -> Result<(ContinuumDensity, ContinuumDensity)> {
    Ok((ContinuumDensity::sine(0.5, 0.0)?, ContinuumDensity::sine(0.5, 0.3)?))
}

fn endpoints(cfg: &ExperimentConfig) -> Result<(ContinuumDensity, ContinuumDensity)> {
    match (&cfg.mu0, &cfg.mu1) {
        (Some(a), Some(b)) => Ok((ContinuumDensity::load_json(a)?, ContinuumDensity::load_json(b)?)),
        (None, None) => canonical_pair(),
        _ => Err(Error::Config("give both mu0 and mu1 or neither".into())),
    }
}

/// Measurements at one `N` of the convergence sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n: usize,
    pub s: f64,
    pub w_n: f64,
    pub w_tilde: f64,
    pub w2n: f64,
    /// `W_2(μ0, μ1)`.
    pub w2: f64,
    /// `W_2(H_s μ0, H_s μ1)`.
    pub w2_smoothed: f64,
    /// `|W_N - W_2(μ0, μ1)|`.
    pub err: f64,
    /// `|W_N - W_2(H_s μ0, H_s μ1)|`.
    pub err_s: f64,
}

/// Sweep over `N` at fixed `s = cfg.s[0]` (d = 1).
pub fn convergence_points(cfg: &ExperimentConfig) -> Result<Vec<ConvergencePoint>> {
    cfg.validate()?;
    if cfg.dim != 1 {
        return Err(Error::Config("the convergence sweep needs dim = 1".into()));
    }
    let s = cfg.s[0];
    let (mu0, mu1) = endpoints(cfg)?;
    let w2 = circle_w2(&mu0, &mu1, DEFAULT_RESOLUTION)?.value;
    let h0 = heat_continuous(s, &mu0)?;
    let h1 = heat_continuous(s, &mu1)?;
    let w2_smoothed = circle_w2(&h0, &h1, DEFAULT_RESOLUTION)?.value;
    cfg.n
        .par_iter()
        .map(|&n| {
            let shape = GridShape::new(1, n)?;
            let p0 = project_density(&h0, &shape)?;
            let p1 = project_density(&h1, &shape)?;
            let w_n = solve_distance(&p0, &p1, &cfg.solver(Metric::Logarithmic).refined())?.value;
            let w_tilde = solve_distance(&p0, &p1, &cfg.solver(Metric::Harmonic).refined())?.value;
            let w2n = w2n_exact(&p0, &p1)?.value;
            Ok(ConvergencePoint {
                n,
                s,
                w_n,
                w_tilde,
                w2n,
                w2,
                w2_smoothed,
                err: (w_n - w2).abs(),
                err_s: (w_n - w2_smoothed).abs(),
            })
        })
        .collect()
}

/// Rows: the error trend over `N` (10% wiggle), `err(N_max) < err(N_min)` and
/// `err(N_max) ≤ 0.05 W_2(μ0, μ1)`.
pub fn convergence_rows(points: &[ConvergencePoint], cfg: &ExperimentConfig) -> Vec<ResultRow> {
    let exp = "converge";
    let mut rows = Vec::new();
    let params = |p: &ConvergencePoint| -> Vec<(&'static str, String)> {
        vec![
            ("n", p.n.to_string()),
            ("s", p.s.to_string()),
            ("w_n", fmt(p.w_n)),
            ("w_tilde", fmt(p.w_tilde)),
            ("w2n", fmt(p.w2n)),
            ("w2", fmt(p.w2)),
            ("w2_smoothed", fmt(p.w2_smoothed)),
            ("err_s", fmt(p.err_s)),
        ]
    };
    for (i, p) in points.iter().enumerate() {
        let bound = if i == 0 { f64::INFINITY } else { points[i - 1].err * (1.0 + TREND_WIGGLE) };
        rows.push(ResultRow::new(exp, "error-trend", &params(p), p.err, bound, cfg.slack(1)));
    }
    if let (Some(first), Some(last)) = (points.first(), points.last()) {
        if points.len() > 1 {
            let mut r = ResultRow::new(exp, "error-decrease", &params(last), last.err, first.err, 0.0);
            r.pass = last.err < first.err;
            rows.push(r);
        }
        rows.push(ResultRow::new(exp, "error-threshold", &params(last), last.err, 0.05 * last.w2, 0.0));
    }
    rows
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    Ok(convergence_rows(&convergence_points(cfg)?, cfg))
}

/// Surjectivity defect `W_N(ρ, P_N H_s Q_N ρ)` and its chain bound
/// `1.56√d (W_2(Q_N ρ, H_s Q_N ρ) + 2√d/N) + tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurjectivityDefect {
    pub defect: f64,
    pub chain_bound: f64,
}

pub fn surjectivity_defect(rho: &Density, s: f64, opts: &SolverOptions) -> Result<SurjectivityDefect> {
    let shape = *rho.shape();
    if shape.dim() != 1 {
        return Err(Error::Domain("surjectivity defects are measured in d = 1".into()));
    }
    let smooth = heat_lift(rho, s)?;
    let back = project_density(&smooth, &shape)?;
    let defect = solve_distance(rho, &back, opts)?.value;
    let w2 = circle_w2(&lift_density(rho), &smooth, DEFAULT_RESOLUTION)?.value;
    let d = 1.0f64;
    let chain_bound = COMPARISON_CONSTANT * d.sqrt() * (w2 + 2.0 * d.sqrt() / shape.side() as f64) + opts.tol;
    Ok(SurjectivityDefect { defect, chain_bound })
}

/// Isometry defect `|W_N(P_N H_s μ0, P_N H_s μ1) - W_2(μ0, μ1)|`.
pub fn isometry_defect(mu0: &ContinuumDensity, mu1: &ContinuumDensity, s: f64, shape: &GridShape, opts: &SolverOptions) -> Result<f64> {
    let p0 = project_density(&heat_continuous(s, mu0)?, shape)?;
    let p1 = project_density(&heat_continuous(s, mu1)?, shape)?;
    let w = solve_distance(&p0, &p1, opts)?.value;
    Ok((w - circle_w2(mu0, mu1, DEFAULT_RESOLUTION)?.value).abs())
}

/// For each `(s, N)` pair: per-sample surjectivity rows against the chain
/// bound, and trend rows for the largest isometry and surjectivity defects.
pub fn run_gh_maps(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    if cfg.dim != 1 {
        return Err(Error::Config("the isometry/surjectivity maps need dim = 1".into()));
    }
    if cfg.s.len() != cfg.n.len() {
        return Err(Error::Config("ghmaps pairs s and N elementwise; lists must have equal length".into()));
    }
    let exp = "ghmaps";
    let opts = cfg.solver(Metric::Logarithmic).refined();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for (&s, &n) in cfg.s.iter().zip(&cfg.n) {
        let shape = GridShape::new(1, n)?;
        let pairs: Vec<(ContinuumDensity, ContinuumDensity)> = (0..cfg.cases)
            .map(|_| {
                (
                    ContinuumDensity::random(&mut rng, 1, 2, 0.4, 0.1),
                    ContinuumDensity::random(&mut rng, 1, 2, 0.4, 0.1),
                )
            })
            .collect();
        let mut samples: Vec<Density> = vec![Density::uniform(shape)];
        samples.extend((0..cfg.cases).map(|_| random_density(&mut rng, shape, 0.6, None)));
        let base = vec![("s", s.to_string()), ("n", n.to_string())];

        let iso: Vec<Result<f64>> = pairs.par_iter().map(|(a, b)| isometry_defect(a, b, s, &shape, &opts)).collect();
        let surj: Vec<Result<SurjectivityDefect>> = samples.par_iter().map(|r| surjectivity_defect(r, s, &opts)).collect();

        let mut max_iso = 0.0f64;
        for r in &iso {
            match r {
                Ok(v) => max_iso = max_iso.max(*v),
                Err(e) => rows.push(ResultRow::failed(exp, "isometry", &base, e)),
            }
        }
        let mut max_surj = 0.0f64;
        for (i, r) in surj.iter().enumerate() {
            let mut p = base.clone();
            p.push(("sample", if i == 0 { "uniform".into() } else { i.to_string() }));
            match r {
                Ok(sd) => {
                    max_surj = max_surj.max(sd.defect);
                    rows.push(ResultRow::new(exp, "surjectivity-chain", &p, sd.defect, sd.chain_bound, 0.0));
                    if i == 0 {
                        rows.push(ResultRow::new(exp, "surjectivity-fixed-point", &p, sd.defect, opts.tol, 0.0));
                    }
                }
                Err(e) => rows.push(ResultRow::failed(exp, "surjectivity-chain", &p, e)),
            }
        }
        let (iso_bound, surj_bound) = match prev {
            Some((a, b)) => (a * (1.0 + TREND_WIGGLE), b * (1.0 + TREND_WIGGLE)),
            None => (f64::INFINITY, f64::INFINITY),
        };
        rows.push(ResultRow::new(exp, "isometry-trend", &base, max_iso, iso_bound, cfg.slack(1)));
        rows.push(ResultRow::new(exp, "surjectivity-trend", &base, max_surj, surj_bound, cfg.slack(1)));
        prev = Some((max_iso, max_surj));
    }
    Ok(rows)
}

/// A density file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyDensity {
    Lattice(Density),
    Continuum(ContinuumDensity),
}

/// Loads a lattice density (`values` key) or a coefficient file (`coeffs` key).
pub fn load_density(path: &Path) -> Result<AnyDensity> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Malformed(e.to_string()))?;
    if value.get("values").is_some() {
        Ok(AnyDensity::Lattice(Density::from_json(&text)?))
    } else if value.get("coeffs").is_some() {
        Ok(AnyDensity::Continuum(ContinuumDensity::from_json(&text)?))
    } else {
        Err(Error::Malformed(format!("{}: neither 'values' nor 'coeffs' present", path.display())))
    }
}

pub fn save_density(path: &Path, density: &AnyDensity) -> Result<()> {
    match density {
        AnyDensity::Lattice(d) => d.save_json(path),
        AnyDensity::Continuum(c) => c.save_json(path),
    }
}
