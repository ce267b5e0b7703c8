//! Geodesic distances `W_N`, `W̃_N` and `W_{N,δ}` by minimising the
//! time-discretised action over solutions of the discrete continuity equation.

pub mod lbfgs;
pub mod oracle;
pub mod reduced;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{check_d_delta, check_same_shape, Density, MomentumField};
use crate::means::MeanKind;
use crate::path::TransportPath;
use lbfgs::{minimize, LbfgsOptions};
use reduced::{Constraint, Reduced};

pub use oracle::{oracle_distance, OracleReport};

/// Objectives above this are reported as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// The metric being computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    /// `W_N`, logarithmic mean.
    Logarithmic,
    /// `W̃_N`, harmonic mean.
    Harmonic,
    /// `W_{N,δ}`: logarithmic mean, paths restricted to `D_δ`.
    ConstrainedLog(f64),
}

impl Metric {
    pub fn kind(self) -> MeanKind {
        match self {
            Metric::Harmonic => MeanKind::Harmonic,
            _ => MeanKind::Logarithmic,
        }
    }

    pub fn name(self) -> String {
        match self {
            Metric::Logarithmic => "log".into(),
            Metric::Harmonic => "harmonic".into(),
            Metric::ConstrainedLog(d) => format!("log_delta={d}"),
        }
    }
}

impl From<MeanKind> for Metric {
    fn from(k: MeanKind) -> Self {
        match k {
            MeanKind::Logarithmic => Metric::Logarithmic,
            MeanKind::Harmonic => Metric::Harmonic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Initial number of time intervals.
    pub steps: usize,
    pub metric: Metric,
    /// Relative objective decrease at which a barrier stage stops.
    pub tol: f64,
    /// Iteration cap per barrier stage.
    pub max_iter: usize,
    pub barrier_start: f64,
    pub barrier_factor: f64,
    pub barrier_end: f64,
    /// Double `steps` until successive objectives agree to `refine_rtol`.
    pub refinement: bool,
    pub refine_rtol: f64,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            steps: 16,
            metric: Metric::Logarithmic,
            tol: 1e-7,
            max_iter: 20_000,
            barrier_start: 1e-4,
            barrier_factor: 0.1,
            barrier_end: 1e-10,
            refinement: false,
            refine_rtol: 1e-4,
            max_steps: 256,
        }
    }
}

impl SolverOptions {
    pub fn with_metric(metric: Metric) -> Self {
        Self {
            metric,
            ..Self::default()
        }
    }

    pub fn refined(mut self) -> Self {
        self.refinement = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.max_steps < self.steps {
            return Err(Error::Config("need 1 <= steps <= max_steps".into()));
        }
        if !(self.tol > 0.0) || !(self.refine_rtol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(self.barrier_factor > 0.0 && self.barrier_factor < 1.0) || !(self.barrier_start > 0.0) || !(self.barrier_end > 0.0) {
            return Err(Error::Config("barrier schedule needs start, end > 0 and factor in (0,1)".into()));
        }
        if let Metric::ConstrainedLog(d) = self.metric {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("δ = {d} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub metric: Metric,
    /// `sqrt(objective)`.
    pub value: f64,
    /// Action of the returned path.
    pub objective: f64,
    pub path: TransportPath,
    pub feasibility_residual: f64,
    pub iterations: usize,
    /// `(T, objective)` for every solved resolution.
    pub refinement_history: Vec<(usize, f64)>,
    /// False when some barrier stage hit `max_iter`.
    pub converged: bool,
    /// Weight of the uniform density blended into an infeasible barrier start.
    pub blend_factor: f64,
}

struct Stage {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn run_barrier_schedule(p: &Reduced, mut x: Vec<f64>, opts: &SolverOptions) -> Stage {
    let scale = p.action(&x, None).max(1e-300);
    let terms = p.barrier_terms().max(1) as f64;
    let mut iterations = 0;
    let mut converged = true;
    let mut mu = opts.barrier_start;
    loop {
        let weight = mu * scale / terms;
        let f = |y: &[f64], g: &mut [f64]| {
            g.iter_mut().for_each(|v| *v = 0.0);
            let b = p.barrier(y, weight, Some(g));
            if !b.is_finite() {
                return f64::INFINITY;
            }
            let a = p.action(y, Some(g));
            p.project_mass(g);
            a + b
        };
        let out = minimize(
            f,
            |q| p.precondition(q),
            x,
            &LbfgsOptions {
                max_iter: opts.max_iter,
                rel_tol: opts.tol * 1e-2,
                scale: 1e-300,
                ..LbfgsOptions::default()
            },
        );
        iterations += out.iterations;
        converged &= out.converged;
        x = out.x;
        if mu < opts.barrier_end {
            break;
        }
        mu *= opts.barrier_factor;
    }
    Stage { x, iterations, converged }
}

fn build_path(p: &Reduced, x: &[f64], rho0: &Density, rho1: &Density) -> Result<TransportPath> {
    let shape = p.shape;
    let mut densities = Vec::with_capacity(p.steps + 1);
    densities.push(rho0.clone());
    for k in 1..p.steps {
        densities.push(Density::new_unchecked(shape, p.node(x, k).to_vec()));
    }
    densities.push(rho1.clone());
    let momenta = (0..p.steps)
        .map(|k| MomentumField::new(shape, p.momentum(x, k)))
        .collect::<Result<Vec<_>>>()?;
    TransportPath::new(densities, momenta)
}

/// Warm start on `2T` intervals: old nodes at even indices, midpoints at odd ones.
fn subdivide(p: &Reduced, x: &[f64], fine: &Reduced) -> Vec<f64> {
    let n = p.shape.num_sites();
    let kd = p.kernel_dim();
    let mut y = vec![0.0; fine.num_vars()];
    for j in 1..fine.steps {
        let dst = &mut y[(j - 1) * n..j * n];
        if j % 2 == 0 {
            dst.copy_from_slice(p.node(x, j / 2));
        } else {
            let (a, b) = (p.node(x, j / 2), p.node(x, j / 2 + 1));
            for i in 0..n {
                dst[i] = 0.5 * (a[i] + b[i]);
            }
        }
    }
    let (off_c, off_f) = ((p.steps - 1) * n, (fine.steps - 1) * n);
    for j in 0..fine.steps {
        let src = &x[off_c + (j / 2) * kd..][..kd];
        y[off_f + j * kd..][..kd].copy_from_slice(src);
    }
    y
}

/// Minimises `Δt Σ_k A_N(ρ̄_k, V_k)` over discrete continuity solutions joining `rho0` to `rho1`.
pub fn solve_distance(rho0: &Density, rho1: &Density, opts: &SolverOptions) -> Result<MetricReport> {
    check_same_shape(rho0.shape(), rho1.shape())?;
    opts.validate()?;
    let shape = *rho0.shape();
    let constraint = match opts.metric {
        Metric::ConstrainedLog(delta) => {
            check_d_delta(rho0, delta).map_err(|e| Error::Precondition(format!("start point: {e}")))?;
            check_d_delta(rho1, delta).map_err(|e| Error::Precondition(format!("end point: {e}")))?;
            Some(Constraint::new(&shape, delta))
        }
        _ => None,
    };
    let kind = opts.metric.kind();
    let mut steps = opts.steps;
    let mut problem = Reduced::new(rho0.values(), rho1.values(), shape, steps, kind, constraint.clone());
    let mut x = problem.linear_start();
    let mut blend_factor = 0.0;
    if problem.interior_slack(&x) <= 0.0 {
        for beta in [1e-6, 1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0] {
            let mut y = x.clone();
            problem.blend_uniform(&mut y, beta);
            if problem.interior_slack(&y) > 0.0 {
                x = y;
                blend_factor = beta;
                break;
            }
        }
        if problem.interior_slack(&x) <= 0.0 {
            return Err(Error::Solver("no strictly feasible starting path".into()));
        }
    }
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    loop {
        let stage = run_barrier_schedule(&problem, x, opts);
        iterations += stage.iterations;
        converged &= stage.converged;
        x = stage.x;
        let objective = problem.action(&x, None);
        if !(objective <= DIVERGENCE_THRESHOLD) {
            return Err(Error::Solver(format!(
                "objective {objective:e} exceeds the divergence threshold at T = {steps}"
            )));
        }
        history.push((steps, objective));
        let done = match history.len() {
            n if n >= 2 => {
                let (prev, cur) = (history[n - 2].1, history[n - 1].1);
                (prev - cur).abs() <= opts.refine_rtol * cur.abs().max(1e-300)
            }
            _ => false,
        };
        if !opts.refinement || done || 2 * steps > opts.max_steps {
            break;
        }
        let fine = Reduced::new(rho0.values(), rho1.values(), shape, 2 * steps, kind, constraint.clone());
        x = subdivide(&problem, &x, &fine);
        problem = fine;
        steps *= 2;
    }
    let path = build_path(&problem, &x, rho0, rho1)?;
    let objective = path.action(kind);
    if let Some(c) = &constraint {
        for (k, rho) in path.densities().iter().enumerate() {
            if c.slack(rho.values()) < -1e-12 {
                return Err(Error::Solver(format!("node {k} left D_δ")));
            }
        }
    }
    Ok(MetricReport {
        metric: opts.metric,
        value: objective.max(0.0).sqrt(),
        objective,
        feasibility_residual: path.continuity_residual().max,
        path,
        iterations,
        refinement_history: history,
        converged,
        blend_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_positive(rng: &mut ChaCha8Rng, shape: GridShape) -> Density {
        let w: Vec<f64> = (0..shape.num_sites()).map(|_| rng.random_range(0.3..1.7)).collect();
        Density::normalized(shape, w).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (d, n, kind, delta) in [
            (1, 5, MeanKind::Logarithmic, None),
            (1, 4, MeanKind::Harmonic, None),
            (2, 3, MeanKind::Logarithmic, None),
            (1, 5, MeanKind::Logarithmic, Some(0.2)),
        ] {
            let shape = GridShape::new(d, n).unwrap();
            let r0 = random_positive(&mut rng, shape);
            let r1 = random_positive(&mut rng, shape);
            let c = delta.map(|dl| Constraint::new(&shape, dl));
            let p = Reduced::new(r0.values(), r1.values(), shape, 4, kind, c);
            let mut x = p.linear_start();
            p.blend_uniform(&mut x, 0.3);
            let off = 3 * shape.num_sites();
            for (i, v) in x.iter_mut().enumerate() {
                if i >= off {
                    *v = rng.random_range(-0.05..0.05);
                } else {
                    *v += rng.random_range(-0.02..0.02);
                }
            }
            let mu = 1e-3;
            let eval = |y: &[f64], g: Option<&mut [f64]>| -> f64 {
                match g {
                    Some(g) => p.barrier(y, mu, Some(&mut *g)) + p.action(y, Some(g)),
                    None => p.barrier(y, mu, None) + p.action(y, None),
                }
            };
            let mut g = vec![0.0; x.len()];
            let f0 = eval(&x, Some(&mut g));
            assert!(f0.is_finite());
            for i in 0..x.len() {
                let h = 1e-6 * (1.0 + x[i].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (eval(&xp, None) - eval(&xm, None)) / (2.0 * h);
                let err = (fd - g[i]).abs();
                assert!(err <= 1e-5 * g[i].abs().max(1e-3 * f0.abs()), "d={d} i={i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn identical_endpoints_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = GridShape::new(2, 3).unwrap();
        let r = random_positive(&mut rng, shape);
        let rep = solve_distance(&r, &r, &SolverOptions::default()).unwrap();
        assert!(rep.value < 1e-12);
        assert!(rep.path.densities().iter().all(|d| d == &r));
    }

    #[test]
    fn feasible_symmetric_and_bounded_by_linear_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = GridShape::new(1, 5).unwrap();
        for _ in 0..3 {
            let r0 = random_positive(&mut rng, shape);
            let r1 = random_positive(&mut rng, shape);
            let opts = SolverOptions::default();
            let a = solve_distance(&r0, &r1, &opts).unwrap();
            let b = solve_distance(&r1, &r0, &opts).unwrap();
            assert!(a.converged && b.converged);
            assert!(a.feasibility_residual <= 1e-9, "{}", a.feasibility_residual);
            assert!(a.path.start() == &r0 && a.path.end() == &r1);
            assert!((a.value - b.value).abs() <= 2.0 * opts.tol, "{} {}", a.value, b.value);
            let lin = TransportPath::linear(&r0, &r1, opts.steps).unwrap();
            assert!(lin.action(MeanKind::Logarithmic) >= a.objective - opts.tol);
            let h = solve_distance(&r0, &r1, &SolverOptions::with_metric(Metric::Harmonic)).unwrap();
            assert!(h.value >= a.value - 2.0 * opts.tol);
            assert!(h.path.action(MeanKind::Harmonic) >= h.path.action(MeanKind::Logarithmic));
        }
    }

    #[test]
    fn constrained_paths_stay_regular() {
        let shape = GridShape::new(1, 8).unwrap();
        let delta = 0.5;
        let r0 = Density::normalized(shape, (0..8).map(|a| 1.0 + 0.2 * (a as f64 * 0.785).sin()).collect()).unwrap();
        let r1 = Density::normalized(shape, (0..8).map(|a| 1.0 + 0.2 * (a as f64 * 0.785 + 2.0).cos()).collect()).unwrap();
        let free = solve_distance(&r0, &r1, &SolverOptions::default()).unwrap();
        let cons = solve_distance(&r0, &r1, &SolverOptions::with_metric(Metric::ConstrainedLog(delta))).unwrap();
        assert!(cons.value >= free.value - 2e-7);
        for rho in cons.path.densities() {
            assert!(rho.regularity().in_d_delta(delta));
        }
        let bad = Density::new(shape, vec![0.2, 1.8, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let err = solve_distance(&bad, &r1, &SolverOptions::with_metric(Metric::ConstrainedLog(delta))).unwrap_err();
        assert!(err.to_string().contains("site 0"), "{err}");
    }

    #[test]
    fn refinement_history_is_recorded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = GridShape::new(1, 4).unwrap();
        let r0 = random_positive(&mut rng, shape);
        let r1 = random_positive(&mut rng, shape);
        let opts = SolverOptions {
            steps: 4,
            ..SolverOptions::default()
        }
        .refined();
        let rep = solve_distance(&r0, &r1, &opts).unwrap();
        assert!(rep.refinement_history.len() >= 2);
        assert_eq!(rep.path.steps(), rep.refinement_history.last().unwrap().0);
        let w = rep.refinement_history.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-3));
        assert!(w, "{:?}", rep.refinement_history);
    }
}
