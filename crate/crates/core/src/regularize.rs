//! Regularised transport paths: the four-step gluing construction that keeps
//! every density in some `D_δ̄` at a small extra cost, and heat-smoothed
//! continuum geodesics projected onto the lattice.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::continuum::{circle_geodesic, CircleGeodesic, ContinuumDensity, ContinuumField, TrigSeries, DEFAULT_RESOLUTION};
use crate::error::{Error, Result};
use crate::fields::{self, check_same_shape, lipschitz_unchecked, project_density, project_momentum, Density, MomentumField};
use crate::grid::GridShape;
use crate::heat::{heat_apply_density, heat_apply_momentum, heat_kernel, kappa_constant, laplacian_solve, SpectralCache};
use crate::means::MeanKind;
use crate::path::TransportPath;

/// Constant of the comparison `W_N ≤ c √d W_{2,N}`.
pub const COMPARISON_CONSTANT: f64 = 1.56;

/// Parameters `(ℓ, a, b)` of the gluing construction and the resulting regularity level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GluingSchedule {
    pub eps: f64,
    pub delta: f64,
    pub ell: f64,
    pub a: f64,
    pub b: f64,
    /// Upper bound `D` on the `W_N` diameter.
    pub diameter_bound: f64,
    /// Measured `sup_ρ Lip_N(H_b ρ)`.
    pub c_b: f64,
    pub delta_bar: f64,
}

/// `sup_ρ Lip_N(H_b ρ)` over probability densities. `Lip_N` is convex and
/// translation invariant, so the supremum is attained at a point mass.
pub fn heat_lipschitz_bound(shape: &GridShape, b: f64) -> f64 {
    lipschitz_unchecked(shape, &heat_kernel(shape, b))
}

/// `1.56 √d · (√d/2)`: the comparison bound applied to the lattice diameter.
pub fn diameter_bound(dim: usize) -> f64 {
    COMPARISON_CONSTANT * dim as f64 / 2.0
}

impl GluingSchedule {
    pub fn new(eps: f64, delta: f64, ell: f64, a: f64, b: f64, shape: &GridShape) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0 && delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!("need ε, δ ∈ (0,1), got ε = {eps}, δ = {delta}")));
        }
        if !(ell > 0.0 && ell < 0.25) {
            return Err(Error::Domain(format!("ℓ = {ell} outside (0, 1/4)")));
        }
        if !(a > 0.0 && a < delta && b > 0.0 && b < delta) {
            return Err(Error::Domain(format!("need a, b ∈ (0, δ), got a = {a}, b = {b}")));
        }
        let c_b = heat_lipschitz_bound(shape, b);
        let delta_bar = a.min(1.0 / (1.0 / delta).max(c_b));
        Ok(Self {
            eps,
            delta,
            ell,
            a,
            b,
            diameter_bound: diameter_bound(shape.dim()),
            c_b,
            delta_bar,
        })
    }

    /// Lower bound on every node density of the glued path.
    pub fn floor(&self) -> f64 {
        self.a
    }

    /// Upper bound on `Lip_N` of every node density of the glued path.
    pub fn lip_cap(&self) -> f64 {
        (1.0 / self.delta).max(self.c_b)
    }
}

/// Largest `ℓ`, then `a`, `b` with `1/(1-4ℓ) ≤ 1 + ε²/(3D²)`,
/// `2ad/(ℓκ²δ²) ≤ ε²/3` and `2db²/(ℓδ³) ≤ ε²/3`. `a` and `b` are capped at `δ/2`.
pub fn choose_constants(eps: f64, delta: f64, shape: &GridShape) -> Result<GluingSchedule> {
    if !(eps > 0.0 && eps < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("need ε, δ ∈ (0,1), got ε = {eps}, δ = {delta}")));
    }
    let d = shape.dim() as f64;
    let big_d = diameter_bound(shape.dim());
    let kappa = kappa_constant();
    let q = eps * eps / (3.0 * big_d * big_d);
    let ell = q / (4.0 * (1.0 + q));
    let a = (eps * eps * ell * kappa * kappa * delta * delta / (6.0 * d)).min(0.5 * delta);
    let b = (eps * eps * ell * delta.powi(3) / (6.0 * d)).sqrt().min(0.5 * delta);
    GluingSchedule::new(eps, delta, ell, a, b, shape)
}

/// `(1-a)ρ + a`.
fn mix_uniform(rho: &Density, a: f64) -> Density {
    Density::new_unchecked(*rho.shape(), rho.values().iter().map(|r| (1.0 - a) * r + a).collect())
}

fn heat_density(t: f64, rho: &Density) -> Result<Density> {
    Ok(heat_apply_density(t, rho)?.0)
}

/// Step 1: `η(s) = ρ + s a (1-ρ)` with the constant momentum `W = -a G(Δ_N^{-1}(1-ρ))`.
pub fn step1_linear_path(rho: &Density, a: f64, samples: usize) -> Result<TransportPath> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("a = {a} outside (0,1)")));
    }
    if samples == 0 {
        return Err(Error::Domain("at least one sample interval required".into()));
    }
    let shape = *rho.shape();
    let defect: Vec<f64> = rho.values().iter().map(|r| 1.0 - r).collect();
    let psi = laplacian_solve(&shape, &defect)?;
    let w: Vec<f64> = fields::gradient_potential(&shape, &psi).iter().map(|v| -a * v).collect();
    let w = MomentumField::new(shape, w)?;
    let mut densities = Vec::with_capacity(samples + 1);
    densities.push(rho.clone());
    for k in 1..=samples {
        let s = k as f64 / samples as f64;
        let sa = s * a;
        densities.push(Density::new_unchecked(shape, rho.values().iter().map(|r| (1.0 - sa) * r + sa).collect()));
    }
    TransportPath::new(densities, vec![w; samples])
}

/// Step 2: `σ(s) = H_{sb} ρ¹` with momentum `Z(s) = -b G(σ(s))`, averaged exactly over each interval.
pub fn step2_heat_path(rho1: &Density, b: f64, samples: usize) -> Result<TransportPath> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!("heat time b = {b} must be positive")));
    }
    if samples == 0 {
        return Err(Error::Domain("at least one sample interval required".into()));
    }
    let shape = *rho1.shape();
    let cache = SpectralCache::for_shape(shape);
    let ds = 1.0 / samples as f64;
    let mut densities = Vec::with_capacity(samples + 1);
    densities.push(rho1.clone());
    for k in 1..=samples {
        densities.push(heat_density(k as f64 / samples as f64 * b, rho1)?);
    }
    let momenta = (0..samples)
        .map(|k| {
            let s0 = k as f64 * ds;
            // (1/Δs) ∫ e^{-λ b s} ds over [s0, s0 + Δs]
            let avg = cache.apply_multiplier(rho1.values(), |j| {
                let x = cache.laplace_symbol(j) * b;
                let e0 = (-x * s0).exp();
                if x * ds < 1e-12 {
                    e0
                } else {
                    e0 * (-(-x * ds).exp_m1()) / (x * ds)
                }
            });
            let g = fields::gradient_potential(&shape, &avg);
            MomentumField::new(shape, g.iter().map(|v| -b * v).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    TransportPath::new(densities, momenta)
}

/// Actions and bounds of each piece of the glued path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GluingReport {
    pub schedule: GluingSchedule,
    pub base_objective: f64,
    /// Step-1 actions for the two endpoints and the bound `ad/(κ²δ²)`.
    pub step1_actions: [f64; 2],
    pub step1_bound: f64,
    /// Step-2 actions and the bound `db²/δ³`.
    pub step2_actions: [f64; 2],
    pub step2_bound: f64,
    /// Middle segment action on its glued time interval, and `(1-a)/(1-4ℓ)` times the base objective.
    pub middle_action: f64,
    pub middle_bound: f64,
    pub total_action: f64,
    /// `base + ε²`.
    pub total_bound: f64,
    pub min_density: f64,
    pub max_lipschitz: f64,
    pub residual: f64,
}

/// Glues step 1, step 2, the mixed and heat-smoothed base path, and the
/// reversed steps 2 and 1, on time fractions `ℓ, ℓ, 1-4ℓ, ℓ, ℓ`.
pub fn build_regularized_path(
    rho0: &Density,
    rho1: &Density,
    base: &TransportPath,
    sched: &GluingSchedule,
    samples: usize,
) -> Result<(TransportPath, GluingReport)> {
    check_same_shape(rho0.shape(), rho1.shape())?;
    check_same_shape(rho0.shape(), base.shape())?;
    if base.start() != rho0 || base.end() != rho1 {
        return Err(Error::Domain("base path does not join the given endpoints".into()));
    }
    let shape = *rho0.shape();
    let check = GluingSchedule::new(sched.eps, sched.delta, sched.ell, sched.a, sched.b, &shape)?;
    for (name, r) in [("start", rho0), ("end", rho1)] {
        fields::check_d_delta(r, sched.delta).map_err(|e| Error::Precondition(format!("{name} point: {e}")))?;
    }
    let (a, b, ell) = (sched.a, sched.b, sched.ell);
    let kind = MeanKind::Logarithmic;

    let s1_0 = step1_linear_path(rho0, a, samples)?;
    let s1_1 = step1_linear_path(rho1, a, samples)?;
    let r1_0 = mix_uniform(rho0, a);
    let r1_1 = mix_uniform(rho1, a);
    let s2_0 = step2_heat_path(&r1_0, b, samples)?;
    let s2_1 = step2_heat_path(&r1_1, b, samples)?;

    let mid_dens = base
        .densities()
        .iter()
        .map(|r| heat_density(b, &mix_uniform(r, a)))
        .collect::<Result<Vec<_>>>()?;
    let mid_mom = base
        .momenta()
        .iter()
        .map(|v| heat_apply_momentum(b, &v.scale(1.0 - a)))
        .collect::<Result<Vec<_>>>()?;
    let middle = TransportPath::with_times(base.times().to_vec(), mid_dens, mid_mom)?;

    let pieces = [s1_0.clone(), s2_0.clone(), middle.clone(), s2_1.reversed(), s1_1.reversed()];
    let glued = TransportPath::concat(&pieces, &[ell, ell, 1.0 - 4.0 * ell, ell, ell])?;

    let base_objective = base.action(kind);
    let d = shape.dim() as f64;
    let kappa = kappa_constant();
    let delta = sched.delta;
    let middle_action = middle.action(kind) / (1.0 - 4.0 * ell);
    let mut min_density = f64::INFINITY;
    let mut max_lipschitz = 0.0f64;
    for r in glued.densities() {
        min_density = min_density.min(r.min());
        max_lipschitz = max_lipschitz.max(lipschitz_unchecked(&shape, r.values()));
    }
    let report = GluingReport {
        schedule: check,
        base_objective,
        step1_actions: [s1_0.action(kind), s1_1.action(kind)],
        step1_bound: a * d / (kappa * kappa * delta * delta),
        step2_actions: [s2_0.action(kind), s2_1.action(kind)],
        step2_bound: d * b * b / delta.powi(3),
        middle_action,
        middle_bound: (1.0 - a) * base_objective / (1.0 - 4.0 * ell),
        total_action: glued.action(kind),
        total_bound: base_objective + sched.eps * sched.eps,
        min_density,
        max_lipschitz,
        residual: glued.continuity_residual().max,
    };
    Ok((glued, report))
}

/// Truncation order for `H_s`: modes beyond it are below `e^{-40}`.
pub fn heat_cutoff(s: f64) -> i64 {
    (40.0 / (4.0 * PI * PI * s)).sqrt().ceil() as i64
}

/// Heat-smoothed density and momentum of a circle geodesic at time `t`.
#[derive(Debug, Clone)]
pub struct SmoothedState {
    pub density: TrigSeries,
    pub momentum: TrigSeries,
}

/// `(P_N H_s μ_t, P_N H_s(v_t μ_t))` along the circle geodesic from `mu0` to `mu1`.
#[derive(Debug, Clone)]
pub struct SmoothedProjection {
    pub path: TransportPath,
    pub geodesic: CircleGeodesic,
    pub s: f64,
    pub cutoff: i64,
}

fn heat_coeffs(coeffs: &[Complex64], s: f64) -> Vec<Complex64> {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| c * (-4.0 * PI * PI * (k * k) as f64 * s).exp())
        .collect()
}

fn series_from_half(coeffs: &[Complex64]) -> Result<TrigSeries> {
    let mut all = Vec::with_capacity(2 * coeffs.len());
    all.push((vec![0], Complex64::new(coeffs[0].re, 0.0)));
    for (k, c) in coeffs.iter().enumerate().skip(1) {
        all.push((vec![k as i64], *c));
        all.push((vec![-(k as i64)], c.conj()));
    }
    TrigSeries::from_coeffs(1, all)
}

impl SmoothedProjection {
    /// Exact smoothed density and momentum at time `t` (not interval averages).
    pub fn state(&self, t: f64) -> Result<SmoothedState> {
        let kmax = self.cutoff as usize;
        let mut rho = heat_coeffs(&self.geodesic.density_coefficients(t, kmax), self.s);
        rho[0] = Complex64::new(1.0, 0.0);
        let m = self.geodesic.resolution();
        let xs = self.geodesic.positions(t);
        let vel = self.geodesic.velocities();
        let mut mom = vec![Complex64::new(0.0, 0.0); kmax + 1];
        for j in 0..m {
            let ang = -2.0 * PI * (xs[j] - xs[j].floor());
            let base = Complex64::new(ang.cos(), ang.sin());
            let mut p = Complex64::new(vel[j], 0.0);
            for c in mom.iter_mut() {
                *c += p;
                p *= base;
            }
        }
        mom.iter_mut().for_each(|c| *c /= m as f64);
        let mom = heat_coeffs(&mom, self.s);
        Ok(SmoothedState {
            density: series_from_half(&rho)?,
            momentum: series_from_half(&mom)?,
        })
    }
}

/// Builds the smoothed projection path on `steps` uniform intervals (d = 1).
pub fn smoothed_projection_path(
    mu0: &ContinuumDensity,
    mu1: &ContinuumDensity,
    s: f64,
    shape: &GridShape,
    steps: usize,
) -> Result<SmoothedProjection> {
    if shape.dim() != 1 || mu0.dim() != 1 || mu1.dim() != 1 {
        return Err(Error::Domain("smoothed projection paths need d = 1".into()));
    }
    if !(s > 0.0) {
        return Err(Error::Domain(format!("smoothing time s = {s} must be positive")));
    }
    if steps == 0 {
        return Err(Error::Domain("at least one time step required".into()));
    }
    let geodesic = circle_geodesic(mu0, mu1, DEFAULT_RESOLUTION)?;
    let cutoff = heat_cutoff(s);
    let kmax = cutoff as usize;
    let dt = 1.0 / steps as f64;
    // endpoints use the exact modes so the path starts and ends at P_N H_s μ_j
    let exact = |mu: &ContinuumDensity| -> Vec<Complex64> {
        let c: Vec<Complex64> = (0..=kmax as i64).map(|k| mu.series().coeff(&[k])).collect();
        heat_coeffs(&c, s)
    };
    let coeffs: Vec<Vec<Complex64>> = (0..=steps)
        .map(|k| {
            if k == 0 {
                return exact(mu0);
            }
            if k == steps {
                return exact(mu1);
            }
            let mut c = heat_coeffs(&geodesic.density_coefficients(k as f64 * dt, kmax), s);
            c[0] = Complex64::new(1.0, 0.0);
            c
        })
        .collect();
    let densities = coeffs
        .iter()
        .map(|c| project_density(&ContinuumDensity::new(series_from_half(c)?)?, shape))
        .collect::<Result<Vec<_>>>()?;
    let mean = geodesic.mean_momentum();
    let mut momenta = Vec::with_capacity(steps);
    for k in 0..steps {
        // ∂_t ĉ_j + 2πij V̂_j = 0 averaged over the interval
        let mut m = vec![Complex64::new(mean, 0.0); kmax + 1];
        for (j, mj) in m.iter_mut().enumerate().skip(1) {
            let jump = coeffs[k + 1][j] - coeffs[k][j];
            *mj = -jump / (Complex64::new(0.0, 2.0 * PI * j as f64) * dt);
        }
        let field = ContinuumField::new(vec![series_from_half(&m)?])?;
        momenta.push(project_momentum(&field, shape)?);
    }
    let path = TransportPath::new(densities, momenta)?;
    Ok(SmoothedProjection {
        path,
        geodesic,
        s,
        cutoff,
    })
}

/// `H_s Q_N ρ` as a trigonometric density, truncated at [`heat_cutoff`].
pub fn heat_lift(rho: &Density, s: f64) -> Result<ContinuumDensity> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("smoothing time s = {s} must be positive")));
    }
    let shape = *rho.shape();
    let d = shape.dim();
    let k = heat_cutoff(s);
    let width = (2 * k + 1) as usize;
    let lift = fields::lift_density(rho);
    let mut coeffs = Vec::with_capacity(width.pow(d as u32));
    for idx in 0..width.pow(d as u32) {
        let mut r = idx;
        let freq: Vec<i64> = (0..d)
            .map(|_| {
                let f = (r % width) as i64 - k;
                r /= width;
                f
            })
            .collect();
        if freq.iter().all(|&f| f == 0) {
            coeffs.push((freq, Complex64::new(1.0, 0.0)));
            continue;
        }
        let neg: Vec<i64> = freq.iter().map(|f| -f).collect();
        let k2: i64 = freq.iter().map(|f| f * f).sum();
        let c = lift.fourier(&neg) * (-4.0 * PI * PI * k2 as f64 * s).exp();
        coeffs.push((freq, c));
    }
    ContinuumDensity::new(TrigSeries::from_coeffs(d, coeffs)?)
}

/// Terms of the per-time bound on `A_N(P_N ρ, P_N V)` for smooth `ρ`, `V` (d = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBound {
    pub discrete_action: f64,
    pub continuum_action: f64,
    pub correction: f64,
}

impl ProjectionBound {
    pub fn bound(&self) -> f64 {
        self.continuum_action + self.correction
    }
}

/// `A_N(P_Nρ, P_NV) ≤ ∫|V|²/ρ + (1/N)(‖V‖_∞ Lip V / min ρ + (1 + Lip ρ)² ‖V‖²_∞ / (min ρ)³)`,
/// with the continuum quantities sampled on a uniform grid.
pub fn projection_action_bound(rho: &TrigSeries, v: &ContinuumField, shape: &GridShape) -> Result<ProjectionBound> {
    let d = shape.dim();
    if rho.dim() != d || v.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if rho.dim() != d { rho.dim() } else { v.dim() },
        });
    }
    let mu = ContinuumDensity::new(rho.clone())?;
    let p_rho = project_density(&mu, shape)?;
    let p_v = project_momentum(v, shape)?;
    let discrete_action = fields::action(&p_rho, &p_v, MeanKind::Logarithmic)?;
    let m = rho.sample_resolution().max(v.sample_resolution());
    let total = m.pow(d as u32);
    let mut cont = 0.0;
    let mut min_rho = f64::INFINITY;
    let mut x = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for xi in x.iter_mut() {
            *xi = (r % m) as f64 / m as f64;
            r /= m;
        }
        let val = rho.eval(&x);
        min_rho = min_rho.min(val);
        cont += v.eval(&x).iter().map(|c| c * c).sum::<f64>() / val;
    }
    cont /= total as f64;
    let v_inf = v.sampled_sup(m);
    let v_lip = v.sampled_lipschitz(m);
    let r_lip = rho.sampled_lipschitz(m);
    let n = shape.side() as f64;
    let correction = (v_inf * v_lip / min_rho + (1.0 + r_lip).powi(2) * v_inf * v_inf / min_rho.powi(3)) / n;
    Ok(ProjectionBound {
        discrete_action,
        continuum_action: cont,
        correction,
    })
}
