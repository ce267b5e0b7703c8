//! Densities and momentum fields on the lattice, the kinetic action, the
//! Dirichlet form, Lipschitz constants, and the projection / lifting maps
//! between the lattice and the continuous torus.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuum::{cube_factor, face_factor, hat_factors, CircleMeasure, ContinuumDensity, ContinuumField};
use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::means::MeanKind;

/// Relative tolerance on `Σ_a ρ(a) = N^d`.
pub const MASS_RTOL: f64 = 1e-9;

/// Probability density with respect to the uniform measure on `T_N^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    shape: GridShape,
    values: Vec<f64>,
}

impl Density {
    /// Validates length, nonnegativity and `Σ ρ = N^d` (relative `1e-9`).
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.num_sites() {
            return Err(Error::ShapeMismatch(format!(
                "density has {} values, grid has {} sites",
                values.len(),
                shape.num_sites()
            )));
        }
        for (site, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite density value at site {site}")));
            }
            if v < 0.0 {
                return Err(Error::NegativeValue { site, value: v });
            }
        }
        let expected = shape.num_sites() as f64;
        let total: f64 = values.iter().sum();
        if (total - expected).abs() > MASS_RTOL * expected {
            return Err(Error::MassViolation { total, expected });
        }
        Ok(Self { shape, values })
    }

    pub(crate) fn new_unchecked(shape: GridShape, values: Vec<f64>) -> Self {
        Self { shape, values }
    }

    /// Rescales nonnegative weights to unit mass.
    pub fn normalized(shape: GridShape, mut values: Vec<f64>) -> Result<Self> {
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("weights must have positive total".into()));
        }
        let s = shape.num_sites() as f64 / total;
        values.iter_mut().for_each(|v| *v *= s);
        Self::new(shape, values)
    }

    pub fn uniform(shape: GridShape) -> Self {
        Self {
            shape,
            values: vec![1.0; shape.num_sites()],
        }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(1-λ) self + λ other`.
    pub fn mix(&self, other: &Density, lambda: f64) -> Result<Density> {
        check_same_shape(&self.shape, &other.shape)?;
        Ok(Self {
            shape: self.shape,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
                .collect(),
        })
    }

    pub fn regularity(&self) -> RegularityReport {
        RegularityReport::of(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DensityFile {
            dim: self.shape.dim(),
            n: self.shape.side(),
            values: self.values.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DensityFile = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        let shape = GridShape::new(file.dim, file.n).map_err(|e| Error::Malformed(e.to_string()))?;
        if file.values.len() != shape.num_sites() {
            return Err(Error::Malformed(format!(
                "expected {} values for dim={} n={}, found {}",
                shape.num_sites(),
                file.dim,
                file.n,
                file.values.len()
            )));
        }
        Self::new(shape, file.values)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk density: row-major values, last axis fastest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityFile {
    pub dim: usize,
    pub n: usize,
    pub values: Vec<f64>,
}

/// Momentum field on the canonically oriented facets, axis-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumField {
    shape: GridShape,
    values: Vec<f64>,
}

impl MomentumField {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.num_facets() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid has {} facets",
                values.len(),
                shape.num_facets()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite momentum at facet {i}")));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: GridShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.num_facets()],
        }
    }

    pub fn constant(shape: GridShape, c: f64) -> Self {
        Self {
            shape,
            values: vec![c; shape.num_facets()],
        }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        let m = self.shape.num_sites();
        &self.values[axis * m..(axis + 1) * m]
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            shape: self.shape,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_shape(&self.shape, &other.shape)?;
        Ok(Self {
            shape: self.shape,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    /// Discrete divergence `(1/2d) Σ_i (V(R_{a,i+}) - V(R_{a-e_i,i+}))`.
    pub fn divergence(&self) -> Vec<f64> {
        divergence(&self.shape, &self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn check_same_shape(a: &GridShape, b: &GridShape) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "grid (d={}, N={}) vs (d={}, N={})",
            a.dim(),
            a.side(),
            b.dim(),
            b.side()
        )));
    }
    Ok(())
}

fn check_site_fn(shape: &GridShape, f: &[f64]) -> Result<()> {
    if f.len() != shape.num_sites() {
        return Err(Error::ShapeMismatch(format!(
            "site function has {} entries, grid has {}",
            f.len(),
            shape.num_sites()
        )));
    }
    Ok(())
}

/// `1 / (4 d² N^{d+2})`.
pub fn action_prefactor(shape: &GridShape) -> f64 {
    let d = shape.dim() as f64;
    1.0 / (4.0 * d * d * shape.side() as f64 * shape.side() as f64 * shape.num_sites() as f64)
}

/// Kinetic action `A_N(ρ, V) = (1/(4d²N^{d+2})) Σ_R V(R)² / θ(ρ(a), ρ(a+e_i))`.
///
/// Facets with `V = 0` contribute 0; `V ≠ 0` on a zero-mean edge gives `+∞`.
pub fn action(rho: &Density, v: &MomentumField, kind: MeanKind) -> Result<f64> {
    check_same_shape(&rho.shape, &v.shape)?;
    Ok(action_raw(&rho.shape, &rho.values, &v.values, kind))
}

/// Action for raw site / facet arrays of matching lengths.
pub(crate) fn action_raw(shape: &GridShape, rho: &[f64], v: &[f64], kind: MeanKind) -> f64 {
    let m = shape.num_sites();
    let mut acc = 0.0;
    for axis in 0..shape.dim() {
        for a in 0..m {
            let val = v[axis * m + a];
            if val == 0.0 {
                continue;
            }
            let th = kind.eval(rho[a], rho[shape.shift(a, axis, 1)]);
            if th <= 0.0 {
                return f64::INFINITY;
            }
            acc += val * val / th;
        }
    }
    acc * action_prefactor(shape)
}

/// Momentum on ordered neighbour pairs, laid out as
/// `values[(2 * axis + dir) * N^d + a]` for the pair `(a, a ± e_axis)`
/// (`dir = 0` for `+`, `1` for `-`).
pub fn action_ordered_pairs(rho: &Density, pairs: &[f64], kind: MeanKind) -> Result<f64> {
    let shape = rho.shape;
    let m = shape.num_sites();
    if pairs.len() != 2 * shape.num_facets() {
        return Err(Error::ShapeMismatch(format!(
            "ordered-pair field needs {} values, got {}",
            2 * shape.num_facets(),
            pairs.len()
        )));
    }
    let mut acc = 0.0;
    for axis in 0..shape.dim() {
        for dir in 0..2 {
            for a in 0..m {
                let val = pairs[(2 * axis + dir) * m + a];
                if val == 0.0 {
                    continue;
                }
                let b = shape.shift(a, axis, if dir == 0 { 1 } else { -1 });
                let th = kind.eval(rho.values[a], rho.values[b]);
                if th <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                acc += val * val / th;
            }
        }
    }
    // every facet appears twice among ordered pairs
    Ok(0.5 * acc * action_prefactor(&shape))
}

/// `V^asym(a, a+e_i) = (V(a, a+e_i) - V(a+e_i, a)) / 2` as a facet field.
pub fn antisymmetrize(shape: &GridShape, pairs: &[f64]) -> Result<MomentumField> {
    let m = shape.num_sites();
    if pairs.len() != 2 * shape.num_facets() {
        return Err(Error::ShapeMismatch("ordered-pair field has wrong length".into()));
    }
    let mut out = vec![0.0; shape.num_facets()];
    for axis in 0..shape.dim() {
        for a in 0..m {
            let fwd = pairs[2 * axis * m + a];
            let b = shape.shift(a, axis, 1);
            let bwd = pairs[(2 * axis + 1) * m + b];
            out[axis * m + a] = 0.5 * (fwd - bwd);
        }
    }
    MomentumField::new(*shape, out)
}

/// `⟨f, g⟩_{L²_N} = N^{-d} Σ_a f(a) g(a)`.
pub fn l2n_inner(f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / f.len() as f64
}

/// `E_N(f, g) = N^{2-d} Σ_a Σ_i (f(a+e_i) - f(a)) (g(a+e_i) - g(a))`.
pub fn dirichlet_form(shape: &GridShape, f: &[f64], g: &[f64]) -> Result<f64> {
    check_site_fn(shape, f)?;
    check_site_fn(shape, g)?;
    let mut acc = 0.0;
    for a in 0..shape.num_sites() {
        for axis in 0..shape.dim() {
            let b = shape.shift(a, axis, 1);
            acc += (f[b] - f[a]) * (g[b] - g[a]);
        }
    }
    let n = shape.side() as f64;
    Ok(acc * n * n / shape.num_sites() as f64)
}

/// `Lip_N(f) = max_{a≠b} |f(a) - f(b)| / d_N(a,b)` by exhaustive scan.
pub fn lipschitz_constant(shape: &GridShape, f: &[f64]) -> Result<f64> {
    check_site_fn(shape, f)?;
    Ok(lipschitz_unchecked(shape, f))
}

pub(crate) fn lipschitz_unchecked(shape: &GridShape, f: &[f64]) -> f64 {
    let m = shape.num_sites();
    (0..m)
        .into_par_iter()
        .map(|a| {
            let mut best = 0.0f64;
            for b in (a + 1)..m {
                let r = (f[a] - f[b]).abs() / shape.torus_dist_idx(a, b);
                best = best.max(r);
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Ordered pair attaining the Lipschitz constant.
pub fn lipschitz_argmax(shape: &GridShape, f: &[f64]) -> (usize, usize, f64) {
    let m = shape.num_sites();
    let mut best = (0, 0, 0.0);
    for a in 0..m {
        for b in (a + 1)..m {
            let r = (f[a] - f[b]).abs() / shape.torus_dist_idx(a, b);
            if r > best.2 {
                best = (a, b, r);
            }
        }
    }
    best
}

/// Regularity of a density: `min ρ`, `Lip_N(ρ)` and the largest `δ` with `ρ ∈ D_δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub min_value: f64,
    pub lip_n: f64,
    pub delta_star: f64,
}

impl RegularityReport {
    pub fn of(rho: &Density) -> Self {
        let min_value = rho.min();
        let lip_n = lipschitz_unchecked(&rho.shape, &rho.values);
        let delta_star = if lip_n > 0.0 {
            min_value.min(1.0 / lip_n)
        } else {
            min_value
        };
        Self {
            min_value,
            lip_n,
            delta_star,
        }
    }

    pub fn in_d_delta(&self, delta: f64) -> bool {
        self.min_value >= delta && self.lip_n * delta <= 1.0
    }
}

/// Checks `ρ ∈ D_δ`, naming the offending site or pair.
pub fn check_d_delta(rho: &Density, delta: f64) -> Result<()> {
    let shape = rho.shape;
    if let Some((site, &v)) = rho
        .values
        .iter()
        .enumerate()
        .find(|(_, &v)| v < delta)
    {
        return Err(Error::Precondition(format!(
            "density below δ = {delta} at site {site} (value {v})"
        )));
    }
    let (a, b, lip) = lipschitz_argmax(&shape, &rho.values);
    if lip * delta > 1.0 {
        return Err(Error::Precondition(format!(
            "Lipschitz constant {lip} exceeds 1/δ = {} on the pair ({a}, {b})",
            1.0 / delta
        )));
    }
    Ok(())
}

/// Discrete divergence of a raw facet array.
pub(crate) fn divergence(shape: &GridShape, v: &[f64]) -> Vec<f64> {
    let m = shape.num_sites();
    let inv = 1.0 / (2.0 * shape.dim() as f64);
    (0..m)
        .map(|a| {
            let mut acc = 0.0;
            for axis in 0..shape.dim() {
                acc += v[axis * m + a] - v[axis * m + shape.shift(a, axis, -1)];
            }
            acc * inv
        })
        .collect()
}

/// Gradient-potential field `G(ψ)(R_{a,i+}) = 2dN² (ψ(a+e_i) - ψ(a))`.
/// Its divergence is `Δ_N ψ`.
pub fn gradient_potential(shape: &GridShape, psi: &[f64]) -> Vec<f64> {
    let m = shape.num_sites();
    let n = shape.side() as f64;
    let c = 2.0 * shape.dim() as f64 * n * n;
    let mut out = vec![0.0; shape.num_facets()];
    for axis in 0..shape.dim() {
        for a in 0..m {
            out[axis * m + a] = c * (psi[shape.shift(a, axis, 1)] - psi[a]);
        }
    }
    out
}

/// Adjoint of [`gradient_potential`] for the plain Euclidean inner products.
pub(crate) fn gradient_potential_adjoint(shape: &GridShape, w: &[f64]) -> Vec<f64> {
    let m = shape.num_sites();
    let n = shape.side() as f64;
    let c = 2.0 * shape.dim() as f64 * n * n;
    let mut out = vec![0.0; m];
    for axis in 0..shape.dim() {
        for a in 0..m {
            let val = c * w[axis * m + a];
            out[shape.shift(a, axis, 1)] += val;
            out[a] -= val;
        }
    }
    out
}

/// `P_N(μ)(a) = N^d μ(Q_a)`, by exact integration of every Fourier mode.
pub fn project_density(mu: &ContinuumDensity, shape: &GridShape) -> Result<Density> {
    if mu.dim() != shape.dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.dim(),
            got: mu.dim(),
        });
    }
    let n = shape.side();
    let m = shape.num_sites();
    let mut values = vec![0.0; m];
    for (k, c) in mu.series().coeffs() {
        for (a, val) in values.iter_mut().enumerate() {
            let mut z = *c;
            for (ax, &ki) in k.iter().enumerate() {
                z *= cube_factor(ki, shape.coord(a, ax), n);
            }
            *val += z.re;
        }
    }
    for (site, v) in values.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v >= -1e-12 {
                *v = 0.0;
            } else {
                return Err(Error::NegativeValue { site, value: *v });
            }
        }
    }
    Density::new(*shape, values)
}

/// `P_N(V)(R_{a,i+}) = 2dN^d ∫_{R_{a,i+}} V_i`, exact per Fourier mode.
pub fn project_momentum(v: &ContinuumField, shape: &GridShape) -> Result<MomentumField> {
    if v.dim() != shape.dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.dim(),
            got: v.dim(),
        });
    }
    let n = shape.side();
    let m = shape.num_sites();
    let scale = 2.0 * shape.dim() as f64 * n as f64;
    let mut values = vec![0.0; shape.num_facets()];
    for axis in 0..shape.dim() {
        for (k, c) in v.component(axis).coeffs() {
            for a in 0..m {
                let mut z = *c;
                for (ax, &ki) in k.iter().enumerate() {
                    let ca = shape.coord(a, ax);
                    z *= if ax == axis {
                        face_factor(ki, ca, n)
                    } else {
                        cube_factor(ki, ca, n)
                    };
                }
                values[axis * m + a] += scale * z.re;
            }
        }
    }
    MomentumField::new(*shape, values)
}

/// Piecewise-constant lift `Q_N(ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    shape: GridShape,
    values: Vec<f64>,
}

pub fn lift_density(rho: &Density) -> PiecewiseConstant {
    PiecewiseConstant {
        shape: rho.shape,
        values: rho.values.clone(),
    }
}

fn cell_of(shape: &GridShape, x: &[f64]) -> usize {
    let n = shape.side();
    let mut idx = 0;
    for &xi in x {
        let y = xi - xi.floor();
        let c = ((y * n as f64).floor() as usize).min(n - 1);
        idx = idx * n + c;
    }
    idx
}

impl PiecewiseConstant {
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.values[cell_of(&self.shape, x)]
    }

    /// `∫ Q_N ρ = N^{-d} Σ ρ(a)`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.shape.num_sites() as f64
    }

    /// `∫ Q_N ρ(x) e^{2πik·x} dx`.
    pub fn fourier(&self, k: &[i64]) -> Complex64 {
        lift_fourier(&self.shape, &self.values, k)
    }

    /// Cube averages, i.e. `P_N ∘ Q_N`.
    pub fn project(&self) -> Result<Density> {
        Density::new(self.shape, self.values.clone())
    }
}

pub(crate) fn lift_fourier(shape: &GridShape, values: &[f64], k: &[i64]) -> Complex64 {
    let n = shape.side();
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let mut z = Complex64::new(v, 0.0);
        for (ax, &ki) in k.iter().enumerate() {
            z *= cube_factor(ki, shape.coord(a, ax), n);
        }
        acc += z;
    }
    acc / shape.num_sites() as f64
}

impl CircleMeasure for PiecewiseConstant {
    fn cdf(&self, x: f64) -> f64 {
        let n = self.shape.side();
        let s = x * n as f64;
        let j = (s.floor() as usize).min(n);
        let mut acc: f64 = self.values[..j].iter().sum();
        if j < n {
            acc += (s - j as f64) * self.values[j];
        }
        acc / n as f64
    }

    fn density(&self, x: f64) -> f64 {
        self.eval(&[x])
    }

    fn min_density(&self) -> f64 {
        if self.shape.dim() != 1 {
            return f64::NAN;
        }
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn quantile(&self, u: f64) -> f64 {
        let shift = u.floor();
        let target = (u - shift) * self.shape.side() as f64;
        let n = self.shape.side();
        let mut acc = 0.0;
        for (j, &v) in self.values.iter().enumerate() {
            if acc + v >= target && v > 0.0 {
                return shift + (j as f64 + (target - acc) / v) / n as f64;
            }
            acc += v;
        }
        shift + 1.0
    }
}

/// Linear-interpolation lift `Q_N(V)`:
/// `Q_N(V)_i(x) = (1/(2dN)) ((1 - t) V(R_{a,i-}) + t V(R_{a,i+}))`, `t = N x_i - a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearField {
    shape: GridShape,
    values: Vec<f64>,
}

pub fn lift_momentum(v: &MomentumField) -> PiecewiseLinearField {
    PiecewiseLinearField {
        shape: v.shape,
        values: v.values.clone(),
    }
}

impl PiecewiseLinearField {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let shape = self.shape;
        let a = cell_of(&shape, x);
        let m = shape.num_sites();
        let n = shape.side() as f64;
        let scale = 1.0 / (2.0 * shape.dim() as f64 * n);
        (0..shape.dim())
            .map(|ax| {
                let xi = x[ax] - x[ax].floor();
                let t = (xi * n - shape.coord(a, ax) as f64).clamp(0.0, 1.0);
                let lo = self.values[ax * m + shape.shift(a, ax, -1)];
                let hi = self.values[ax * m + a];
                scale * ((1.0 - t) * lo + t * hi)
            })
            .collect()
    }

    /// `∫ Q_N(V)_axis(x) e^{2πik·x} dx`.
    pub fn fourier(&self, axis: usize, k: &[i64]) -> Complex64 {
        lift_field_fourier(&self.shape, &self.values, axis, k)
    }
}

pub(crate) fn lift_field_fourier(shape: &GridShape, v: &[f64], axis: usize, k: &[i64]) -> Complex64 {
    let n = shape.side();
    let m = shape.num_sites();
    let scale = 1.0 / (2.0 * shape.dim() as f64 * n as f64);
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..m {
        let lo = v[axis * m + shape.shift(a, axis, -1)];
        let hi = v[axis * m + a];
        if lo == 0.0 && hi == 0.0 {
            continue;
        }
        let (hl, hh) = hat_factors(k[axis], shape.coord(a, axis), n);
        let mut z = hl * lo + hh * hi;
        for (ax, &ki) in k.iter().enumerate() {
            if ax != axis {
                z *= cube_factor(ki, shape.coord(a, ax), n);
            }
        }
        acc += z;
    }
    acc * scale / m as f64
}

/// Per-step residual of the discrete continuity equation along `path`.
pub fn continuity_residual(path: &crate::path::TransportPath) -> crate::path::ContinuityResidual {
    path.continuity_residual()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::TrigSeries;
    use crate::heat::{heat_apply_density, heat_apply_momentum, laplacian};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn g(d: usize, n: usize) -> GridShape {
        GridShape::new(d, n).unwrap()
    }

    fn random_density(rng: &mut ChaCha8Rng, shape: GridShape, spread: f64) -> Density {
        let w: Vec<f64> = (0..shape.num_sites())
            .map(|_| (spread * rng.random_range(-1.0..1.0)).exp())
            .collect();
        Density::normalized(shape, w).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, shape: GridShape) -> MomentumField {
        MomentumField::new(
            shape,
            (0..shape.num_facets()).map(|_| rng.random_range(-5.0..5.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn action_examples() {
        let shape = g(2, 4);
        let one = Density::uniform(shape);
        assert_eq!(action(&one, &MomentumField::zeros(shape), MeanKind::Logarithmic).unwrap(), 0.0);
        let c = 3.0;
        let a = action(&one, &MomentumField::constant(shape, c), MeanKind::Logarithmic).unwrap();
        assert!((a - c * c / (4.0 * 2.0 * 16.0)).abs() < 1e-15);
        let s3 = g(1, 3);
        let rho = Density::new(s3, vec![3.0, 0.0, 0.0]).unwrap();
        let v = MomentumField::new(s3, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(action(&rho, &v, MeanKind::Logarithmic).unwrap(), f64::INFINITY);
        let v0 = MomentumField::new(s3, vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(action(&rho, &v0, MeanKind::Logarithmic).unwrap(), 0.0);
        assert!(action(&rho, &MomentumField::zeros(g(1, 4)), MeanKind::Harmonic).is_err());
    }

    #[test]
    fn dirichlet_examples() {
        let shape = g(1, 4);
        let f = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(dirichlet_form(&shape, &f, &f).unwrap(), 8.0);
        let c = [2.0; 4];
        assert_eq!(dirichlet_form(&shape, &c, &f).unwrap(), 0.0);
        let n = 9;
        let shape = g(1, n);
        let v1: Vec<f64> = (0..n).map(|a| (2.0 * PI * a as f64 / n as f64).cos()).collect();
        let e = dirichlet_form(&shape, &v1, &v1).unwrap();
        assert!((e - crate::heat::eigenvalue(n, 1) * l2n_inner(&v1, &v1)).abs() < 1e-10);
    }

    #[test]
    fn integration_by_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (d, n) in [(1, 5), (2, 4), (3, 3)] {
            let shape = g(d, n);
            let f: Vec<f64> = (0..shape.num_sites()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..shape.num_sites()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = dirichlet_form(&shape, &f, &h).unwrap();
            let rhs = -l2n_inner(&laplacian(&shape, &f).unwrap(), &h);
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn lipschitz_examples() {
        let shape = g(1, 4);
        assert_eq!(lipschitz_constant(&shape, &[2.0; 4]).unwrap(), 0.0);
        let f = [0.0, 1.0, 0.0, 1.0];
        assert_eq!(lipschitz_constant(&shape, &f).unwrap(), 4.0);
        let f2: Vec<f64> = f.iter().map(|x| x + 7.5).collect();
        assert_eq!(lipschitz_constant(&shape, &f2).unwrap(), 4.0);
    }

    #[test]
    fn regularity_report() {
        let shape = g(1, 4);
        let rho = Density::new(shape, vec![1.2, 0.8, 0.9, 1.1]).unwrap();
        let r = rho.regularity();
        assert_eq!(r.min_value, 0.8);
        assert!((r.lip_n - 1.6).abs() < 1e-12);
        assert!((r.delta_star - 0.625).abs() < 1e-12);
        assert!(check_d_delta(&rho, 0.6).is_ok());
        assert!(check_d_delta(&rho, 0.85).is_err());
        let err = check_d_delta(&rho, 0.7).unwrap_err().to_string();
        assert!(err.contains("pair"), "{err}");
    }

    #[test]
    fn density_validation_and_io() {
        let shape = g(2, 2.max(3));
        assert!(matches!(
            Density::new(shape, vec![1.0; 8]),
            Err(Error::ShapeMismatch(_))
        ));
        let mut vals = vec![1.0; 9];
        vals[0] = -0.5;
        vals[1] = 1.5;
        assert!(matches!(Density::new(shape, vals), Err(Error::NegativeValue { site: 0, .. })));
        let bad = format!(
            "{{\"dim\":1,\"n\":4,\"values\":[{},1,1,1]}}",
            1.0 + 4.0 * 1e-6
        );
        assert!(matches!(Density::from_json(&bad), Err(Error::MassViolation { .. })));
        assert!(matches!(Density::from_json("{\"dim\":1,\"n\":4}"), Err(Error::Malformed(_))));
        assert!(matches!(
            Density::from_json("{\"dim\":1,\"n\":4,\"values\":[-1,3,1,1]}"),
            Err(Error::NegativeValue { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_density(&mut rng, g(2, 8), 1.0);
        let back = Density::from_json(&rho.to_json().unwrap()).unwrap();
        assert_eq!(back, rho);
    }

    #[test]
    fn projection_examples() {
        let shape = g(1, 4);
        let u = ContinuumDensity::uniform(1);
        assert_eq!(project_density(&u, &shape).unwrap(), Density::uniform(shape));
        let mu = ContinuumDensity::sine(0.5, 0.0).unwrap();
        let p = project_density(&mu, &shape).unwrap();
        assert!((p.values()[0] - (1.0 + 1.0 / PI)).abs() < 1e-14);
        assert!((p.values().iter().sum::<f64>() - 4.0).abs() < 1e-13);
        let one = ContinuumField::new(vec![TrigSeries::from_real_modes(1, &[(vec![0], 1.0, 0.0)]).unwrap()]).unwrap();
        let pv = project_momentum(&one, &shape).unwrap();
        assert!(pv.values().iter().all(|&x| x == 8.0));
        assert!(project_momentum(&ContinuumField::zero(1), &shape).unwrap().values().iter().all(|&x| x == 0.0));
        let lifted = lift_momentum(&pv);
        for x in [0.0, 0.13, 0.5, 0.99] {
            assert!((lifted.eval(&[x])[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shape = g(2, 5);
        let mk = |rng: &mut ChaCha8Rng| {
            ContinuumField::new(
                (0..2)
                    .map(|_| {
                        TrigSeries::from_real_modes(
                            2,
                            &[
                                (vec![1, 0], rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                                (vec![1, 2], rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                            ],
                        )
                        .unwrap()
                    })
                    .collect(),
            )
            .unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let sum = project_momentum(&a.add(&b).unwrap(), &shape).unwrap();
        let parts = project_momentum(&a, &shape).unwrap().add(&project_momentum(&b, &shape).unwrap()).unwrap();
        for (x, y) in sum.values().iter().zip(parts.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lifting_inverts_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rho = random_density(&mut rng, g(1, 5), 1.0);
        let lift = lift_density(&rho);
        assert_eq!(lift.project().unwrap(), rho);
        assert!((lift.mass() - 1.0).abs() < 1e-15);
        assert_eq!(lift_density(&Density::uniform(g(2, 3))).eval(&[0.3, 0.8]), 1.0);
        // the Fourier transform of the lift has zeroth coefficient = mass
        assert!((lift.fourier(&[0]) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        // and matches quadrature of the piecewise constant
        let k = [2i64];
        let mut q = Complex64::new(0.0, 0.0);
        let steps = 50_000;
        for i in 0..steps {
            let x = (i as f64 + 0.5) / steps as f64;
            q += Complex64::new(0.0, 2.0 * PI * 2.0 * x).exp() * lift.eval(&[x]);
        }
        q /= steps as f64;
        assert!((q - lift.fourier(&k)).norm() < 1e-6);
    }

    #[test]
    fn lifted_field_midpoints_and_fourier() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let shape = g(2, 4);
        let v = random_field(&mut rng, shape);
        let lv = lift_momentum(&v);
        let a = 6;
        let x = [(shape.coord(a, 0) as f64 + 0.5) / 4.0, (shape.coord(a, 1) as f64 + 0.5) / 4.0];
        let val = lv.eval(&x);
        for ax in 0..2 {
            let m = shape.num_sites();
            let expect = (v.values()[ax * m + shape.shift(a, ax, -1)] + v.values()[ax * m + a]) / (4.0 * 2.0 * 4.0);
            assert!((val[ax] - expect).abs() < 1e-14);
        }
        let k = [1i64, -2];
        let steps = 400;
        let mut q = Complex64::new(0.0, 0.0);
        for i in 0..steps {
            for j in 0..steps {
                let x = [(i as f64 + 0.5) / steps as f64, (j as f64 + 0.5) / steps as f64];
                let ph = 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1]);
                q += Complex64::new(0.0, ph).exp() * lv.eval(&x)[1];
            }
        }
        q /= (steps * steps) as f64;
        assert!((q - lv.fourier(1, &k)).norm() < 1e-4);
    }

    #[test]
    fn antisymmetrization_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for (d, n) in [(1, 5), (2, 4)] {
            let shape = g(d, n);
            for _ in 0..50 {
                let rho = random_density(&mut rng, shape, 1.0);
                let pairs: Vec<f64> = (0..2 * shape.num_facets()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let full = action_ordered_pairs(&rho, &pairs, MeanKind::Logarithmic).unwrap();
                let asym = antisymmetrize(&shape, &pairs).unwrap();
                let reduced = action(&rho, &asym, MeanKind::Logarithmic).unwrap();
                assert!(reduced <= full * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn regularity_preserved_by_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for i in 0..100 {
            let (d, n) = if i % 2 == 0 { (1, 8) } else { (2, 6) };
            let mu = ContinuumDensity::random(&mut rng, d, 3, 0.3, 0.1);
            let p = project_density(&mu, &g(d, n)).unwrap();
            let r = p.regularity();
            // the continuum Lipschitz constant is sampled, hence a lower estimate
            assert!(r.lip_n <= mu.sampled_lipschitz() * (1.0 + 1e-6), "case {i}");
            assert!(r.min_value >= mu.sampled_min() - 1e-12, "case {i}");
        }
    }

    #[test]
    fn projected_solutions_stay_solutions() {
        // ρ_t = 1 + ½ sin(2π(x-t)), V_t = ½ sin(2π(x-t)); ∂_t ρ_t = -∂_x V_t, in d = 2 along e_1
        let shape = g(2, 5);
        let rho_t = |t: f64| {
            ContinuumDensity::from_modes(2, &[(vec![1, 0], 0.0, 0.5), (vec![1, 1], 0.1, 0.0)])
                .unwrap()
                .translate(&[t, 0.0])
        };
        let v_t = |t: f64| {
            let first = TrigSeries::from_real_modes(2, &[(vec![1, 0], 0.0, 0.5), (vec![1, 1], 0.1, 0.0)])
                .unwrap()
                .translate(&[t, 0.0]);
            ContinuumField::new(vec![first, TrigSeries::zero(2)]).unwrap()
        };
        for t in [0.0, 0.2, 0.75] {
            // time derivative of the projection, computed per mode
            let drho = rho_t(t).series().map_coeffs(|k, c| c * Complex64::new(0.0, -2.0 * PI * k[0] as f64));
            let mut dp = vec![0.0; shape.num_sites()];
            for (k, c) in drho.coeffs() {
                for (a, val) in dp.iter_mut().enumerate() {
                    let mut z = *c;
                    for (ax, &ki) in k.iter().enumerate() {
                        z *= cube_factor(ki, shape.coord(a, ax), 5);
                    }
                    *val += z.re;
                }
            }
            let div = project_momentum(&v_t(t), &shape).unwrap().divergence();
            for (x, y) in dp.iter().zip(&div) {
                assert!((x + y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn heat_commutes_with_divergence_and_lowers_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for i in 0..100 {
            let (d, n) = if i % 2 == 0 { (1, 6) } else { (2, 4) };
            let shape = g(d, n);
            let rho = random_density(&mut rng, shape, 1.0);
            let v = random_field(&mut rng, shape);
            let s = [0.001, 0.01, 0.1][i % 3];
            let (hr, _) = heat_apply_density(s, &rho).unwrap();
            let hv = heat_apply_momentum(s, &v).unwrap();
            for kind in [MeanKind::Logarithmic, MeanKind::Harmonic] {
                let before = action(&rho, &v, kind).unwrap();
                let after = action(&hr, &hv, kind).unwrap();
                assert!(after <= before + 1e-10, "case {i}");
            }
            let lhs = hv.divergence();
            let rhs = crate::heat::heat_apply(&shape, s, &v.divergence()).unwrap();
            for (x, y) in lhs.iter().zip(&rhs) {
                assert!((x - y).abs() < 1e-10);
            }
            for s2 in [0.01, 0.1, 1.0] {
                let (h2, _) = heat_apply_density(s2, &rho).unwrap();
                assert!(h2.regularity().lip_n <= rho.regularity().lip_n * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn gradient_potential_divergence_is_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let shape = g(2, 5);
        let psi: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let div = divergence(&shape, &gradient_potential(&shape, &psi));
        let lap = laplacian(&shape, &psi).unwrap();
        for (x, y) in div.iter().zip(&lap) {
            assert!((x - y).abs() < 1e-10);
        }
        // adjoint identity
        let w: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = gradient_potential(&shape, &psi).iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs: f64 = gradient_potential_adjoint(&shape, &w).iter().zip(&psi).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn action_jointly_convex(seed in 0u64..10_000, lambda in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = g(1, 5);
            let (r0, r1) = (random_density(&mut rng, shape, 1.5), random_density(&mut rng, shape, 1.5));
            let (v0, v1) = (random_field(&mut rng, shape), random_field(&mut rng, shape));
            let rm = r0.mix(&r1, lambda).unwrap();
            let vm = v0.scale(1.0 - lambda).add(&v1.scale(lambda)).unwrap();
            let lhs = action(&rm, &vm, MeanKind::Logarithmic).unwrap();
            let rhs = (1.0 - lambda) * action(&r0, &v0, MeanKind::Logarithmic).unwrap()
                + lambda * action(&r1, &v1, MeanKind::Logarithmic).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn harmonic_action_dominates(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = g(2, 3);
            let rho = random_density(&mut rng, shape, 2.0);
            let v = random_field(&mut rng, shape);
            let h = action(&rho, &v, MeanKind::Harmonic).unwrap();
            let l = action(&rho, &v, MeanKind::Logarithmic).unwrap();
            prop_assert!(h >= l * (1.0 - 1e-14));
        }

        #[test]
        fn dirichlet_symmetric_nonnegative(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = g(2, 4);
            let f: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = dirichlet_form(&shape, &f, &h).unwrap();
            let b = dirichlet_form(&shape, &h, &f).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(dirichlet_form(&shape, &f, &f).unwrap() >= 0.0);
        }
    }
}
