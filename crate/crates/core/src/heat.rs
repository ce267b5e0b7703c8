//! Discrete Laplacian, its inverse and the heat semigroup `H_t = exp(t Δ_N)`,
//! all diagonalised by per-axis discrete Fourier transforms.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::fields::{Density, MomentumField};
use crate::grid::GridShape;

/// Values in `[-CLAMP_TOLERANCE, 0)` produced by spectral synthesis are
/// clamped to zero; anything more negative is an error.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

/// `1 - cos(2π l / n)`, exact at multiples of a quarter turn.
pub(crate) fn one_minus_cos(l: i64, n: usize) -> f64 {
    let n = n as i64;
    let r = l.rem_euclid(n);
    if r == 0 {
        0.0
    } else if 2 * r == n {
        2.0
    } else if 4 * r == n || 4 * r == 3 * n {
        1.0
    } else {
        let s = (PI * r as f64 / n as f64).sin();
        2.0 * s * s
    }
}

/// Eigenvalue `λ_l = 2N²(1 - cos(2πl/N))` of `-Δ_N` in one dimension.
pub fn eigenvalue(n: usize, l: i64) -> f64 {
    2.0 * (n * n) as f64 * one_minus_cos(l, n)
}

/// Spectral gap `2N²(1 - cos(2π/N))`.
pub fn spectral_gap(n: usize) -> f64 {
    eigenvalue(n, 1)
}

/// Per-shape Fourier plans and the one-dimensional spectrum of `-Δ_N`.
pub struct SpectralCache {
    shape: GridShape,
    eigenvalues: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralCache")
            .field("shape", &self.shape)
            .field("eigenvalues", &self.eigenvalues)
            .finish()
    }
}

impl SpectralCache {
    pub fn new(shape: GridShape) -> Self {
        let n = shape.side();
        let mut planner = FftPlanner::new();
        Self {
            shape,
            eigenvalues: (0..n as i64).map(|j| eigenvalue(n, j)).collect(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// Shared cache entry for `shape`; built once and read-only afterwards.
    pub fn for_shape(shape: GridShape) -> Arc<SpectralCache> {
        static CACHE: OnceLock<Mutex<HashMap<GridShape, Arc<SpectralCache>>>> = OnceLock::new();
        let map = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = map.lock().expect("spectral cache poisoned");
        guard
            .entry(shape)
            .or_insert_with(|| Arc::new(SpectralCache::new(shape)))
            .clone()
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// `λ_j` indexed by DFT bin `j ∈ {0, …, N-1}` (bin `j` is frequency `j` or `j-N`).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvalue of `-Δ_N` at flat spectral index `k`.
    pub fn laplace_symbol(&self, k: usize) -> f64 {
        (0..self.shape.dim())
            .map(|ax| self.eigenvalues[self.shape.coord(k, ax)])
            .sum()
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let shape = self.shape;
        let n = shape.side();
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..shape.dim() {
            let stride = shape.stride(axis);
            for start in 0..shape.num_sites() {
                if shape.coord(start, axis) != 0 {
                    continue;
                }
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + j * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    data[start + j * stride] = *v;
                }
            }
        }
    }

    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }

    /// Inverse transform, normalised, real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, true);
        let scale = 1.0 / self.shape.num_sites() as f64;
        spec.into_iter().map(|z| z.re * scale).collect()
    }

    /// Applies the Fourier multiplier `m(k)` (real, even in `k`).
    pub fn apply_multiplier(&self, f: &[f64], m: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut spec = self.forward(f);
        for (k, z) in spec.iter_mut().enumerate() {
            *z *= m(k);
        }
        self.inverse(spec)
    }

    pub fn heat_multiplier(&self, t: f64, k: usize) -> f64 {
        (-t * self.laplace_symbol(k)).exp()
    }
}

fn check_len(shape: &GridShape, f: &[f64]) -> Result<()> {
    if f.len() != shape.num_sites() {
        return Err(Error::ShapeMismatch(format!(
            "site function has {} entries, grid has {}",
            f.len(),
            shape.num_sites()
        )));
    }
    Ok(())
}

/// Stencil `Δ_N f(a) = N² Σ_i (f(a+e_i) - 2 f(a) + f(a-e_i))`.
pub fn laplacian(shape: &GridShape, f: &[f64]) -> Result<Vec<f64>> {
    check_len(shape, f)?;
    Ok(laplacian_unchecked(shape, f))
}

pub(crate) fn laplacian_unchecked(shape: &GridShape, f: &[f64]) -> Vec<f64> {
    let n2 = (shape.side() * shape.side()) as f64;
    (0..shape.num_sites())
        .map(|a| {
            let mut acc = 0.0;
            for axis in 0..shape.dim() {
                acc += f[shape.shift(a, axis, 1)] - 2.0 * f[a] + f[shape.shift(a, axis, -1)];
            }
            n2 * acc
        })
        .collect()
}

/// Zero-mean solution of `Δ_N f = g`; requires `Σ g = 0`.
pub fn laplacian_solve(shape: &GridShape, g: &[f64]) -> Result<Vec<f64>> {
    check_len(shape, g)?;
    let sum: f64 = g.iter().sum();
    let l1: f64 = g.iter().map(|x| x.abs()).sum();
    if sum.abs() > 1e-9 * l1.max(f64::MIN_POSITIVE) && sum.abs() > 1e-300 {
        return Err(Error::Precondition(format!(
            "Δ_N f = g solvable only for Σ g = 0 (got Σ g = {sum:e})"
        )));
    }
    Ok(laplacian_solve_unchecked(
        &SpectralCache::for_shape(*shape),
        g,
    ))
}

/// Pseudo-inverse of `Δ_N`: kills the zero mode of `g` and returns a zero-mean result.
pub(crate) fn laplacian_solve_unchecked(cache: &SpectralCache, g: &[f64]) -> Vec<f64> {
    cache.apply_multiplier(g, |k| {
        if k == 0 {
            0.0
        } else {
            -1.0 / cache.laplace_symbol(k)
        }
    })
}

/// `H_t f` for a site function. `t = 0` returns the input unchanged.
pub fn heat_apply(shape: &GridShape, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    check_len(shape, f)?;
    check_time(t)?;
    if t == 0.0 {
        return Ok(f.to_vec());
    }
    let cache = SpectralCache::for_shape(*shape);
    Ok(heat_apply_cached(&cache, t, f))
}

pub(crate) fn heat_apply_cached(cache: &SpectralCache, t: f64, f: &[f64]) -> Vec<f64> {
    if t == 0.0 {
        return f.to_vec();
    }
    cache.apply_multiplier(f, |k| cache.heat_multiplier(t, k))
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("heat time must be >= 0, got {t}")));
    }
    Ok(())
}

/// Outcome of a positivity-preserving heat step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeatDiagnostics {
    /// Number of entries in `[-CLAMP_TOLERANCE, 0)` that were set to zero.
    pub clamped: usize,
}

/// `H_t ρ` for a density. Mass is preserved exactly by the untouched zero mode.
pub fn heat_apply_density(t: f64, rho: &Density) -> Result<(Density, HeatDiagnostics)> {
    let shape = *rho.shape();
    let mut out = heat_apply(&shape, t, rho.values())?;
    let mut diag = HeatDiagnostics::default();
    for (a, v) in out.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v >= -CLAMP_TOLERANCE {
                *v = 0.0;
                diag.clamped += 1;
            } else {
                return Err(Error::NegativeValue { site: a, value: *v });
            }
        }
    }
    Ok((Density::new_unchecked(shape, out), diag))
}

/// `H_t V` on each axis component: `(H_t V)(R_{a,i+}) = N^{-d} Σ_b h_t(a-b) V(R_{b,i+})`.
pub fn heat_apply_momentum(t: f64, v: &MomentumField) -> Result<MomentumField> {
    check_time(t)?;
    let shape = *v.shape();
    if t == 0.0 {
        return Ok(v.clone());
    }
    let cache = SpectralCache::for_shape(shape);
    let m = shape.num_sites();
    let mut out = Vec::with_capacity(shape.num_facets());
    for axis in 0..shape.dim() {
        out.extend(heat_apply_cached(&cache, t, &v.values()[axis * m..(axis + 1) * m]));
    }
    MomentumField::new(shape, out)
}

/// One-dimensional heat kernel `h_s(a) = Σ_l e^{-λ_l s} cos(2π l a / N)`,
/// normalised so that `N^{-1} Σ_a h_s(a) = 1`.
pub fn heat_kernel_1d(n: usize, s: f64) -> Vec<f64> {
    let ls: Vec<i64> = (-(n as i64 / 2) + if n % 2 == 0 { 1 } else { 0 }..=(n as i64 / 2)).collect();
    (0..n)
        .map(|a| {
            ls.iter()
                .map(|&l| {
                    let phase = 2.0 * PI * (l * a as i64).rem_euclid(n as i64) as f64 / n as f64;
                    (-eigenvalue(n, l) * s).exp() * phase.cos()
                })
                .sum()
        })
        .collect()
}

/// Tensor-product kernel `h_s^N(a) = Π_i h_s^{1,N}(a_i)`.
pub fn heat_kernel(shape: &GridShape, s: f64) -> Vec<f64> {
    let k1 = heat_kernel_1d(shape.side(), s);
    (0..shape.num_sites())
        .map(|a| (0..shape.dim()).map(|ax| k1[shape.coord(a, ax)]).product())
        .collect()
}

/// Constant of the lattice Poincaré inequality, `1/(2N²(1-cos(2π/N)))`.
pub fn poincare_constant(shape: &GridShape) -> Result<f64> {
    if !shape.within_poincare_range() {
        return Err(Error::Precondition(format!(
            "Poincaré constant requires N >= 4 (N = {})",
            shape.side()
        )));
    }
    Ok(1.0 / spectral_gap(shape.side()))
}

/// `κ = inf_{N≥4} 2N²(1 - cos(2π/N))`, attained at `N = 4`.
pub fn kappa_constant() -> f64 {
    32.0
}

/// Both sides of `‖f‖² ≤ C E_N(f)` and `E_N(Δ^{-1} f) ≤ C ‖f‖²` for zero-mean `f`.
#[derive(Debug, Clone, Copy)]
pub struct PoincareCheck {
    pub norm_sq: f64,
    pub energy: f64,
    pub inverse_energy: f64,
    pub constant: f64,
}

impl PoincareCheck {
    pub fn first_holds(&self, rtol: f64) -> bool {
        self.norm_sq <= self.constant * self.energy * (1.0 + rtol) + 1e-300
    }

    pub fn second_holds(&self, rtol: f64) -> bool {
        self.inverse_energy <= self.constant * self.norm_sq * (1.0 + rtol) + 1e-300
    }
}

pub fn poincare_check(shape: &GridShape, f: &[f64]) -> Result<PoincareCheck> {
    let constant = poincare_constant(shape)?;
    let inv = laplacian_solve(shape, f)?;
    Ok(PoincareCheck {
        norm_sq: crate::fields::l2n_inner(f, f),
        energy: crate::fields::dirichlet_form(shape, f, f)?,
        inverse_energy: crate::fields::dirichlet_form(shape, &inv, &inv)?,
        constant,
    })
}
