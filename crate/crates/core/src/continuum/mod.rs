//! Trigonometric-polynomial densities and fields on the continuous torus
//! `T^d = R^d / Z^d`, the continuous heat flow, and one-dimensional optimal
//! transport on the circle.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod circle;
mod weak;

pub use circle::{
    circle_geodesic, circle_w2, CircleGeodesic, CircleMeasure, CircleW2, GeodesicSample, QuantileRep,
    DEFAULT_RESOLUTION,
};
pub use weak::{
    gauss_legendre, weak_continuity_residual, ClosedFormPath, TestFunction, WeakPath, WeakResidual,
};

/// Coefficients are treated as Hermitian when conjugate pairs agree to this.
const HERMITIAN_TOL: f64 = 1e-12;

/// `e^{iπ m / n}` with the angle reduced to `[0, 2n)` before evaluation.
pub(crate) fn half_turn_phase(m: i64, n: i64) -> Complex64 {
    let r = m.rem_euclid(2 * n);
    if r == 0 {
        return Complex64::new(1.0, 0.0);
    }
    if r == n {
        return Complex64::new(-1.0, 0.0);
    }
    if 2 * r == n {
        return Complex64::new(0.0, 1.0);
    }
    if 2 * r == 3 * n {
        return Complex64::new(0.0, -1.0);
    }
    let ang = PI * r as f64 / n as f64;
    Complex64::new(ang.cos(), ang.sin())
}

/// `sin(π k / n) / (π k / n)`, exactly zero at nonzero multiples of `n`.
fn sinc_frac(k: i64, n: i64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let r = k.rem_euclid(2 * n);
    let s = if r == 0 || r == n {
        0.0
    } else {
        (PI * r as f64 / n as f64).sin()
    };
    s / (PI * k as f64 / n as f64)
}

/// Cube average `N ∫_{a/N}^{(a+1)/N} e^{2πikx} dx`.
pub fn cube_factor(k: i64, a: usize, n: usize) -> Complex64 {
    if k == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let n = n as i64;
    half_turn_phase(k * (2 * a as i64 + 1), n) * sinc_frac(k, n)
}

/// Point value `e^{2πik(a+1)/N}` on the upper face of cell `a`.
pub fn face_factor(k: i64, a: usize, n: usize) -> Complex64 {
    let n = n as i64;
    half_turn_phase(2 * k * (a as i64 + 1), n)
}

/// `(∫_0^1 (1-t) e^{iωt} dt, ∫_0^1 t e^{iωt} dt)` multiplied by `e^{2πika/N}`
/// with `ω = 2πk/N`: the two hat-function moments over cell `a`.
pub fn hat_factors(k: i64, a: usize, n: usize) -> (Complex64, Complex64) {
    if k == 0 {
        return (Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0));
    }
    let nn = n as i64;
    let base = half_turn_phase(2 * k * a as i64, nn);
    let e = half_turn_phase(2 * k, nn);
    let w = 2.0 * PI * k as f64 / n as f64;
    let i = Complex64::new(0.0, 1.0);
    let hi = e * (1.0 / (i * w) + 1.0 / (w * w)) - 1.0 / (w * w);
    let total = cube_factor(k, 0, n);
    (base * (total - hi), base * hi)
}

/// Finite real-valued Fourier series `Σ_k c_k e^{2πi k·x}` with Hermitian coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigSeries {
    dim: usize,
    coeffs: BTreeMap<Vec<i64>, Complex64>,
}

impl TrigSeries {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            coeffs: BTreeMap::new(),
        }
    }

    /// Builds from complex coefficients, checking Hermitian symmetry.
    pub fn from_coeffs(dim: usize, coeffs: impl IntoIterator<Item = (Vec<i64>, Complex64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidShape("dimension must be at least 1".into()));
        }
        let mut map: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
        for (k, c) in coeffs {
            if k.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: k.len(),
                });
            }
            if !c.re.is_finite() || !c.im.is_finite() {
                return Err(Error::Domain(format!("non-finite coefficient at {k:?}")));
            }
            *map.entry(k).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        for (k, c) in &map {
            let neg: Vec<i64> = k.iter().map(|x| -x).collect();
            let partner = map.get(&neg).copied().unwrap_or_default();
            if (partner.conj() - c).norm() > HERMITIAN_TOL * (1.0 + c.norm()) {
                return Err(Error::Domain(format!(
                    "coefficients are not Hermitian at frequency {k:?}"
                )));
            }
        }
        Ok(Self { dim, coeffs: map })
    }

    /// Real modes `Σ (α cos(2πk·x) + β sin(2πk·x))` given as `(k, α, β)`.
    pub fn from_real_modes(dim: usize, modes: &[(Vec<i64>, f64, f64)]) -> Result<Self> {
        let mut out = Vec::with_capacity(2 * modes.len());
        for (k, alpha, beta) in modes {
            if k.iter().all(|&x| x == 0) {
                out.push((k.clone(), Complex64::new(*alpha, 0.0)));
                continue;
            }
            let neg: Vec<i64> = k.iter().map(|x| -x).collect();
            out.push((k.clone(), Complex64::new(0.5 * alpha, -0.5 * beta)));
            out.push((neg, Complex64::new(0.5 * alpha, 0.5 * beta)));
        }
        Self::from_coeffs(dim, out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (&Vec<i64>, &Complex64)> {
        self.coeffs.iter()
    }

    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.coeffs.get(k).copied().unwrap_or_default()
    }

    /// Largest `|k_i|` over the support.
    pub fn max_frequency(&self) -> i64 {
        self.coeffs
            .keys()
            .flat_map(|k| k.iter().map(|x| x.abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .map(|(k, c)| {
                let ph: f64 = 2.0 * PI * k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum::<f64>();
                c.re * ph.cos() - c.im * ph.sin()
            })
            .sum()
    }

    /// Gradient at `x`.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for (k, c) in &self.coeffs {
            let ph: f64 = 2.0 * PI * k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum::<f64>();
            // d/dx_i Re(c e^{iφ}) = Re(c · 2πi k_i e^{iφ})
            let s = -(c.re * ph.sin() + c.im * ph.cos());
            for (gi, &ki) in g.iter_mut().zip(k) {
                *gi += 2.0 * PI * ki as f64 * s;
            }
        }
        g
    }

    /// `∫ f(x) e^{2πik·x} dx = c_{-k}`.
    pub fn fourier(&self, k: &[i64]) -> Complex64 {
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        self.coeff(&neg)
    }

    pub fn map_coeffs(&self, f: impl Fn(&[i64], Complex64) -> Complex64) -> Self {
        Self {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|(k, c)| (k.clone(), f(k, *c))).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_coeffs(|_, c| c * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut coeffs = self.coeffs.clone();
        for (k, c) in &other.coeffs {
            *coeffs.entry(k.clone()).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        Ok(Self { dim: self.dim, coeffs })
    }

    /// `f(· - h)`.
    pub fn translate(&self, h: &[f64]) -> Self {
        self.map_coeffs(|k, c| {
            let ph = -2.0 * PI * k.iter().zip(h).map(|(&ki, &hi)| ki as f64 * hi).sum::<f64>();
            c * Complex64::new(ph.cos(), ph.sin())
        })
    }

    /// `∂_{x_i} f`.
    pub fn derivative(&self, axis: usize) -> Self {
        self.map_coeffs(|k, c| c * Complex64::new(0.0, 2.0 * PI * k[axis] as f64))
    }

    /// Heat multiplier `e^{-4π²|k|² s}` on every mode.
    pub fn heat(&self, s: f64) -> Self {
        self.map_coeffs(|k, c| {
            let k2: i64 = k.iter().map(|x| x * x).sum();
            c * (-4.0 * PI * PI * k2 as f64 * s).exp()
        })
    }

    /// `‖f‖²_{L²}` by Parseval.
    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_sqr()).sum()
    }

    /// `‖∇f‖²_{L²}` by Parseval.
    pub fn grad_norm_sq(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|(k, c)| {
                let k2: i64 = k.iter().map(|x| x * x).sum();
                4.0 * PI * PI * k2 as f64 * c.norm_sqr()
            })
            .sum()
    }

    /// Points of the uniform sample grid with `m` points per axis.
    fn sample_points(&self, m: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
        let total = m.pow(self.dim as u32);
        let dim = self.dim;
        (0..total).map(move |mut idx| {
            let mut x = vec![0.0; dim];
            for ax in (0..dim).rev() {
                x[ax] = (idx % m) as f64 / m as f64;
                idx /= m;
            }
            x
        })
    }

    /// Default sampling resolution per axis for sup-type estimates.
    pub fn sample_resolution(&self) -> usize {
        let k = self.max_frequency().max(1) as usize;
        match self.dim {
            1 => (64 * k).max(4096),
            2 => (16 * k).max(256),
            _ => (8 * k).max(32),
        }
    }

    /// `(min, max)` over the sample grid.
    pub fn sampled_range(&self, m: usize) -> (f64, f64) {
        self.sample_points(m)
            .map(|x| self.eval(&x))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    pub fn sampled_sup_abs(&self, m: usize) -> f64 {
        let (lo, hi) = self.sampled_range(m);
        lo.abs().max(hi.abs())
    }

    /// `sup |∇f|` over the sample grid; underestimates the exact value by
    /// at most the sampling error.
    pub fn sampled_lipschitz(&self, m: usize) -> f64 {
        self.sample_points(m)
            .map(|x| self.grad(&x).iter().map(|g| g * g).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Probability density on `T^d` given by a trigonometric polynomial with
/// zeroth coefficient exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumDensity {
    series: TrigSeries,
}

impl ContinuumDensity {
    pub fn uniform(dim: usize) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(vec![0; dim], Complex64::new(1.0, 0.0));
        Self {
            series: TrigSeries { dim, coeffs },
        }
    }

    /// Validates unit mass and nonnegativity on the default sample grid.
    pub fn new(series: TrigSeries) -> Result<Self> {
        let c0 = series.coeff(&vec![0; series.dim()]);
        if c0 != Complex64::new(1.0, 0.0) {
            return Err(Error::MassViolation {
                total: c0.re,
                expected: 1.0,
            });
        }
        let (lo, _) = series.sampled_range(series.sample_resolution());
        if lo < 0.0 {
            return Err(Error::Domain(format!(
                "trigonometric density takes the negative value {lo:e} on the sample grid"
            )));
        }
        Ok(Self { series })
    }

    /// `1 + Σ (α cos(2πk·x) + β sin(2πk·x))` for nonzero `k`.
    pub fn from_modes(dim: usize, modes: &[(Vec<i64>, f64, f64)]) -> Result<Self> {
        let mut all = vec![(vec![0; dim], 1.0, 0.0)];
        for m in modes {
            if m.0.iter().all(|&x| x == 0) {
                return Err(Error::Domain("the zero mode is fixed to 1".into()));
            }
            all.push(m.clone());
        }
        Self::new(TrigSeries::from_real_modes(dim, &all)?)
    }

    /// `1 + amp·sin(2π(x - shift))` in one dimension.
    pub fn sine(amp: f64, shift: f64) -> Result<Self> {
        Self::from_modes(1, &[(vec![1], 0.0, amp)]).map(|d| d.translate(&[shift]))
    }

    /// Random positive density `1 + Σ small low modes`, rejection-sampled for `min > floor`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize, max_freq: i64, amp: f64, floor: f64) -> Self {
        loop {
            let mut modes = Vec::new();
            let mut k = vec![-max_freq; dim];
            loop {
                let nonzero = k.iter().any(|&x| x != 0);
                // one representative of each ± pair
                let first = k.iter().find(|&&x| x != 0).copied().unwrap_or(0);
                if nonzero && first > 0 {
                    let norm: f64 = k.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                    let scale = amp / norm;
                    modes.push((k.clone(), scale * rng.random_range(-1.0..1.0), scale * rng.random_range(-1.0..1.0)));
                }
                let mut ax = dim;
                loop {
                    if ax == 0 {
                        break;
                    }
                    ax -= 1;
                    k[ax] += 1;
                    if k[ax] <= max_freq {
                        break;
                    }
                    k[ax] = -max_freq;
                    if ax == 0 {
                        ax = usize::MAX;
                        break;
                    }
                }
                if ax == usize::MAX {
                    break;
                }
            }
            if let Ok(rho) = Self::from_modes(dim, &modes) {
                if rho.sampled_min() > floor {
                    return rho;
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.series.dim()
    }

    pub fn series(&self) -> &TrigSeries {
        &self.series
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.series.eval(x)
    }

    pub fn sampled_min(&self) -> f64 {
        self.series.sampled_range(self.series.sample_resolution()).0
    }

    pub fn sampled_lipschitz(&self) -> f64 {
        self.series.sampled_lipschitz(self.series.sample_resolution())
    }

    pub fn translate(&self, h: &[f64]) -> Self {
        Self {
            series: self.series.translate(h),
        }
    }

    /// Convex combination `(1-λ) self + λ other`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Result<Self> {
        Ok(Self {
            series: self.series.scale(1.0 - lambda).add(&other.series.scale(lambda))?.map_coeffs(|k, c| {
                if k.iter().all(|&x| x == 0) {
                    Complex64::new(1.0, 0.0)
                } else {
                    c
                }
            }),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&CoefficientFile::from(&self.series))?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CoefficientFile = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        Self::new(file.into_series()?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CoefficientFile::from(&self.series))?)
    }
}

/// Continuous heat flow `H_s μ`, multiplier `e^{-4π²|k|² s}`.
pub fn heat_continuous(s: f64, mu: &ContinuumDensity) -> Result<ContinuumDensity> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("heat time must be >= 0, got {s}")));
    }
    if s == 0.0 {
        return Ok(mu.clone());
    }
    Ok(ContinuumDensity {
        series: mu.series.heat(s),
    })
}

/// Vector field on `T^d` with one trigonometric series per component.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumField {
    components: Vec<TrigSeries>,
}

impl ContinuumField {
    pub fn new(components: Vec<TrigSeries>) -> Result<Self> {
        let d = components.len();
        if d == 0 {
            return Err(Error::InvalidShape("field needs at least one component".into()));
        }
        for c in &components {
            if c.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: c.dim(),
                });
            }
        }
        Ok(Self { components })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            components: vec![TrigSeries::zero(dim); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, axis: usize) -> &TrigSeries {
        &self.components[axis]
    }

    pub fn components(&self) -> &[TrigSeries] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(Self {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect::<Result<_>>()?,
        })
    }

    pub fn heat(&self, s: f64) -> Self {
        Self {
            components: self.components.iter().map(|c| c.heat(s)).collect(),
        }
    }

    pub fn divergence(&self) -> TrigSeries {
        let d = self.dim();
        let mut out = TrigSeries::zero(d);
        for (ax, c) in self.components.iter().enumerate() {
            out = out.add(&c.derivative(ax)).expect("same dimension");
        }
        out
    }

    /// `sup |V|` over the sample grid.
    pub fn sampled_sup(&self, m: usize) -> f64 {
        let probe = &self.components[0];
        probe
            .sample_points(m)
            .map(|x| self.eval(&x).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `sup ‖DV‖_op` over the sample grid.
    pub fn sampled_lipschitz(&self, m: usize) -> f64 {
        let d = self.dim();
        let probe = &self.components[0];
        probe
            .sample_points(m)
            .map(|x| {
                let jac: Vec<Vec<f64>> = self.components.iter().map(|c| c.grad(&x)).collect();
                operator_norm(&jac, d)
            })
            .fold(0.0, f64::max)
    }

    pub fn sample_resolution(&self) -> usize {
        self.components
            .iter()
            .map(|c| c.sample_resolution())
            .max()
            .unwrap_or(32)
    }
}

/// Spectral norm of a small square matrix.
fn operator_norm(j: &[Vec<f64>], d: usize) -> f64 {
    if d == 1 {
        return j[0][0].abs();
    }
    let m = nalgebra::DMatrix::from_fn(d, d, |r, c| j[r][c]);
    m.singular_values().max()
}

/// On-disk form of a coefficient list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientFile {
    pub dim: usize,
    pub coeffs: Vec<CoefficientEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub k: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

impl From<&TrigSeries> for CoefficientFile {
    fn from(s: &TrigSeries) -> Self {
        Self {
            dim: s.dim(),
            coeffs: s
                .coeffs()
                .map(|(k, c)| CoefficientEntry {
                    k: k.clone(),
                    re: c.re,
                    im: c.im,
                })
                .collect(),
        }
    }
}

impl CoefficientFile {
    pub fn into_series(self) -> Result<TrigSeries> {
        let dim = self.dim;
        TrigSeries::from_coeffs(
            dim,
            self.coeffs.into_iter().map(|e| (e.k, Complex64::new(e.re, e.im))),
        )
        .map_err(|e| match e {
            Error::DimensionMismatch { .. } => Error::Malformed(e.to_string()),
            other => other,
        })
    }
}
