//! Quadratic optimal transport on the circle `T^1` through unrolled quantile
//! functions `q(u+1) = q(u) + 1`:
//! `W_2²(μ0, μ1) = min_θ ∫_0^1 |q_0(u) - q_1(u+θ)|² du`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::ContinuumDensity;
use crate::error::{Error, Result};

/// Default number of quantile nodes.
pub const DEFAULT_RESOLUTION: usize = 100_000;

/// A probability measure on `[0,1)` with a positive density.
pub trait CircleMeasure: Sync {
    /// `μ([0, x))` for `x ∈ [0, 1]`.
    fn cdf(&self, x: f64) -> f64;

    fn density(&self, x: f64) -> f64;

    /// Infimum of the density, used to reject measures with vanishing density.
    fn min_density(&self) -> f64;

    /// Unrolled quantile. The default inverts [`CircleMeasure::cdf`] by
    /// safeguarded Newton iteration.
    fn quantile(&self, u: f64) -> f64 {
        let shift = u.floor();
        let target = u - shift;
        if target == 0.0 {
            return shift;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = target;
        for _ in 0..100 {
            let f = self.cdf(x) - target;
            if f.abs() <= 1e-15 {
                break;
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let step = f / self.density(x);
            let mut next = x - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-16 {
                x = next;
                break;
            }
            x = next;
        }
        shift + x
    }
}

impl CircleMeasure for ContinuumDensity {
    fn cdf(&self, x: f64) -> f64 {
        let mut acc = x;
        for (k, c) in self.series().coeffs() {
            let k = k[0];
            if k == 0 {
                continue;
            }
            // c (e^{2πikx} - 1) / (2πik)
            let w = 2.0 * PI * k as f64;
            let e = Complex64::new((w * x).cos() - 1.0, (w * x).sin());
            acc += (c * e / Complex64::new(0.0, w)).re;
        }
        acc
    }

    fn density(&self, x: f64) -> f64 {
        self.eval(&[x])
    }

    fn min_density(&self) -> f64 {
        self.sampled_min()
    }
}

/// Quantile function tabulated at `u_j = j/M`, `j = 0..=M`, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileRep {
    values: Vec<f64>,
}

impl QuantileRep {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain("quantile table needs at least two nodes".into()));
        }
        if values.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::Domain("quantile table must be nondecreasing".into()));
        }
        let span = values[values.len() - 1] - values[0];
        if (span - 1.0).abs() > 1e-9 {
            return Err(Error::MassViolation {
                total: span,
                expected: 1.0,
            });
        }
        Ok(Self { values })
    }

    pub fn from_measure(mu: &dyn CircleMeasure, m: usize) -> Self {
        let mut values: Vec<f64> = (0..m).map(|j| mu.quantile(j as f64 / m as f64)).collect();
        values.push(values[0] + 1.0);
        Self { values }
    }

    pub fn resolution(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interpolated unrolled quantile at any real `u`.
    pub fn eval(&self, u: f64) -> f64 {
        let m = self.resolution();
        let shift = u.floor();
        let s = (u - shift) * m as f64;
        let j = (s.floor() as usize).min(m - 1);
        let frac = s - j as f64;
        shift + self.values[j] + frac * (self.values[j + 1] - self.values[j])
    }

    fn base(&self) -> f64 {
        self.values[0]
    }
}

impl QuantileRep {
    /// Unrolled inverse `G(y)` with `q(G(y)) = y` and `G(y+1) = G(y) + 1`.
    fn unrolled_level(&self, y: f64) -> f64 {
        let m = self.resolution();
        let wraps = (y - self.base()).floor();
        let y = y - wraps;
        let j = self.values.partition_point(|&v| v <= y).clamp(1, m) - 1;
        let width = self.values[j + 1] - self.values[j];
        let frac = if width > 0.0 { (y - self.values[j]) / width } else { 0.0 };
        (j as f64 + frac) / m as f64 + wraps
    }
}

impl CircleMeasure for QuantileRep {
    fn cdf(&self, x: f64) -> f64 {
        self.unrolled_level(x) - self.unrolled_level(0.0)
    }

    fn density(&self, x: f64) -> f64 {
        let m = self.resolution();
        let wraps = (x - self.base()).floor();
        let y = x - wraps;
        let j = self.values.partition_point(|&v| v <= y).clamp(1, m) - 1;
        let width = self.values[j + 1] - self.values[j];
        if width > 0.0 {
            1.0 / (m as f64 * width)
        } else {
            f64::INFINITY
        }
    }

    fn min_density(&self) -> f64 {
        let m = self.resolution() as f64;
        self.values
            .windows(2)
            .map(|w| 1.0 / (m * (w[1] - w[0])))
            .fold(f64::INFINITY, f64::min)
    }

    fn quantile(&self, u: f64) -> f64 {
        let base = self.unrolled_level(0.0);
        self.eval(u + base)
    }
}

/// Result of [`circle_w2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleW2 {
    pub value: f64,
    pub value_sq: f64,
    /// Optimal offset `θ*`.
    pub theta: f64,
    pub resolution: usize,
    /// `W_2²` at resolution `M/2`.
    pub half_resolution_sq: f64,
    /// Richardson-extrapolated `W_2²` from resolutions `M/2` and `M`.
    pub extrapolated_sq: f64,
}

fn check_measure(mu: &dyn CircleMeasure, name: &str) -> Result<()> {
    let m = mu.min_density();
    if !(m > 0.0) {
        return Err(Error::Domain(format!(
            "{name} must have a strictly positive density (min {m:e})"
        )));
    }
    Ok(())
}

/// Golden-section minimisation of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// `∫_0^1 |q0(u) - q1(u+θ)|² du` by the periodic rectangle rule on the `q0` nodes.
fn shift_functional(q0: &QuantileRep, q1: &QuantileRep, theta: f64) -> f64 {
    let m = q0.resolution();
    let mut acc = 0.0;
    for j in 0..m {
        let u = j as f64 / m as f64;
        let d = q0.values[j] - q1.eval(u + theta);
        acc += d * d;
    }
    acc / m as f64
}

fn optimal_shift(q0: &QuantileRep, q1: &QuantileRep) -> (f64, f64) {
    // coarse scan guards the bracket, then golden section
    let scan = 64;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..=scan {
        let th = -1.0 + 2.0 * i as f64 / scan as f64;
        let v = shift_functional(q0, q1, th);
        if v < best.1 {
            best = (th, v);
        }
    }
    let h = 2.0 / scan as f64;
    golden_section(|th| shift_functional(q0, q1, th), best.0 - h, best.0 + h, 1e-13)
}

/// `W_2(μ0, μ1)` on the circle with `m` quantile nodes.
pub fn circle_w2(mu0: &dyn CircleMeasure, mu1: &dyn CircleMeasure, m: usize) -> Result<CircleW2> {
    check_measure(mu0, "first measure")?;
    check_measure(mu1, "second measure")?;
    if m < 8 {
        return Err(Error::Domain(format!("resolution {m} too small")));
    }
    let q0 = QuantileRep::from_measure(mu0, m);
    let q1 = QuantileRep::from_measure(mu1, m);
    let (theta, value_sq) = optimal_shift(&q0, &q1);
    let half = m / 2;
    let h0 = QuantileRep {
        values: q0.values.iter().step_by(2).copied().collect(),
    };
    let h1 = QuantileRep {
        values: q1.values.iter().step_by(2).copied().collect(),
    };
    let half_resolution_sq = if m % 2 == 0 && half >= 4 {
        optimal_shift(&h0, &h1).1
    } else {
        value_sq
    };
    let value_sq = value_sq.max(0.0);
    Ok(CircleW2 {
        value: value_sq.sqrt(),
        value_sq,
        theta,
        resolution: m,
        half_resolution_sq,
        extrapolated_sq: (4.0 * value_sq - half_resolution_sq) / 3.0,
    })
}

/// Displacement interpolation `X_t(u) = (1-t) q0(u) + t q1(u+θ*)` on the
/// nodes `u_j = j/M`, `j = 0..=M`.
#[derive(Debug, Clone)]
pub struct CircleGeodesic {
    pub theta: f64,
    q0: Vec<f64>,
    q1: Vec<f64>,
}

/// Eulerian samples of the geodesic at one time on a uniform `x` grid.
#[derive(Debug, Clone)]
pub struct GeodesicSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub momentum: Vec<f64>,
}

pub fn circle_geodesic(mu0: &dyn CircleMeasure, mu1: &dyn CircleMeasure, m: usize) -> Result<CircleGeodesic> {
    let w = circle_w2(mu0, mu1, m)?;
    let q0: Vec<f64> = (0..=m).map(|j| mu0.quantile(j as f64 / m as f64)).collect();
    let q1: Vec<f64> = (0..=m).map(|j| mu1.quantile(j as f64 / m as f64 + w.theta)).collect();
    Ok(CircleGeodesic {
        theta: w.theta,
        q0,
        q1,
    })
}

impl CircleGeodesic {
    pub fn resolution(&self) -> usize {
        self.q0.len() - 1
    }

    /// Lagrangian positions `X_t(u_j)`.
    pub fn positions(&self, t: f64) -> Vec<f64> {
        self.q0
            .iter()
            .zip(&self.q1)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect()
    }

    /// Particle velocity `q1(u+θ) - q0(u)` at each node.
    pub fn velocities(&self) -> Vec<f64> {
        self.q0.iter().zip(&self.q1).map(|(a, b)| b - a).collect()
    }

    /// `∫_0^1 |q1(u+θ) - q0(u)|² du`, the kinetic action of the path.
    pub fn lagrangian_action(&self) -> f64 {
        let m = self.resolution();
        self.velocities()[..m].iter().map(|v| v * v).sum::<f64>() / m as f64
    }

    /// `∫ ρ_t v_t dx = ∫ (q1(u+θ) - q0(u)) du`, constant in time.
    pub fn mean_momentum(&self) -> f64 {
        let m = self.resolution();
        self.velocities()[..m].iter().sum::<f64>() / m as f64
    }

    /// Coefficients `c_k(t) = ∫ e^{-2πik X_t(u)} du` for `k = 0..=kmax`
    /// (negative frequencies are the conjugates). Spectrally accurate.
    pub fn density_coefficients(&self, t: f64, kmax: usize) -> Vec<Complex64> {
        let m = self.resolution();
        let mut out = vec![Complex64::new(0.0, 0.0); kmax + 1];
        for x in self.positions(t).iter().take(m) {
            let ang = -2.0 * PI * (x - x.floor());
            let base = Complex64::new(ang.cos(), ang.sin());
            let mut p = Complex64::new(1.0, 0.0);
            for c in out.iter_mut() {
                *c += p;
                p *= base;
            }
        }
        out.iter_mut().for_each(|c| *c /= m as f64);
        out
    }

    /// Density and momentum at time `t` on `p` uniform points `x = i/p`.
    pub fn sample(&self, t: f64, p: usize) -> GeodesicSample {
        let m = self.resolution();
        let xs = self.positions(t);
        let vel = self.velocities();
        // midpoint densities Δu/ΔX at X((j+1/2)/M)
        let mids: Vec<(f64, f64, f64)> = (0..m)
            .map(|j| {
                let dx = xs[j + 1] - xs[j];
                (0.5 * (xs[j] + xs[j + 1]), 1.0 / (m as f64 * dx), 0.5 * (vel[j] + vel[j + 1]))
            })
            .collect();
        let mut ext = mids;
        ext.push((ext[0].0 + 1.0, ext[0].1, ext[0].2));
        let first = ext[0].0;
        let mut x_out = Vec::with_capacity(p);
        let mut dens = Vec::with_capacity(p);
        let mut mom = Vec::with_capacity(p);
        for i in 0..p {
            let x = i as f64 / p as f64;
            let y = x - (x - first).floor();
            let j = ext.partition_point(|e| e.0 <= y).clamp(1, m);
            let (a, b) = (ext[j - 1], ext[j]);
            let f = ((y - a.0) / (b.0 - a.0)).clamp(0.0, 1.0);
            let rho = a.1 + f * (b.1 - a.1);
            let v = a.2 + f * (b.2 - a.2);
            x_out.push(x);
            dens.push(rho);
            mom.push(rho * v);
        }
        GeodesicSample {
            t,
            x: x_out,
            density: dens,
            momentum: mom,
        }
    }

    /// `∫_0^1 ∫ m²/ρ dx dt` from Eulerian samples at the given times (trapezoid in `t`).
    pub fn eulerian_action(&self, times: &[f64], p: usize) -> f64 {
        let per: Vec<f64> = times
            .iter()
            .map(|&t| {
                let s = self.sample(t, p);
                s.density
                    .iter()
                    .zip(&s.momentum)
                    .map(|(r, m)| m * m / r)
                    .sum::<f64>()
                    / p as f64
            })
            .collect();
        let mut acc = 0.0;
        for k in 0..times.len().saturating_sub(1) {
            acc += 0.5 * (per[k] + per[k + 1]) * (times[k + 1] - times[k]);
        }
        acc
    }
}
