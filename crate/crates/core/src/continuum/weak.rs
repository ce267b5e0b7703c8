//! Weak form of `∂_t ρ + ∇·V = 0` tested against `ψ(t) φ(x)` with
//! `ψ(t) = sin(π m t)` and `φ(x) = e^{2πik·x}`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{ContinuumField, TrigSeries};
use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Space-time test function `sin(π m t) e^{2πik·x}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestFunction {
    pub k: Vec<i64>,
    pub m: u32,
}

impl TestFunction {
    /// Sixteen tests: four spatial frequencies times `m ∈ {1,2,3,4}`.
    pub fn default_set(dim: usize) -> Vec<TestFunction> {
        let ks: Vec<Vec<i64>> = match dim {
            1 => vec![vec![1], vec![2], vec![3], vec![4]],
            _ => {
                let unit = |ax: usize| {
                    let mut k = vec![0; dim];
                    k[ax] = 1;
                    k
                };
                let mut diag = vec![0; dim];
                diag[0] = 1;
                diag[1] = 1;
                let mut anti = vec![0; dim];
                anti[0] = 1;
                anti[1] = -1;
                vec![unit(0), unit(1), diag, anti]
            }
        };
        ks.into_iter()
            .flat_map(|k| (1..=4).map(move |m| TestFunction { k: k.clone(), m }))
            .collect()
    }
}

/// A space-time pair `(ρ_t, V_t)` exposed through its Fourier transforms
/// `F f(k) = ∫ f(x) e^{2πik·x} dx`.
pub trait WeakPath {
    fn dim(&self) -> usize;

    /// Time panels on which the path is smooth; quadrature is applied per panel.
    fn panels(&self) -> Vec<f64>;

    fn density_fourier(&self, t: f64, k: &[i64]) -> Complex64;

    fn field_fourier(&self, t: f64, axis: usize, k: &[i64]) -> Complex64;
}

#[derive(Debug, Clone)]
pub struct WeakResidual {
    pub max: f64,
    pub per_test: Vec<(TestFunction, f64)>,
}

const QUAD_POINTS: usize = 12;

pub fn weak_continuity_residual(path: &dyn WeakPath, tests: &[TestFunction]) -> Result<WeakResidual> {
    if tests.is_empty() {
        return Err(Error::Domain("empty test function set".into()));
    }
    let dim = path.dim();
    let panels = path.panels();
    if panels.len() < 2 {
        return Err(Error::Domain("path needs at least one time panel".into()));
    }
    let (nodes, weights) = gauss_legendre(QUAD_POINTS);
    let mut per_test = Vec::with_capacity(tests.len());
    for test in tests {
        if test.k.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: test.k.len(),
            });
        }
        let w = PI * test.m as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for p in panels.windows(2) {
            let h = p[1] - p[0];
            for (x, wt) in nodes.iter().zip(&weights) {
                let t = p[0] + h * x;
                let psi = (w * t).sin();
                let dpsi = w * (w * t).cos();
                let mut term = path.density_fourier(t, &test.k) * dpsi;
                for ax in 0..dim {
                    let grad = Complex64::new(0.0, 2.0 * PI * test.k[ax] as f64);
                    term += path.field_fourier(t, ax, &test.k) * grad * psi;
                }
                acc += term * (h * wt);
            }
        }
        per_test.push((test.clone(), acc.norm()));
    }
    let max = per_test.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    Ok(WeakResidual { max, per_test })
}

type DensityFn = Box<dyn Fn(f64) -> TrigSeries + Sync>;
type FieldFn = Box<dyn Fn(f64) -> ContinuumField + Sync>;

/// A path given by closed-form trigonometric series in time.
pub struct ClosedFormPath {
    dim: usize,
    panels: usize,
    density: DensityFn,
    field: FieldFn,
}

impl ClosedFormPath {
    /// `panels` uniform time samples delimit the quadrature panels.
    pub fn new(
        dim: usize,
        panels: usize,
        density: impl Fn(f64) -> TrigSeries + Sync + 'static,
        field: impl Fn(f64) -> ContinuumField + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            panels: panels.max(1),
            density: Box::new(density),
            field: Box::new(field),
        }
    }
}

impl WeakPath for ClosedFormPath {
    fn dim(&self) -> usize {
        self.dim
    }

    fn panels(&self) -> Vec<f64> {
        (0..=self.panels).map(|i| i as f64 / self.panels as f64).collect()
    }

    fn density_fourier(&self, t: f64, k: &[i64]) -> Complex64 {
        (self.density)(t).fourier(k)
    }

    fn field_fourier(&self, t: f64, axis: usize, k: &[i64]) -> Complex64 {
        (self.field)(t).component(axis).fourier(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1usize, 3, 8, 12, 20] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for p in 0..(2 * n) as i32 {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p)).sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }

    fn travelling_wave(speed_field: bool) -> ClosedFormPath {
        ClosedFormPath::new(
            1,
            64,
            |t| TrigSeries::from_real_modes(1, &[(vec![0], 1.0, 0.0), (vec![1], 0.0, 0.5)]).unwrap().translate(&[t]),
            move |t| {
                let amp = if speed_field { 0.5 } else { 0.25 };
                ContinuumField::new(vec![TrigSeries::from_real_modes(1, &[(vec![1], 0.0, amp)]).unwrap().translate(&[t])])
                    .unwrap()
            },
        )
    }

    #[test]
    fn travelling_wave_is_a_weak_solution() {
        // ρ_t = 1 + ½ sin(2π(x-t)), V_t = ½ sin(2π(x-t)) gives ∂_t ρ = -∂_x V
        let tests = TestFunction::default_set(1);
        let r = weak_continuity_residual(&travelling_wave(true), &tests).unwrap();
        assert!(r.max <= 1e-8, "{}", r.max);
        let wrong = weak_continuity_residual(&travelling_wave(false), &tests).unwrap();
        assert!(wrong.max > 1e-2);
        assert!(weak_continuity_residual(&travelling_wave(true), &[]).is_err());
    }

    #[test]
    fn constant_path_has_zero_residual() {
        let path = ClosedFormPath::new(
            2,
            8,
            |_| TrigSeries::from_real_modes(2, &[(vec![0, 0], 1.0, 0.0), (vec![1, 1], 0.2, 0.0)]).unwrap(),
            |_| ContinuumField::zero(2),
        );
        let r = weak_continuity_residual(&path, &TestFunction::default_set(2)).unwrap();
        assert!(r.max < 1e-14);
        assert_eq!(r.per_test.len(), 16);
    }
}
