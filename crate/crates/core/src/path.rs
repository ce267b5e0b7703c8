//! Time-discretised curves of densities solving the lattice continuity equation.
//!
//! Densities live on the nodes `t_0 = 0 < … < t_T = 1`, momenta on the
//! intervals. The discrete continuity equation is
//! `(ρ_{k+1} - ρ_k)/Δt_k + div V_k = 0`.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::continuum::WeakPath;
use crate::error::{Error, Result};
use crate::fields::{self, check_same_shape, Density, MomentumField};
use crate::grid::GridShape;
use crate::heat::laplacian_solve;
use crate::means::MeanKind;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPath {
    shape: GridShape,
    times: Vec<f64>,
    densities: Vec<Density>,
    momenta: Vec<MomentumField>,
}

/// Per-interval residual of the discrete continuity equation.
#[derive(Debug, Clone)]
pub struct ContinuityResidual {
    pub values: Vec<Vec<f64>>,
    pub max: f64,
}

impl TransportPath {
    /// Path on the uniform grid `t_k = k/T`.
    pub fn new(densities: Vec<Density>, momenta: Vec<MomentumField>) -> Result<Self> {
        let t = momenta.len();
        let times = (0..=t).map(|k| k as f64 / t as f64).collect();
        Self::with_times(times, densities, momenta)
    }

    /// Path on an arbitrary increasing grid from 0 to 1.
    pub fn with_times(times: Vec<f64>, densities: Vec<Density>, momenta: Vec<MomentumField>) -> Result<Self> {
        if momenta.is_empty() {
            return Err(Error::ShapeMismatch("a path needs at least one interval".into()));
        }
        if densities.len() != momenta.len() + 1 || times.len() != densities.len() {
            return Err(Error::ShapeMismatch(format!(
                "path with {} intervals needs {} densities and times (got {} and {})",
                momenta.len(),
                momenta.len() + 1,
                densities.len(),
                times.len()
            )));
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("time grid must increase from 0 to 1".into()));
        }
        let shape = *densities[0].shape();
        for d in &densities {
            check_same_shape(&shape, d.shape())?;
        }
        for v in &momenta {
            check_same_shape(&shape, v.shape())?;
        }
        Ok(Self {
            shape,
            times,
            densities,
            momenta,
        })
    }

    /// Linear interpolation `ρ_t = (1-t)ρ0 + tρ1` with the gradient-potential
    /// momentum `G(Δ_N^{-1}(ρ0 - ρ1))`.
    pub fn linear(rho0: &Density, rho1: &Density, steps: usize) -> Result<Self> {
        check_same_shape(rho0.shape(), rho1.shape())?;
        if steps == 0 {
            return Err(Error::Domain("at least one time step required".into()));
        }
        let shape = *rho0.shape();
        let diff: Vec<f64> = rho0.values().iter().zip(rho1.values()).map(|(a, b)| a - b).collect();
        let psi = laplacian_solve(&shape, &diff)?;
        let v = MomentumField::new(shape, fields::gradient_potential(&shape, &psi))?;
        let mut densities = Vec::with_capacity(steps + 1);
        densities.push(rho0.clone());
        for k in 1..steps {
            densities.push(rho0.mix(rho1, k as f64 / steps as f64)?);
        }
        densities.push(rho1.clone());
        Self::new(densities, vec![v; steps])
    }

    pub fn constant(rho: &Density, steps: usize) -> Result<Self> {
        Self::new(vec![rho.clone(); steps + 1], vec![MomentumField::zeros(*rho.shape()); steps])
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    /// Number of time intervals `T`.
    pub fn steps(&self) -> usize {
        self.momenta.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn is_uniform(&self) -> bool {
        let t = self.steps() as f64;
        self.times
            .iter()
            .enumerate()
            .all(|(k, &x)| (x - k as f64 / t).abs() < 1e-14)
    }

    pub fn densities(&self) -> &[Density] {
        &self.densities
    }

    pub fn momenta(&self) -> &[MomentumField] {
        &self.momenta
    }

    pub fn start(&self) -> &Density {
        &self.densities[0]
    }

    pub fn end(&self) -> &Density {
        &self.densities[self.steps()]
    }

    /// Midpoint density `(ρ_k + ρ_{k+1})/2` of interval `k`.
    pub fn midpoint(&self, k: usize) -> Vec<f64> {
        self.densities[k]
            .values()
            .iter()
            .zip(self.densities[k + 1].values())
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn continuity_residual(&self) -> ContinuityResidual {
        let mut max = 0.0f64;
        let values: Vec<Vec<f64>> = (0..self.steps())
            .map(|k| {
                let dt = self.dt(k);
                let div = self.momenta[k].divergence();
                let r: Vec<f64> = self.densities[k + 1]
                    .values()
                    .iter()
                    .zip(self.densities[k].values())
                    .zip(&div)
                    .map(|((b, a), dv)| (b - a) / dt + dv)
                    .collect();
                max = r.iter().fold(max, |m, x| m.max(x.abs()));
                r
            })
            .collect();
        ContinuityResidual { values, max }
    }

    /// Action per interval, `A_N(ρ̄_k, V_k)`.
    pub fn interval_actions(&self, kind: MeanKind) -> Vec<f64> {
        (0..self.steps())
            .map(|k| fields::action_raw(&self.shape, &self.midpoint(k), self.momenta[k].values(), kind))
            .collect()
    }

    /// `Σ_k Δt_k A_N(ρ̄_k, V_k)`.
    pub fn action(&self, kind: MeanKind) -> f64 {
        self.interval_actions(kind)
            .iter()
            .enumerate()
            .map(|(k, a)| self.dt(k) * a)
            .sum()
    }

    /// Time reversal `t ↦ 1 - t` (momenta change sign).
    pub fn reversed(&self) -> Self {
        let t = self.steps();
        Self {
            shape: self.shape,
            times: self.times.iter().rev().map(|x| 1.0 - x).collect(),
            densities: self.densities.iter().rev().cloned().collect(),
            momenta: (0..t).rev().map(|k| self.momenta[k].scale(-1.0)).collect(),
        }
    }

    /// Joins paths end to end, allotting the fraction `fractions[i]` of `[0,1]`
    /// to segment `i` and rescaling its momenta by `1/fractions[i]`.
    pub fn concat(segments: &[TransportPath], fractions: &[f64]) -> Result<Self> {
        if segments.is_empty() || segments.len() != fractions.len() {
            return Err(Error::ShapeMismatch("one fraction per segment required".into()));
        }
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > 1e-12 || fractions.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Domain("fractions must be positive and sum to 1".into()));
        }
        let mut times = vec![0.0];
        let mut densities = vec![segments[0].densities[0].clone()];
        let mut momenta = Vec::new();
        let mut offset = 0.0;
        for (i, (seg, &frac)) in segments.iter().zip(fractions).enumerate() {
            if i > 0 {
                let prev = densities.last().unwrap();
                if prev != seg.start() {
                    return Err(Error::Domain(format!("segment {i} does not start where segment {} ends", i - 1)));
                }
            }
            for k in 0..seg.steps() {
                times.push(offset + frac * seg.times[k + 1]);
                densities.push(seg.densities[k + 1].clone());
                momenta.push(seg.momenta[k].scale(1.0 / frac));
            }
            offset += frac;
        }
        *times.last_mut().unwrap() = 1.0;
        Self::with_times(times, densities, momenta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PathFile {
            dim: self.shape.dim(),
            n: self.shape.side(),
            times: self.times.clone(),
            densities: self.densities.iter().map(|d| d.values().to_vec()).collect(),
            momenta: self.momenta.iter().map(|v| v.values().to_vec()).collect(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: PathFile = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        let shape = GridShape::new(f.dim, f.n).map_err(|e| Error::Malformed(e.to_string()))?;
        let densities = f
            .densities
            .into_iter()
            .map(|v| Density::new(shape, v))
            .collect::<Result<Vec<_>>>()?;
        let momenta = f
            .momenta
            .into_iter()
            .map(|v| MomentumField::new(shape, v))
            .collect::<Result<Vec<_>>>()?;
        Self::with_times(f.times, densities, momenta)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn interval_of(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&x| x <= t);
        k.clamp(1, self.steps()) - 1
    }
}

/// On-disk path: node times, node densities and interval momenta.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathFile {
    pub dim: usize,
    pub n: usize,
    pub times: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    pub momenta: Vec<Vec<f64>>,
}

/// `Σ_k Δt_k A_N(ρ̄_k, V_k, kind)`.
pub fn path_action(path: &TransportPath, kind: MeanKind) -> f64 {
    path.action(kind)
}

/// The lift `(Q_N ρ_t, Q_N V_t)`, with `ρ_t` linear and `V_t` constant on each interval.
impl WeakPath for TransportPath {
    fn dim(&self) -> usize {
        self.shape.dim()
    }

    fn panels(&self) -> Vec<f64> {
        self.times.clone()
    }

    fn density_fourier(&self, t: f64, k: &[i64]) -> Complex64 {
        let i = self.interval_of(t);
        let s = (t - self.times[i]) / self.dt(i);
        let a = fields::lift_fourier(&self.shape, self.densities[i].values(), k);
        let b = fields::lift_fourier(&self.shape, self.densities[i + 1].values(), k);
        a * (1.0 - s) + b * s
    }

    fn field_fourier(&self, t: f64, axis: usize, k: &[i64]) -> Complex64 {
        let i = self.interval_of(t);
        fields::lift_field_fourier(&self.shape, self.momenta[i].values(), axis, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::{weak_continuity_residual, TestFunction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_density(rng: &mut ChaCha8Rng, shape: GridShape) -> Density {
        let w: Vec<f64> = (0..shape.num_sites()).map(|_| rng.random_range(0.3..2.0)).collect();
        Density::normalized(shape, w).unwrap()
    }

    #[test]
    fn constant_and_linear_paths_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = GridShape::new(2, 4).unwrap();
        let r0 = random_density(&mut rng, shape);
        let r1 = random_density(&mut rng, shape);
        let c = TransportPath::constant(&r0, 5).unwrap();
        assert_eq!(c.continuity_residual().max, 0.0);
        assert_eq!(c.action(MeanKind::Logarithmic), 0.0);
        let p = TransportPath::linear(&r0, &r1, 8).unwrap();
        let res = p.continuity_residual();
        assert!(res.max < 1e-10);
        for r in &res.values {
            assert!(r.iter().sum::<f64>().abs() < 1e-10);
        }
        assert_eq!(p.start(), &r0);
        assert_eq!(p.end(), &r1);
        assert!(p.action(MeanKind::Harmonic) >= p.action(MeanKind::Logarithmic));
        let rev = p.reversed();
        assert!(rev.continuity_residual().max < 1e-10);
        assert!((rev.action(MeanKind::Logarithmic) - p.action(MeanKind::Logarithmic)).abs() < 1e-12);
    }

    #[test]
    fn concat_rescales_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = GridShape::new(1, 6).unwrap();
        let r0 = random_density(&mut rng, shape);
        let r1 = random_density(&mut rng, shape);
        let r2 = random_density(&mut rng, shape);
        let a = TransportPath::linear(&r0, &r1, 4).unwrap();
        let b = TransportPath::linear(&r1, &r2, 3).unwrap();
        let joined = TransportPath::concat(&[a.clone(), b.clone()], &[0.25, 0.75]).unwrap();
        assert_eq!(joined.steps(), 7);
        assert!(joined.continuity_residual().max < 1e-9);
        let expect = a.action(MeanKind::Logarithmic) / 0.25 + b.action(MeanKind::Logarithmic) / 0.75;
        assert!((joined.action(MeanKind::Logarithmic) - expect).abs() < 1e-10 * expect);
        assert!(TransportPath::concat(&[b, a], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = GridShape::new(1, 5).unwrap();
        let p = TransportPath::linear(&random_density(&mut rng, shape), &random_density(&mut rng, shape), 3).unwrap();
        let back = TransportPath::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn lifted_discrete_paths_are_weak_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (d, n) in [(1, 7), (2, 4)] {
            let shape = GridShape::new(d, n).unwrap();
            let r0 = random_density(&mut rng, shape);
            let r1 = random_density(&mut rng, shape);
            let r2 = random_density(&mut rng, shape);
            let a = TransportPath::linear(&r0, &r1, 5).unwrap();
            let b = TransportPath::linear(&r1, &r2, 5).unwrap();
            let p = TransportPath::concat(&[a, b], &[0.4, 0.6]).unwrap();
            let r = weak_continuity_residual(&p, &TestFunction::default_set(d)).unwrap();
            assert!(r.max <= 1e-8, "d={d}: {}", r.max);
        }
    }
}
