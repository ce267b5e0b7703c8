//! The time-discretised action in reduced variables.
//!
//! Free variables are the interior node densities `ρ_1 … ρ_{T-1}` and, per
//! interval, the coordinates `h_k` of a divergence-free facet field. The
//! momentum `V_k = G(ψ_k) + B h_k` with `Δ_N ψ_k = -(ρ_{k+1} - ρ_k)/Δt` solves
//! the continuity equation by construction.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::fields::{action_prefactor, divergence, gradient_potential, gradient_potential_adjoint};
use crate::grid::GridShape;
use crate::heat::{laplacian_solve_unchecked, laplacian_unchecked, SpectralCache};
use crate::means::MeanKind;

/// Orthonormal basis of `ker div`, one facet array per column.
pub fn divergence_free_basis(shape: &GridShape) -> Arc<Vec<Vec<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<GridShape, Arc<Vec<Vec<f64>>>>>> = OnceLock::new();
    let map = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(b) = map.lock().expect("basis cache poisoned").get(shape) {
        return b.clone();
    }
    let basis = Arc::new(build_basis(shape));
    map.lock()
        .expect("basis cache poisoned")
        .entry(*shape)
        .or_insert(basis)
        .clone()
}

fn build_basis(shape: &GridShape) -> Vec<Vec<f64>> {
    let nf = shape.num_facets();
    if shape.dim() == 1 {
        let c = 1.0 / (nf as f64).sqrt();
        return vec![vec![c; nf]];
    }
    let n = shape.num_sites();
    // D^T D, whose null space is ker D; its eigenvectors are the right singular vectors of D
    let mut d = DMatrix::<f64>::zeros(n, nf);
    let mut e = vec![0.0; nf];
    for f in 0..nf {
        e[f] = 1.0;
        let col = divergence(shape, &e);
        for (a, v) in col.into_iter().enumerate() {
            d[(a, f)] = v;
        }
        e[f] = 0.0;
    }
    let dtd = d.transpose() * &d;
    let eig = SymmetricEigen::new(dtd);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut idx: Vec<usize> = (0..nf).filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * top).collect();
    idx.sort_unstable();
    let basis: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    debug_assert_eq!(basis.len(), nf - n + 1);
    basis
}

/// Strict-feasibility data of the constrained metric.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub delta: f64,
    /// `(a, b, 1/d_N(a,b))` over all unordered pairs.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl Constraint {
    pub fn new(shape: &GridShape, delta: f64) -> Self {
        let n = shape.num_sites();
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for a in 0..n {
            for b in (a + 1)..n {
                pairs.push((a, b, 1.0 / shape.torus_dist_idx(a, b)));
            }
        }
        Self { delta, pairs }
    }

    /// Smallest barrier slack of a node density (positive iff strictly feasible).
    pub fn slack(&self, rho: &[f64]) -> f64 {
        let lip = 1.0 / self.delta;
        let mut s = rho.iter().fold(f64::INFINITY, |m, &v| m.min(v - self.delta));
        for &(a, b, w) in &self.pairs {
            s = s.min(lip - w * (rho[a] - rho[b]).abs());
        }
        s
    }
}

pub struct Reduced {
    pub shape: GridShape,
    pub kind: MeanKind,
    pub steps: usize,
    pub dt: f64,
    n: usize,
    nf: usize,
    c: f64,
    rho0: Vec<f64>,
    rho1: Vec<f64>,
    basis: Arc<Vec<Vec<f64>>>,
    cache: Arc<SpectralCache>,
    pub constraint: Option<Constraint>,
}

impl Reduced {
    pub fn new(rho0: &[f64], rho1: &[f64], shape: GridShape, steps: usize, kind: MeanKind, constraint: Option<Constraint>) -> Self {
        Self {
            shape,
            kind,
            steps,
            dt: 1.0 / steps as f64,
            n: shape.num_sites(),
            nf: shape.num_facets(),
            c: action_prefactor(&shape),
            rho0: rho0.to_vec(),
            rho1: rho1.to_vec(),
            basis: divergence_free_basis(&shape),
            cache: SpectralCache::for_shape(shape),
            constraint,
        }
    }

    pub fn kernel_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn num_vars(&self) -> usize {
        (self.steps - 1) * self.n + self.steps * self.kernel_dim()
    }

    fn h_offset(&self) -> usize {
        (self.steps - 1) * self.n
    }

    pub fn node<'a>(&'a self, x: &'a [f64], k: usize) -> &'a [f64] {
        if k == 0 {
            &self.rho0
        } else if k == self.steps {
            &self.rho1
        } else {
            &x[(k - 1) * self.n..k * self.n]
        }
    }

    /// Variables of the linear interpolation with zero divergence-free part.
    pub fn linear_start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.num_vars()];
        for k in 1..self.steps {
            let t = k as f64 * self.dt;
            for a in 0..self.n {
                x[(k - 1) * self.n + a] = (1.0 - t) * self.rho0[a] + t * self.rho1[a];
            }
        }
        x
    }

    /// Blends interior nodes with the uniform density: `ρ ↦ (1-β)ρ + β`.
    pub fn blend_uniform(&self, x: &mut [f64], beta: f64) {
        for v in &mut x[..self.h_offset()] {
            *v = (1.0 - beta) * *v + beta;
        }
    }

    /// Smallest barrier slack over interior nodes.
    pub fn interior_slack(&self, x: &[f64]) -> f64 {
        (1..self.steps)
            .map(|k| {
                let rho = self.node(x, k);
                match &self.constraint {
                    Some(c) => c.slack(rho),
                    None => rho.iter().fold(f64::INFINITY, |m, &v| m.min(v)),
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn momentum(&self, x: &[f64], k: usize) -> Vec<f64> {
        let (a, b) = (self.node(x, k), self.node(x, k + 1));
        let neg_u: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q) / self.dt).collect();
        let psi = laplacian_solve_unchecked(&self.cache, &neg_u);
        let mut v = gradient_potential(&self.shape, &psi);
        let h = &x[self.h_offset() + k * self.kernel_dim()..][..self.kernel_dim()];
        for (coef, col) in h.iter().zip(self.basis.iter()) {
            if *coef != 0.0 {
                for (vi, ci) in v.iter_mut().zip(col) {
                    *vi += coef * ci;
                }
            }
        }
        v
    }

    /// `Δt Σ_k A_N(ρ̄_k, V_k)`, accumulating its gradient into `grad` when given.
    pub fn action(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (n, m) = (self.n, self.shape.num_sites());
        let dim = self.shape.dim();
        let mut total = 0.0;
        for k in 0..self.steps {
            let (r0, r1) = (self.node(x, k), self.node(x, k + 1));
            let bar: Vec<f64> = r0.iter().zip(r1).map(|(p, q)| 0.5 * (p + q)).collect();
            let v = self.momentum(x, k);
            let mut acc = 0.0;
            let mut g_v = vec![0.0; self.nf];
            let mut g_bar = vec![0.0; n];
            for axis in 0..dim {
                for a in 0..m {
                    let f = axis * m + a;
                    let val = v[f];
                    if val == 0.0 {
                        continue;
                    }
                    let b = self.shape.shift(a, axis, 1);
                    let th = self.kind.eval(bar[a], bar[b]);
                    if !(th > 0.0) {
                        return f64::INFINITY;
                    }
                    let q = val * val / th;
                    acc += q;
                    if grad.is_some() {
                        g_v[f] = 2.0 * val / th;
                        let (pa, pb) = self.kind.partials(bar[a], bar[b]);
                        g_bar[a] -= q / th * pa;
                        g_bar[b] -= q / th * pb;
                    }
                }
            }
            let w = self.dt * self.c;
            total += w * acc;
            let Some(g) = grad.as_deref_mut() else { continue };
            g_v.iter_mut().for_each(|x| *x *= w);
            g_bar.iter_mut().for_each(|x| *x *= w);
            let kd = self.kernel_dim();
            let off = self.h_offset() + k * kd;
            for (j, col) in self.basis.iter().enumerate() {
                g[off + j] += col.iter().zip(&g_v).map(|(p, q)| p * q).sum::<f64>();
            }
            let p = gradient_potential_adjoint(&self.shape, &g_v);
            // ψ = Δ⁺(-u), u = (ρ_{k+1} - ρ_k)/Δt
            let d_u: Vec<f64> = laplacian_solve_unchecked(&self.cache, &p).iter().map(|v| -v / self.dt).collect();
            if k + 1 < self.steps {
                let s = &mut g[k * n..(k + 1) * n];
                for a in 0..n {
                    s[a] += d_u[a] + 0.5 * g_bar[a];
                }
            }
            if k > 0 {
                let s = &mut g[(k - 1) * n..k * n];
                for a in 0..n {
                    s[a] += -d_u[a] + 0.5 * g_bar[a];
                }
            }
        }
        total
    }

    /// Log-barrier `-μ Σ log(slack)` over interior nodes; `+∞` when infeasible.
    pub fn barrier(&self, x: &[f64], mu: f64, mut grad: Option<&mut [f64]>) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for k in 1..self.steps {
            let rho = &x[(k - 1) * n..k * n];
            let floor = self.constraint.as_ref().map_or(0.0, |c| c.delta);
            for (a, &v) in rho.iter().enumerate() {
                let s = v - floor;
                if !(s > 0.0) {
                    return f64::INFINITY;
                }
                total -= mu * s.ln();
                if let Some(g) = grad.as_deref_mut() {
                    g[(k - 1) * n + a] -= mu / s;
                }
            }
            if let Some(c) = &self.constraint {
                let lip = 1.0 / c.delta;
                for &(a, b, w) in &c.pairs {
                    let diff = w * (rho[a] - rho[b]);
                    let (s1, s2) = (lip - diff, lip + diff);
                    if !(s1 > 0.0 && s2 > 0.0) {
                        return f64::INFINITY;
                    }
                    total -= mu * (s1.ln() + s2.ln());
                    if let Some(g) = grad.as_deref_mut() {
                        let ga = mu * w * (1.0 / s1 - 1.0 / s2);
                        g[(k - 1) * n + a] += ga;
                        g[(k - 1) * n + b] -= ga;
                    }
                }
            }
        }
        total
    }

    pub fn barrier_terms(&self) -> usize {
        let per_node = self.n + self.constraint.as_ref().map_or(0, |c| 2 * c.pairs.len());
        (self.steps - 1) * per_node
    }

    /// Removes the mean of each interior node block (mass-preserving directions).
    pub fn project_mass(&self, g: &mut [f64]) {
        for k in 1..self.steps {
            let s = &mut g[(k - 1) * self.n..k * self.n];
            let mean = s.iter().sum::<f64>() / self.n as f64;
            s.iter_mut().for_each(|v| *v -= mean);
        }
    }

    /// Inverse of the Hessian at the uniform density:
    /// `(N^d Δt / 2) L_t^{-1} ⊗ (-Δ_N)` on densities and `1/(2cΔt)` on `h`.
    pub fn precondition(&self, q: &[f64]) -> Vec<f64> {
        let n = self.n;
        let t1 = self.steps - 1;
        let mut r = vec![0.0; q.len()];
        if t1 > 0 {
            let scale = n as f64 * self.dt / 2.0;
            for k in 0..t1 {
                let lap = laplacian_unchecked(&self.shape, &q[k * n..(k + 1) * n]);
                for a in 0..n {
                    r[k * n + a] = -scale * lap[a];
                }
            }
            // Thomas algorithm for tridiag(-1, 2, -1) along time, per site
            let mut cp = vec![0.0; t1];
            let mut denom = 2.0;
            cp[0] = -1.0 / denom;
            for k in 1..t1 {
                denom = 2.0 + cp[k - 1];
                cp[k] = -1.0 / denom;
            }
            let mut inv_den = vec![0.0; t1];
            inv_den[0] = 0.5;
            for k in 1..t1 {
                inv_den[k] = 1.0 / (2.0 + cp[k - 1]);
            }
            for a in 0..n {
                let mut prev = 0.0;
                for k in 0..t1 {
                    let val = (r[k * n + a] + prev) * inv_den[k];
                    r[k * n + a] = val;
                    prev = val;
                }
                for k in (0..t1.saturating_sub(1)).rev() {
                    r[k * n + a] -= cp[k] * r[(k + 1) * n + a];
                }
            }
        }
        let hs = 1.0 / (2.0 * self.c * self.dt);
        let off = self.h_offset();
        for i in off..q.len() {
            r[i] = hs * q[i];
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_basis_is_orthonormal_and_divergence_free() {
        for (d, n) in [(1, 5), (2, 3), (2, 4), (3, 3)] {
            let shape = GridShape::new(d, n).unwrap();
            let b = divergence_free_basis(&shape);
            assert_eq!(b.len(), shape.num_facets() - shape.num_sites() + 1);
            for (i, u) in b.iter().enumerate() {
                assert!(divergence(&shape, u).iter().all(|v| v.abs() < 1e-12));
                for (j, w) in b.iter().enumerate() {
                    let ip: f64 = u.iter().zip(w).map(|(p, q)| p * q).sum();
                    assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn precondition_inverts_the_quadratic_model() {
        // at ρ ≡ 1 with h = 0 the action is the quadratic form whose inverse Hessian is `precondition`
        let shape = GridShape::new(1, 6).unwrap();
        let ones = vec![1.0; 6];
        let p = Reduced::new(&ones, &ones, shape, 5, MeanKind::Logarithmic, None);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut q: Vec<f64> = (0..p.num_vars()).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.project_mass(&mut q);
        let r = p.precondition(&q);
        // Hessian-vector product by differencing the exact gradient
        let x = p.linear_start();
        let h = 1e-7;
        let xp: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a - h * b).collect();
        let (mut gp, mut gm) = (vec![0.0; x.len()], vec![0.0; x.len()]);
        p.action(&xp, Some(&mut gp));
        p.action(&xm, Some(&mut gm));
        let mut hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        p.project_mass(&mut hv);
        for (a, b) in hv.iter().zip(&q) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
