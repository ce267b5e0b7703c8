//! Exact `W_{2,N}` on the lattice by the transportation simplex method.

use serde::{Deserialize, Serialize};

use crate::continuum::ContinuumDensity;
use crate::error::{Error, Result};
use crate::fields::{check_same_shape, project_density, Density};
use crate::grid::GridShape;

/// Largest grid accepted by [`w2n_exact`].
pub const MAX_LP_SITES: usize = 4096;

/// Reduced costs below `-CERT_TOL` refute optimality.
pub const CERT_TOL: f64 = 1e-9;

/// Consecutive degenerate pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 32;

/// Sparse optimal coupling between site indices, masses in probability units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    pub fn support_size(&self) -> usize {
        self.entries.iter().filter(|e| e.2 > 0.0).count()
    }

    /// Row and column sums, in probability units.
    pub fn marginals(&self, sites: usize) -> (Vec<f64>, Vec<f64>) {
        let mut r = vec![0.0; sites];
        let mut c = vec![0.0; sites];
        for &(a, b, m) in &self.entries {
            r[a] += m;
            c[b] += m;
        }
        (r, c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Outcome of [`w2n_exact`] with its optimality certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct W2NResult {
    pub value: f64,
    pub value_sq: f64,
    pub plan: TransportPlan,
    /// Dual objective `Σ p_i u_i + Σ q_j v_j`.
    pub dual_value: f64,
    /// Smallest reduced cost `c_ij - u_i - v_j` over all cells.
    pub min_reduced_cost: f64,
    pub pivots: usize,
}

/// `W_{2,N}(ρ0, ρ1)` with cost `d_N(a,b)²`, certified by dual feasibility.
pub fn w2n_exact(rho0: &Density, rho1: &Density) -> Result<W2NResult> {
    check_same_shape(rho0.shape(), rho1.shape())?;
    let shape = *rho0.shape();
    let m = shape.num_sites();
    if m > MAX_LP_SITES {
        return Err(Error::SizeGuard(format!(
            "W_2,N solver limited to {MAX_LP_SITES} sites, got {m}"
        )));
    }
    let scale = 1.0 / m as f64;
    let src: Vec<usize> = (0..m).filter(|&a| rho0.values()[a] > 0.0).collect();
    let dst: Vec<usize> = (0..m).filter(|&b| rho1.values()[b] > 0.0).collect();
    let supply: Vec<f64> = src.iter().map(|&a| rho0.values()[a] * scale).collect();
    let demand: Vec<f64> = dst.iter().map(|&b| rho1.values()[b] * scale).collect();
    let (ts, td): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (ts - td).abs() > 1e-9 {
        return Err(Error::MassViolation {
            total: td,
            expected: ts,
        });
    }
    let cost = |i: usize, j: usize| shape.torus_dist_sq_idx(src[i], dst[j]);
    let mut lp = Transportation::new(supply.clone(), demand.clone());
    let pivots = lp.solve(&cost)?;
    let (u, v) = lp.potentials(&cost);
    let mut min_rc = f64::INFINITY;
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            min_rc = min_rc.min(cost(i, j) - ui - vj);
        }
    }
    if min_rc < -CERT_TOL {
        return Err(Error::Solver(format!(
            "transportation simplex ended with reduced cost {min_rc:e}"
        )));
    }
    let mut value_sq = 0.0;
    let mut entries = Vec::with_capacity(lp.basis.len());
    for &(i, j, x) in &lp.basis {
        let x = x.max(0.0);
        if x > 0.0 {
            value_sq += x * cost(i, j);
            entries.push((src[i], dst[j], x));
        }
    }
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let dual_value = supply.iter().zip(&u).map(|(p, x)| p * x).sum::<f64>()
        + demand.iter().zip(&v).map(|(q, y)| q * y).sum::<f64>();
    let value_sq = value_sq.max(0.0);
    Ok(W2NResult {
        value: value_sq.sqrt(),
        value_sq,
        plan: TransportPlan { entries },
        dual_value,
        min_reduced_cost: min_rc,
        pivots,
    })
}

/// `(T_N)_# μ`, which coincides with `P_N(μ)`.
pub fn tn_pushforward(mu: &ContinuumDensity, shape: &GridShape) -> Result<Density> {
    project_density(mu, shape)
}

/// Balanced transportation problem with a spanning-tree basis of `m + n - 1` cells.
struct Transportation {
    supply: Vec<f64>,
    demand: Vec<f64>,
    /// `(row, col, flow)`; degenerate cells carry zero flow.
    basis: Vec<(usize, usize, f64)>,
}

impl Transportation {
    fn new(supply: Vec<f64>, demand: Vec<f64>) -> Self {
        // north-west corner rule
        let (m, n) = (supply.len(), demand.len());
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut s, mut d) = (supply.clone(), demand.clone());
        let (mut i, mut j) = (0, 0);
        while i < m && j < n {
            let x = s[i].min(d[j]);
            basis.push((i, j, x));
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(basis.len(), m + n - 1);
        Self { supply, demand, basis }
    }

    fn rows(&self) -> usize {
        self.supply.len()
    }

    fn cols(&self) -> usize {
        self.demand.len()
    }

    /// Tree adjacency over nodes `0..m` (rows) and `m..m+n` (columns), edges labelled by basis slot.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let m = self.rows();
        let mut adj = vec![Vec::new(); m + self.cols()];
        for (e, &(i, j, _)) in self.basis.iter().enumerate() {
            adj[i].push((m + j, e));
            adj[m + j].push((i, e));
        }
        adj
    }

    /// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on the basis.
    fn potentials(&self, cost: &impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.rows();
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; m + self.cols()];
        let mut stack = vec![0usize];
        pot[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &(next, e) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j, _) = self.basis[e];
                    pot[next] = cost(i, j) - pot[node];
                    stack.push(next);
                }
            }
        }
        let v = pot.split_off(m);
        (pot, v)
    }

    /// Basis slots on the tree path from row `i` to column `j`, in order.
    fn tree_path(&self, i: usize, j: usize) -> Vec<usize> {
        let m = self.rows();
        let adj = self.adjacency();
        let total = m + self.cols();
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        let mut stack = vec![i];
        seen[i] = true;
        while let Some(node) = stack.pop() {
            if node == m + j {
                break;
            }
            for &(next, e) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, e));
                    stack.push(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = m + j;
        while node != i {
            let (p, e) = parent[node].expect("basis is a spanning tree");
            path.push(e);
            node = p;
        }
        path.reverse();
        path
    }

    fn solve(&mut self, cost: &impl Fn(usize, usize) -> f64) -> Result<usize> {
        let (m, n) = (self.rows(), self.cols());
        let max_pivots = 50 * (m + n) * (m + n) + 1000;
        let mut degenerate_run = 0usize;
        for pivot in 0..max_pivots {
            let (u, v) = self.potentials(cost);
            let bland = degenerate_run >= STALL_LIMIT;
            let mut entering: Option<(usize, usize)> = None;
            let mut best = -CERT_TOL * 0.1;
            'scan: for i in 0..m {
                for j in 0..n {
                    let rc = cost(i, j) - u[i] - v[j];
                    if rc < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = rc;
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return Ok(pivot);
            };
            // the cycle: entering cell (+), then alternating -, +, … along the path col ej → row ei
            let path = self.tree_path(ei, ej);
            // path runs row ei → … → col ej; the cell adjacent to col ej gets `-`
            let minus: Vec<usize> = path.iter().rev().step_by(2).copied().collect();
            let plus: Vec<usize> = path.iter().rev().skip(1).step_by(2).copied().collect();
            let mut leave = minus[0];
            for &e in &minus[1..] {
                let (x, y) = (self.basis[e].2, self.basis[leave].2);
                if x < y || (x == y && (self.basis[e].0, self.basis[e].1) < (self.basis[leave].0, self.basis[leave].1)) {
                    leave = e;
                }
            }
            let theta = self.basis[leave].2;
            degenerate_run = if theta <= 0.0 { degenerate_run + 1 } else { 0 };
            for &e in &minus {
                self.basis[e].2 -= theta;
            }
            for &e in &plus {
                self.basis[e].2 += theta;
            }
            self.basis[leave] = (ei, ej, theta);
        }
        Err(Error::Solver("transportation simplex exceeded its pivot budget".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::ContinuumDensity;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_density(rng: &mut ChaCha8Rng, shape: GridShape, zeros: bool) -> Density {
        let w: Vec<f64> = (0..shape.num_sites())
            .map(|_| {
                if zeros && rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.1..2.0)
                }
            })
            .collect();
        if w.iter().all(|&x| x == 0.0) {
            return Density::uniform(shape);
        }
        Density::normalized(shape, w).unwrap()
    }

    /// Brute force over all permutations for uniform-weight atoms.
    fn assignment_brute_force(shape: &GridShape, a: &[usize], b: &[usize]) -> f64 {
        fn rec(shape: &GridShape, a: &[usize], b: &mut Vec<usize>, k: usize, best: &mut f64) {
            if k == b.len() {
                let c: f64 = a.iter().zip(b.iter()).map(|(&x, &y)| shape.torus_dist_sq_idx(x, y)).sum();
                *best = best.min(c);
                return;
            }
            for i in k..b.len() {
                b.swap(k, i);
                rec(shape, a, b, k + 1, best);
                b.swap(k, i);
            }
        }
        let mut best = f64::INFINITY;
        rec(shape, a, &mut b.to_vec(), 0, &mut best);
        best / a.len() as f64
    }

    #[test]
    fn examples() {
        let shape = GridShape::new(1, 3).unwrap();
        let r0 = Density::new(shape, vec![3.0, 0.0, 0.0]).unwrap();
        let r1 = Density::new(shape, vec![0.0, 3.0, 0.0]).unwrap();
        let w = w2n_exact(&r0, &r1).unwrap();
        assert!((w.value - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w.plan.entries, vec![(0, 1, 1.0)]);
        let s = GridShape::new(2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_density(&mut rng, s, false);
        let same = w2n_exact(&r, &r).unwrap();
        assert!(same.value < 1e-12);
        assert!(same.plan.entries.iter().all(|e| e.0 == e.1));
    }

    #[test]
    fn size_guard_and_mass_check() {
        let big = GridShape::new(2, 65).unwrap();
        let u = Density::uniform(big);
        assert!(matches!(w2n_exact(&u, &u), Err(Error::SizeGuard(_))));
        let s = GridShape::new(1, 4).unwrap();
        assert!(w2n_exact(&Density::uniform(s), &Density::uniform(GridShape::new(1, 5).unwrap())).is_err());
    }

    #[test]
    fn matches_brute_force_assignment() {
        let shape = GridShape::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mut idx: Vec<usize> = (0..9).collect();
            let pick = |rng: &mut ChaCha8Rng, idx: &mut Vec<usize>| {
                for i in (1..idx.len()).rev() {
                    let j = rng.random_range(0..=i);
                    idx.swap(i, j);
                }
                idx[..4].to_vec()
            };
            let a = pick(&mut rng, &mut idx);
            let b = pick(&mut rng, &mut idx);
            let mk = |s: &[usize]| {
                let mut v = vec![0.0; 9];
                for &x in s {
                    v[x] = 9.0 / 4.0;
                }
                Density::new(shape, v).unwrap()
            };
            let w = w2n_exact(&mk(&a), &mk(&b)).unwrap();
            let bf = assignment_brute_force(&shape, &a, &b);
            assert!((w.value_sq - bf).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_is_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = GridShape::new(1, 4).unwrap();
        for _ in 0..50 {
            let mu = ContinuumDensity::random(&mut rng, 1, 3, 0.4, 0.1);
            assert_eq!(tn_pushforward(&mu, &shape).unwrap(), project_density(&mu, &shape).unwrap());
        }
        let mu = ContinuumDensity::sine(0.5, 0.0).unwrap();
        assert!((tn_pushforward(&mu, &shape).unwrap().values()[0] - (1.0 + 1.0 / std::f64::consts::PI)).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn certified_symmetric_translation_invariant(seed in 0u64..100_000, zeros in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, n) = if seed % 2 == 0 { (1, 7) } else { (2, 4) };
            let shape = GridShape::new(d, n).unwrap();
            let r0 = random_density(&mut rng, shape, zeros);
            let r1 = random_density(&mut rng, shape, zeros);
            let w = w2n_exact(&r0, &r1).unwrap();
            let back = w2n_exact(&r1, &r0).unwrap();
            prop_assert!((w.value - back.value).abs() < 1e-12);
            prop_assert!(w.min_reduced_cost >= -CERT_TOL);
            prop_assert!((w.value_sq - w.dual_value).abs() < 1e-10);
            prop_assert!(w.plan.support_size() <= 2 * shape.num_sites() - 1);
            let (rows, cols) = w.plan.marginals(shape.num_sites());
            let m = shape.num_sites() as f64;
            for a in 0..shape.num_sites() {
                prop_assert!((rows[a] - r0.values()[a] / m).abs() < 1e-10);
                prop_assert!((cols[a] - r1.values()[a] / m).abs() < 1e-10);
            }
            // shift both marginals by e_0
            let shift = |r: &Density| {
                let mut v = vec![0.0; shape.num_sites()];
                for a in 0..shape.num_sites() {
                    v[shape.shift(a, 0, 1)] = r.values()[a];
                }
                Density::new(shape, v).unwrap()
            };
            let t = w2n_exact(&shift(&r0), &shift(&r1)).unwrap();
            prop_assert!((t.value - w.value).abs() < 1e-12);
        }
    }
}
