//! Geometry of the periodic lattice `(Z/NZ)^d` with mesh size `1/N`.
//!
//! Sites are stored by a flat row-major index (last axis fastest). Facets
//! are identified with their canonical "+" orientation: the facet between
//! `a` and `a + e_i` is `Facet { base: a, axis: i }`. Facet-indexed arrays
//! are laid out axis-major: `values[axis * N^d + site]`. Axes are 0-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of sites accepted by [`GridShape::new`].
pub const MAX_SITES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    dim: usize,
    side: usize,
}

impl GridShape {
    /// Builds a shape for `T_N^d`. Rejects `d = 0`, `N < 3` and grids whose
    /// site count does not fit into [`MAX_SITES`].
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidShape("dimension must be at least 1".into()));
        }
        if side < 3 {
            return Err(Error::InvalidShape(format!(
                "side N = {side} not supported (N >= 3 required)"
            )));
        }
        let mut total: usize = 1;
        for _ in 0..dim {
            total = total
                .checked_mul(side)
                .filter(|t| *t <= MAX_SITES)
                .ok_or_else(|| Error::InvalidShape(format!("{side}^{dim} sites exceed limit")))?;
        }
        Ok(Self { dim, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn num_facets(&self) -> usize {
        self.dim * self.num_sites()
    }

    /// `N = 3` lies outside the hypothesis `N >= 4` of the lattice Poincaré inequality.
    pub fn within_poincare_range(&self) -> bool {
        self.side >= 4
    }

    /// Flat-index stride of `axis` (row-major, last axis fastest).
    pub fn stride(&self, axis: usize) -> usize {
        self.side.pow((self.dim - 1 - axis) as u32)
    }

    /// Coordinate of site `index` along `axis`.
    #[inline]
    pub fn coord(&self, index: usize, axis: usize) -> usize {
        (index / self.stride(axis)) % self.side
    }

    /// Index of the neighbour `index + step * e_axis` (periodic).
    #[inline]
    pub fn shift(&self, index: usize, axis: usize, step: isize) -> usize {
        let stride = self.stride(axis);
        let c = (index / stride) % self.side;
        let n = self.side as isize;
        let nc = ((c as isize + step) % n + n) % n;
        index - c * stride + nc as usize * stride
    }

    pub fn site(&self, index: usize) -> Site {
        Site((0..self.dim).map(|ax| self.coord(index, ax)).collect())
    }

    pub fn index_of(&self, site: &Site) -> Result<usize> {
        self.check_site(site)?;
        Ok(site
            .0
            .iter()
            .fold(0usize, |acc, &c| acc * self.side + c))
    }

    pub fn check_site(&self, site: &Site) -> Result<()> {
        if site.0.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: site.0.len(),
            });
        }
        if let Some(c) = site.0.iter().find(|&&c| c >= self.side) {
            return Err(Error::Domain(format!(
                "coordinate {c} out of range for N = {}",
                self.side
            )));
        }
        Ok(())
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.num_sites()).map(move |i| self.site(i))
    }

    /// Flat index of `facet` in an axis-major facet array.
    pub fn facet_index(&self, facet: Facet) -> usize {
        facet.axis * self.num_sites() + facet.base
    }

    pub fn facet(&self, index: usize) -> Facet {
        let n = self.num_sites();
        Facet {
            base: index % n,
            axis: index / n,
        }
    }

    /// Sites joined by `facet`: `(a, a + e_i)`.
    pub fn facet_endpoints(&self, facet: Facet) -> (usize, usize) {
        (facet.base, self.shift(facet.base, facet.axis, 1))
    }

    pub fn cube(&self, index: usize) -> Cube {
        Cube {
            base: index,
            lower: (0..self.dim)
                .map(|ax| self.coord(index, ax) as f64 / self.side as f64)
                .collect(),
            width: 1.0 / self.side as f64,
        }
    }

    /// Squared toroidal distance `d_N(a,b)^2` between flat indices.
    pub fn torus_dist_sq_idx(&self, a: usize, b: usize) -> f64 {
        let n = self.side as f64;
        (0..self.dim)
            .map(|ax| {
                let g = self.coord_gap(self.coord(a, ax), self.coord(b, ax)) as f64;
                g * g
            })
            .sum::<f64>()
            / (n * n)
    }

    pub fn torus_dist_idx(&self, a: usize, b: usize) -> f64 {
        self.torus_dist_sq_idx(a, b).sqrt()
    }

    pub fn graph_dist_idx(&self, a: usize, b: usize) -> usize {
        (0..self.dim)
            .map(|ax| self.coord_gap(self.coord(a, ax), self.coord(b, ax)))
            .sum()
    }

    #[inline]
    fn coord_gap(&self, x: usize, y: usize) -> usize {
        let g = x.abs_diff(y);
        g.min(self.side - g)
    }

    /// Largest value of `d_N` over all site pairs.
    pub fn diameter(&self) -> f64 {
        let half = (self.side / 2) as f64;
        (self.dim as f64).sqrt() * half / self.side as f64
    }
}

/// Lattice site given by its coordinates in `{0, …, N-1}^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site(pub Vec<usize>);

impl Site {
    pub fn new(coords: impl Into<Vec<usize>>) -> Self {
        Self(coords.into())
    }
}

/// Facet between `base` and `base + e_axis`, stored by flat site index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Facet {
    pub base: usize,
    pub axis: usize,
}

/// Half-open cube `Π [a_i/N, (a_i+1)/N)` of the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub base: usize,
    pub lower: Vec<f64>,
    pub width: f64,
}

impl Cube {
    pub fn diameter(&self) -> f64 {
        (self.lower.len() as f64).sqrt() * self.width
    }

    pub fn volume(&self) -> f64 {
        self.width.powi(self.lower.len() as i32)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.lower)
            .all(|(&xi, &lo)| xi >= lo && xi < lo + self.width)
    }
}

/// `d_N(a,b) = (1/N) sqrt(Σ_i min(|a_i-b_i|, N-|a_i-b_i|)^2)`.
pub fn torus_metric(shape: &GridShape, a: &Site, b: &Site) -> Result<f64> {
    let ia = shape.index_of(a)?;
    let ib = shape.index_of(b)?;
    Ok(shape.torus_dist_idx(ia, ib))
}

/// Graph distance `Σ_i min(|a_i-b_i|, N-|a_i-b_i|)`.
pub fn graph_metric(shape: &GridShape, a: &Site, b: &Site) -> Result<usize> {
    let ia = shape.index_of(a)?;
    let ib = shape.index_of(b)?;
    Ok(shape.graph_dist_idx(ia, ib))
}

/// The `2d` facets incident to `a`, with sign `+1` for `R_{a,i+}` and `-1`
/// for `R_{a,i-} = R_{a-e_i,i+}`.
pub fn facet_neighbors(shape: &GridShape, a: &Site) -> Result<Vec<(Facet, i8)>> {
    let ia = shape.index_of(a)?;
    Ok(facet_neighbors_idx(shape, ia))
}

pub fn facet_neighbors_idx(shape: &GridShape, a: usize) -> Vec<(Facet, i8)> {
    let mut out = Vec::with_capacity(2 * shape.dim());
    for axis in 0..shape.dim() {
        out.push((Facet { base: a, axis }, 1));
        out.push((
            Facet {
                base: shape.shift(a, axis, -1),
                axis,
            },
            -1,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(c: &[usize]) -> Site {
        Site::new(c.to_vec())
    }

    #[test]
    fn rejects_small_sides() {
        assert!(GridShape::new(1, 2).is_err());
        assert!(GridShape::new(1, 1).is_err());
        assert!(GridShape::new(0, 5).is_err());
        assert!(GridShape::new(2, 3).is_ok());
        assert!(!GridShape::new(1, 3).unwrap().within_poincare_range());
    }

    #[test]
    fn torus_metric_examples() {
        let g = GridShape::new(1, 4).unwrap();
        assert_eq!(torus_metric(&g, &s(&[0]), &s(&[0])).unwrap(), 0.0);
        let g = GridShape::new(2, 4).unwrap();
        let d = torus_metric(&g, &s(&[0, 0]), &s(&[3, 3])).unwrap();
        assert!((d - 2f64.sqrt() / 4.0).abs() < 1e-15);
        let g = GridShape::new(1, 8).unwrap();
        assert!((torus_metric(&g, &s(&[1]), &s(&[6])).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn graph_metric_examples() {
        let g = GridShape::new(2, 4).unwrap();
        assert_eq!(graph_metric(&g, &s(&[0, 0]), &s(&[3, 3])).unwrap(), 2);
        assert_eq!(graph_metric(&g, &s(&[1, 2]), &s(&[1, 2])).unwrap(), 0);
        let g = GridShape::new(1, 8).unwrap();
        assert_eq!(graph_metric(&g, &s(&[1]), &s(&[6])).unwrap(), 3);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = GridShape::new(2, 4).unwrap();
        assert!(matches!(
            torus_metric(&g, &s(&[0]), &s(&[1, 1])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(graph_metric(&g, &s(&[0, 4]), &s(&[1, 1])).is_err());
    }

    #[test]
    fn metric_axioms_exhaustive() {
        for d in 1..=2 {
            for n in 3..=8 {
                let g = GridShape::new(d, n).unwrap();
                let m = g.num_sites();
                for a in 0..m {
                    assert_eq!(g.torus_dist_idx(a, a), 0.0);
                    for b in 0..m {
                        let dab = g.torus_dist_idx(a, b);
                        assert_eq!(dab, g.torus_dist_idx(b, a));
                        if a != b {
                            assert!(dab > 0.0);
                        }
                        let bound = (d as f64).sqrt() * n as f64 * dab;
                        assert!(g.graph_dist_idx(a, b) as f64 <= bound + 1e-12);
                        for c in 0..m {
                            assert!(dab <= g.torus_dist_idx(a, c) + g.torus_dist_idx(c, b) + 1e-14);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn facet_neighbors_wrap_and_telescope() {
        let g = GridShape::new(1, 3).unwrap();
        let nb = facet_neighbors(&g, &s(&[0])).unwrap();
        assert_eq!(
            nb,
            vec![(Facet { base: 0, axis: 0 }, 1), (Facet { base: 2, axis: 0 }, -1)]
        );
        let g = GridShape::new(2, 3).unwrap();
        assert_eq!(facet_neighbors(&g, &s(&[0, 0])).unwrap().len(), 4);

        for (d, n) in [(1, 5), (2, 4), (3, 3)] {
            let g = GridShape::new(d, n).unwrap();
            let mut plus = vec![0; g.num_facets()];
            let mut minus = vec![0; g.num_facets()];
            for a in 0..g.num_sites() {
                let nb = facet_neighbors_idx(&g, a);
                assert_eq!(nb.len(), 2 * d);
                for (f, sign) in nb {
                    let idx = g.facet_index(f);
                    if sign > 0 {
                        plus[idx] += 1;
                    } else {
                        minus[idx] += 1;
                    }
                }
            }
            assert!(plus.iter().all(|&c| c == 1));
            assert!(minus.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn cubes_tile_the_torus() {
        for (d, n) in [(1, 7), (2, 5), (3, 4)] {
            let g = GridShape::new(d, n).unwrap();
            let vol: f64 = (0..g.num_sites()).map(|i| g.cube(i).volume()).sum();
            assert!((vol - 1.0).abs() < 1e-12);
            for i in 0..g.num_sites() {
                assert!((g.cube(i).diameter() - (d as f64).sqrt() / n as f64).abs() < 1e-15);
            }
            // each probe point lies in exactly one cube
            let probe: Vec<f64> = (0..d).map(|k| 0.123 + 0.31 * k as f64).collect();
            let hits = (0..g.num_sites()).filter(|&i| g.cube(i).contains(&probe)).count();
            assert_eq!(hits, 1);
        }
    }

    #[test]
    fn index_roundtrip_row_major() {
        let g = GridShape::new(2, 2 + 2).unwrap();
        assert_eq!(g.index_of(&s(&[0, 1])).unwrap(), 1);
        assert_eq!(g.index_of(&s(&[1, 0])).unwrap(), 4);
        for i in 0..g.num_sites() {
            assert_eq!(g.index_of(&g.site(i)).unwrap(), i);
        }
        assert_eq!(g.shift(0, 1, -1), 3);
        assert_eq!(g.shift(0, 0, -1), 12);
    }
}
