//! Rectangular affine coordinate patches: per-axis extent, resolution and
//! topology, plus the index arithmetic shared by every field and stencil.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Periodic,
    Dirichlet,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ChartError {
    #[error("dimension {0} out of range (1..=3)")]
    BadDimension(usize),
    #[error("axis {axis}: need at least 4 points, got {n}")]
    TooFewPoints { axis: usize, n: usize },
    #[error("axis {axis}: length must be positive, got {len}")]
    BadLength { axis: usize, len: f64 },
}

/// A rectangular chart `[x0_1, x0_1+L_1] x ... x [x0_n, x0_n+L_n]`.
///
/// Periodic axes hold `N` samples at `x0 + i h`, `h = L/N`, indexed modulo
/// `N`; Dirichlet axes hold both boundary layers, `h = L/(N-1)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chart {
    n: usize,
    origin: [f64; 3],
    len: [f64; 3],
    npts: [usize; 3],
    topo: [Topology; 3],
}

impl Chart {
    pub fn new(
        origin: &[f64],
        len: &[f64],
        npts: &[usize],
        topo: &[Topology],
    ) -> Result<Self, ChartError> {
        let n = len.len();
        if n < 1 || n > 3 {
            return Err(ChartError::BadDimension(n));
        }
        let mut c = Chart {
            n,
            origin: [0.0; 3],
            len: [1.0; 3],
            npts: [1; 3],
            topo: [Topology::Periodic; 3],
        };
        for a in 0..n {
            if npts[a] < 4 {
                return Err(ChartError::TooFewPoints { axis: a, n: npts[a] });
            }
            if !(len[a] > 0.0) {
                return Err(ChartError::BadLength { axis: a, len: len[a] });
            }
            c.origin[a] = origin[a];
            c.len[a] = len[a];
            c.npts[a] = npts[a];
            c.topo[a] = topo[a];
        }
        Ok(c)
    }

    /// Unit periodic circle with `n` samples.
    pub fn circle(npts: usize) -> Self {
        Chart::new(&[0.0], &[1.0], &[npts], &[Topology::Periodic]).unwrap()
    }

    /// Closed interval `[a, b]` with Dirichlet ends.
    pub fn interval(a: f64, b: f64, npts: usize) -> Self {
        Chart::new(&[a], &[b - a], &[npts], &[Topology::Dirichlet]).unwrap()
    }

    /// Flat 2-torus `[0,1]^2`.
    pub fn torus2(npts: usize) -> Self {
        Chart::new(
            &[0.0, 0.0],
            &[1.0, 1.0],
            &[npts, npts],
            &[Topology::Periodic, Topology::Periodic],
        )
        .unwrap()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn npts(&self, axis: usize) -> usize {
        self.npts[axis]
    }

    #[inline]
    pub fn len_axis(&self, axis: usize) -> f64 {
        self.len[axis]
    }

    #[inline]
    pub fn origin(&self, axis: usize) -> f64 {
        self.origin[axis]
    }

    #[inline]
    pub fn topology(&self, axis: usize) -> Topology {
        self.topo[axis]
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> f64 {
        match self.topo[axis] {
            Topology::Periodic => self.len[axis] / self.npts[axis] as f64,
            Topology::Dirichlet => self.len[axis] / (self.npts[axis] - 1) as f64,
        }
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.n).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    /// Total number of grid points.
    pub fn size(&self) -> usize {
        (0..self.n).map(|a| self.npts[a]).product()
    }

    /// Row-major linear index of a multi-index.
    #[inline]
    pub fn index(&self, m: &[usize; 3]) -> usize {
        let mut idx = 0;
        for a in 0..self.n {
            idx = idx * self.npts[a] + m[a];
        }
        idx
    }

    /// Multi-index of a linear index (inverse of `index`).
    #[inline]
    pub fn multi(&self, mut idx: usize) -> [usize; 3] {
        let mut m = [0usize; 3];
        for a in (0..self.n).rev() {
            m[a] = idx % self.npts[a];
            idx /= self.npts[a];
        }
        m
    }

    /// Physical coordinates of a grid point.
    pub fn coords(&self, m: &[usize; 3]) -> [f64; 3] {
        let mut x = [0.0f64; 3];
        for a in 0..self.n {
            x[a] = self.origin[a] + m[a] as f64 * self.spacing(a);
        }
        x
    }

    /// Neighbor along `axis` at `offset` steps. Returns the linear index and
    /// the number of seam crossings (+1 across the upper seam, -1 across the
    /// lower) on periodic axes, or `None` when a Dirichlet axis runs out of
    /// the domain.
    #[inline]
    pub fn neighbor(&self, m: &[usize; 3], axis: usize, offset: isize) -> Option<(usize, i32)> {
        let np = self.npts[axis] as isize;
        let raw = m[axis] as isize + offset;
        match self.topo[axis] {
            Topology::Periodic => {
                let mut wraps = 0i32;
                let mut v = raw;
                while v < 0 {
                    v += np;
                    wraps -= 1;
                }
                while v >= np {
                    v -= np;
                    wraps += 1;
                }
                let mut mm = *m;
                mm[axis] = v as usize;
                Some((self.index(&mm), wraps))
            }
            Topology::Dirichlet => {
                if raw < 0 || raw >= np {
                    None
                } else {
                    let mut mm = *m;
                    mm[axis] = raw as usize;
                    Some((self.index(&mm), 0))
                }
            }
        }
    }

    /// True when the point lies on the boundary layer of some Dirichlet axis.
    pub fn is_boundary(&self, m: &[usize; 3]) -> bool {
        (0..self.n).any(|a| {
            self.topo[a] == Topology::Dirichlet && (m[a] == 0 || m[a] == self.npts[a] - 1)
        })
    }

    pub fn has_dirichlet(&self) -> bool {
        (0..self.n).any(|a| self.topo[a] == Topology::Dirichlet)
    }

    pub fn is_closed(&self) -> bool {
        !self.has_dirichlet()
    }

    /// Iterate all multi-indices in linear order.
    pub fn iter(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        (0..self.size()).map(move |i| self.multi(i))
    }

    /// Trapezoid/rectangle quadrature weight (product over axes; 1/2 on
    /// Dirichlet boundary layers, 1 elsewhere), times the cell volume.
    pub fn quad_weight(&self, m: &[usize; 3]) -> f64 {
        let mut w = 1.0;
        for a in 0..self.n {
            w *= self.spacing(a);
            if self.topo[a] == Topology::Dirichlet && (m[a] == 0 || m[a] == self.npts[a] - 1) {
                w *= 0.5;
            }
        }
        w
    }

    /// Charts are compatible when they have identical shape.
    pub fn same_shape(&self, other: &Chart) -> bool {
        self.n == other.n
            && (0..self.n).all(|a| {
                self.npts[a] == other.npts[a]
                    && self.topo[a] == other.topo[a]
                    && (self.len[a] - other.len[a]).abs() < 1e-14 * self.len[a].max(1.0)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let c = Chart::new(
            &[0.0, 0.0, 0.0],
            &[1.0, 2.0, 3.0],
            &[4, 5, 6],
            &[Topology::Periodic, Topology::Dirichlet, Topology::Periodic],
        )
        .unwrap();
        for i in 0..c.size() {
            assert_eq!(c.index(&c.multi(i)), i);
        }
    }

    #[test]
    fn neighbor_wraps_and_clips() {
        let c = Chart::circle(8);
        let (idx, w) = c.neighbor(&[0, 0, 0], 0, -1).unwrap();
        assert_eq!((idx, w), (7, -1));
        let (idx, w) = c.neighbor(&[7, 0, 0], 0, 2).unwrap();
        assert_eq!((idx, w), (1, 1));

        let d = Chart::interval(0.0, 1.0, 5);
        assert!(d.neighbor(&[0, 0, 0], 0, -1).is_none());
        assert!(d.neighbor(&[4, 0, 0], 0, 1).is_none());
        assert_eq!(d.neighbor(&[4, 0, 0], 0, -2).unwrap(), (2, 0));
    }

    #[test]
    fn spacing_conventions() {
        let p = Chart::circle(10);
        assert!((p.spacing(0) - 0.1).abs() < 1e-15);
        let d = Chart::interval(0.0, 1.0, 11);
        assert!((d.spacing(0) - 0.1).abs() < 1e-15);
        // Dirichlet grid includes both endpoints.
        assert!((d.coords(&[10, 0, 0])[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quad_weights_sum_to_volume() {
        let d = Chart::interval(0.0, 2.0, 21);
        let total: f64 = d.iter().map(|m| d.quad_weight(&m)).sum();
        assert!((total - 2.0).abs() < 1e-12);
        let p = Chart::torus2(8);
        let total: f64 = p.iter().map(|m| p.quad_weight(&m)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(Chart::new(&[0.0], &[1.0], &[3], &[Topology::Periodic]).is_err());
    }
}
