//! Lattice of codebook indices on which neighbourhoods are defined.
//!
//! Indices are 0-based. For 2D grids the index-to-coordinate map is
//! row-major with the origin at the bottom-left node: index k sits at
//! (k mod W, k div W). Edges do not wrap.

use crate::error::{KvqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridTopology {
    OneD { len: usize },
    TwoD { width: usize, height: usize },
}

impl GridTopology {
    pub fn line(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(KvqError::Config("1D grid length must be positive".into()));
        }
        Ok(GridTopology::OneD { len })
    }

    pub fn rect(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(KvqError::Config("2D grid extents must be positive".into()));
        }
        Ok(GridTopology::TwoD { width, height })
    }

    pub fn size(&self) -> usize {
        match *self {
            GridTopology::OneD { len } => len,
            GridTopology::TwoD { width, height } => width * height,
        }
    }

    pub fn dimensionality(&self) -> usize {
        match self {
            GridTopology::OneD { .. } => 1,
            GridTopology::TwoD { .. } => 2,
        }
    }

    /// Extents as (width, height); height is 1 for 1D grids.
    pub fn extents(&self) -> (usize, usize) {
        match *self {
            GridTopology::OneD { len } => (len, 1),
            GridTopology::TwoD { width, height } => (width, height),
        }
    }

    /// Lattice coordinates of index `k`; the y coordinate is 0 for 1D grids.
    pub fn coords(&self, k: usize) -> Result<(usize, usize)> {
        let size = self.size();
        if k >= size {
            return Err(KvqError::IndexOutOfRange { index: k, k: size });
        }
        Ok(match *self {
            GridTopology::OneD { .. } => (k, 0),
            GridTopology::TwoD { width, .. } => (k % width, k / width),
        })
    }

    /// Inverse of [`coords`](Self::coords); clamps nothing, errors out of range.
    pub fn index_of(&self, x: usize, y: usize) -> Result<usize> {
        let (w, h) = self.extents();
        if x >= w || y >= h {
            return Err(KvqError::IndexOutOfRange { index: x + y * w, k: self.size() });
        }
        Ok(x + y * w)
    }

    /// Euclidean distance between the lattice points of two indices.
    pub fn grid_distance(&self, i: usize, j: usize) -> Result<f64> {
        let (xi, yi) = self.coords(i)?;
        let (xj, yj) = self.coords(j)?;
        let dx = xi as f64 - xj as f64;
        let dy = yi as f64 - yj as f64;
        Ok((dx * dx + dy * dy).sqrt())
    }

    /// All indices j != i with grid_distance(i, j) <= d.
    pub fn neighbors_within(&self, i: usize, d: f64) -> Result<Vec<usize>> {
        self.coords(i)?;
        let mut out = Vec::new();
        for j in 0..self.size() {
            if j != i && self.grid_distance(i, j)? <= d {
                out.push(j);
            }
        }
        Ok(out)
    }

    /// The conventional neighbour threshold: 1 for 1D, sqrt(2) for 2D.
    pub fn default_threshold(&self) -> f64 {
        match self {
            GridTopology::OneD { .. } => 1.0,
            GridTopology::TwoD { .. } => std::f64::consts::SQRT_2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn coords_1d_is_identity() {
        let g = GridTopology::line(5).unwrap();
        assert_eq!(g.coords(3).unwrap(), (3, 0));
    }

    #[test]
    fn coords_2d_row_major() {
        let g = GridTopology::rect(6, 4).unwrap();
        assert_eq!(g.coords(0).unwrap(), (0, 0));
        assert_eq!(g.coords(14).unwrap(), (2, 2));
    }

    #[test]
    fn coords_out_of_range() {
        let g = GridTopology::rect(6, 4).unwrap();
        assert!(matches!(g.coords(24), Err(KvqError::IndexOutOfRange { .. })));
    }

    #[test]
    fn grid_distance_basics() {
        let g2 = GridTopology::rect(6, 4).unwrap();
        let i = g2.index_of(2, 2).unwrap();
        let j = g2.index_of(3, 3).unwrap();
        assert_eq!(g2.grid_distance(i, i).unwrap(), 0.0);
        assert!((g2.grid_distance(i, j).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-15);

        let g1 = GridTopology::line(10).unwrap();
        assert_eq!(g1.grid_distance(2, 7).unwrap(), 5.0);
    }

    #[test]
    fn interior_node_has_eight_neighbors() {
        let g = GridTopology::rect(6, 4).unwrap();
        let i = g.index_of(2, 2).unwrap();
        let n = g.neighbors_within(i, std::f64::consts::SQRT_2).unwrap();
        assert_eq!(n.len(), 8);
        // the surrounding ring
        let expect: HashSet<usize> = [(1, 1), (2, 1), (3, 1), (1, 2), (3, 2), (1, 3), (2, 3), (3, 3)]
            .iter()
            .map(|&(x, y)| g.index_of(x, y).unwrap())
            .collect();
        assert_eq!(n.iter().copied().collect::<HashSet<_>>(), expect);
    }

    #[test]
    fn interior_1d_node_has_two_neighbors() {
        let g = GridTopology::line(10).unwrap();
        assert_eq!(g.neighbors_within(5, 1.0).unwrap(), vec![4, 6]);
    }

    #[test]
    fn corner_node_has_three_neighbors() {
        let g = GridTopology::rect(6, 4).unwrap();
        let n = g.neighbors_within(0, std::f64::consts::SQRT_2).unwrap();
        assert_eq!(n.len(), 3);
    }

    #[test]
    fn coords_bijective() {
        for g in [GridTopology::line(24).unwrap(), GridTopology::rect(6, 4).unwrap()] {
            let pts: HashSet<(usize, usize)> =
                (0..g.size()).map(|k| g.coords(k).unwrap()).collect();
            assert_eq!(pts.len(), g.size());
            for k in 0..g.size() {
                let (x, y) = g.coords(k).unwrap();
                assert_eq!(g.index_of(x, y).unwrap(), k);
            }
        }
    }

    #[test]
    fn triangle_inequality_exhaustive() {
        let g = GridTopology::rect(8, 8).unwrap();
        for i in 0..g.size() {
            for j in 0..g.size() {
                for l in 0..g.size() {
                    let dij = g.grid_distance(i, j).unwrap();
                    let dil = g.grid_distance(i, l).unwrap();
                    let dlj = g.grid_distance(l, j).unwrap();
                    assert!(dij <= dil + dlj + 1e-12);
                }
            }
        }
    }

    #[test]
    fn boundary_nodes_have_fewer_neighbors() {
        let g = GridTopology::rect(5, 4).unwrap();
        let d = std::f64::consts::SQRT_2;
        let interior = g.index_of(2, 2).unwrap();
        let interior_n = g.neighbors_within(interior, d).unwrap().len();
        for x in 0..5 {
            for y in 0..4 {
                if x == 0 || y == 0 || x == 4 || y == 3 {
                    let k = g.index_of(x, y).unwrap();
                    assert!(g.neighbors_within(k, d).unwrap().len() < interior_n);
                }
            }
        }
    }
}
