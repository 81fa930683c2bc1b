//! Time-dependent neighbourhood coefficients between codebook indices.
//!
//! Three kinds: `identity` (no neighbourhood, coefficient is the Kronecker
//! delta), `hard` (constant 1 within a grid-distance threshold, shrinking as
//! 1/(1+t*tau)), and `gaussian` (exp(-dist^2/sigma(t)^2) with
//! sigma(t)^2 = 1/(1+t*tau)). The diagonal is exactly 1 for all t and
//! every off-diagonal coefficient is non-increasing in t.

use crate::error::Result;
use crate::grid::GridTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborhoodKind {
    Identity,
    Hard,
    Gaussian,
}

impl NeighborhoodKind {
    pub fn name(&self) -> &'static str {
        match self {
            NeighborhoodKind::Identity => "identity",
            NeighborhoodKind::Hard => "hard",
            NeighborhoodKind::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone)]
pub struct NeighborhoodSchedule {
    kind: NeighborhoodKind,
    grid: GridTopology,
    /// Grid-distance threshold for the hard kind.
    threshold: f64,
    /// Shrink step tau; larger means faster shrinking.
    tau: f64,
}

impl NeighborhoodSchedule {
    pub fn new(kind: NeighborhoodKind, grid: GridTopology, threshold: f64, tau: f64) -> Self {
        NeighborhoodSchedule { kind, grid, threshold, tau }
    }

    /// Identity schedule on a degenerate grid of the right size.
    pub fn identity(k: usize) -> Self {
        let grid = GridTopology::OneD { len: k };
        NeighborhoodSchedule { kind: NeighborhoodKind::Identity, grid, threshold: 0.0, tau: 0.0 }
    }

    /// Hard schedule with the grid's conventional threshold (1 for 1D, sqrt 2 for 2D).
    pub fn hard(grid: GridTopology, tau: f64) -> Self {
        let threshold = grid.default_threshold();
        NeighborhoodSchedule { kind: NeighborhoodKind::Hard, grid, threshold, tau }
    }

    pub fn gaussian(grid: GridTopology, tau: f64) -> Self {
        NeighborhoodSchedule { kind: NeighborhoodKind::Gaussian, grid, threshold: 0.0, tau }
    }

    pub fn kind(&self) -> NeighborhoodKind {
        self.kind
    }

    pub fn grid(&self) -> &GridTopology {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_identity(&self) -> bool {
        self.kind == NeighborhoodKind::Identity
    }

    /// A_{i,j}^{(t)}; recomputed on demand, never materialised.
    pub fn coefficient(&self, i: usize, j: usize, t: u64) -> Result<f64> {
        if i == j {
            // validate the index even on the diagonal
            self.grid.coords(i)?;
            return Ok(1.0);
        }
        match self.kind {
            NeighborhoodKind::Identity => {
                self.grid.coords(i)?;
                self.grid.coords(j)?;
                Ok(0.0)
            }
            NeighborhoodKind::Hard => {
                let dist = self.grid.grid_distance(i, j)?;
                if dist <= self.threshold {
                    Ok(1.0 / (1.0 + t as f64 * self.tau))
                } else {
                    Ok(0.0)
                }
            }
            NeighborhoodKind::Gaussian => {
                let dist = self.grid.grid_distance(i, j)?;
                // sigma(t)^2 = 1/(1+t*tau), so the exponent is -d^2 * (1+t*tau)
                Ok((-dist * dist * (1.0 + t as f64 * self.tau)).exp())
            }
        }
    }

    /// Full K x K coefficient table at step t, row-major.
    pub fn matrix(&self, t: u64) -> Result<Vec<f64>> {
        let k = self.grid.size();
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                out[i * k + j] = self.coefficient(i, j, t)?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hard_2d(tau: f64) -> NeighborhoodSchedule {
        NeighborhoodSchedule::hard(GridTopology::rect(6, 4).unwrap(), tau)
    }

    #[test]
    fn diagonal_is_one() {
        for s in [
            NeighborhoodSchedule::identity(10),
            hard_2d(0.1),
            NeighborhoodSchedule::gaussian(GridTopology::rect(6, 4).unwrap(), 0.1),
        ] {
            for t in [0, 1, 1000] {
                assert_eq!(s.coefficient(5, 5, t).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn hard_shrinks_as_expected() {
        let s = hard_2d(0.1);
        let g = s.grid();
        let i = g.index_of(2, 2).unwrap();
        let j = g.index_of(3, 2).unwrap();
        assert_eq!(s.coefficient(i, j, 0).unwrap(), 1.0);
        assert!((s.coefficient(i, j, 10).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_at_t0() {
        let s = NeighborhoodSchedule::gaussian(GridTopology::line(10).unwrap(), 0.1);
        // unit grid distance, sigma(0)^2 = 1
        let c = s.coefficient(2, 3, 0).unwrap();
        assert!((c - (-1.0f64).exp()).abs() < 1e-9);
        assert!((c - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn identity_matrix_for_identity_kind() {
        let s = NeighborhoodSchedule::identity(4);
        let m = s.matrix(7).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m[i * 4 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn gaussian_tends_to_identity() {
        let s = NeighborhoodSchedule::gaussian(GridTopology::rect(6, 4).unwrap(), 0.1);
        let m = s.matrix(1_000_000).unwrap();
        for i in 0..24 {
            for j in 0..24 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((m[i * 24 + j] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hard_interior_row_has_nine_nonzeros() {
        let s = hard_2d(0.1);
        let i = s.grid().index_of(2, 2).unwrap();
        let k = s.grid().size();
        let m = s.matrix(3).unwrap();
        let nonzero = (0..k).filter(|&j| m[i * k + j] != 0.0).count();
        assert_eq!(nonzero, 9);
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone(
            i in 0usize..24, j in 0usize..24, t in 0u64..1000,
            tau in 0.001f64..2.0, gaussian in proptest::bool::ANY,
        ) {
            let grid = GridTopology::rect(6, 4).unwrap();
            let s = if gaussian {
                NeighborhoodSchedule::gaussian(grid, tau)
            } else {
                NeighborhoodSchedule::hard(grid, tau)
            };
            let c = s.coefficient(i, j, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert_eq!(c, s.coefficient(j, i, t).unwrap());
            if i != j {
                prop_assert!(s.coefficient(i, j, t + 1).unwrap() <= c);
            }
        }
    }

    #[test]
    fn hard_off_neighborhood_exactly_zero() {
        let s = hard_2d(0.1);
        let g = s.grid();
        let i = g.index_of(0, 0).unwrap();
        let j = g.index_of(2, 0).unwrap();
        assert_eq!(s.coefficient(i, j, 0).unwrap(), 0.0);
    }
}
