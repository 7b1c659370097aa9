//! Uniform one-dimensional node grids and the trapezoidal rule shared by
//! every density functional in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid of `nodes` points spanning `[lo, hi]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: f64,
    hi: f64,
    nodes: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::config(
                "grid.nodes",
                format!("need at least 2 nodes, got {nodes}"),
            ));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(
                "grid",
                format!("invalid interval [{lo}, {hi}]"),
            ));
        }
        Ok(Grid { lo, hi, nodes })
    }

    /// The reconstruction grid used throughout the benchmark: `[-20, 20]`
    /// with 501 nodes.
    pub fn diagnostics_default() -> Self {
        Grid {
            lo: -20.0,
            hi: 20.0,
            nodes: 501,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    /// Node `i`, computed as `lo + (hi - lo) * i / (n - 1)` so that nodes
    /// which are exactly representable come out exact.
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            return self.hi;
        }
        self.lo + (self.hi - self.lo) * i as f64 / (self.nodes - 1) as f64
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.nodes).map(move |i| self.node(i))
    }

    /// Trapezoidal weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i + 1 == self.nodes {
            0.5 * h
        } else {
            h
        }
    }

    /// Trapezoidal quadrature of nodal values.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.nodes);
        let n = values.len();
        let interior: f64 = values[1..n - 1].iter().sum();
        self.spacing() * (0.5 * (values[0] + values[n - 1]) + interior)
    }

    /// Index of the node whose cell `[x_i - h/2, x_i + h/2)` contains `x`,
    /// clamped to the boundary nodes.
    pub fn cell_index(&self, x: f64) -> usize {
        let r = ((x - self.lo) / self.spacing()).round();
        if r <= 0.0 {
            0
        } else if r >= (self.nodes - 1) as f64 {
            self.nodes - 1
        } else {
            r as usize
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// A grid with `factor` times as many cells over the same interval.
    pub fn refined(&self, factor: usize) -> Grid {
        Grid {
            lo: self.lo,
            hi: self.hi,
            nodes: (self.nodes - 1) * factor.max(1) + 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(0.0, 1.0, 1).is_err());
        assert!(Grid::new(1.0, 1.0, 10).is_err());
        assert!(Grid::new(0.0, f64::NAN, 10).is_err());
    }

    #[test]
    fn benchmark_nodes_are_exact() {
        let g = Grid::diagnostics_default();
        assert_eq!(g.node(0), -20.0);
        assert_eq!(g.node(275), 2.0);
        assert_eq!(g.node(250), 0.0);
        assert_eq!(g.node(500), 20.0);
        assert!((g.spacing() - 0.08).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = Grid::new(-1.0, 3.0, 41).unwrap();
        let v: Vec<f64> = g.nodes().map(|x| 2.0 * x + 1.0).collect();
        assert!((g.trapezoid(&v) - 12.0).abs() < 1e-12);
        let w: f64 = (0..g.len()).map(|i| g.weight(i)).sum();
        assert!((w - 4.0).abs() < 1e-12);
    }

    #[test]
    fn cell_index_clamps() {
        let g = Grid::new(0.0, 1.0, 11).unwrap();
        assert_eq!(g.cell_index(-5.0), 0);
        assert_eq!(g.cell_index(0.04), 0);
        assert_eq!(g.cell_index(0.06), 1);
        assert_eq!(g.cell_index(7.0), 10);
    }
}
