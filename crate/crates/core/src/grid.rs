//! Uniform sample axes centered on the origin.
//!
//! Samples sit at cell centers, `x_j = (j - (n - 1) / 2) * spacing`, so every
//! axis is mirror symmetric about zero and cell boundaries fall on integer
//! multiples of the spacing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A symmetric, cell-centered sample axis of `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub n: usize,
    pub spacing: f64,
}

impl Axis {
    pub fn new(n: usize, spacing: f64) -> Self {
        Self { n, spacing }
    }

    pub fn extent(&self) -> f64 {
        self.spacing * self.n as f64
    }

    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        (j as f64 - (self.n as f64 - 1.0) / 2.0) * self.spacing
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.coord(j)).collect()
    }
}

/// Propagation grid: a power-of-two [`Axis`] with at least 64 samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    axis: Axis,
}

impl Grid1D {
    pub const MIN_SAMPLES: usize = 64;

    pub fn new(n: usize, extent: f64) -> Result<Self> {
        if n < Self::MIN_SAMPLES || !n.is_power_of_two() {
            return Err(Error::Domain(format!(
                "grid sample count must be a power of two >= {}, got {n}",
                Self::MIN_SAMPLES
            )));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::Domain(format!("grid extent must be positive, got {extent}")));
        }
        Ok(Self {
            axis: Axis::new(n, extent / n as f64),
        })
    }

    pub fn n(&self) -> usize {
        self.axis.n
    }

    pub fn spacing(&self) -> f64 {
        self.axis.spacing
    }

    pub fn extent(&self) -> f64 {
        self.axis.extent()
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        self.axis.coord(j)
    }

    pub fn coords(&self) -> Vec<f64> {
        self.axis.coords()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_symmetric_and_consistent() {
        let g = Grid1D::new(128, 1.0e-3).unwrap();
        assert_eq!(g.spacing() * 128.0, g.extent());
        for j in 0..g.n() {
            assert_eq!(g.coord(j), -g.coord(g.n() - 1 - j));
        }
        assert!((g.coord(64) - g.spacing() / 2.0).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid1D::new(32, 1.0).is_err());
        assert!(Grid1D::new(100, 1.0).is_err());
        assert!(Grid1D::new(64, 0.0).is_err());
    }
}
