//! Ground spaces: Euclidean point sets or finite sets with a precomputed
//! distance matrix.

use crate::error::{Result, UotError};

/// Positions are compared by exact coordinate equality after quantization at
/// this resolution; measures are constructed, not measured, so merging is
/// deterministic.
pub const POSITION_QUANTUM: f64 = 1e-12;

/// A point of the ground space. For a precomputed metric the single
/// coordinate is the row index of the distance matrix.
pub type Position = Vec<f64>;

/// Quantized key used for exact position comparison and merging.
pub fn position_key(pos: &[f64]) -> Vec<i128> {
    pos.iter()
        .map(|&x| {
            let q = (x / POSITION_QUANTUM).round();
            if q == 0.0 {
                0 // collapse -0.0
            } else {
                q as i128
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundMetric {
    Euclidean,
    /// Dense symmetric matrix with zero diagonal satisfying the triangle
    /// inequality; positions are 1-d indices into it.
    Precomputed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Space {
    dim: usize,
    metric: GroundMetric,
}

impl Space {
    pub fn euclidean(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(UotError::InvalidArgument("dimension must be positive".into()));
        }
        Ok(Space { dim, metric: GroundMetric::Euclidean })
    }

    /// Builds a finite metric space from a dense matrix. The matrix is
    /// validated on construction: symmetric, non-negative, zero diagonal,
    /// triangle inequality.
    pub fn precomputed(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix.len();
        if n == 0 {
            return Err(UotError::InvalidMetric("empty matrix".into()));
        }
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(UotError::InvalidMetric(format!(
                    "row {i} has length {}, expected {n}",
                    row.len()
                )));
            }
            if matrix[i][i] != 0.0 {
                return Err(UotError::InvalidMetric(format!("nonzero diagonal at {i}")));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let d = matrix[i][j];
                if !d.is_finite() || d < 0.0 {
                    return Err(UotError::InvalidMetric(format!("negative or non-finite entry at ({i},{j})")));
                }
                if (d - matrix[j][i]).abs() > 1e-12 * (1.0 + d.abs()) {
                    return Err(UotError::InvalidMetric(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if matrix[i][j] > matrix[i][k] + matrix[k][j] + 1e-12 {
                        return Err(UotError::InvalidMetric(format!(
                            "triangle inequality fails on ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        Ok(Space { dim: 1, metric: GroundMetric::Precomputed(matrix) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> &GroundMetric {
        &self.metric
    }

    pub fn check_position(&self, pos: &[f64]) -> Result<()> {
        if pos.len() != self.dim {
            return Err(UotError::DimensionMismatch { expected: self.dim, got: pos.len() });
        }
        if let GroundMetric::Precomputed(m) = &self.metric {
            let i = pos[0];
            if i.fract() != 0.0 || i < 0.0 || (i as usize) >= m.len() {
                return Err(UotError::InvalidArgument(format!("index position {i} out of range")));
            }
        }
        Ok(())
    }

    /// Ground distance between two positions.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.metric {
            GroundMetric::Euclidean => a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            GroundMetric::Precomputed(m) => m[a[0] as usize][b[0] as usize],
        }
    }

    pub fn same_shape(&self, other: &Space) -> bool {
        self.dim == other.dim && self.metric == other.metric
    }
}
