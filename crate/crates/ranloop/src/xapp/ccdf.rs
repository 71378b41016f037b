//! Empirical joint CCDF over per-UE throughput vectors.

use super::sweep::SampleMatrix;

/// Fraction of sample rows that meet or exceed `point` in every
/// coordinate. Panics on an empty matrix or a width mismatch; both are
/// contract violations.
pub fn estimate_ccdf(samples: &SampleMatrix, point: &[f64]) -> f64 {
    assert!(samples.n_rows() > 0, "CCDF of an empty sample set is undefined");
    assert_eq!(point.len(), samples.n_cols(), "point width must match the sample width");
    let hits = samples
        .rows()
        .filter(|row| row.iter().zip(point).all(|(s, p)| s >= p))
        .count();
    hits as f64 / samples.n_rows() as f64
}

/// An owned sample set exposing the joint CCDF estimate.
#[derive(Debug, Clone)]
pub struct JointCcdf {
    samples: SampleMatrix,
}

impl JointCcdf {
    pub fn new(samples: SampleMatrix) -> Self {
        assert!(samples.n_rows() > 0, "CCDF needs at least one sample row");
        Self { samples }
    }

    pub fn value(&self, point: &[f64]) -> f64 {
        estimate_ccdf(&self.samples, point)
    }

    pub fn samples(&self) -> &SampleMatrix {
        &self.samples
    }

    pub fn n_ues(&self) -> usize {
        self.samples.n_cols()
    }
}
