//! Squared-exponential covariance on the (azimuth, elevation) plane.

use crate::geometry::AngularCoordinate;
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("signal variance must be positive and finite, got {0}")]
    InvalidSignalVariance(f64),
    #[error("lengthscale must be positive and finite, got {0}")]
    InvalidLengthscale(f64),
}

/// Radial basis function kernel
/// `k(a, b) = signal_variance * exp(-|a - b|^2 / (2 lengthscale^2))`.
///
/// Distances are Euclidean on the (azimuth, elevation) plane in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfKernel {
    signal_variance: f64,
    lengthscale: f64,
}

impl RbfKernel {
    pub fn new(signal_variance: f64, lengthscale: f64) -> Result<Self, KernelError> {
        if !signal_variance.is_finite() || signal_variance <= 0.0 {
            return Err(KernelError::InvalidSignalVariance(signal_variance));
        }
        if !lengthscale.is_finite() || lengthscale <= 0.0 {
            return Err(KernelError::InvalidLengthscale(lengthscale));
        }
        Ok(Self {
            signal_variance,
            lengthscale,
        })
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Same kernel with a different lengthscale; shape searches reuse this.
    pub fn with_lengthscale(&self, lengthscale: f64) -> Result<Self, KernelError> {
        Self::new(self.signal_variance, lengthscale)
    }

    pub fn evaluate(&self, a: &AngularCoordinate, b: &AngularCoordinate) -> f64 {
        self.from_distance_squared(a.distance_squared(b))
    }

    /// Kernel value from a precomputed squared distance.
    ///
    /// Lengthscale searches evaluate many kernels over one fixed set of
    /// points, so the distance matrix is computed once and reused here.
    pub fn from_distance_squared(&self, dist_sq: f64) -> f64 {
        self.signal_variance * (-dist_sq / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    /// Dense symmetric Gram matrix `K[i][j] = k(points[i], points[j])`.
    pub fn gram_matrix(&self, points: &[AngularCoordinate]) -> DMatrix<f64> {
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.signal_variance;
            for j in (i + 1)..n {
                let v = self.evaluate(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Cross-covariance vector `k[i] = k(x, points[i])`.
    pub fn cross_covariance(
        &self,
        x: &AngularCoordinate,
        points: &[AngularCoordinate],
    ) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            points.len(),
            points.iter().map(|p| self.evaluate(x, p)),
        )
    }
}

/// Pairwise squared distances, reused across lengthscale candidates.
pub fn distance_squared_matrix(points: &[AngularCoordinate]) -> DMatrix<f64> {
    let n = points.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = points[i].distance_squared(&points[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}
