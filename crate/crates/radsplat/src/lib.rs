//! Dense depth fields from sparse radar scans.
//!
//! The pipeline: import a sparse angular depth scan, fit localized
//! Gaussian-process models over a partition of the viewing directions,
//! reconstruct a dense depth field with per-query variance, keep the
//! confident points as a 3D point cloud, and check the result visually with
//! a small forward splat renderer.

pub mod cli;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod gp;
pub mod kernel;
pub mod localized;
pub mod pointcloud;
pub mod splat;

pub use geometry::{AngularCoordinate, AngularRange, GeometryError, Point3};
pub use gp::{GpDataset, GpError, GpFitConfig, GpPosterior};
pub use kernel::{KernelError, RbfKernel};
pub use localized::{
    Execution, LocalizedError, LocalizedGpModel, RegionEntry, RegionPartition,
};
pub use pointcloud::{PointCloud, ScanFormat, SparseDepthScan};
pub use splat::{CameraModel, GaussianPrimitive, ProjectedGaussian, RenderedImage, SplatError};
