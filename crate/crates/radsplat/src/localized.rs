//! Region-partitioned GP models: one independent posterior per cell of a
//! uniform angular grid, each conditioned only on the observations that fall
//! in its cell.
//!
//! Cells are half-open `[lo, hi)` on both axes, except that the domain's top
//! edges are closed so the partition tiles the domain exactly. The flat
//! region index is `elevation_cell * n_azimuth_cells + azimuth_cell`.

use crate::geometry::{AngularCoordinate, AngularRange};
use crate::gp::{fit_auto, predict_prior, AutoFit, GpDataset, GpError, GpFitConfig};
use crate::kernel::RbfKernel;
use crate::pointcloud::SparseDepthScan;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizedError {
    #[error("partition needs at least one cell on each axis")]
    EmptyPartition,
    #[error("coordinate (az {azimuth} rad, el {elevation} rad) outside the partition domain")]
    OutOfDomain { azimuth: f64, elevation: f64 },
    #[error(
        "query {index} at (az {azimuth} rad, el {elevation} rad) outside the partition domain"
    )]
    OutOfDomainAt {
        index: usize,
        azimuth: f64,
        elevation: f64,
    },
    #[error("scan has no observations; every region would be empty")]
    NoObservations,
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Uniform azimuth-by-elevation grid over a rectangular angular domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    domain: AngularRange,
    n_azimuth_cells: usize,
    n_elevation_cells: usize,
    azimuth_edges: Vec<f64>,
    elevation_edges: Vec<f64>,
}

fn uniform_edges(min: f64, max: f64, cells: usize) -> Vec<f64> {
    // Endpoints are stored exactly; assignment always compares against these
    // stored values, never against recomputed ones.
    (0..=cells)
        .map(|i| {
            if i == 0 {
                min
            } else if i == cells {
                max
            } else {
                min + (max - min) * i as f64 / cells as f64
            }
        })
        .collect()
}

fn axis_cell(edges: &[f64], value: f64, cells: usize) -> usize {
    // Edges <= value count, minus one, gives the half-open cell; the domain
    // maximum lands past the end and clamps into the last (closed) cell.
    edges
        .partition_point(|e| *e <= value)
        .saturating_sub(1)
        .min(cells - 1)
}

impl RegionPartition {
    pub fn new(
        domain: AngularRange,
        n_azimuth_cells: usize,
        n_elevation_cells: usize,
    ) -> Result<Self, LocalizedError> {
        if n_azimuth_cells == 0 || n_elevation_cells == 0 {
            return Err(LocalizedError::EmptyPartition);
        }
        Ok(Self {
            azimuth_edges: uniform_edges(domain.azimuth_min(), domain.azimuth_max(), n_azimuth_cells),
            elevation_edges: uniform_edges(
                domain.elevation_min(),
                domain.elevation_max(),
                n_elevation_cells,
            ),
            domain,
            n_azimuth_cells,
            n_elevation_cells,
        })
    }

    pub fn domain(&self) -> &AngularRange {
        &self.domain
    }

    pub fn n_azimuth_cells(&self) -> usize {
        self.n_azimuth_cells
    }

    pub fn n_elevation_cells(&self) -> usize {
        self.n_elevation_cells
    }

    pub fn region_count(&self) -> usize {
        self.n_azimuth_cells * self.n_elevation_cells
    }

    /// Flat region index of an in-domain coordinate.
    pub fn assign(&self, x: &AngularCoordinate) -> Result<usize, LocalizedError> {
        if !self.domain.contains(x) {
            return Err(LocalizedError::OutOfDomain {
                azimuth: x.azimuth(),
                elevation: x.elevation(),
            });
        }
        let az = axis_cell(&self.azimuth_edges, x.azimuth(), self.n_azimuth_cells);
        let el = axis_cell(&self.elevation_edges, x.elevation(), self.n_elevation_cells);
        Ok(el * self.n_azimuth_cells + az)
    }

    /// (azimuth cell, elevation cell) of a flat region index.
    pub fn cell_indices(&self, region: usize) -> (usize, usize) {
        (
            region % self.n_azimuth_cells,
            region / self.n_azimuth_cells,
        )
    }

    /// The angular rectangle covered by a region.
    pub fn region_range(&self, region: usize) -> AngularRange {
        let (az, el) = self.cell_indices(region);
        AngularRange::new(
            self.azimuth_edges[az],
            self.azimuth_edges[az + 1],
            self.elevation_edges[el],
            self.elevation_edges[el + 1],
        )
        .expect("stored edges are strictly increasing")
    }
}

/// One cell of a fitted model.
#[derive(Debug, Clone)]
pub enum RegionEntry {
    /// At least one observation landed here.
    Fitted(AutoFit),
    /// No observations; queries fall back to the scan-wide prior.
    Empty,
}

/// Prediction routed through the partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPrediction {
    pub mean: f64,
    pub variance: f64,
    pub region: usize,
    pub from_empty_region: bool,
}

/// Whether independent units of work (region fits, batch queries) run on the
/// current thread or across the rayon pool. Outputs are identical either
/// way; only wall-clock time differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

/// A partitioned depth model: per-region posteriors plus a scan-wide prior
/// for regions that received no observations.
#[derive(Debug, Clone)]
pub struct LocalizedGpModel {
    partition: RegionPartition,
    regions: Vec<RegionEntry>,
    fallback_mean: f64,
    fallback_kernel: RbfKernel,
}

impl LocalizedGpModel {
    pub fn partition(&self) -> &RegionPartition {
        &self.partition
    }

    pub fn regions(&self) -> &[RegionEntry] {
        &self.regions
    }

    /// Mean depth over the whole scan, used where a region has no data.
    pub fn fallback_mean(&self) -> f64 {
        self.fallback_mean
    }

    /// Template kernel built from scan-wide statistics; its signal variance
    /// is the uncertainty reported for empty regions.
    pub fn fallback_kernel(&self) -> &RbfKernel {
        &self.fallback_kernel
    }

    pub fn predict_local(&self, x: &AngularCoordinate) -> Result<LocalPrediction, LocalizedError> {
        let region = self.partition.assign(x)?;
        Ok(match &self.regions[region] {
            RegionEntry::Fitted(fit) => {
                let (mean, variance) = fit.posterior.predict(x);
                LocalPrediction {
                    mean,
                    variance,
                    region,
                    from_empty_region: false,
                }
            }
            RegionEntry::Empty => {
                let (mean, variance) = predict_prior(&self.fallback_kernel, x, self.fallback_mean);
                LocalPrediction {
                    mean,
                    variance,
                    region,
                    from_empty_region: true,
                }
            }
        })
    }

    /// Predicts every query, preserving input order. Validation happens up
    /// front so an out-of-domain query reports its index.
    pub fn predict_batch(
        &self,
        queries: &[AngularCoordinate],
        execution: Execution,
    ) -> Result<Vec<LocalPrediction>, LocalizedError> {
        for (index, x) in queries.iter().enumerate() {
            if !self.partition.domain().contains(x) {
                return Err(LocalizedError::OutOfDomainAt {
                    index,
                    azimuth: x.azimuth(),
                    elevation: x.elevation(),
                });
            }
        }
        let predict = |x: &AngularCoordinate| {
            self.predict_local(x)
                .expect("queries validated against the domain above")
        };
        Ok(match execution {
            Execution::Sequential => queries.iter().map(predict).collect(),
            Execution::Parallel => queries.par_iter().map(predict).collect(),
        })
    }
}

/// Buckets the scan by region and fits each non-empty region independently.
///
/// Within a bucket, observations keep scan order, so a one-region partition
/// reproduces the conventional whole-scan fit exactly.
pub fn fit_localized(
    scan: &SparseDepthScan,
    partition: RegionPartition,
    gp_config: &GpFitConfig,
    noise_variance: f64,
    execution: Execution,
) -> Result<LocalizedGpModel, LocalizedError> {
    if scan.is_empty() {
        return Err(LocalizedError::NoObservations);
    }
    let mut buckets: Vec<(Vec<AngularCoordinate>, Vec<f64>)> =
        vec![(Vec::new(), Vec::new()); partition.region_count()];
    for record in scan.records() {
        let region = partition.assign(&record.location)?;
        buckets[region].0.push(record.location);
        buckets[region].1.push(record.depth_m);
    }

    let all_targets: Vec<f64> = scan.records().iter().map(|r| r.depth_m).collect();
    let global = GpDataset::new(
        scan.records().iter().map(|r| r.location).collect(),
        all_targets,
        noise_variance,
    )
    .map_err(LocalizedError::Gp)?;
    let fallback_mean = global.mean_target();
    let fallback_kernel = RbfKernel::new(
        global.floored_target_variance(),
        gp_config.template_lengthscale,
    )
    .map_err(GpError::from)?;

    let fit_bucket = |(inputs, targets): (Vec<AngularCoordinate>, Vec<f64>)| {
        if inputs.is_empty() {
            return Ok(RegionEntry::Empty);
        }
        let dataset = GpDataset::new(inputs, targets, noise_variance)?;
        Ok::<RegionEntry, GpError>(RegionEntry::Fitted(fit_auto(dataset, gp_config)?))
    };
    let regions: Result<Vec<RegionEntry>, GpError> = match execution {
        Execution::Sequential => buckets.into_iter().map(fit_bucket).collect(),
        Execution::Parallel => buckets.into_par_iter().map(fit_bucket).collect(),
    };

    Ok(LocalizedGpModel {
        partition,
        regions: regions?,
        fallback_mean,
        fallback_kernel,
    })
}

/// Whole-scan fit with the same automatic pipeline the regions use.
pub fn fit_conventional(
    scan: &SparseDepthScan,
    gp_config: &GpFitConfig,
    noise_variance: f64,
) -> Result<AutoFit, LocalizedError> {
    if scan.is_empty() {
        return Err(LocalizedError::NoObservations);
    }
    let dataset = GpDataset::new(
        scan.records().iter().map(|r| r.location).collect(),
        scan.records().iter().map(|r| r.depth_m).collect(),
        noise_variance,
    )
    .map_err(LocalizedError::Gp)?;
    Ok(fit_auto(dataset, gp_config).map_err(LocalizedError::Gp)?)
}
