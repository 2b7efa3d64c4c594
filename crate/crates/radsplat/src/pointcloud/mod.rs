//! Scan ingestion, query sampling, variance-filtered point-cloud assembly,
//! and depth-field rasters.
//!
//! File formats carry angles in degrees; everything in memory is radians.
//! Exports pick degree values whose parse converts back to the exact radian
//! bit pattern, so import/export round-trips preserve records bitwise.

pub mod ply;

use crate::geometry::{
    spherical_to_cartesian, AngularCoordinate, AngularRange, GeometryError, Point3,
};
use crate::gp::GpDataset;
use crate::localized::{Execution, LocalizedError, LocalizedGpModel, RegionEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read, Write};
use thiserror::Error;

/// Color given to points that carry no measured color.
pub const DEFAULT_COLOR: [u8; 3] = [128, 128, 128];

const SCAN_CSV_HEADER: &str = "azimuth_deg,elevation_deg,depth_m";

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line 1: expected header `{SCAN_CSV_HEADER}`, found `{found}`")]
    MissingHeader { found: String },
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("line {line}: depth must be positive and finite, got {depth}")]
    InvalidDepth { line: usize, depth: f64 },
    #[error("line {line}: angles (az {azimuth_deg} deg, el {elevation_deg} deg) out of range")]
    AngleRange {
        line: usize,
        azimuth_deg: f64,
        elevation_deg: f64,
    },
    #[error("record {index}: {message}")]
    JsonRecord { index: usize, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scan contains no records")]
    Empty,
}

/// Input and output encodings for scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanFormat {
    Csv,
    Json,
}

/// One radar return: a viewing direction and the measured range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRecord {
    pub location: AngularCoordinate,
    pub depth_m: f64,
}

impl ScanRecord {
    pub fn new(location: AngularCoordinate, depth_m: f64) -> Result<Self, GeometryError> {
        if !depth_m.is_finite() || depth_m <= 0.0 {
            return Err(GeometryError::InvalidDepth(depth_m));
        }
        Ok(Self { location, depth_m })
    }
}

/// A sparse angular depth scan plus opaque provenance strings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseDepthScan {
    records: Vec<ScanRecord>,
    sensor: Option<String>,
    timestamp: Option<String>,
}

impl SparseDepthScan {
    pub fn new(
        records: Vec<ScanRecord>,
        sensor: Option<String>,
        timestamp: Option<String>,
    ) -> Self {
        Self {
            records,
            sensor,
            timestamp,
        }
    }

    pub fn records(&self) -> &[ScanRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sensor(&self) -> Option<&str> {
        self.sensor.as_deref()
    }

    pub fn timestamp(&self) -> Option<&str> {
        self.timestamp.as_deref()
    }

    pub fn to_dataset(&self, noise_variance: f64) -> Result<GpDataset, crate::gp::GpError> {
        GpDataset::new(
            self.records.iter().map(|r| r.location).collect(),
            self.records.iter().map(|r| r.depth_m).collect(),
            noise_variance,
        )
    }

    /// (azimuth min, azimuth max, elevation min, elevation max) over the
    /// records, in radians. None for an empty scan.
    pub fn angular_bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.records.first()?;
        let mut b = (
            first.location.azimuth(),
            first.location.azimuth(),
            first.location.elevation(),
            first.location.elevation(),
        );
        for r in &self.records[1..] {
            b.0 = b.0.min(r.location.azimuth());
            b.1 = b.1.max(r.location.azimuth());
            b.2 = b.2.min(r.location.elevation());
            b.3 = b.3.max(r.location.elevation());
        }
        Some(b)
    }
}

/// The degree value whose standard conversion reproduces `radians` exactly,
/// when one exists within a few ulps of the naive conversion.
///
/// Degree-to-radian conversion is not bitwise invertible: converting back
/// and forth can drift by an ulp. Records imported from degree-based files
/// must survive an export/import cycle bit-identically, so the exported
/// degree value is searched for instead of computed directly.
fn degrees_preimage(radians: f64) -> f64 {
    let base = radians.to_degrees();
    if base.to_radians() == radians {
        return base;
    }
    let mut lo = base;
    let mut hi = base;
    for _ in 0..4 {
        lo = lo.next_down();
        hi = hi.next_up();
        if lo.to_radians() == radians {
            return lo;
        }
        if hi.to_radians() == radians {
            return hi;
        }
    }
    // No exact preimage exists; the radian value did not come from degrees.
    base
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonScanRecord {
    azimuth_deg: f64,
    elevation_deg: f64,
    depth_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sensor: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<String>,
}

fn record_from_degrees(
    azimuth_deg: f64,
    elevation_deg: f64,
    depth_m: f64,
    line: usize,
) -> Result<ScanRecord, ScanError> {
    let location = AngularCoordinate::new(azimuth_deg.to_radians(), elevation_deg.to_radians())
        .map_err(|_| ScanError::AngleRange {
            line,
            azimuth_deg,
            elevation_deg,
        })?;
    ScanRecord::new(location, depth_m).map_err(|_| ScanError::InvalidDepth {
        line,
        depth: depth_m,
    })
}

/// Reads a scan from CSV or JSON; angles arrive in degrees.
pub fn import_scan<R: Read>(source: R, format: ScanFormat) -> Result<SparseDepthScan, ScanError> {
    match format {
        ScanFormat::Csv => import_scan_csv(source),
        ScanFormat::Json => import_scan_json(source),
    }
}

fn import_scan_csv<R: Read>(source: R) -> Result<SparseDepthScan, ScanError> {
    let reader = std::io::BufReader::new(source);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(ScanError::Empty),
    };
    if header.trim_end_matches('\r') != SCAN_CSV_HEADER {
        return Err(ScanError::MissingHeader { found: header });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(ScanError::Row {
                line: line_no,
                message: format!("expected 3 comma-separated fields, found {}", fields.len()),
            });
        }
        let mut parsed = [0f64; 3];
        for (slot, field) in parsed.iter_mut().zip(&fields) {
            *slot = field.trim().parse().map_err(|_| ScanError::Row {
                line: line_no,
                message: format!("`{field}` is not a number"),
            })?;
        }
        records.push(record_from_degrees(
            parsed[0], parsed[1], parsed[2], line_no,
        )?);
    }
    if records.is_empty() {
        return Err(ScanError::Empty);
    }
    Ok(SparseDepthScan::new(records, None, None))
}

fn import_scan_json<R: Read>(source: R) -> Result<SparseDepthScan, ScanError> {
    let raw: Vec<JsonScanRecord> = serde_json::from_reader(source)?;
    if raw.is_empty() {
        return Err(ScanError::Empty);
    }
    // Scan-level provenance comes from the first record that carries any.
    let sensor = raw.iter().find_map(|r| r.sensor.clone());
    let timestamp = raw.iter().find_map(|r| r.timestamp.clone());
    let mut records = Vec::with_capacity(raw.len());
    for (index, r) in raw.iter().enumerate() {
        let record = record_from_degrees(r.azimuth_deg, r.elevation_deg, r.depth_m, 0)
            .map_err(|e| ScanError::JsonRecord {
                index,
                message: match e {
                    ScanError::InvalidDepth { depth, .. } => {
                        format!("depth must be positive and finite, got {depth}")
                    }
                    ScanError::AngleRange {
                        azimuth_deg,
                        elevation_deg,
                        ..
                    } => format!("angles (az {azimuth_deg} deg, el {elevation_deg} deg) out of range"),
                    other => other.to_string(),
                },
            })?;
        records.push(record);
    }
    Ok(SparseDepthScan::new(records, sensor, timestamp))
}

/// Writes a scan in CSV or JSON, inverting [`import_scan`] bitwise for
/// degree-sourced records.
pub fn export_scan<W: Write>(
    scan: &SparseDepthScan,
    sink: &mut W,
    format: ScanFormat,
) -> Result<(), ScanError> {
    match format {
        ScanFormat::Csv => {
            writeln!(sink, "{SCAN_CSV_HEADER}")?;
            for r in scan.records() {
                writeln!(
                    sink,
                    "{},{},{}",
                    degrees_preimage(r.location.azimuth()),
                    degrees_preimage(r.location.elevation()),
                    r.depth_m
                )?;
            }
        }
        ScanFormat::Json => {
            let rows: Vec<JsonScanRecord> = scan
                .records()
                .iter()
                .enumerate()
                .map(|(i, r)| JsonScanRecord {
                    azimuth_deg: degrees_preimage(r.location.azimuth()),
                    elevation_deg: degrees_preimage(r.location.elevation()),
                    depth_m: r.depth_m,
                    // Provenance is scan-level; emit it once, on the first row.
                    sensor: (i == 0).then(|| scan.sensor().map(str::to_owned)).flatten(),
                    timestamp: (i == 0)
                        .then(|| scan.timestamp().map(str::to_owned))
                        .flatten(),
                })
                .collect();
            serde_json::to_writer_pretty(&mut *sink, &rows)?;
            writeln!(sink)?;
        }
    }
    Ok(())
}

/// Uniform random viewing directions over a rectangle, reproducible by seed.
pub fn sample_query_locations(
    range: &AngularRange,
    count: usize,
    seed: u64,
) -> Vec<AngularCoordinate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let azimuth = rng.random_range(range.azimuth_min()..range.azimuth_max());
            let elevation = rng.random_range(range.elevation_min()..range.elevation_max());
            AngularCoordinate::new(azimuth, elevation)
                .expect("samples drawn inside a validated range")
        })
        .collect()
}

/// A depth prediction tagged with its source region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub location: AngularCoordinate,
    pub mean: f64,
    pub variance: f64,
    pub region: usize,
    pub from_empty_region: bool,
}

/// One splat-ready point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Point3,
    pub color: [u8; 3],
    /// `exp(-variance / signal_variance)` of the producing region; 1 means
    /// the model is certain.
    pub confidence: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("variance quantile must lie in (0, 1], got {0}")]
    InvalidQuantile(f64),
    #[error("confidence must lie in [0, 1], got {0}")]
    InvalidConfidence(f64),
    #[error(transparent)]
    Localized(#[from] LocalizedError),
}

/// A set of 3D points with colors and confidences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<CloudPoint>) -> Result<Self, CloudError> {
        if let Some(bad) = points
            .iter()
            .find(|p| !p.confidence.is_finite() || !(0.0..=1.0).contains(&p.confidence))
        {
            return Err(CloudError::InvalidConfidence(bad.confidence));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CloudPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Outcome of a variance-filtered cloud build, with enough bookkeeping to
/// reproduce the filtering decision.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudBuildReport {
    pub cloud: PointCloud,
    /// Realized variance cutoff; None when no sample survived to define one.
    pub variance_threshold: Option<f64>,
    pub retained: usize,
    pub dropped_empty_region: usize,
    pub dropped_high_variance: usize,
    /// Samples whose predicted mean was not a usable depth (<= 0).
    pub dropped_invalid_depth: usize,
    /// True when every sample was filtered out before thresholding.
    pub all_filtered_warning: bool,
}

/// Predicts every query, drops empty-region samples, keeps the fraction `q`
/// with the lowest variance, and lifts survivors to 3D points.
///
/// The threshold is the nearest-rank `q`-quantile of the surviving variance
/// list: with n samples, the ceil(q n)-th smallest variance. Samples equal
/// to the threshold are kept.
pub fn build_point_cloud(
    model: &LocalizedGpModel,
    queries: &[AngularCoordinate],
    variance_quantile: f64,
    execution: Execution,
) -> Result<CloudBuildReport, CloudError> {
    if !variance_quantile.is_finite() || variance_quantile <= 0.0 || variance_quantile > 1.0 {
        return Err(CloudError::InvalidQuantile(variance_quantile));
    }
    let predictions = model.predict_batch(queries, execution)?;
    let samples: Vec<DepthSample> = queries
        .iter()
        .zip(&predictions)
        .map(|(q, p)| DepthSample {
            location: *q,
            mean: p.mean,
            variance: p.variance,
            region: p.region,
            from_empty_region: p.from_empty_region,
        })
        .collect();

    let usable: Vec<&DepthSample> = samples.iter().filter(|s| !s.from_empty_region).collect();
    let dropped_empty_region = samples.len() - usable.len();
    if usable.is_empty() {
        return Ok(CloudBuildReport {
            cloud: PointCloud::default(),
            variance_threshold: None,
            retained: 0,
            dropped_empty_region,
            dropped_high_variance: 0,
            dropped_invalid_depth: 0,
            all_filtered_warning: true,
        });
    }

    let mut variances: Vec<f64> = usable.iter().map(|s| s.variance).collect();
    variances.sort_by(|a, b| a.total_cmp(b));
    let rank = ((variance_quantile * variances.len() as f64).ceil() as usize)
        .clamp(1, variances.len());
    let threshold = variances[rank - 1];

    let mut points = Vec::new();
    let mut dropped_high_variance = 0;
    let mut dropped_invalid_depth = 0;
    for s in &usable {
        if s.variance > threshold {
            dropped_high_variance += 1;
            continue;
        }
        let Ok(position) = spherical_to_cartesian(&s.location, s.mean) else {
            dropped_invalid_depth += 1;
            continue;
        };
        let signal_variance = match &model.regions()[s.region] {
            RegionEntry::Fitted(fit) => fit.posterior.kernel().signal_variance(),
            RegionEntry::Empty => unreachable!("empty-region samples were dropped above"),
        };
        points.push(CloudPoint {
            position,
            color: DEFAULT_COLOR,
            confidence: (-s.variance / signal_variance).exp().min(1.0),
        });
    }

    let retained = points.len();
    Ok(CloudBuildReport {
        cloud: PointCloud::new(points)?,
        variance_threshold: Some(threshold),
        retained,
        dropped_empty_region,
        dropped_high_variance,
        dropped_invalid_depth,
        all_filtered_warning: retained == 0,
    })
}

/// A row-major grid of values over an angular rectangle. Row 0 is the
/// elevation minimum; column 0 is the azimuth minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthRaster {
    width: usize,
    height: usize,
    range: AngularRange,
    values: Vec<f64>,
}

impl DepthRaster {
    /// Wraps precomputed row-major cell values.
    pub fn from_values(range: AngularRange, width: usize, height: usize, values: Vec<f64>) -> Self {
        assert!(width >= 1 && height >= 1, "raster needs at least one cell");
        assert_eq!(values.len(), width * height, "values must fill the grid");
        Self {
            width,
            height,
            range,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn range(&self) -> &AngularRange {
        &self.range
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Center of a raster cell. Written so that grids whose sizes divide
    /// evenly produce bitwise-coincident centers where they overlap.
    pub fn cell_center(range: &AngularRange, width: usize, height: usize, row: usize, col: usize) -> AngularCoordinate {
        let azimuth = range.azimuth_min()
            + ((2 * col + 1) as f64 * range.azimuth_span()) / (2.0 * width as f64);
        let elevation = range.elevation_min()
            + ((2 * row + 1) as f64 * range.elevation_span()) / (2.0 * height as f64);
        AngularCoordinate::new(azimuth, elevation).expect("cell centers lie inside the range")
    }

    /// First line: width, height, then the angular bounds in degrees.
    /// Remaining lines: one row of comma-separated values each.
    pub fn write_csv<W: Write>(&self, sink: &mut W) -> std::io::Result<()> {
        writeln!(
            sink,
            "{},{},{},{},{},{}",
            self.width,
            self.height,
            degrees_preimage(self.range.azimuth_min()),
            degrees_preimage(self.range.azimuth_max()),
            degrees_preimage(self.range.elevation_min()),
            degrees_preimage(self.range.elevation_max()),
        )?;
        for row in 0..self.height {
            let mut line = String::new();
            for col in 0..self.width {
                if col > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{}", self.value(row, col)));
            }
            writeln!(sink, "{line}")?;
        }
        Ok(())
    }
}

/// Samples the model at every cell center of a width-by-height grid.
/// Returns the posterior mean raster and the variance raster.
pub fn rasterize_depth_field(
    model: &LocalizedGpModel,
    range: &AngularRange,
    width: usize,
    height: usize,
    execution: Execution,
) -> Result<(DepthRaster, DepthRaster), LocalizedError> {
    assert!(width >= 1 && height >= 1, "raster needs at least one cell");
    let mut centers = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            centers.push(DepthRaster::cell_center(range, width, height, row, col));
        }
    }
    let predictions = model.predict_batch(&centers, execution)?;
    let means = predictions.iter().map(|p| p.mean).collect();
    let variances = predictions.iter().map(|p| p.variance).collect();
    Ok((
        DepthRaster {
            width,
            height,
            range: *range,
            values: means,
        },
        DepthRaster {
            width,
            height,
            range: *range,
            values: variances,
        },
    ))
}
