//! Synthetic scenes, accuracy metrics, and fit/predict benchmarks.
//!
//! Scenes are piecewise smooth: a low-frequency harmonic base surface plus
//! rectangular patches at distinct depths. Everything here is deterministic
//! per seed so comparisons and benchmarks can be replayed exactly.

use crate::geometry::{AngularCoordinate, AngularRange};
use crate::gp::GpFitConfig;
use crate::localized::{
    fit_conventional, fit_localized, Execution, LocalizedError, RegionPartition,
};
use crate::pointcloud::{
    rasterize_depth_field, sample_query_locations, DepthRaster, ScanRecord, SparseDepthScan,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;
use std::time::Instant;
use thiserror::Error;

/// Shortest correlation length of the base surface, radians (10 degrees).
pub const BASE_MIN_LENGTHSCALE_RAD: f64 = 10.0 * std::f64::consts::PI / 180.0;
/// Number of harmonic components in the base surface.
const BASE_COMPONENTS: usize = 6;
/// Total amplitude budget of the base surface, meters.
const BASE_AMPLITUDE_M: f64 = 6.0;
/// Base surface offset range, meters. With the amplitude budget this keeps
/// the smooth part of the truth inside [12, 51].
const BASE_OFFSET_RANGE_M: (f64, f64) = (18.0, 45.0);
/// Patch depths are drawn from this range, meters.
pub const PATCH_DEPTH_RANGE_M: (f64, f64) = (5.0, 80.0);
/// A patch must differ from the base surface at its center by at least this
/// much so the discontinuity is real.
const PATCH_MIN_CONTRAST_M: f64 = 20.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(
        "prediction grid is {found_width}x{found_height} cells but truth grid is \
         {expected_width}x{expected_height}"
    )]
    GridSizeMismatch {
        expected_width: usize,
        expected_height: usize,
        found_width: usize,
        found_height: usize,
    },
    #[error("prediction and truth rasters cover different angular ranges")]
    GridRangeMismatch,
    #[error("mask has {found} entries for a grid of {expected} cells")]
    MaskLength { expected: usize, found: usize },
    #[error("mask selects no cells")]
    EmptyMask,
    #[error("benchmarks need at least 3 repetitions, got {0}")]
    TooFewRepetitions(usize),
    #[error(transparent)]
    Localized(#[from] LocalizedError),
}

/// One cosine wave of the base surface.
#[derive(Debug, Clone, Copy)]
struct HarmonicComponent {
    amplitude: f64,
    freq_az: f64,
    freq_el: f64,
    phase: f64,
}

/// Axis-aligned rectangle with a constant depth, closed on all edges.
#[derive(Debug, Clone, Copy)]
pub struct DepthPatch {
    pub azimuth_min: f64,
    pub azimuth_max: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub depth_m: f64,
}

impl DepthPatch {
    pub fn contains(&self, x: &AngularCoordinate) -> bool {
        (self.azimuth_min..=self.azimuth_max).contains(&x.azimuth())
            && (self.elevation_min..=self.elevation_max).contains(&x.elevation())
    }
}

/// Deterministic ground-truth depth field: smooth base plus patches.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    range: AngularRange,
    seed: u64,
    noise_std: f64,
    base_offset: f64,
    components: Vec<HarmonicComponent>,
    patches: Vec<DepthPatch>,
}

/// Builds a scene with `patches` rectangular objects over `range`.
/// `noise_std` (meters, >= 0) is carried into every scan sampled from the
/// scene. Deterministic per seed; the draw order below is part of the
/// reproducibility contract.
pub fn generate_scene(
    range: &AngularRange,
    patches: usize,
    seed: u64,
    noise_std: f64,
) -> SyntheticScene {
    assert!(
        noise_std.is_finite() && noise_std >= 0.0,
        "noise std must be finite and non-negative"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_offset = rng.random_range(BASE_OFFSET_RANGE_M.0..BASE_OFFSET_RANGE_M.1);

    // Frequencies capped so every component varies no faster than the
    // minimum correlation length allows.
    let max_freq = 1.0 / BASE_MIN_LENGTHSCALE_RAD;
    let mut raw = Vec::with_capacity(BASE_COMPONENTS);
    for _ in 0..BASE_COMPONENTS {
        let magnitude = rng.random_range(0.2 * max_freq..max_freq);
        let direction = rng.random_range(0.0..std::f64::consts::TAU);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let weight: f64 = rng.random_range(0.3..1.0);
        raw.push((magnitude, direction, phase, weight));
    }
    let weight_sum: f64 = raw.iter().map(|r| r.3).sum();
    let components = raw
        .into_iter()
        .map(|(magnitude, direction, phase, weight)| HarmonicComponent {
            amplitude: BASE_AMPLITUDE_M * weight / weight_sum,
            freq_az: magnitude * direction.cos(),
            freq_el: magnitude * direction.sin(),
            phase,
        })
        .collect();

    let mut scene = SyntheticScene {
        range: *range,
        seed,
        noise_std,
        base_offset,
        components,
        patches: Vec::with_capacity(patches),
    };

    let az_span = range.azimuth_span();
    let el_span = range.elevation_span();
    for _ in 0..patches {
        let half_az = rng.random_range(0.07..0.16) * az_span;
        let half_el = rng.random_range(0.10..0.22) * el_span;
        let margin = 0.02;
        let center_az = rng.random_range(
            range.azimuth_min() + half_az + margin * az_span
                ..range.azimuth_max() - half_az - margin * az_span,
        );
        let center_el = rng.random_range(
            range.elevation_min() + half_el + margin * el_span
                ..range.elevation_max() - half_el - margin * el_span,
        );
        let center = AngularCoordinate::new(center_az, center_el)
            .expect("patch centers stay inside the validated range");
        let base_here = scene.base_depth(&center);
        // Distinct depths with real contrast against the base surface;
        // bounded retries keep generation total.
        let mut depth = rng.random_range(PATCH_DEPTH_RANGE_M.0..PATCH_DEPTH_RANGE_M.1);
        for _ in 0..1000 {
            let distinct = scene
                .patches
                .iter()
                .all(|p| (p.depth_m - depth).abs() >= 1.0);
            if distinct && (depth - base_here).abs() >= PATCH_MIN_CONTRAST_M {
                break;
            }
            depth = rng.random_range(PATCH_DEPTH_RANGE_M.0..PATCH_DEPTH_RANGE_M.1);
        }
        scene.patches.push(DepthPatch {
            azimuth_min: center_az - half_az,
            azimuth_max: center_az + half_az,
            elevation_min: center_el - half_el,
            elevation_max: center_el + half_el,
            depth_m: depth,
        });
    }
    scene
}

impl SyntheticScene {
    pub fn range(&self) -> &AngularRange {
        &self.range
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn patches(&self) -> &[DepthPatch] {
        &self.patches
    }

    /// The smooth surface without patches.
    pub fn base_depth(&self, x: &AngularCoordinate) -> f64 {
        let mut depth = self.base_offset;
        for c in &self.components {
            depth += c.amplitude
                * (c.freq_az * x.azimuth() + c.freq_el * x.elevation() + c.phase).cos();
        }
        depth
    }

    /// Ground-truth depth. The last patch covering a point wins.
    pub fn truth(&self, x: &AngularCoordinate) -> f64 {
        for p in self.patches.iter().rev() {
            if p.contains(x) {
                return p.depth_m;
            }
        }
        self.base_depth(x)
    }

    /// Upper bound on the second directional derivative of the base
    /// surface. Discrete Laplacians of patch-free scenes stay below this.
    pub fn smooth_curvature_bound(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.amplitude * (c.freq_az * c.freq_az + c.freq_el * c.freq_el))
            .sum()
    }

    /// Truth sampled at the cell centers of a width-by-height grid.
    pub fn truth_raster(&self, width: usize, height: usize) -> DepthRaster {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                let center = DepthRaster::cell_center(&self.range, width, height, row, col);
                values.push(self.truth(&center));
            }
        }
        DepthRaster::from_values(self.range, width, height, values)
    }
}

/// Draws `count` uniform directions over the scene range and observes the
/// truth plus Gaussian noise of the scene's noise std. Deterministic per
/// seed; a zero noise std reproduces the truth exactly. Depths are floored
/// at 1 mm so extreme noise draws cannot produce invalid records.
pub fn sample_scan(scene: &SyntheticScene, count: usize, seed: u64) -> SparseDepthScan {
    assert!(count >= 1, "a scan needs at least one record");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, scene.noise_std).expect("noise std validated at scene build");
    let range = &scene.range;
    let records = (0..count)
        .map(|_| {
            let azimuth = rng.random_range(range.azimuth_min()..range.azimuth_max());
            let elevation = rng.random_range(range.elevation_min()..range.elevation_max());
            let location = AngularCoordinate::new(azimuth, elevation)
                .expect("samples drawn inside a validated range");
            let depth = (scene.truth(&location) + normal.sample(&mut rng)).max(1e-3);
            ScanRecord::new(location, depth).expect("depth floored positive")
        })
        .collect();
    SparseDepthScan::new(records, None, None)
}

/// Mean absolute and root mean squared deviation, both in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub rmse: f64,
}

fn check_aligned(predictions: &DepthRaster, truth: &DepthRaster) -> Result<(), EvalError> {
    if predictions.width() != truth.width() || predictions.height() != truth.height() {
        return Err(EvalError::GridSizeMismatch {
            expected_width: truth.width(),
            expected_height: truth.height(),
            found_width: predictions.width(),
            found_height: predictions.height(),
        });
    }
    let (p, t) = (predictions.range(), truth.range());
    if p.azimuth_min() != t.azimuth_min()
        || p.azimuth_max() != t.azimuth_max()
        || p.elevation_min() != t.elevation_min()
        || p.elevation_max() != t.elevation_max()
    {
        return Err(EvalError::GridRangeMismatch);
    }
    Ok(())
}

/// Errors over every grid cell.
pub fn grid_errors(predictions: &DepthRaster, truth: &DepthRaster) -> Result<ErrorMetrics, EvalError> {
    check_aligned(predictions, truth)?;
    let n = truth.values().len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (p, t) in predictions.values().iter().zip(truth.values()) {
        let r = p - t;
        abs_sum += r.abs();
        sq_sum += r * r;
    }
    Ok(ErrorMetrics {
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
    })
}

/// Errors restricted to cells where `mask` is true.
pub fn grid_errors_masked(
    predictions: &DepthRaster,
    truth: &DepthRaster,
    mask: &[bool],
) -> Result<ErrorMetrics, EvalError> {
    check_aligned(predictions, truth)?;
    if mask.len() != truth.values().len() {
        return Err(EvalError::MaskLength {
            expected: truth.values().len(),
            found: mask.len(),
        });
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut n = 0usize;
    for ((p, t), keep) in predictions.values().iter().zip(truth.values()).zip(mask) {
        if *keep {
            let r = p - t;
            abs_sum += r.abs();
            sq_sum += r * r;
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok(ErrorMetrics {
        mae: abs_sum / n as f64,
        rmse: (sq_sum / n as f64).sqrt(),
    })
}

/// Marks the grid cells that contain at least one scan observation.
/// Out-of-range records are ignored.
pub fn detection_mask(
    scan: &SparseDepthScan,
    range: &AngularRange,
    width: usize,
    height: usize,
) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    // Partition cells and raster cells share the row-major layout with
    // elevation selecting the row.
    if let Ok(partition) = RegionPartition::new(*range, width, height) {
        for record in scan.records() {
            if let Ok(cell) = partition.assign(&record.location) {
                mask[cell] = true;
            }
        }
    }
    mask
}

/// Accuracy and runtime summary of one method on one scene.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: String,
    pub mae: f64,
    pub rmse: f64,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub config: String,
}

/// Wraps grid errors and runtimes into a report row.
pub fn evaluate_method(
    method: &str,
    predictions: &DepthRaster,
    truth: &DepthRaster,
    fit_seconds: f64,
    predict_seconds: f64,
    config: &str,
) -> Result<EvalReport, EvalError> {
    let metrics = grid_errors(predictions, truth)?;
    Ok(EvalReport {
        method: method.to_string(),
        mae: metrics.mae,
        rmse: metrics.rmse,
        fit_seconds,
        predict_seconds,
        // Commas are reserved for the CSV layer.
        config: config.replace(',', ";"),
    })
}

/// Writes report rows as CSV. Header names every column; the config echo is
/// the last column so earlier ones stay machine-readable.
pub fn write_eval_csv<W: Write>(reports: &[EvalReport], sink: &mut W) -> std::io::Result<()> {
    writeln!(
        sink,
        "method,mae_m,rmse_m,fit_seconds,predict_seconds,config"
    )?;
    for r in reports {
        writeln!(
            sink,
            "{},{},{},{},{},{}",
            r.method, r.mae, r.rmse, r.fit_seconds, r.predict_seconds, r.config
        )?;
    }
    Ok(())
}

/// Settings shared by the conventional and localized runs of a comparison.
#[derive(Debug, Clone)]
pub struct ComparisonConfig {
    pub gp: GpFitConfig,
    pub noise_variance: f64,
    /// Azimuth cells by elevation cells.
    pub partition: (usize, usize),
    /// Evaluation grid: width (azimuth) by height (elevation).
    pub grid: (usize, usize),
    pub execution: Execution,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        let mut gp = GpFitConfig::default();
        // Keep the lengthscale floor near one degree: scans at a few
        // hundred observations cannot resolve anything finer, and an
        // unconstrained floor lets sparsely observed fits collapse to
        // near-zero correlation. Both methods share the constraint.
        gp.lengthscale_bounds = (0.02, 2.0);
        Self {
            gp,
            noise_variance: 0.09,
            partition: (4, 3),
            grid: (180, 40),
            execution: Execution::Sequential,
        }
    }
}

/// One method's raster plus its report.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub report: EvalReport,
    pub mean_raster: DepthRaster,
}

/// Fits both methods on the same scan and scores them against the scene
/// truth on the configured grid. Returns (conventional, localized).
pub fn compare_methods(
    scene: &SyntheticScene,
    scan: &SparseDepthScan,
    cfg: &ComparisonConfig,
) -> Result<(MethodRun, MethodRun), EvalError> {
    let (width, height) = cfg.grid;
    let truth = scene.truth_raster(width, height);
    let range = scene.range();
    let echo = format!(
        "seed={} t={} partition={}x{} grid={}x{} noise_var={}",
        scene.seed(),
        scan.len(),
        cfg.partition.0,
        cfg.partition.1,
        width,
        height,
        cfg.noise_variance
    );

    let start = Instant::now();
    let conventional = fit_conventional(scan, &cfg.gp, cfg.noise_variance)?;
    let conv_fit = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let mut values = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let center = DepthRaster::cell_center(range, width, height, row, col);
            values.push(conventional.posterior.predict(&center).0);
        }
    }
    let conv_predict = start.elapsed().as_secs_f64();
    let conv_raster = DepthRaster::from_values(*range, width, height, values);
    let conv_run = MethodRun {
        report: evaluate_method("conventional", &conv_raster, &truth, conv_fit, conv_predict, &echo)?,
        mean_raster: conv_raster,
    };

    let partition = RegionPartition::new(*range, cfg.partition.0, cfg.partition.1)?;
    let start = Instant::now();
    let localized = fit_localized(scan, partition, &cfg.gp, cfg.noise_variance, cfg.execution)?;
    let local_fit = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let (mean_raster, _variance) =
        rasterize_depth_field(&localized, range, width, height, cfg.execution)?;
    let local_predict = start.elapsed().as_secs_f64();
    let local_run = MethodRun {
        report: evaluate_method("localized", &mean_raster, &truth, local_fit, local_predict, &echo)?,
        mean_raster,
    };

    Ok((conv_run, local_run))
}

/// Benchmark settings. The same fit configuration drives both methods so
/// the measured ratio reflects solver cost, not search budget.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub gp: GpFitConfig,
    pub scan_sizes: Vec<usize>,
    /// Azimuth-by-elevation partitions benchmarked for the localized method.
    pub partitions: Vec<(usize, usize)>,
    pub repetitions: usize,
    pub queries: usize,
    pub seed: u64,
    pub noise_variance: f64,
    /// Also run localized fits with parallel regions, reported separately.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let mut gp = GpFitConfig::default();
        // A compact search keeps large conventional fits affordable while
        // both methods still share the exact same budget.
        gp.lengthscale_grid_points = 4;
        Self {
            gp,
            scan_sizes: vec![500, 2000],
            partitions: vec![(4, 3)],
            repetitions: 3,
            queries: 7200,
            seed: 7,
            noise_variance: 0.09,
            parallel: false,
        }
    }
}

/// One benchmark measurement (medians over repetitions, seconds).
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: String,
    pub observations: usize,
    pub regions: usize,
    pub execution: String,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub total_seconds: f64,
}

/// Benchmark rows plus the configuration echo they were produced under.
#[derive(Debug, Clone)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub config_echo: String,
}

impl BenchTable {
    /// CSV layout: one comment line echoing the configuration, a header
    /// naming every column, then one row per method/size/partition.
    pub fn write_csv<W: Write>(&self, sink: &mut W) -> std::io::Result<()> {
        writeln!(sink, "# {}", self.config_echo)?;
        writeln!(
            sink,
            "method,observations,regions,execution,fit_seconds,predict_seconds,total_seconds"
        )?;
        for r in &self.rows {
            writeln!(
                sink,
                "{},{},{},{},{},{},{}",
                r.method,
                r.observations,
                r.regions,
                r.execution,
                r.fit_seconds,
                r.predict_seconds,
                r.total_seconds
            )?;
        }
        Ok(())
    }
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Times fit+predict for the conventional GP and for each localized
/// partition at every scan size. Medians over `repetitions` runs.
pub fn benchmark(range: &AngularRange, cfg: &BenchConfig) -> Result<BenchTable, EvalError> {
    if cfg.repetitions < 3 {
        return Err(EvalError::TooFewRepetitions(cfg.repetitions));
    }
    let scene = generate_scene(range, 4, cfg.seed, 0.3);
    let queries = sample_query_locations(range, cfg.queries, cfg.seed.wrapping_add(1));
    let mut rows = Vec::new();

    for &t in &cfg.scan_sizes {
        let scan = sample_scan(&scene, t, cfg.seed.wrapping_add(t as u64));

        let mut fit_times = Vec::with_capacity(cfg.repetitions);
        let mut predict_times = Vec::with_capacity(cfg.repetitions);
        let mut totals = Vec::with_capacity(cfg.repetitions);
        for _ in 0..cfg.repetitions {
            let start = Instant::now();
            let fit = fit_conventional(&scan, &cfg.gp, cfg.noise_variance)?;
            let fit_s = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let mut acc = 0.0;
            for q in &queries {
                acc += fit.posterior.predict(q).0;
            }
            std::hint::black_box(acc);
            let predict_s = start.elapsed().as_secs_f64();
            fit_times.push(fit_s);
            predict_times.push(predict_s);
            totals.push(fit_s + predict_s);
        }
        rows.push(BenchRow {
            method: "conventional".into(),
            observations: t,
            regions: 1,
            execution: "single".into(),
            fit_seconds: median(&mut fit_times),
            predict_seconds: median(&mut predict_times),
            total_seconds: median(&mut totals),
        });

        for &(na, ne) in &cfg.partitions {
            let mut modes = vec![Execution::Sequential];
            if cfg.parallel {
                modes.push(Execution::Parallel);
            }
            for execution in modes {
                let mut fit_times = Vec::with_capacity(cfg.repetitions);
                let mut predict_times = Vec::with_capacity(cfg.repetitions);
                let mut totals = Vec::with_capacity(cfg.repetitions);
                for _ in 0..cfg.repetitions {
                    let partition = RegionPartition::new(*range, na, ne)?;
                    let start = Instant::now();
                    let model =
                        fit_localized(&scan, partition, &cfg.gp, cfg.noise_variance, execution)?;
                    let fit_s = start.elapsed().as_secs_f64();
                    let start = Instant::now();
                    let predictions = model.predict_batch(&queries, execution)?;
                    std::hint::black_box(predictions.len());
                    let predict_s = start.elapsed().as_secs_f64();
                    fit_times.push(fit_s);
                    predict_times.push(predict_s);
                    totals.push(fit_s + predict_s);
                }
                rows.push(BenchRow {
                    method: "localized".into(),
                    observations: t,
                    regions: na * ne,
                    execution: match execution {
                        Execution::Sequential => "single".into(),
                        Execution::Parallel => "parallel".into(),
                    },
                    fit_seconds: median(&mut fit_times),
                    predict_seconds: median(&mut predict_times),
                    total_seconds: median(&mut totals),
                });
            }
        }
    }

    let config_echo = format!(
        "seed={} sizes={:?} partitions={:?} repetitions={} queries={} noise_var={} grid_points={} parallel={}",
        cfg.seed,
        cfg.scan_sizes,
        cfg.partitions,
        cfg.repetitions,
        cfg.queries,
        cfg.noise_variance,
        cfg.gp.lengthscale_grid_points,
        cfg.parallel
    );
    Ok(BenchTable { rows, config_echo })
}
