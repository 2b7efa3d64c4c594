//! Command implementations behind the binary: reconstruct, pointcloud,
//! render, bench, eval, and synth.
//!
//! Every run writes a manifest next to its outputs, even when a stage
//! fails, recording the effective configuration, content digests, and the
//! stage reached. Exit codes: 0 success, 2 usage or validation, 3 runtime
//! or numerical failure.

use crate::config::{ConfigError, RunConfig};
use crate::eval::{
    benchmark, compare_methods, detection_mask, generate_scene, grid_errors_masked, sample_scan,
    write_eval_csv, BenchConfig, ComparisonConfig, EvalError, EvalReport,
};
use crate::geometry::{AngularRange, GeometryError};
use crate::gp::{GpError, GpFitConfig};
use crate::localized::{
    fit_localized, Execution, LocalizedError, LocalizedGpModel, RegionPartition,
};
use crate::pointcloud::ply::{export_ply, import_ply, PlyEncoding, PlyError};
use crate::pointcloud::{
    build_point_cloud, export_scan, import_scan, rasterize_depth_field, sample_query_locations,
    CloudError, ScanFormat, SparseDepthScan,
};
use crate::splat::{load_camera_json, render_image, GaussianPrimitive, SplatError};
use nalgebra::UnitQuaternion;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

/// Failures split by exit code: usage/validation (2) vs runtime/numerical (3).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn classify_gp(e: GpError) -> CliError {
    CliError::Runtime(e.to_string())
}

fn classify_localized(e: LocalizedError) -> CliError {
    match e {
        LocalizedError::Gp(g) => classify_gp(g),
        other => CliError::Usage(other.to_string()),
    }
}

fn classify_cloud(e: CloudError) -> CliError {
    match e {
        CloudError::Localized(l) => classify_localized(l),
        other => CliError::Usage(other.to_string()),
    }
}

fn classify_eval(e: EvalError) -> CliError {
    match e {
        EvalError::Localized(l) => classify_localized(l),
        EvalError::TooFewRepetitions(_) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn classify_ply(e: PlyError) -> CliError {
    CliError::Usage(e.to_string())
}

fn classify_splat(e: SplatError) -> CliError {
    CliError::Usage(e.to_string())
}

fn classify_geometry(e: GeometryError) -> CliError {
    CliError::Usage(e.to_string())
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Serialize)]
struct FileDigest {
    name: String,
    sha256: String,
}

/// Run record written as `manifest.json`. Field order is the declaration
/// order; all maps are sorted, so identical runs serialize identically.
#[derive(Serialize)]
struct Manifest {
    command: String,
    stage: String,
    error: Option<String>,
    config: BTreeMap<String, String>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    stats: BTreeMap<String, String>,
}

/// Tracks the current stage and collected digests of one command run, and
/// guarantees the manifest lands on disk on both the success and the
/// failure path.
struct RunContext {
    dir: PathBuf,
    manifest_name: String,
    manifest: Manifest,
}

impl RunContext {
    fn create(
        command: &str,
        dir: &Path,
        manifest_name: &str,
        config: &RunConfig,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::Runtime(format!(
                "cannot create output directory {}: {e}",
                dir.display()
            ))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest_name: manifest_name.to_string(),
            manifest: Manifest {
                command: command.to_string(),
                stage: "start".to_string(),
                error: None,
                config: config.echo(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                stats: BTreeMap::new(),
            },
        })
    }

    fn stage(&mut self, stage: &str) {
        self.manifest.stage = stage.to_string();
    }

    /// Reads and digests an input file. A missing or unreadable path is a
    /// usage error naming the path.
    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        self.manifest.inputs.push(FileDigest {
            name: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn write_output(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.outputs.push(FileDigest {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn stat(&mut self, key: &str, value: impl ToString) {
        self.manifest.stats.insert(key.to_string(), value.to_string());
    }

    fn write_manifest(&self) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(self.dir.join(&self.manifest_name), bytes)
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.stage("complete");
        self.write_manifest().map_err(|e| {
            CliError::Runtime(format!(
                "cannot write {}: {e}",
                self.dir.join(&self.manifest_name).display()
            ))
        })
    }

    /// Records the failure and still writes the manifest, best effort.
    fn abort(mut self, error: &CliError) {
        self.manifest.error = Some(error.to_string());
        let _ = self.write_manifest();
    }
}

/// Creates the context, runs the body, and writes the manifest on either
/// outcome. The failing stage stays recorded in the manifest.
fn with_manifest(
    command: &str,
    dir: &Path,
    manifest_name: &str,
    config: &RunConfig,
    body: impl FnOnce(&mut RunContext) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut ctx = RunContext::create(command, dir, manifest_name, config)?;
    match body(&mut ctx) {
        Ok(()) => ctx.finish(),
        Err(e) => {
            ctx.abort(&e);
            Err(e)
        }
    }
}

fn require_output_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    config.output_dir.clone().ok_or_else(|| {
        CliError::Usage("an output directory is required (output_dir= or --out)".to_string())
    })
}

fn require_path(path: &Option<PathBuf>, what: &str, hint: &str) -> Result<PathBuf, CliError> {
    path.clone()
        .ok_or_else(|| CliError::Usage(format!("{what} is required ({hint})")))
}

fn gp_config_from(config: &RunConfig) -> Result<GpFitConfig, CliError> {
    if config.lengthscale_min >= config.lengthscale_max {
        return Err(CliError::Usage(format!(
            "lengthscale_min ({}) must be below lengthscale_max ({})",
            config.lengthscale_min, config.lengthscale_max
        )));
    }
    Ok(GpFitConfig {
        lengthscale_bounds: (config.lengthscale_min, config.lengthscale_max),
        lengthscale_grid_points: config.grid_points,
        template_lengthscale: config.template_lengthscale,
    })
}

fn execution_from(config: &RunConfig) -> Execution {
    if config.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Domain used by scene-driven commands when no override is configured:
/// azimuth -90..90 degrees, elevation -20..20 degrees.
fn default_scene_range() -> AngularRange {
    AngularRange::new(
        (-90f64).to_radians(),
        90f64.to_radians(),
        (-20f64).to_radians(),
        20f64.to_radians(),
    )
    .expect("constant range is valid")
}

/// Resolves the angular domain: a full four-key override wins, otherwise
/// the scan's own bounds. Top domain edges are closed, so records sitting
/// exactly on the derived maximum stay inside.
fn resolve_domain(config: &RunConfig, scan: Option<&SparseDepthScan>) -> Result<AngularRange, CliError> {
    let keys = [
        config.az_min_deg,
        config.az_max_deg,
        config.el_min_deg,
        config.el_max_deg,
    ];
    let set = keys.iter().filter(|k| k.is_some()).count();
    match set {
        4 => AngularRange::new(
            keys[0].unwrap().to_radians(),
            keys[1].unwrap().to_radians(),
            keys[2].unwrap().to_radians(),
            keys[3].unwrap().to_radians(),
        )
        .map_err(classify_geometry),
        0 => match scan {
            Some(scan) => {
                let (az_min, az_max, el_min, el_max) = scan.angular_bounds().ok_or_else(|| {
                    CliError::Usage("scan has no records to derive a domain from".to_string())
                })?;
                AngularRange::new(az_min, az_max, el_min, el_max).map_err(|_| {
                    CliError::Usage(
                        "scan spans no area; set az_min_deg/az_max_deg/el_min_deg/el_max_deg"
                            .to_string(),
                    )
                })
            }
            None => Ok(default_scene_range()),
        },
        _ => Err(CliError::Usage(
            "domain override needs all four of az_min_deg, az_max_deg, el_min_deg, el_max_deg"
                .to_string(),
        )),
    }
}

fn scan_format_for(path: &Path) -> ScanFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ScanFormat::Json,
        _ => ScanFormat::Csv,
    }
}

fn load_scan(ctx: &mut RunContext, path: &Path) -> Result<SparseDepthScan, CliError> {
    let bytes = ctx.read_input(path)?;
    import_scan(&bytes[..], scan_format_for(path))
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Shared front half of reconstruct and pointcloud: scan, domain, fit.
fn fit_from_scan(
    ctx: &mut RunContext,
    config: &RunConfig,
) -> Result<(LocalizedGpModel, AngularRange), CliError> {
    ctx.stage("read-scan");
    let scan_path = require_path(&config.scan, "a scan file", "scan= or --scan")?;
    let scan = load_scan(ctx, &scan_path)?;
    ctx.stat("observations", scan.len());

    ctx.stage("resolve-domain");
    let range = resolve_domain(config, Some(&scan))?;

    ctx.stage("fit");
    let gp = gp_config_from(config)?;
    let partition = RegionPartition::new(range, config.regions.0, config.regions.1)
        .map_err(classify_localized)?;
    let model = fit_localized(
        &scan,
        partition,
        &gp,
        config.noise_variance,
        execution_from(config),
    )
    .map_err(classify_localized)?;
    ctx.stat("regions", config.regions.0 * config.regions.1);
    Ok((model, range))
}

/// Fits a localized model from a scan and writes mean/variance rasters.
pub fn cmd_reconstruct(config: &RunConfig) -> Result<(), CliError> {
    let out = require_output_dir(config)?;
    with_manifest("reconstruct", &out, "manifest.json", config, |ctx| {
        let (model, range) = fit_from_scan(ctx, config)?;

        ctx.stage("rasterize");
        let (mean, variance) = rasterize_depth_field(
            &model,
            &range,
            config.raster_width,
            config.raster_height,
            execution_from(config),
        )
        .map_err(classify_localized)?;

        ctx.stage("write-rasters");
        let mut buf = Vec::new();
        mean.write_csv(&mut buf)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        ctx.write_output("mean.csv", &buf)?;
        buf.clear();
        variance
            .write_csv(&mut buf)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        ctx.write_output("variance.csv", &buf)?;
        Ok(())
    })
}

/// Reconstructs and exports a confidence-filtered point cloud as PLY.
pub fn cmd_pointcloud(config: &RunConfig) -> Result<(), CliError> {
    let out = require_output_dir(config)?;
    with_manifest("pointcloud", &out, "manifest.json", config, |ctx| {
        let (model, range) = fit_from_scan(ctx, config)?;

        ctx.stage("sample-queries");
        let queries = sample_query_locations(&range, config.queries, config.seed);
        ctx.stat("queries", queries.len());

        ctx.stage("build-cloud");
        let report = build_point_cloud(&model, &queries, config.quantile, execution_from(config))
            .map_err(classify_cloud)?;
        ctx.stat("retained", report.retained);
        ctx.stat("dropped_empty_region", report.dropped_empty_region);
        ctx.stat("dropped_high_variance", report.dropped_high_variance);
        ctx.stat("dropped_invalid_depth", report.dropped_invalid_depth);
        ctx.stat(
            "variance_threshold",
            report
                .variance_threshold
                .map_or("none".to_string(), |v| v.to_string()),
        );
        ctx.stat("all_filtered_warning", report.all_filtered_warning);

        ctx.stage("write-ply");
        let encoding = match config.format.as_deref() {
            None | Some("binary") => PlyEncoding::BinaryLittleEndian,
            Some("ascii") => PlyEncoding::Ascii,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "format must be ascii or binary for pointcloud, got {other}"
                )))
            }
        };
        let mut buf = Vec::new();
        export_ply(&report.cloud, &mut buf, encoding).map_err(|e| {
            CliError::Runtime(format!("cloud.ply: {e}"))
        })?;
        ctx.write_output("cloud.ply", &buf)?;
        Ok(())
    })
}

/// Renders a PLY point cloud through a camera JSON into a PPM or PNG image.
pub fn cmd_render(config: &RunConfig) -> Result<(), CliError> {
    let image_path = require_path(&config.image, "an output image", "image= or --out")?;
    let dir = image_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let image_name = image_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Usage("output image path has no file name".to_string()))?
        .to_string();
    let manifest_name = format!("{image_name}.manifest.json");

    with_manifest("render", &dir, &manifest_name, config, |ctx| {
        ctx.stage("read-ply");
        let ply_path = require_path(&config.ply, "a point cloud", "ply= or --ply")?;
        let bytes = ctx.read_input(&ply_path)?;
        let cloud = import_ply(&bytes).map_err(classify_ply)?;
        ctx.stat("points", cloud.len());

        ctx.stage("read-camera");
        let camera_path = require_path(&config.camera, "a camera file", "camera= or --camera")?;
        let bytes = ctx.read_input(&camera_path)?;
        let camera = load_camera_json(&bytes[..]).map_err(classify_splat)?;
        ctx.stat("width", camera.width());
        ctx.stat("height", camera.height());

        ctx.stage("build-primitives");
        let primitives: Vec<GaussianPrimitive> = cloud
            .points()
            .iter()
            .map(|p| {
                GaussianPrimitive::new(
                    p.position,
                    UnitQuaternion::identity(),
                    [config.point_radius; 3],
                    config.point_opacity,
                    [
                        p.color[0] as f64 / 255.0,
                        p.color[1] as f64 / 255.0,
                        p.color[2] as f64 / 255.0,
                    ],
                )
            })
            .collect::<Result<_, _>>()
            .map_err(classify_splat)?;

        ctx.stage("render");
        let image = render_image(&primitives, &camera);

        ctx.stage("write-image");
        let mut buf = Vec::new();
        match image_path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => image
                .write_ppm(&mut buf)
                .map_err(|e| CliError::Runtime(e.to_string()))?,
            Some("png") => {
                use image::{codecs::png::PngEncoder, ExtendedColorType, ImageEncoder};
                PngEncoder::new(&mut buf)
                    .write_image(
                        &image.to_rgb8(),
                        image.width() as u32,
                        image.height() as u32,
                        ExtendedColorType::Rgb8,
                    )
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "output image must end in .ppm or .png, got {}",
                    image_path.display()
                )))
            }
        }
        ctx.write_output(&image_name, &buf)?;
        Ok(())
    })
}

/// Times conventional vs localized fits and writes a CSV table.
pub fn cmd_bench(config: &RunConfig) -> Result<(), CliError> {
    let out = require_output_dir(config)?;
    with_manifest("bench", &out, "manifest.json", config, |ctx| {
        ctx.stage("resolve-domain");
        let range = resolve_domain(config, None)?;

        ctx.stage("benchmark");
        let defaults = BenchConfig::default();
        let kernel_keys = [
            "lengthscale_min",
            "lengthscale_max",
            "grid_points",
            "template_lengthscale",
        ];
        // The compact default search keeps large conventional fits inside a
        // sane wall-clock budget; explicit kernel keys switch to the
        // configured search.
        let gp = if kernel_keys.iter().any(|k| config.is_assigned(k)) {
            gp_config_from(config)?
        } else {
            defaults.gp
        };
        let bench = BenchConfig {
            gp,
            scan_sizes: config.bench_sizes.clone(),
            partitions: vec![config.regions],
            repetitions: config.repetitions,
            queries: if config.is_assigned("queries") {
                config.queries
            } else {
                defaults.queries
            },
            seed: config.seed,
            noise_variance: if config.is_assigned("noise_variance") {
                config.noise_variance
            } else {
                defaults.noise_variance
            },
            parallel: config.parallel,
        };
        let table = benchmark(&range, &bench).map_err(classify_eval)?;
        ctx.stat("rows", table.rows.len());

        ctx.stage("write-csv");
        let mut buf = Vec::new();
        table
            .write_csv(&mut buf)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        ctx.write_output("bench.csv", &buf)?;
        Ok(())
    })
}

/// Scores conventional vs localized accuracy on a seeded synthetic scene.
/// Reports full-grid metrics plus a variant restricted to grid cells that
/// contain at least one observation.
pub fn cmd_eval(config: &RunConfig) -> Result<(), CliError> {
    let out = require_output_dir(config)?;
    with_manifest("eval", &out, "manifest.json", config, |ctx| {
        ctx.stage("generate-scene");
        let range = resolve_domain(config, None)?;
        let scene = generate_scene(&range, config.patches, config.seed, config.noise_std);
        let scan = sample_scan(&scene, config.scan_size, config.seed.wrapping_add(1));
        ctx.stat("observations", scan.len());
        ctx.stat("patches", config.patches);

        ctx.stage("compare");
        let defaults = ComparisonConfig::default();
        let kernel_keys = [
            "lengthscale_min",
            "lengthscale_max",
            "grid_points",
            "template_lengthscale",
        ];
        let gp = if kernel_keys.iter().any(|k| config.is_assigned(k)) {
            gp_config_from(config)?
        } else {
            defaults.gp
        };
        // The fitting noise floor follows the scene's noise level unless
        // explicitly configured.
        let noise_variance = if config.is_assigned("noise_variance") {
            config.noise_variance
        } else {
            (config.noise_std * config.noise_std).max(1e-6)
        };
        let cmp = ComparisonConfig {
            gp,
            noise_variance,
            partition: config.regions,
            grid: (config.raster_width, config.raster_height),
            execution: execution_from(config),
        };
        let (conv, local) = compare_methods(&scene, &scan, &cmp).map_err(classify_eval)?;

        ctx.stage("write-csv");
        let truth = scene.truth_raster(config.raster_width, config.raster_height);
        let mask = detection_mask(&scan, &range, config.raster_width, config.raster_height);
        let mut reports: Vec<EvalReport> = Vec::new();
        for run in [&conv, &local] {
            ctx.stat(format!("mae_{}", run.report.method).as_str(), run.report.mae);
            reports.push(run.report.clone());
        }
        for run in [&conv, &local] {
            let masked =
                grid_errors_masked(&run.mean_raster, &truth, &mask).map_err(classify_eval)?;
            reports.push(EvalReport {
                method: format!("{}-detected", run.report.method),
                mae: masked.mae,
                rmse: masked.rmse,
                fit_seconds: run.report.fit_seconds,
                predict_seconds: run.report.predict_seconds,
                config: run.report.config.clone(),
            });
        }
        let mut buf = Vec::new();
        write_eval_csv(&reports, &mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
        ctx.write_output("eval.csv", &buf)?;
        Ok(())
    })
}

/// Generates a synthetic scene, samples a scan from it, and writes the scan
/// plus the ground-truth raster.
pub fn cmd_synth(config: &RunConfig) -> Result<(), CliError> {
    let out = require_output_dir(config)?;
    with_manifest("synth", &out, "manifest.json", config, |ctx| {
        ctx.stage("generate-scene");
        let range = resolve_domain(config, None)?;
        let scene = generate_scene(&range, config.patches, config.seed, config.noise_std);
        let scan = sample_scan(&scene, config.scan_size, config.seed.wrapping_add(1));
        ctx.stat("patches", config.patches);
        ctx.stat("observations", scan.len());

        ctx.stage("write-scan");
        let (format, name) = match config.format.as_deref() {
            None | Some("csv") => (ScanFormat::Csv, "scan.csv"),
            Some("json") => (ScanFormat::Json, "scan.json"),
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "format must be csv or json for synth, got {other}"
                )))
            }
        };
        let mut buf = Vec::new();
        export_scan(&scan, &mut buf, format).map_err(|e| CliError::Runtime(e.to_string()))?;
        ctx.write_output(name, &buf)?;

        ctx.stage("write-truth");
        let truth = scene.truth_raster(config.raster_width, config.raster_height);
        buf.clear();
        truth
            .write_csv(&mut buf)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        ctx.write_output("truth.csv", &buf)?;
        Ok(())
    })
}
