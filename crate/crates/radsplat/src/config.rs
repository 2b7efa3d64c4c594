//! Flat key=value run configuration. One key per line, `#` starts a
//! comment, unknown keys are rejected by name. Command-line flags reuse
//! [`RunConfig::apply`], so file values and overrides go through the same
//! validation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key \"{key}\" on line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("config line {line} has no '=' separator: \"{text}\"")]
    MissingSeparator { line: usize, text: String },
    #[error("invalid value \"{value}\" for key \"{key}\": {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
}

/// Effective settings of one run. Paths stay optional; every numeric field
/// holds its documented default until a config file or flag assigns it.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scan: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub ply: Option<PathBuf>,
    pub camera: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub seed: u64,
    /// Azimuth cells by elevation cells.
    pub regions: (usize, usize),
    pub quantile: f64,
    pub queries: usize,
    pub noise_variance: f64,
    pub parallel: bool,
    /// Domain override in degrees: az min, az max, el min, el max.
    pub az_min_deg: Option<f64>,
    pub az_max_deg: Option<f64>,
    pub el_min_deg: Option<f64>,
    pub el_max_deg: Option<f64>,
    pub raster_width: usize,
    pub raster_height: usize,
    pub lengthscale_min: f64,
    pub lengthscale_max: f64,
    pub grid_points: usize,
    pub template_lengthscale: f64,
    /// Output format name; each command documents which it accepts.
    pub format: Option<String>,
    pub point_radius: f64,
    pub point_opacity: f64,
    pub patches: usize,
    pub scan_size: usize,
    pub noise_std: f64,
    pub repetitions: usize,
    pub bench_sizes: Vec<usize>,
    /// Keys that were explicitly assigned, by file or flag.
    pub assigned: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scan: None,
            output_dir: None,
            ply: None,
            camera: None,
            image: None,
            seed: 0,
            regions: (4, 3),
            quantile: 0.9,
            queries: 20_000,
            noise_variance: 0.04,
            parallel: false,
            az_min_deg: None,
            az_max_deg: None,
            el_min_deg: None,
            el_max_deg: None,
            raster_width: 180,
            raster_height: 40,
            lengthscale_min: 1e-3,
            lengthscale_max: 2.0,
            grid_points: 32,
            template_lengthscale: 0.1,
            format: None,
            point_radius: 0.05,
            point_opacity: 0.8,
            patches: 5,
            scan_size: 500,
            noise_std: 0.3,
            repetitions: 3,
            bench_sizes: vec![500, 2000],
            assigned: BTreeSet::new(),
        }
    }
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value
        .parse()
        .map_err(|_| bad(key, value, "expected a number"))?;
    if !v.is_finite() {
        return Err(bad(key, value, "must be finite"));
    }
    Ok(v)
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(key, value, "expected a non-negative integer"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

impl RunConfig {
    /// Parses a whole config file on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    /// Applies every assignment in `text`; later lines win.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::MissingSeparator {
                    line,
                    text: content.to_string(),
                });
            };
            self.apply(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Assigns one key, validating its range. Used for file lines and flag
    /// overrides alike.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "scan" => self.scan = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "ply" => self.ply = Some(PathBuf::from(value)),
            "camera" => self.camera = Some(PathBuf::from(value)),
            "image" => self.image = Some(PathBuf::from(value)),
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| bad(key, value, "expected a non-negative integer"))?;
            }
            "regions" => {
                let Some((a, b)) = value.split_once('x') else {
                    return Err(bad(key, value, "expected AxB, e.g. 4x3"));
                };
                let na = parse_usize(key, a.trim())?;
                let ne = parse_usize(key, b.trim())?;
                if na == 0 || ne == 0 {
                    return Err(bad(key, value, "both cell counts must be at least 1"));
                }
                self.regions = (na, ne);
            }
            "quantile" => {
                let v = parse_f64(key, value)?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(bad(key, value, "must lie in (0, 1]"));
                }
                self.quantile = v;
            }
            "queries" => {
                let v = parse_usize(key, value)?;
                if v == 0 {
                    return Err(bad(key, value, "must be at least 1"));
                }
                self.queries = v;
            }
            "noise_variance" => {
                let v = parse_f64(key, value)?;
                if v <= 0.0 {
                    return Err(bad(key, value, "must be positive"));
                }
                self.noise_variance = v;
            }
            "parallel" => self.parallel = parse_bool(key, value)?,
            "az_min_deg" => self.az_min_deg = Some(parse_f64(key, value)?),
            "az_max_deg" => self.az_max_deg = Some(parse_f64(key, value)?),
            "el_min_deg" => self.el_min_deg = Some(parse_f64(key, value)?),
            "el_max_deg" => self.el_max_deg = Some(parse_f64(key, value)?),
            "raster_width" => {
                let v = parse_usize(key, value)?;
                if v == 0 {
                    return Err(bad(key, value, "must be at least 1"));
                }
                self.raster_width = v;
            }
            "raster_height" => {
                let v = parse_usize(key, value)?;
                if v == 0 {
                    return Err(bad(key, value, "must be at least 1"));
                }
                self.raster_height = v;
            }
            "lengthscale_min" => {
                let v = parse_f64(key, value)?;
                if v <= 0.0 {
                    return Err(bad(key, value, "must be positive"));
                }
                self.lengthscale_min = v;
            }
            "lengthscale_max" => {
                let v = parse_f64(key, value)?;
                if v <= 0.0 {
                    return Err(bad(key, value, "must be positive"));
                }
                self.lengthscale_max = v;
            }
            "grid_points" => {
                let v = parse_usize(key, value)?;
                if v == 0 {
                    return Err(bad(key, value, "must be at least 1"));
                }
                self.grid_points = v;
            }
            "template_lengthscale" => {
                let v = parse_f64(key, value)?;
                if v <= 0.0 {
                    return Err(bad(key, value, "must be positive"));
                }
                self.template_lengthscale = v;
            }
            "format" => {
                if !["csv", "json", "ascii", "binary"].contains(&value) {
                    return Err(bad(key, value, "expected csv, json, ascii, or binary"));
                }
                self.format = Some(value.to_string());
            }
            "point_radius" => {
                let v = parse_f64(key, value)?;
                if v <= 0.0 {
                    return Err(bad(key, value, "must be positive"));
                }
                self.point_radius = v;
            }
            "point_opacity" => {
                let v = parse_f64(key, value)?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(bad(key, value, "must lie in (0, 1]"));
                }
                self.point_opacity = v;
            }
            "patches" => self.patches = parse_usize(key, value)?,
            "scan_size" => {
                let v = parse_usize(key, value)?;
                if v == 0 {
                    return Err(bad(key, value, "must be at least 1"));
                }
                self.scan_size = v;
            }
            "noise_std" => {
                let v = parse_f64(key, value)?;
                if v < 0.0 {
                    return Err(bad(key, value, "must be non-negative"));
                }
                self.noise_std = v;
            }
            "repetitions" => {
                let v = parse_usize(key, value)?;
                if v == 0 {
                    return Err(bad(key, value, "must be at least 1"));
                }
                self.repetitions = v;
            }
            "bench_sizes" => {
                let mut sizes = Vec::new();
                for part in value.split(',') {
                    let v = parse_usize(key, part.trim())?;
                    if v == 0 {
                        return Err(bad(key, value, "sizes must be at least 1"));
                    }
                    sizes.push(v);
                }
                if sizes.is_empty() {
                    return Err(bad(key, value, "expected a comma-separated list"));
                }
                self.bench_sizes = sizes;
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: 0,
                })
            }
        }
        self.assigned.insert(key.to_string());
        Ok(())
    }

    pub fn is_assigned(&self, key: &str) -> bool {
        self.assigned.contains(key)
    }

    /// Canonical echo of the effective configuration, used by manifests.
    /// Optional paths and domain values appear only when set.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        if let Some(p) = &self.scan {
            put("scan", p.display().to_string());
        }
        if let Some(p) = &self.output_dir {
            put("output_dir", p.display().to_string());
        }
        if let Some(p) = &self.ply {
            put("ply", p.display().to_string());
        }
        if let Some(p) = &self.camera {
            put("camera", p.display().to_string());
        }
        if let Some(p) = &self.image {
            put("image", p.display().to_string());
        }
        put("seed", self.seed.to_string());
        put("regions", format!("{}x{}", self.regions.0, self.regions.1));
        put("quantile", self.quantile.to_string());
        put("queries", self.queries.to_string());
        put("noise_variance", self.noise_variance.to_string());
        put("parallel", self.parallel.to_string());
        for (k, v) in [
            ("az_min_deg", self.az_min_deg),
            ("az_max_deg", self.az_max_deg),
            ("el_min_deg", self.el_min_deg),
            ("el_max_deg", self.el_max_deg),
        ] {
            if let Some(v) = v {
                put(k, v.to_string());
            }
        }
        put("raster_width", self.raster_width.to_string());
        put("raster_height", self.raster_height.to_string());
        put("lengthscale_min", self.lengthscale_min.to_string());
        put("lengthscale_max", self.lengthscale_max.to_string());
        put("grid_points", self.grid_points.to_string());
        put("template_lengthscale", self.template_lengthscale.to_string());
        if let Some(f) = &self.format {
            put("format", f.clone());
        }
        put("point_radius", self.point_radius.to_string());
        put("point_opacity", self.point_opacity.to_string());
        put("patches", self.patches.to_string());
        put("scan_size", self.scan_size.to_string());
        put("noise_std", self.noise_std.to_string());
        put("repetitions", self.repetitions.to_string());
        put(
            "bench_sizes",
            self.bench_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        map
    }
}
