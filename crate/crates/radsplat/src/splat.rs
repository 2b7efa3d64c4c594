//! Forward-only Gaussian splatting: anisotropic 3D Gaussians, pinhole
//! projection to 2D image-plane Gaussians, and front-to-back alpha
//! compositing. No optimization, no spherical harmonics.
//!
//! Pixel (ix, iy) samples the continuous image plane at exactly (ix, iy),
//! so a principal point of (cx, cy) puts an on-axis splat's peak at that
//! pixel index.

use crate::geometry::Point3;
use nalgebra::{Matrix2, Matrix2x3, Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::Deserialize;
use std::io::{Read, Write};
use thiserror::Error;

/// Splats closer than this camera-space depth are culled.
pub const NEAR_PLANE_M: f64 = 0.01;
/// Peak 2D density is clamped here so transmittance never reaches zero.
pub const MAX_SPLAT_DENSITY: f64 = 0.999;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("quaternion norm {0} differs from 1 by more than 1e-9")]
    InvalidQuaternion(f64),
    #[error("scales must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("opacity must lie in (0, 1], got {0}")]
    InvalidOpacity(f64),
    #[error("color channels must lie in [0, 1], got {0}")]
    InvalidColor(f64),
    #[error("extrinsic rotation block is not orthonormal (max deviation {0:.3e})")]
    BadExtrinsic(f64),
    #[error("focal lengths must be positive and finite, got fx {fx}, fy {fy}")]
    InvalidIntrinsic { fx: f64, fy: f64 },
    #[error("principal point must be finite, got cx {cx}, cy {cy}")]
    InvalidPrincipalPoint { cx: f64, cy: f64 },
    #[error("image must be at least 1x1 pixels, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("extrinsic must hold 12 numbers (row-major 3x4), got {0}")]
    BadExtrinsicLength(usize),
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("camera json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One anisotropic 3D Gaussian with opacity and color.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    mean: Point3,
    rotation: UnitQuaternion<f64>,
    scale: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl GaussianPrimitive {
    pub fn new(
        mean: Point3,
        rotation: UnitQuaternion<f64>,
        scale: [f64; 3],
        opacity: f64,
        color: [f64; 3],
    ) -> Result<Self, SplatError> {
        if let Some(&bad) = scale.iter().find(|s| !s.is_finite() || **s <= 0.0) {
            return Err(SplatError::InvalidScale(bad));
        }
        if !opacity.is_finite() || opacity <= 0.0 || opacity > 1.0 {
            return Err(SplatError::InvalidOpacity(opacity));
        }
        if let Some(&bad) = color.iter().find(|c| !c.is_finite() || !(0.0..=1.0).contains(*c)) {
            return Err(SplatError::InvalidColor(bad));
        }
        Ok(Self {
            mean,
            rotation,
            scale,
            opacity,
            color,
        })
    }

    /// Builds the rotation from raw quaternion components, rejecting inputs
    /// whose norm strays from 1 by more than 1e-9.
    pub fn from_quaternion_components(
        mean: Point3,
        wxyz: [f64; 4],
        scale: [f64; 3],
        opacity: f64,
        color: [f64; 3],
    ) -> Result<Self, SplatError> {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(SplatError::InvalidQuaternion(norm));
        }
        Self::new(
            mean,
            UnitQuaternion::new_unchecked(q.normalize()),
            scale,
            opacity,
            color,
        )
    }

    pub fn mean(&self) -> Point3 {
        self.mean
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn scale(&self) -> [f64; 3] {
        self.scale
    }

    pub fn opacity(&self) -> f64 {
        self.opacity
    }

    pub fn color(&self) -> [f64; 3] {
        self.color
    }
}

/// World-to-camera extrinsic plus pinhole intrinsic.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl CameraModel {
    /// `extrinsic` is the row-major 3x4 world-to-camera matrix `[R | t]`.
    pub fn new(
        extrinsic: &[f64],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, SplatError> {
        if extrinsic.len() != 12 {
            return Err(SplatError::BadExtrinsicLength(extrinsic.len()));
        }
        let rotation = Matrix3::new(
            extrinsic[0],
            extrinsic[1],
            extrinsic[2],
            extrinsic[4],
            extrinsic[5],
            extrinsic[6],
            extrinsic[8],
            extrinsic[9],
            extrinsic[10],
        );
        let translation = Vector3::new(extrinsic[3], extrinsic[7], extrinsic[11]);
        let deviation = (rotation * rotation.transpose() - Matrix3::identity())
            .iter()
            .fold(0f64, |m, v| m.max(v.abs()));
        if !deviation.is_finite() || deviation > 1e-8 {
            return Err(SplatError::BadExtrinsic(deviation));
        }
        if !fx.is_finite() || !fy.is_finite() || fx <= 0.0 || fy <= 0.0 {
            return Err(SplatError::InvalidIntrinsic { fx, fy });
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(SplatError::InvalidPrincipalPoint { cx, cy });
        }
        if width == 0 || height == 0 {
            return Err(SplatError::EmptyImage { width, height });
        }
        Ok(Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn identity_pose(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, SplatError> {
        Self::new(
            &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn world_to_camera(&self, p: &Point3) -> Vector3<f64> {
        self.rotation * Vector3::new(p.x, p.y, p.z) + self.translation
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraJsonIntrinsic {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraJson {
    extrinsic: Vec<f64>,
    intrinsic: CameraJsonIntrinsic,
    width: usize,
    height: usize,
}

/// Loads a camera description: `extrinsic` (12 numbers, row-major 3x4),
/// `intrinsic` (fx, fy, cx, cy), `width`, `height`.
pub fn load_camera_json<R: Read>(source: R) -> Result<CameraModel, SplatError> {
    let raw: CameraJson = serde_json::from_reader(source)?;
    CameraModel::new(
        &raw.extrinsic,
        raw.intrinsic.fx,
        raw.intrinsic.fy,
        raw.intrinsic.cx,
        raw.intrinsic.cy,
        raw.width,
        raw.height,
    )
}

/// A 3D Gaussian after projection: image-plane mean and covariance plus the
/// attributes compositing needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub view_depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

/// `R diag(s^2) R'`: the world-space covariance of a primitive. Symmetric
/// positive definite by construction, eigenvalues the squared scales.
pub fn covariance_from_factors(rotation: &UnitQuaternion<f64>, scale: [f64; 3]) -> Matrix3<f64> {
    let r = rotation.to_rotation_matrix();
    let s2 = Matrix3::from_diagonal(&Vector3::new(
        scale[0] * scale[0],
        scale[1] * scale[1],
        scale[2] * scale[2],
    ));
    let sigma = r * s2 * r.transpose();
    // Exact symmetry keeps downstream 2x2 algebra clean.
    0.5 * (sigma + sigma.transpose())
}

/// Peak-scaled density of the primitive at a world point:
/// `opacity * exp(-1/2 (z-m)' Sigma^-1 (z-m))`.
///
/// The quadratic form is evaluated in the primitive's own frame, where the
/// covariance is diagonal, so no matrix inversion is needed.
pub fn evaluate_gaussian(g: &GaussianPrimitive, z: &Point3) -> f64 {
    let d = Vector3::new(z.x - g.mean.x, z.y - g.mean.y, z.z - g.mean.z);
    let local = g.rotation.inverse() * d;
    let q = (local.x / g.scale[0]).powi(2)
        + (local.y / g.scale[1]).powi(2)
        + (local.z / g.scale[2]).powi(2);
    g.opacity * (-0.5 * q).exp()
}

/// Projects a primitive through the camera. Returns None when the mean lies
/// at or behind the near plane.
///
/// The image-plane covariance is `J R Sigma R' J'` where R is the extrinsic
/// rotation block and J the Jacobian of perspective projection at the
/// camera-space mean.
pub fn project_gaussian(g: &GaussianPrimitive, cam: &CameraModel) -> Option<ProjectedGaussian> {
    let p = cam.world_to_camera(&g.mean);
    if !(p.z > NEAR_PLANE_M) {
        return None;
    }
    let mean2d = Vector2::new(
        cam.fx * p.x / p.z + cam.cx,
        cam.fy * p.y / p.z + cam.cy,
    );
    let z2 = p.z * p.z;
    let jacobian = Matrix2x3::new(
        cam.fx / p.z,
        0.0,
        -cam.fx * p.x / z2,
        0.0,
        cam.fy / p.z,
        -cam.fy * p.y / z2,
    );
    let sigma = covariance_from_factors(&g.rotation, g.scale);
    let jr = jacobian * cam.rotation;
    let cov = jr * sigma * jr.transpose();
    let cov2d = 0.5 * (cov + cov.transpose());
    Some(ProjectedGaussian {
        mean2d,
        cov2d,
        view_depth: p.z,
        opacity: g.opacity,
        color: g.color,
    })
}

/// 2D density of a projected splat at a pixel location, clamped to
/// `[0, MAX_SPLAT_DENSITY]`. Degenerate covariances contribute nothing.
pub fn splat_density(s: &ProjectedGaussian, p: [f64; 2]) -> f64 {
    let (a, b, c) = (s.cov2d[(0, 0)], s.cov2d[(0, 1)], s.cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return 0.0;
    }
    let dx = p[0] - s.mean2d.x;
    let dy = p[1] - s.mean2d.y;
    let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    (s.opacity * (-0.5 * q).exp()).clamp(0.0, MAX_SPLAT_DENSITY)
}

/// Front-to-back compositing at one pixel: each splat contributes its color
/// weighted by its density and the transmittance left by nearer splats.
///
/// The list must already be sorted ascending by view depth.
pub fn render_pixel(splats_sorted_front_to_back: &[ProjectedGaussian], p: [f64; 2]) -> [f64; 3] {
    debug_assert!(
        splats_sorted_front_to_back
            .windows(2)
            .all(|w| w[0].view_depth <= w[1].view_depth),
        "splats must be sorted ascending by view depth"
    );
    let mut color = [0f64; 3];
    let mut transmittance = 1f64;
    for s in splats_sorted_front_to_back {
        let g = splat_density(s, p);
        for (out, c) in color.iter_mut().zip(&s.color) {
            *out += transmittance * g * c;
        }
        transmittance *= 1.0 - g;
    }
    color
}

/// Floating-point RGB image, row-major, origin at the top-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RenderedImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    /// 8-bit RGB bytes, row-major.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            for c in p {
                out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    /// Binary PPM (P6, 8-bit); byte-exact for identical inputs.
    pub fn write_ppm<W: Write>(&self, sink: &mut W) -> std::io::Result<()> {
        write!(sink, "P6\n{} {}\n255\n", self.width, self.height)?;
        sink.write_all(&self.to_rgb8())
    }
}

/// Transmittance below which remaining splats cannot shift any 8-bit
/// channel, so per-pixel compositing stops early.
const TRANSMITTANCE_CUTOFF: f64 = 1e-4;

/// Projects, depth-sorts, and composites all primitives into an image.
///
/// Each splat only touches pixels within 3 standard deviations of its
/// projected mean; compositing per pixel stops once transmittance is
/// negligible. Both cutoffs stay well inside an 8-bit quantization step.
pub fn render_image(gaussians: &[GaussianPrimitive], cam: &CameraModel) -> RenderedImage {
    let mut projected: Vec<(usize, ProjectedGaussian)> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, cam).map(|p| (i, p)))
        .collect();
    // Primitive index breaks depth ties deterministically.
    projected.sort_by(|x, y| {
        x.1.view_depth
            .total_cmp(&y.1.view_depth)
            .then(x.0.cmp(&y.0))
    });
    let splats: Vec<ProjectedGaussian> = projected.into_iter().map(|(_, p)| p).collect();

    // Screen-space bounds: 3 sigma along the covariance's major axis.
    struct Footprint {
        x0: usize,
        x1: usize,
        y0: usize,
        y1: usize,
    }
    let (width, height) = (cam.width, cam.height);
    let footprints: Vec<Option<Footprint>> = splats
        .iter()
        .map(|s| {
            let (a, b, c) = (s.cov2d[(0, 0)], s.cov2d[(0, 1)], s.cov2d[(1, 1)]);
            let half_trace = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let lambda_max = half_trace + disc;
            if !(lambda_max > 0.0) {
                return None;
            }
            let radius = 3.0 * lambda_max.sqrt();
            let x0 = (s.mean2d.x - radius).ceil().max(0.0);
            let x1 = (s.mean2d.x + radius).floor().min((width - 1) as f64);
            let y0 = (s.mean2d.y - radius).ceil().max(0.0);
            let y1 = (s.mean2d.y + radius).floor().min((height - 1) as f64);
            if x0 > x1 || y0 > y1 {
                return None;
            }
            Some(Footprint {
                x0: x0 as usize,
                x1: x1 as usize,
                y0: y0 as usize,
                y1: y1 as usize,
            })
        })
        .collect();

    // Per-row lists of splat indices (depth order preserved) so each pixel
    // walks only the splats that can reach its row.
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); height];
    for (k, fp) in footprints.iter().enumerate() {
        if let Some(fp) = fp {
            for row in rows.iter_mut().take(fp.y1 + 1).skip(fp.y0) {
                row.push(k);
            }
        }
    }

    let mut pixels = vec![[0f64; 3]; width * height];
    for (y, row_splats) in rows.iter().enumerate() {
        for x in 0..width {
            let p = [x as f64, y as f64];
            let mut color = [0f64; 3];
            let mut transmittance = 1f64;
            for &k in row_splats {
                let fp = footprints[k].as_ref().expect("listed splats have footprints");
                if x < fp.x0 || x > fp.x1 {
                    continue;
                }
                let g = splat_density(&splats[k], p);
                for (out, c) in color.iter_mut().zip(&splats[k].color) {
                    *out += transmittance * g * c;
                }
                transmittance *= 1.0 - g;
                if transmittance < TRANSMITTANCE_CUTOFF {
                    break;
                }
            }
            pixels[y * width + x] = color;
        }
    }
    RenderedImage {
        width,
        height,
        pixels,
    }
}

/// Largest relative disagreement between the analytic projection Jacobian
/// and central finite differences of the projection map, taken at the
/// camera-space mean of `g`.
pub fn jacobian_check(
    g: &GaussianPrimitive,
    cam: &CameraModel,
    step: f64,
) -> Result<f64, SplatError> {
    if !step.is_finite() || step <= 0.0 {
        return Err(SplatError::InvalidStep(step));
    }
    let p = cam.world_to_camera(&g.mean);
    let project = |q: Vector3<f64>| {
        Vector2::new(cam.fx * q.x / q.z + cam.cx, cam.fy * q.y / q.z + cam.cy)
    };
    let z2 = p.z * p.z;
    let analytic = Matrix2x3::new(
        cam.fx / p.z,
        0.0,
        -cam.fx * p.x / z2,
        0.0,
        cam.fy / p.z,
        -cam.fy * p.y / z2,
    );
    let mut max_rel = 0f64;
    for axis in 0..3 {
        let mut delta = Vector3::zeros();
        delta[axis] = step;
        let numeric = (project(p + delta) - project(p - delta)) / (2.0 * step);
        for row in 0..2 {
            let a = analytic[(row, axis)];
            let n = numeric[row];
            let denom = a.abs().max(n.abs());
            if denom > 1e-12 {
                max_rel = max_rel.max((a - n).abs() / denom);
            }
        }
    }
    Ok(max_rel)
}
