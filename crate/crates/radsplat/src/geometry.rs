//! Angular and Cartesian coordinate types shared by every other module.
//!
//! The sensor frame is x-forward, y-left, z-up. Azimuth is measured in the
//! x/y plane (positive toward +y), elevation toward +z. All angles are
//! radians internally; file formats use degrees and convert at the boundary.

use thiserror::Error;

/// Valid azimuth span.
pub const AZIMUTH_LIMIT: f64 = std::f64::consts::PI;
/// Valid elevation span.
pub const ELEVATION_LIMIT: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("azimuth {0} rad outside [-pi, pi]")]
    AzimuthOutOfRange(f64),
    #[error("elevation {0} rad outside [-pi/2, pi/2]")]
    ElevationOutOfRange(f64),
    #[error("non-finite coordinate component {0}")]
    NonFinite(f64),
    #[error("depth must be positive and finite, got {0}")]
    InvalidDepth(f64),
    #[error("cannot convert the zero vector to spherical coordinates")]
    ZeroVector,
    #[error("angular range requires min < max on both axes")]
    EmptyRange,
}

/// A viewing direction: azimuth and elevation in radians.
///
/// Azimuth lies in `[-pi, pi]`, elevation in `[-pi/2, pi/2]`, both finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularCoordinate {
    azimuth: f64,
    elevation: f64,
}

impl AngularCoordinate {
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self, GeometryError> {
        if !azimuth.is_finite() {
            return Err(GeometryError::NonFinite(azimuth));
        }
        if !elevation.is_finite() {
            return Err(GeometryError::NonFinite(elevation));
        }
        if azimuth.abs() > AZIMUTH_LIMIT {
            return Err(GeometryError::AzimuthOutOfRange(azimuth));
        }
        if elevation.abs() > ELEVATION_LIMIT {
            return Err(GeometryError::ElevationOutOfRange(elevation));
        }
        Ok(Self { azimuth, elevation })
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    /// Squared Euclidean distance on the (azimuth, elevation) plane.
    pub fn distance_squared(&self, other: &Self) -> f64 {
        let da = self.azimuth - other.azimuth;
        let de = self.elevation - other.elevation;
        da * da + de * de
    }
}

/// A point in the sensor frame, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        for v in [x, y, z] {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(v));
            }
        }
        Ok(Self { x, y, z })
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// An axis-aligned rectangle of viewing directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularRange {
    azimuth_min: f64,
    azimuth_max: f64,
    elevation_min: f64,
    elevation_max: f64,
}

impl AngularRange {
    pub fn new(
        azimuth_min: f64,
        azimuth_max: f64,
        elevation_min: f64,
        elevation_max: f64,
    ) -> Result<Self, GeometryError> {
        // Corner validity implies every interior point is a valid coordinate.
        AngularCoordinate::new(azimuth_min, elevation_min)?;
        AngularCoordinate::new(azimuth_max, elevation_max)?;
        if azimuth_min >= azimuth_max || elevation_min >= elevation_max {
            return Err(GeometryError::EmptyRange);
        }
        Ok(Self {
            azimuth_min,
            azimuth_max,
            elevation_min,
            elevation_max,
        })
    }

    pub fn azimuth_min(&self) -> f64 {
        self.azimuth_min
    }

    pub fn azimuth_max(&self) -> f64 {
        self.azimuth_max
    }

    pub fn elevation_min(&self) -> f64 {
        self.elevation_min
    }

    pub fn elevation_max(&self) -> f64 {
        self.elevation_max
    }

    pub fn azimuth_span(&self) -> f64 {
        self.azimuth_max - self.azimuth_min
    }

    pub fn elevation_span(&self) -> f64 {
        self.elevation_max - self.elevation_min
    }

    pub fn contains(&self, x: &AngularCoordinate) -> bool {
        x.azimuth() >= self.azimuth_min
            && x.azimuth() <= self.azimuth_max
            && x.elevation() >= self.elevation_min
            && x.elevation() <= self.elevation_max
    }

    pub fn center(&self) -> AngularCoordinate {
        AngularCoordinate::new(
            self.azimuth_min + 0.5 * self.azimuth_span(),
            self.elevation_min + 0.5 * self.elevation_span(),
        )
        .expect("range corners validated at construction")
    }
}

/// Converts a viewing direction plus range to a sensor-frame point.
///
/// `x = d cos(el) cos(az)`, `y = d cos(el) sin(az)`, `z = d sin(el)`.
pub fn spherical_to_cartesian(
    loc: &AngularCoordinate,
    depth_m: f64,
) -> Result<Point3, GeometryError> {
    if !depth_m.is_finite() || depth_m <= 0.0 {
        return Err(GeometryError::InvalidDepth(depth_m));
    }
    let (sin_az, cos_az) = loc.azimuth().sin_cos();
    let (sin_el, cos_el) = loc.elevation().sin_cos();
    Ok(Point3 {
        x: depth_m * cos_el * cos_az,
        y: depth_m * cos_el * sin_az,
        z: depth_m * sin_el,
    })
}

/// Inverse of [`spherical_to_cartesian`] up to floating rounding.
///
/// At the poles (`x = y = 0`) the azimuth is defined as 0.
pub fn cartesian_to_spherical(p: &Point3) -> Result<(AngularCoordinate, f64), GeometryError> {
    let depth = p.norm();
    if depth == 0.0 {
        return Err(GeometryError::ZeroVector);
    }
    let azimuth = if p.x == 0.0 && p.y == 0.0 {
        0.0
    } else {
        p.y.atan2(p.x)
    };
    let elevation = (p.z / depth).clamp(-1.0, 1.0).asin();
    Ok((AngularCoordinate::new(azimuth, elevation)?, depth))
}
