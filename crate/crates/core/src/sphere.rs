//! Spherical geometry on the unit sphere and on a spherical Earth.
//!
//! Angles are radians internally; degrees appear only on [`GeoPoint`].

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Radius of the spherical Earth used for every distance in the toolkit.
pub const EARTH_RADIUS_KM: f64 = 6372.795;

/// Boundary tolerance for triangle membership (angular, radians).
pub const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SphereError {
    #[error("latitude out of range: {0}")]
    LatitudeOutOfRange(f64),
    #[error("longitude out of range: {0}")]
    LongitudeOutOfRange(f64),
    #[error("coordinate is not finite")]
    NotFinite,
    #[error("zero-length vector cannot be normalized")]
    ZeroVector,
    #[error("midpoint of antipodal points is undefined")]
    AntipodalMidpoint,
}

/// Latitude/longitude in degrees. Longitude is kept in `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

impl GeoPoint {
    /// Validating constructor. `lon = 180` is folded onto `-180`.
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, SphereError> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() {
            return Err(SphereError::NotFinite);
        }
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(SphereError::LatitudeOutOfRange(lat_deg));
        }
        if !(-180.0..=180.0).contains(&lon_deg) {
            return Err(SphereError::LongitudeOutOfRange(lon_deg));
        }
        Ok(Self {
            lat_deg,
            lon_deg: wrap_longitude(lon_deg),
        })
    }

    /// Accepts any finite longitude and wraps it into `[-180, 180)`.
    pub fn wrapping(lat_deg: f64, lon_deg: f64) -> Result<Self, SphereError> {
        if !lon_deg.is_finite() {
            return Err(SphereError::NotFinite);
        }
        Self::new(lat_deg, wrap_longitude(lon_deg))
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon_deg
    }

    pub fn lat_rad(&self) -> f64 {
        self.lat_deg.to_radians()
    }

    pub fn lon_rad(&self) -> f64 {
        self.lon_deg.to_radians()
    }

    pub fn to_unit_vector(&self) -> UnitVector {
        let (lat, lon) = (self.lat_rad(), self.lon_rad());
        UnitVector {
            x: lat.cos() * lon.cos(),
            y: lat.cos() * lon.sin(),
            z: lat.sin(),
        }
    }
}

fn wrap_longitude(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can return exactly 360.0 - tiny -> 180.0 after rounding
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// A point on the unit sphere in Earth-centred Cartesian form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitVector {
    /// Normalizes `(x, y, z)`.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, SphereError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(SphereError::NotFinite);
        }
        let norm = (x * x + y * y + z * z).sqrt();
        if norm == 0.0 {
            return Err(SphereError::ZeroVector);
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// Wraps components that are already unit length (not checked).
    pub const fn from_raw(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_geo(&self) -> GeoPoint {
        let horizontal = self.x.hypot(self.y);
        let lat = self.z.atan2(horizontal).to_degrees().clamp(-90.0, 90.0);
        let lon = if horizontal < 1e-15 {
            0.0
        } else {
            self.y.atan2(self.x).to_degrees()
        };
        GeoPoint {
            lat_deg: lat,
            lon_deg: wrap_longitude(lon),
        }
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Raw cross product (not normalized).
    pub fn cross(&self, other: &UnitVector) -> [f64; 3] {
        [
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        ]
    }

    pub fn neg(&self) -> UnitVector {
        UnitVector::from_raw(-self.x, -self.y, -self.z)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Squared Euclidean (chord) distance.
    pub fn chord_sq(&self, other: &UnitVector) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        dx * dx + dy * dy + dz * dz
    }
}

/// Scalar triple product `a · (b × c)`.
pub fn triple_product(a: &UnitVector, b: &UnitVector, c: &UnitVector) -> f64 {
    let bc = b.cross(c);
    a.x * bc[0] + a.y * bc[1] + a.z * bc[2]
}

/// Great-circle distance in km:
/// `R · acos(sin φ1 sin φ2 + cos φ1 cos φ2 cos(λ2 − λ1))`, argument clamped to `[-1, 1]`.
pub fn great_circle_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat_rad(), b.lat_rad());
    let dlon = b.lon_rad() - a.lon_rad();
    let cos_angle = lat1.sin() * lat2.sin() + lat1.cos() * lat2.cos() * dlon.cos();
    EARTH_RADIUS_KM * cos_angle.clamp(-1.0, 1.0).acos()
}

/// Area (steradians) of the geodesic triangle `v1 v2 v3`.
///
/// Uses the Van Oosterom–Strackee form of the spherical excess:
/// `tan(E/2) = |v1·(v2×v3)| / (1 + v1·v2 + v2·v3 + v3·v1)`.
pub fn spherical_triangle_area(v1: &UnitVector, v2: &UnitVector, v3: &UnitVector) -> f64 {
    let numerator = triple_product(v1, v2, v3).abs();
    let denominator = 1.0 + v1.dot(v2) + v2.dot(v3) + v3.dot(v1);
    if numerator == 0.0 && denominator <= 0.0 {
        return 0.0;
    }
    let excess = 2.0 * numerator.atan2(denominator);
    if excess.is_finite() {
        excess.max(0.0)
    } else {
        0.0
    }
}

/// Normalized `a + b`.
pub fn geodesic_midpoint(a: &UnitVector, b: &UnitVector) -> Result<UnitVector, SphereError> {
    let (sx, sy, sz) = (a.x + b.x, a.y + b.y, a.z + b.z);
    let norm = (sx * sx + sy * sy + sz * sz).sqrt();
    if norm < 1e-12 {
        return Err(SphereError::AntipodalMidpoint);
    }
    Ok(UnitVector::from_raw(sx / norm, sy / norm, sz / norm))
}

/// Signed angular offset of `p` from the great circle through `a -> b`
/// (sine of the angle; positive on the left when viewed from outside).
pub fn edge_side(a: &UnitVector, b: &UnitVector, p: &UnitVector) -> f64 {
    let n = a.cross(b);
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    (n[0] * p.x + n[1] * p.y + n[2] * p.z) / norm
}

/// Smallest signed edge offset of `p` over the three edges; `>= -ε` means inside.
pub fn triangle_margin(p: &UnitVector, tri: &[UnitVector; 3]) -> f64 {
    let [a, b, c] = tri;
    edge_side(a, b, p).min(edge_side(b, c, p)).min(edge_side(c, a, p))
}

/// Membership test for a counter-clockwise triangle; points within
/// [`BOUNDARY_EPS`] of an edge count as inside.
pub fn point_in_spherical_triangle(p: &UnitVector, tri: &[UnitVector; 3]) -> bool {
    triangle_margin(p, tri) >= -BOUNDARY_EPS
}

/// Normalized vertex average of a triangle.
pub fn triangle_centroid(tri: &[UnitVector; 3]) -> UnitVector {
    let [a, b, c] = tri;
    UnitVector::new(a.x + b.x + c.x, a.y + b.y + c.y, a.z + b.z + c.z)
        .unwrap_or(*a)
}

/// Total solid angle of the sphere.
pub const SPHERE_AREA_SR: f64 = 4.0 * PI;
