//! Geographic primitives: points, great-circle distances and polylines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for every distance computation, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters spanned by one degree of latitude on the sphere of radius [`EARTH_RADIUS_M`].
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("polyline must contain at least one point")]
    EmptyPolyline,
    #[error("arc length {s} m outside [0, {total}] m")]
    OutOfRange { s: f64, total: f64 },
}

/// A WGS84-style latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;
    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Moves the point by local north/east displacements in meters, using the
    /// equirectangular approximation at the point's latitude. Latitude is clamped
    /// to the valid range and longitude wrapped into [-180, 180].
    pub fn offset_m(&self, north_m: f64, east_m: f64) -> GeoPoint {
        let lat = (self.lat + north_m / METERS_PER_DEGREE).clamp(-90.0, 90.0);
        let cos_lat = self.lat.to_radians().cos().max(1e-9);
        let lon = wrap_lon(self.lon + east_m / (METERS_PER_DEGREE * cos_lat));
        GeoPoint { lat, lon }
    }

    /// Great-circle destination after travelling `distance_m` along `bearing_rad`
    /// (clockwise from north).
    pub fn destination(&self, bearing_rad: f64, distance_m: f64) -> GeoPoint {
        let delta = distance_m / EARTH_RADIUS_M;
        let phi1 = self.lat.to_radians();
        let lambda1 = self.lon.to_radians();
        let sin_phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * bearing_rad.cos()).clamp(-1.0, 1.0);
        let phi2 = sin_phi2.asin();
        let lambda2 = lambda1
            + (bearing_rad.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);
        GeoPoint {
            lat: phi2.to_degrees().clamp(-90.0, 90.0),
            lon: wrap_lon(lambda2.to_degrees()),
        }
    }

    /// Initial great-circle bearing towards `other`, radians clockwise from north.
    pub fn bearing_to(&self, other: &GeoPoint) -> f64 {
        let phi1 = self.lat.to_radians();
        let phi2 = other.lat.to_radians();
        let dl = (other.lon - self.lon).to_radians();
        let y = dl.sin() * phi2.cos();
        let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dl.cos();
        y.atan2(x)
    }
}

fn wrap_lon(lon: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon) {
        lon
    } else {
        let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
        if w == -180.0 && lon > 0.0 {
            180.0
        } else {
            w
        }
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Linear blend between two points in coordinate space. Adequate for the
/// sub-kilometer segments this crate interpolates over.
pub fn lerp(a: &GeoPoint, b: &GeoPoint, f: f64) -> GeoPoint {
    let f = f.clamp(0.0, 1.0);
    GeoPoint {
        lat: a.lat + (b.lat - a.lat) * f,
        lon: a.lon + (b.lon - a.lon) * f,
    }
}

/// Ordered points with precomputed cumulative arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeoPoint>", into = "Vec<GeoPoint>")]
pub struct Polyline {
    points: Vec<GeoPoint>,
    cumulative_m: Vec<f64>,
}

impl TryFrom<Vec<GeoPoint>> for Polyline {
    type Error = GeoError;
    fn try_from(points: Vec<GeoPoint>) -> Result<Self, Self::Error> {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<GeoPoint> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

impl Polyline {
    pub fn new(points: Vec<GeoPoint>) -> Result<Self, GeoError> {
        if points.is_empty() {
            return Err(GeoError::EmptyPolyline);
        }
        let mut cumulative_m = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative_m.push(0.0);
        for w in points.windows(2) {
            acc += haversine_distance(&w[0], &w[1]);
            cumulative_m.push(acc);
        }
        Ok(Self { points, cumulative_m })
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn cumulative_m(&self) -> &[f64] {
        &self.cumulative_m
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_length_m(&self) -> f64 {
        *self.cumulative_m.last().expect("non-empty")
    }

    pub fn first(&self) -> GeoPoint {
        self.points[0]
    }

    pub fn last(&self) -> GeoPoint {
        *self.points.last().expect("non-empty")
    }

    /// Appends `other`, dropping its first point when it coincides with our last.
    pub fn concat(&self, other: &Polyline) -> Polyline {
        let mut pts = self.points.clone();
        let skip = usize::from(other.first() == self.last());
        pts.extend_from_slice(&other.points[skip..]);
        Polyline::new(pts).expect("non-empty")
    }

    /// Point at arc length `s` meters from the start.
    pub fn interpolate_along(&self, s: f64) -> Result<GeoPoint, GeoError> {
        let total = self.total_length_m();
        if !(0.0..=total).contains(&s) {
            return Err(GeoError::OutOfRange { s, total });
        }
        // first index whose cumulative distance is >= s
        let k = self.cumulative_m.partition_point(|&c| c < s);
        if k == 0 {
            return Ok(self.points[0]);
        }
        if self.cumulative_m[k] == s {
            return Ok(self.points[k]);
        }
        let (c0, c1) = (self.cumulative_m[k - 1], self.cumulative_m[k]);
        let f = (s - c0) / (c1 - c0);
        Ok(lerp(&self.points[k - 1], &self.points[k], f))
    }
}
