//! Location fudger: a random offset that changes once per hour, then a snap
//! to the center of a fixed lat/lon lattice.
//!
//! Lattice rows are `grid / METERS_PER_DEGREE` degrees tall, anchored at
//! (0°, 0°). Each row's cells are as wide in meters as they are tall at the
//! row's center latitude.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geo::{haversine_distance, GeoPoint, METERS_PER_DEGREE};

pub const BLOCK_GRID_M: f64 = 500.0;
pub const CITY_GRID_M: f64 = 5000.0;
pub const DEFAULT_GRID_M: f64 = 2000.0;
pub const EPOCH_S: i64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FudgerState {
    pub grid_radius_m: f64,
    pub offset_north_m: f64,
    pub offset_east_m: f64,
    pub epoch: i64,
    pub seed: u64,
}

impl FudgerState {
    /// State for the hour containing `now`.
    pub fn new(grid_radius_m: f64, seed: u64, now: i64) -> Self {
        assert!(grid_radius_m > 0.0 && grid_radius_m.is_finite(), "grid must be positive");
        let epoch = hour_bucket(now);
        let (offset_north_m, offset_east_m) = draw_offset(seed, epoch, grid_radius_m / 4.0);
        Self { grid_radius_m, offset_north_m, offset_east_m, epoch, seed }
    }

    pub fn offset_max_m(&self) -> f64 {
        self.grid_radius_m / 4.0
    }

    pub fn offset_m(&self) -> f64 {
        self.offset_north_m.hypot(self.offset_east_m)
    }
}

pub fn hour_bucket(now: i64) -> i64 {
    now.div_euclid(EPOCH_S)
}

/// Uniform on the disc of radius `max`, one ChaCha stream per bucket.
fn draw_offset(seed: u64, epoch: i64, max: f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let r = max * rng.random::<f64>().sqrt();
    let theta = TAU * rng.random::<f64>();
    (r * theta.cos(), r * theta.sin())
}

/// Same state within `now`'s bucket, a fresh offset otherwise.
pub fn roll_offset(state: &FudgerState, now: i64) -> FudgerState {
    if hour_bucket(now) == state.epoch {
        *state
    } else {
        FudgerState::new(state.grid_radius_m, state.seed, now)
    }
}

fn lat_step(grid_m: f64) -> f64 {
    grid_m / METERS_PER_DEGREE
}

fn row_center_lat(row: i64, grid_m: f64) -> f64 {
    ((row as f64 + 0.5) * lat_step(grid_m)).clamp(-90.0, 90.0)
}

fn lon_step(center_lat: f64, grid_m: f64) -> f64 {
    lat_step(grid_m) / center_lat.to_radians().cos().max(1e-9)
}

fn row_of(lat: f64, grid_m: f64) -> i64 {
    (lat / lat_step(grid_m)).floor() as i64
}

/// Center of the lattice cell containing `p`.
pub fn cell_center(p: &GeoPoint, grid_m: f64) -> GeoPoint {
    let lat = row_center_lat(row_of(p.lat(), grid_m), grid_m);
    let dlon = lon_step(lat, grid_m);
    let lon = (((p.lon() / dlon).floor() + 0.5) * dlon).clamp(-180.0, 180.0);
    GeoPoint::new(lat, lon).expect("cell centers stay in range")
}

/// True when `p` is a lattice cell center up to `tol` cells.
pub fn is_cell_center(p: &GeoPoint, grid_m: f64, tol: f64) -> bool {
    let i = p.lat() / lat_step(grid_m) - 0.5;
    if (i - i.round()).abs() > tol {
        return false;
    }
    let j = p.lon() / lon_step(row_center_lat(i.round() as i64, grid_m), grid_m) - 0.5;
    (j - j.round()).abs() <= tol
}

/// Largest distance from a cell's center to its corners, for the cell
/// containing latitude `lat`.
pub fn cell_half_diagonal_m(lat: f64, grid_m: f64) -> f64 {
    let row = row_of(lat, grid_m);
    let c = row_center_lat(row, grid_m);
    let half_lat = 0.5 * lat_step(grid_m);
    let half_lon = 0.5 * lon_step(c, grid_m);
    let center = GeoPoint::new(c, 0.0).expect("valid center");
    [c - half_lat, c + half_lat]
        .iter()
        .map(|&corner_lat| haversine_distance(&center, &GeoPoint::new(corner_lat.clamp(-90.0, 90.0), half_lon.min(180.0)).expect("valid corner")))
        .fold(0.0, f64::max)
}

/// Upper bound on `|p − fudge(p)|` for any offset and epoch.
pub fn displacement_bound_m(p: &GeoPoint, grid_m: f64) -> f64 {
    let offset_max = grid_m / 4.0;
    let reach = offset_max / METERS_PER_DEGREE;
    let (lo, hi) = (row_of(p.lat() - reach, grid_m), row_of(p.lat() + reach, grid_m));
    let half_diag = (lo..=hi).map(|r| cell_half_diagonal_m(row_center_lat(r, grid_m), grid_m)).fold(0.0, f64::max);
    offset_max + half_diag
}

/// Applies the offset of `now`'s hour bucket, then snaps to the lattice.
pub fn fudge(p: &GeoPoint, state: &FudgerState, now: i64) -> GeoPoint {
    let s = roll_offset(state, now);
    let shifted = if s.offset_m() > 0.0 { p.destination(s.offset_east_m.atan2(s.offset_north_m), s.offset_m()) } else { *p };
    cell_center(&shifted, s.grid_radius_m)
}
