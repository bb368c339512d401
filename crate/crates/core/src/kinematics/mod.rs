//! Per-second acceleration and speed profiles for route steps, and the fixes
//! they integrate into.
//!
//! Each step's accelerations have zero mean, so a step leaves at the speed it
//! entered with. Since the first step of a route enters at rest, every step of
//! a drive starts and ends stopped; [`coalesce_steps`] merges short steps so
//! that such stop-to-stop profiles stay within the acceleration statistics.

mod guess;
mod solver;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_distance, lerp, GeoError, GeoPoint};
use crate::traffic::RouteStep;

/// Wanted ratio of `std|a|` to `mean|a|` in initial guesses.
const STD_TO_MEAN: f64 = 1.2;
/// Internal tightening of the statistic bounds; exceeds the solver's smoothing.
const MARGIN: f64 = 1e-3;
/// Lowest speed allowed inside a step, m/s.
const SPEED_FLOOR: f64 = 1e-3;
const PROX_WEIGHT: f64 = 1e-2;
/// `mean|a|` needed per m/s of speed change into and out of a step, per second.
const RAMP_COST: f64 = 2.4;
const MIN_STEP_SECONDS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("step of {n} s at {v_target:.2} m/s needs mean |a| {needed:.3} above {limit:.3}")]
    Infeasible { n: usize, v_target: f64, needed: f64, limit: f64 },
    #[error("no acceptable profile after {attempts} attempts (best speed residual {best_residual:.4} m/s)")]
    NoSolution { attempts: usize, best_residual: f64 },
    #[error("profiles misaligned with steps: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Driving-behaviour statistics and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingStats {
    pub mean_abs_bounds: (f64, f64),
    pub std_abs_bounds: (f64, f64),
    pub accel_bounds: (f64, f64),
    pub target_mean_abs: f64,
    pub target_median_abs: f64,
    pub target_std_abs: f64,
    /// δ: gap kept between a route's random lower mean bound and the upper one.
    pub delta_margin: f64,
    /// Δ: largest accepted `|mean(v) − d/t|`, m/s.
    pub objective_threshold: f64,
    pub max_retries: usize,
    /// Gradient iterations of the first attempt; doubled on every retry.
    pub base_iterations: usize,
}

impl Default for DrivingStats {
    fn default() -> Self {
        Self {
            mean_abs_bounds: (0.1, 1.1),
            std_abs_bounds: (0.4, 1.1),
            accel_bounds: (-7.0, 7.0),
            target_mean_abs: 0.61,
            target_median_abs: 0.34,
            target_std_abs: 0.79,
            delta_margin: 0.1,
            objective_threshold: 0.15,
            max_retries: 5,
            base_iterations: 4000,
        }
    }
}

impl DrivingStats {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let ordered = |(a, b): (f64, f64)| a < b;
        if !(ordered(self.mean_abs_bounds) && ordered(self.std_abs_bounds) && ordered(self.accel_bounds)) {
            return Err(KinematicsError::InvalidStep("statistic bounds must be ordered".into()));
        }
        if !(self.delta_margin > 0.0 && self.delta_margin < self.mean_abs_bounds.1 - self.mean_abs_bounds.0) {
            return Err(KinematicsError::InvalidStep("δ must be positive and below the mean-bound width".into()));
        }
        if self.objective_threshold <= 0.0 {
            return Err(KinematicsError::InvalidStep("Δ must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProfile {
    pub accel: Vec<f64>,
    /// `speeds[j] = v0 + Σ accel[..=j]`.
    pub speeds: Vec<f64>,
    pub v0: f64,
    /// `|mean(speeds) − d/t|` of the accepted solution.
    pub residual: f64,
}

impl StepProfile {
    pub fn final_speed(&self) -> f64 {
        *self.speeds.last().unwrap_or(&self.v0)
    }
}

/// One positioned sample: Unix seconds, location, speed and acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub t: f64,
    pub point: GeoPoint,
    pub speed: f64,
    pub accel: f64,
}

/// Per-route range `[|a|_rand, |a|_max]` with `|a|_rand ~ U(|a|_min, |a|_max − δ)`.
pub fn draw_mean_abs_target(stats: &DrivingStats, rng: &mut impl Rng) -> (f64, f64) {
    let (lo, hi) = stats.mean_abs_bounds;
    (rng.random_range(lo..hi - stats.delta_margin), hi)
}

pub fn step_samples(step: &RouteStep) -> usize {
    step.t_step.max(0.0) as usize
}

/// Mean `|a|` the initial guess budgets for a step of `n` seconds entering
/// and leaving at `v0`.
pub fn required_mean_abs(n: usize, v0: f64, v_target: f64) -> f64 {
    RAMP_COST * (v_target - v0).abs() / n.max(1) as f64
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    guess::mean_std(x)
}

/// Every violated profile constraint, as text; empty when the profile is valid.
pub fn audit_profile(
    profile: &StepProfile,
    step: &RouteStep,
    mean_abs_range: (f64, f64),
    stats: &DrivingStats,
    is_first: bool,
    is_last: bool,
) -> Vec<String> {
    let mut out = Vec::new();
    let n = step_samples(step);
    let a = &profile.accel;
    if a.len() != n || profile.speeds.len() != n {
        out.push(format!("expected {n} samples, got {} accelerations and {} speeds", a.len(), profile.speeds.len()));
        return out;
    }
    let tol = 1e-6;
    let mean_a = a.iter().sum::<f64>() / n as f64;
    if mean_a.abs() > 1e-3 {
        out.push(format!("mean acceleration {mean_a:.2e}"));
    }
    let (amin, amax) = stats.accel_bounds;
    if let Some(x) = a.iter().find(|x| **x < amin - 1e-9 || **x > amax + 1e-9) {
        out.push(format!("acceleration {x} outside [{amin}, {amax}]"));
    }
    let abs: Vec<f64> = a.iter().map(|x| x.abs()).collect();
    let (m, s) = mean_std(&abs);
    if m < mean_abs_range.0 - tol || m > mean_abs_range.1 + tol {
        out.push(format!("mean |a| {m:.6} outside [{}, {}]", mean_abs_range.0, mean_abs_range.1));
    }
    let (slo, shi) = stats.std_abs_bounds;
    if s < slo - tol || s > shi + tol {
        out.push(format!("std |a| {s:.6} outside [{slo}, {shi}]"));
    }
    if s - m < -tol {
        out.push(format!("std |a| {s:.6} below mean |a| {m:.6}"));
    }
    let mut v = profile.v0;
    for (j, (x, sp)) in a.iter().zip(&profile.speeds).enumerate() {
        v += x;
        if (v - sp).abs() > 1e-9 * (1.0 + v.abs()) {
            out.push(format!("speed {j} is {sp}, integrates to {v}"));
            break;
        }
    }
    if let Some(sp) = profile.speeds.iter().find(|v| **v < -tol) {
        out.push(format!("negative speed {sp}"));
    }
    let v_target = step.d_step / step.t_step;
    let vbar = profile.speeds.iter().sum::<f64>() / n as f64;
    if (vbar - v_target).abs() >= stats.objective_threshold {
        out.push(format!("mean speed {vbar:.4} misses {v_target:.4} by Δ or more"));
    }
    if is_first && profile.v0 != 0.0 {
        out.push(format!("first step enters at {} m/s", profile.v0));
    }
    if is_last && profile.final_speed().abs() > tol {
        out.push(format!("last step ends at {} m/s", profile.final_speed()));
    }
    out
}

/// Solves one step. The entry speed is forced to zero on the first step; on
/// the last step zero-mean accelerations bring the car back to `v0`, which
/// must therefore be zero.
pub fn synthesize_step_profile(
    step: &RouteStep,
    v0: f64,
    is_first: bool,
    is_last: bool,
    mean_abs_range: (f64, f64),
    stats: &DrivingStats,
    rng_seed: u64,
) -> Result<StepProfile, KinematicsError> {
    stats.validate()?;
    let n = step_samples(step);
    if n < 2 || !(step.d_step > 0.0) {
        return Err(KinematicsError::InvalidStep(format!("t_step {} s, d_step {} m", step.t_step, step.d_step)));
    }
    let v0 = if is_first { 0.0 } else { v0 };
    if !(v0 >= 0.0 && v0.is_finite()) {
        return Err(KinematicsError::InvalidStep(format!("entry speed {v0}")));
    }
    if is_last && v0 != 0.0 {
        return Err(KinematicsError::InvalidStep("last step must enter at rest to end at rest".into()));
    }
    let v_target = step.d_step / step.t_step;
    let (lo, hi) = mean_abs_range;
    let (slo, shi) = stats.std_abs_bounds;

    let guard = 3.0 * MARGIN;
    let needed = required_mean_abs(n, v0, v_target);
    let m_goal = needed.max(lo + guard);
    let limit = (hi - guard).min(shi - 2.0 * guard);
    if m_goal > limit {
        return Err(KinematicsError::Infeasible { n, v_target, needed: m_goal, limit });
    }
    let s_goal = (STD_TO_MEAN * m_goal).clamp((slo + guard).max(m_goal + guard), shi - guard);

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut best_residual = f64::INFINITY;
    for attempt in 0..=stats.max_retries {
        let start = guess::initial_guess(
            &mut rng,
            &guess::GuessSpec { n, v0, v_target, mean_abs: m_goal, std_abs: s_goal, accel_cap: stats.accel_bounds.1.min(-stats.accel_bounds.0) },
        );
        let problem = solver::Problem {
            v0,
            v_target,
            mean_abs: (lo + MARGIN, hi - MARGIN),
            std_abs: (slo + MARGIN, shi - MARGIN),
            std_over_mean: MARGIN,
            accel: stats.accel_bounds,
            speed_floor: SPEED_FLOOR,
            anchor: &start,
            prox_weight: PROX_WEIGHT,
        };
        let accel = solver::solve(&problem, &start, stats.base_iterations << attempt);
        let profile = finish(accel, v0, v_target);
        best_residual = best_residual.min(profile.residual);
        if audit_profile(&profile, step, mean_abs_range, stats, is_first, is_last).is_empty() {
            return Ok(profile);
        }
    }
    Err(KinematicsError::NoSolution { attempts: stats.max_retries + 1, best_residual })
}

/// Integrates speeds; the last acceleration is recomputed so the final speed
/// equals `v0` exactly.
fn finish(mut accel: Vec<f64>, v0: f64, v_target: f64) -> StepProfile {
    let n = accel.len();
    let mut speeds = Vec::with_capacity(n);
    let mut v = v0;
    for x in &accel[..n - 1] {
        v += x;
        speeds.push(v);
    }
    accel[n - 1] = v0 - v;
    speeds.push(v0);
    let residual = (speeds.iter().sum::<f64>() / n as f64 - v_target).abs();
    StepProfile { accel, speeds, v0, residual }
}

/// Merges consecutive steps until each chunk can ramp from rest to its mean
/// speed and back with mean `|a|` at most `target_mean_abs`. A final chunk
/// still above `cap` has its duration stretched until it fits.
pub fn coalesce_steps(steps: &[RouteStep], target_mean_abs: f64, cap: f64) -> Vec<RouteStep> {
    let fits = |s: &RouteStep, limit: f64| {
        let n = step_samples(s);
        n >= MIN_STEP_SECONDS && required_mean_abs(n, 0.0, s.d_step / s.t_step) <= limit
    };
    let mut out: Vec<RouteStep> = Vec::new();
    let mut pending: Option<RouteStep> = None;
    for s in steps {
        let merged = match pending.take() {
            Some(p) => p.merge(s),
            None => s.clone(),
        };
        if fits(&merged, target_mean_abs) {
            out.push(merged);
        } else {
            pending = Some(merged);
        }
    }
    if let Some(rest) = pending {
        match out.pop() {
            Some(prev) => out.push(prev.merge(&rest)),
            None => out.push(rest),
        }
    }
    for s in &mut out {
        if !fits(s, cap) {
            // RAMP_COST·d/t² ≤ cap, with one spare second for the integer part
            let t_min = (RAMP_COST * s.d_step / cap).sqrt() + 1.0;
            s.t_step = s.t_step.max(t_min).max(MIN_STEP_SECONDS as f64 + 0.5);
        }
    }
    out
}

/// One fix at `start_time` for the entry state, then one per second of every
/// step. Positions follow the integrated speed, rescaled per step so each step
/// ends exactly at its polyline's last point.
pub fn assemble_drive_segment(steps: &[RouteStep], profiles: &[StepProfile], start_time: f64) -> Result<Vec<Fix>, KinematicsError> {
    if steps.is_empty() || steps.len() != profiles.len() {
        return Err(KinematicsError::Misaligned(format!("{} steps, {} profiles", steps.len(), profiles.len())));
    }
    for (k, (s, p)) in steps.iter().zip(profiles).enumerate() {
        if p.accel.len() != step_samples(s) || p.speeds.len() != p.accel.len() {
            return Err(KinematicsError::Misaligned(format!("step {k}: {} samples for t_step {}", p.accel.len(), s.t_step)));
        }
        if k > 0 && p.v0 != profiles[k - 1].final_speed() {
            return Err(KinematicsError::Misaligned(format!("step {k} enters at {} after leaving at {}", p.v0, profiles[k - 1].final_speed())));
        }
    }
    let mut fixes = vec![Fix { t: start_time, point: steps[0].geometry.first(), speed: profiles[0].v0, accel: 0.0 }];
    let mut t = start_time;
    for (s, p) in steps.iter().zip(profiles) {
        let length = s.geometry.total_length_m();
        let integrated: f64 = p.speeds.iter().sum();
        let mut covered = 0.0;
        for (j, (&v, &a)) in p.speeds.iter().zip(&p.accel).enumerate() {
            covered += v;
            t += 1.0;
            let along = if j + 1 == p.speeds.len() {
                length
            } else if integrated > 0.0 {
                (covered / integrated * length).min(length)
            } else {
                0.0
            };
            fixes.push(Fix { t, point: s.geometry.interpolate_along(along)?, speed: v, accel: a });
        }
    }
    Ok(fixes)
}

/// Straight walk at constant speed, one fix per second after `start_time`.
/// Takes `ceil(distance / walk_speed)` seconds; zero distance gives a single
/// fix at `start_time`.
pub fn synth_walk(from: &GeoPoint, to: &GeoPoint, start_time: f64, walk_speed: f64) -> Vec<Fix> {
    assert!(walk_speed > 0.0, "walk speed must be positive");
    let dist = haversine_distance(from, to);
    let secs = (dist / walk_speed).ceil() as usize;
    if secs == 0 {
        return vec![Fix { t: start_time, point: *from, speed: 0.0, accel: 0.0 }];
    }
    let speed = dist / secs as f64;
    (1..=secs)
        .map(|k| Fix {
            t: start_time + k as f64,
            point: if k == secs { *to } else { lerp(from, to, k as f64 / secs as f64) },
            speed,
            accel: 0.0,
        })
        .collect()
}

/// Independent zero-mean gaussian displacement per axis; timestamps untouched.
pub fn add_gps_noise(fixes: &[Fix], sigma_m: f64, rng_seed: u64) -> Vec<Fix> {
    assert!(sigma_m >= 0.0, "noise sigma must be nonnegative");
    if sigma_m == 0.0 {
        return fixes.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    fixes
        .iter()
        .map(|f| {
            let north: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_m;
            let east: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_m;
            Fix { point: f.point.offset_m(north, east), ..*f }
        })
        .collect()
}
