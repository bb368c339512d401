//! One synthetic day end to end: route and schedule sampling, per-leg routing
//! and traffic, step profiles, walks and idle dwell, then GPS noise.
//!
//! Schedules are built from pessimistic transit estimates while the realized
//! legs use best-guess traffic at their actual departure. A leg that finishes
//! early parks at the destination's road vertex until the walk in can end at
//! the scheduled arrival. A leg that finishes late pushes the next departure
//! back so the minimum dwell still holds. Realized times are what the
//! trajectory reports.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::identity::{Identity, StateId, DAY_END_S};
use crate::kinematics::{
    add_gps_noise, assemble_drive_segment, coalesce_steps, draw_mean_abs_target, synth_walk, synthesize_step_profile,
    DrivingStats, Fix, KinematicsError, StepProfile,
};
use crate::osm::RoadGraph;
use crate::routing::RoutingError;
use crate::scheduler::{plan_leg, schedule_day, DaySchedule, SchedulerError, TransitTable, DEFAULT_N_CORNERS, WALK_SPEED_MPS};
use crate::traffic::{RouteStep, TrafficError, TrafficModel, TrafficProvider, TrafficQuery};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scheduling failed: {0}")]
    Schedule(#[from] SchedulerError),
    #[error("leg {from} -> {to}: routing failed: {source}")]
    Routing { from: String, to: String, source: RoutingError },
    #[error("leg {from} -> {to}: traffic provider failed: {source}")]
    Traffic { from: String, to: String, source: TrafficError },
    #[error("leg {from} -> {to}, step {step}: {source}")]
    Kinematics { from: String, to: String, step: usize, source: KinematicsError },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stats: DrivingStats,
    pub n_corners: usize,
    pub walk_speed_mps: f64,
    /// Spacing of stationary fixes while idle, s.
    pub idle_period_s: f64,
    pub gps_sigma_m: f64,
    /// Steps are merged until a stop-to-stop profile needs at most this mean `|a|`.
    pub coalesce_target: f64,
    /// Merged steps still needing more than this are stretched in time.
    pub coalesce_cap: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stats: DrivingStats::default(),
            n_corners: DEFAULT_N_CORNERS,
            walk_speed_mps: WALK_SPEED_MPS,
            idle_period_s: 60.0,
            gps_sigma_m: 3.0,
            coalesce_target: 0.35,
            coalesce_cap: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.stats.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        // stretched steps must stay clear of the statistic ceilings
        let hi = self.stats.mean_abs_bounds.1.min(self.stats.std_abs_bounds.1) - 0.01;
        if self.n_corners == 0
            || !(self.walk_speed_mps > 0.0)
            || !(self.idle_period_s >= 1.0)
            || !(self.gps_sigma_m >= 0.0)
            || !(self.coalesce_target > 0.0 && self.coalesce_target <= self.coalesce_cap && self.coalesce_cap < hi)
        {
            return Err(PipelineError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Walk,
    Drive,
    Idle,
}

/// Fixes `start..end` of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedVisit {
    pub state: StateId,
    pub label: String,
    /// Seconds of day.
    pub scheduled_arrival_s: f64,
    pub scheduled_departure_s: f64,
    pub arrival_s: f64,
    pub departure_s: f64,
}

/// The steps and accepted profiles behind one drive segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveDetail {
    pub label: String,
    pub mean_abs_range: (f64, f64),
    pub steps: Vec<RouteStep>,
    pub profiles: Vec<StepProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub day: NaiveDate,
    pub identity_seed: u64,
    pub fixes: Vec<Fix>,
    pub segments: Vec<Segment>,
    pub visits: Vec<RealizedVisit>,
    pub schedule: DaySchedule,
    pub drive_details: Vec<DriveDetail>,
}

impl Trajectory {
    pub fn segment_fixes(&self, seg: &Segment) -> &[Fix] {
        &self.fixes[seg.start..seg.end]
    }

    pub fn drives(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Drive)
    }

    pub fn duration_s(&self) -> f64 {
        match (self.fixes.first(), self.fixes.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Weekend identity on Saturdays and Sundays, weekday identity otherwise.
pub fn identity_for<'a>(date: NaiveDate, weekday: &'a Identity, weekend: &'a Identity) -> &'a Identity {
    if is_weekend(date) {
        weekend
    } else {
        weekday
    }
}

/// Unix seconds of 00:00 UTC on `date`.
pub fn day_start_unix(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp()
}

/// Collects fixes with their span tags; a fix at an existing timestamp
/// replaces the previous one.
struct Timeline {
    fixes: Vec<Fix>,
    tags: Vec<(SegmentKind, String)>,
}

impl Timeline {
    fn last_t(&self) -> f64 {
        self.fixes.last().map_or(f64::NEG_INFINITY, |f| f.t)
    }

    fn push(&mut self, fix: Fix, kind: SegmentKind, label: &str) {
        if fix.t <= self.last_t() {
            debug_assert!(fix.t == self.last_t(), "fixes out of order");
            self.fixes.pop();
            self.tags.pop();
        }
        self.fixes.push(fix);
        self.tags.push((kind, label.to_owned()));
    }

    fn extend(&mut self, fixes: impl IntoIterator<Item = Fix>, kind: SegmentKind, label: &str) {
        for f in fixes {
            self.push(f, kind, label);
        }
    }

    /// Stationary fixes every `period` seconds after the last fix, plus one at `until`.
    fn idle(&mut self, at: GeoPoint, until: f64, period: f64, label: &str) {
        let stationary = |t| Fix { t, point: at, speed: 0.0, accel: 0.0 };
        let mut t = self.last_t();
        if !t.is_finite() {
            self.push(stationary(until), SegmentKind::Idle, label);
            return;
        }
        while t + period < until {
            t += period;
            self.push(stationary(t), SegmentKind::Idle, label);
        }
        if until > self.last_t() {
            self.push(stationary(until), SegmentKind::Idle, label);
        }
    }

    fn walk(&mut self, from: &GeoPoint, to: &GeoPoint, speed: f64, label: &str) {
        if from == to {
            return;
        }
        let start = self.last_t();
        self.extend(synth_walk(from, to, start, speed), SegmentKind::Walk, label);
    }

    fn segments(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::new();
        for (i, (kind, label)) in self.tags.iter().enumerate() {
            match out.last_mut() {
                Some(s) if s.kind == *kind && s.label == *label => s.end = i + 1,
                _ => out.push(Segment { kind: *kind, start: i, end: i + 1, label: label.clone() }),
            }
        }
        out
    }
}

/// Synthesizes the full day for `identity` on `date`.
pub fn synthesize_day(
    identity: &Identity,
    date: NaiveDate,
    graph: &RoadGraph,
    provider: &dyn TrafficProvider,
    cfg: &PipelineConfig,
    rng_seed: u64,
) -> Result<Trajectory, PipelineError> {
    cfg.validate()?;
    let day0 = day_start_unix(date) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut transits = TransitTable::new(provider, graph, day0 as i64);
    let schedule = schedule_day(identity, &mut transits, rng.random(), cfg.n_corners)?;
    let noise_seed: u64 = rng.random();

    let route = &schedule.route.states;
    let mut tl = Timeline { fixes: Vec::new(), tags: Vec::new() };
    let mut visits = Vec::with_capacity(route.len());
    let mut drive_details = Vec::new();
    let first = identity.state(route[0]);
    tl.idle(first.location, day0, cfg.idle_period_s, &visit_label(0, &first.label));
    let mut arrival = day0;

    for k in 0..route.len() {
        let here = identity.state(route[k]);
        let planned = schedule.times[k];
        let label = visit_label(k, &here.label);
        let departure = if k + 1 == route.len() {
            (day0 + DAY_END_S).max(arrival)
        } else {
            (day0 + planned.departure_s).max(arrival + here.t_min_s).ceil()
        };
        tl.idle(here.location, departure, cfg.idle_period_s, &label);
        visits.push(RealizedVisit {
            state: here.id,
            label: here.label.clone(),
            scheduled_arrival_s: planned.arrival_s,
            scheduled_departure_s: planned.departure_s,
            arrival_s: arrival - day0,
            departure_s: departure - day0,
        });
        if k + 1 == route.len() {
            break;
        }

        let there = identity.state(route[k + 1]);
        let leg = format!("leg {k}: {} -> {}", here.label, there.label);
        let routing = |source| PipelineError::Routing { from: here.label.clone(), to: there.label.clone(), source };
        let plan = plan_leg(graph, &here.location, &there.location).map_err(routing)?;
        let src = graph.vertex(plan.src_vertex).expect("planned vertex exists");
        let dst = graph.vertex(plan.dst_vertex).expect("planned vertex exists");

        tl.walk(&here.location, &src, cfg.walk_speed_mps, &leg);
        if plan.path.is_some() {
            let start = tl.last_t();
            let query = TrafficQuery { waypoints: plan.waypoints.clone(), departure: start as i64, model: TrafficModel::BestGuess };
            let steps = provider
                .get_route(&query)
                .map_err(|source| PipelineError::Traffic { from: here.label.clone(), to: there.label.clone(), source })?;
            let steps = coalesce_steps(&steps, cfg.coalesce_target, cfg.coalesce_cap);
            let range = draw_mean_abs_target(&cfg.stats, &mut rng);
            let kin = |step, source| PipelineError::Kinematics { from: here.label.clone(), to: there.label.clone(), step, source };
            let mut profiles = Vec::with_capacity(steps.len());
            let mut v0 = 0.0;
            for (i, step) in steps.iter().enumerate() {
                let p = synthesize_step_profile(step, v0, i == 0, i + 1 == steps.len(), range, &cfg.stats, rng.random())
                    .map_err(|e| kin(i, e))?;
                v0 = p.final_speed();
                profiles.push(p);
            }
            let fixes = assemble_drive_segment(&steps, &profiles, start).map_err(|e| kin(0, e))?;
            tl.extend(fixes, SegmentKind::Drive, &leg);
            drive_details.push(DriveDetail { label: leg.clone(), mean_abs_range: range, steps, profiles });
        }
        // park until the walk in can finish on schedule
        let walk_in = plan.walk_in_s;
        let scheduled = (day0 + schedule.times[k + 1].arrival_s).round();
        if tl.last_t() + walk_in < scheduled {
            tl.idle(dst, scheduled - walk_in, cfg.idle_period_s, &leg);
        }
        tl.walk(&dst, &there.location, cfg.walk_speed_mps, &leg);
        arrival = tl.last_t();
    }

    let segments = tl.segments();
    let fixes = add_gps_noise(&tl.fixes, cfg.gps_sigma_m, noise_seed);
    Ok(Trajectory { day: date, identity_seed: identity.seed, fixes, segments, visits, schedule, drive_details })
}

fn visit_label(k: usize, state: &str) -> String {
    format!("visit {k}: {state}")
}
