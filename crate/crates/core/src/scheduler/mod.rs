//! Day routes sampled from the identity's state machine, and schedules drawn
//! from the polytope of feasible arrival/departure times.
//!
//! A schedule is a random convex combination of LP corners, each corner the
//! optimum of the schedule program under a random objective.

pub mod lp;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_distance, GeoPoint};
use crate::identity::{Identity, StateId, StateSpec, ANCHOR, DAY_END_S, HOME};
use crate::osm::{RoadGraph, VertexId};
use crate::routing::{fastest_path, nearest_vertex, split_waypoints, PathResult, RoutingError, DEFAULT_MAX_WAYPOINTS};
use crate::traffic::{TrafficError, TrafficModel, TrafficProvider, TrafficQuery};

pub use lp::{solve_lp, Constraint, LinearProgram, LpError, LpSolution, Relation};

pub const DEFAULT_MAX_ROUTE_LEN: usize = 16;
pub const DEFAULT_N_CORNERS: usize = 5;
/// Extra attempts after the first when a route is too long or unschedulable.
pub const MAX_RESAMPLES: usize = 8;
pub const WALK_SPEED_MPS: f64 = 1.4;
/// Tolerance of the schedule audit, in seconds.
pub const AUDIT_TOL_S: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("state {0} has no outgoing transitions")]
    DeadState(StateId),
    #[error("no route of at most {max_len} states after {attempts} attempts")]
    RouteTooLong { max_len: usize, attempts: usize },
    #[error("invalid day route: {0}")]
    InvalidRoute(String),
    #[error("schedule infeasible for route {route:?}: {source}")]
    Infeasible { route: Vec<String>, source: LpError },
    #[error("schedule audit failed: {}", .0.join("; "))]
    Audit(Vec<String>),
    #[error("n_corners must be at least 1")]
    NoCorners,
    #[error("leg {from} -> {to}: {source}")]
    Routing { from: String, to: String, source: RoutingError },
    #[error("leg {from} -> {to}: {source}")]
    Traffic { from: String, to: String, source: TrafficError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRoute {
    pub states: Vec<StateId>,
}

impl DayRoute {
    pub fn validate(&self, identity: &Identity, max_len: usize) -> Result<(), SchedulerError> {
        let s = &self.states;
        if s.len() < 2 || s[0] != HOME || s[s.len() - 1] != HOME {
            return Err(SchedulerError::InvalidRoute(format!("{s:?} must start and end at home")));
        }
        if !s.contains(&ANCHOR) {
            return Err(SchedulerError::InvalidRoute(format!("{s:?} skips the anchor state")));
        }
        if s.len() > max_len {
            return Err(SchedulerError::InvalidRoute(format!("{} states exceed {max_len}", s.len())));
        }
        if let Some(w) = s.windows(2).find(|w| w[0] >= identity.len() || w[1] >= identity.len() || identity.transitions[w[0]][w[1]] <= 0.0) {
            return Err(SchedulerError::InvalidRoute(format!("transition {} -> {} has zero probability", w[0], w[1])));
        }
        Ok(())
    }

    pub fn labels(&self, identity: &Identity) -> Vec<String> {
        self.states.iter().map(|&s| identity.state(s).label.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisitTimes {
    pub arrival_s: f64,
    pub departure_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySchedule {
    pub route: DayRoute,
    /// Seconds of day, one entry per visit.
    pub times: Vec<VisitTimes>,
    /// Transit time of each leg; `times.len() - 1` entries.
    pub transit_times: Vec<f64>,
}

/// Successor whose cumulative bracket `(cum(j-1), cum(j)]` holds `draw`.
pub fn sample_next_state(identity: &Identity, current: StateId, draw: f64) -> Result<StateId, SchedulerError> {
    let mut cum = 0.0;
    let mut last = None;
    for (j, p) in identity.successors(current) {
        cum += p;
        last = Some(j);
        if draw <= cum {
            return Ok(j);
        }
    }
    // rounding can leave the final cumulative a hair below one
    last.ok_or(SchedulerError::DeadState(current))
}

pub fn sample_day_route(identity: &Identity, rng_seed: u64) -> Result<DayRoute, SchedulerError> {
    sample_day_route_with(identity, rng_seed, DEFAULT_MAX_ROUTE_LEN)
}

pub fn sample_day_route_with(identity: &Identity, rng_seed: u64, max_len: usize) -> Result<DayRoute, SchedulerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 0..=MAX_RESAMPLES {
        let mut states = vec![HOME];
        let mut current = HOME;
        while states.len() <= max_len {
            current = sample_next_state(identity, current, rng.random::<f64>())?;
            states.push(current);
            if current == HOME {
                break;
            }
        }
        if current == HOME && states.len() <= max_len {
            return Ok(DayRoute { states });
        }
    }
    Err(SchedulerError::RouteTooLong { max_len, attempts: MAX_RESAMPLES + 1 })
}

/// Walk and drive decomposition of the trip between two locations.
#[derive(Debug, Clone, PartialEq)]
pub struct LegPlan {
    pub src_vertex: VertexId,
    pub dst_vertex: VertexId,
    /// `None` when both ends snap to the same vertex.
    pub path: Option<PathResult>,
    pub waypoints: Vec<GeoPoint>,
    pub walk_out_s: f64,
    pub walk_in_s: f64,
}

pub fn walk_time_s(from: &GeoPoint, to: &GeoPoint) -> f64 {
    (haversine_distance(from, to) / WALK_SPEED_MPS).ceil()
}

pub fn plan_leg(graph: &RoadGraph, from: &GeoPoint, to: &GeoPoint) -> Result<LegPlan, RoutingError> {
    let src_vertex = nearest_vertex(graph, from)?;
    let dst_vertex = nearest_vertex(graph, to)?;
    let src_loc = graph.vertex(src_vertex).expect("nearest vertex exists");
    let dst_loc = graph.vertex(dst_vertex).expect("nearest vertex exists");
    let (path, waypoints) = if src_vertex == dst_vertex {
        (None, Vec::new())
    } else {
        let path = fastest_path(graph, src_vertex, dst_vertex)?;
        let waypoints = split_waypoints(&path, graph, DEFAULT_MAX_WAYPOINTS);
        (Some(path), waypoints)
    };
    Ok(LegPlan { src_vertex, dst_vertex, path, waypoints, walk_out_s: walk_time_s(from, &src_loc), walk_in_s: walk_time_s(&dst_loc, to) })
}

/// Door-to-door transit estimate under the pessimistic model, departing at
/// the midpoint of `from`'s arrival window on the day starting at `day_start_unix`.
pub fn transit_time_pessimistic(
    provider: &dyn TrafficProvider,
    from: &StateSpec,
    to: &StateSpec,
    graph: &RoadGraph,
    day_start_unix: i64,
) -> Result<f64, SchedulerError> {
    let routing = |source| SchedulerError::Routing { from: from.label.clone(), to: to.label.clone(), source };
    let plan = plan_leg(graph, &from.location, &to.location).map_err(routing)?;
    let mut total = plan.walk_out_s + plan.walk_in_s;
    if plan.path.is_some() {
        let q = TrafficQuery {
            waypoints: plan.waypoints.clone(),
            departure: day_start_unix + from.arrival_window.midpoint().round() as i64,
            model: TrafficModel::Pessimistic,
        };
        let steps = provider
            .get_route(&q)
            .map_err(|source| SchedulerError::Traffic { from: from.label.clone(), to: to.label.clone(), source })?;
        total += steps.iter().map(|s| s.t_step).sum::<f64>();
    }
    Ok(total)
}

/// Memoized pessimistic transit times per ordered state pair.
pub struct TransitTable<'a> {
    provider: &'a dyn TrafficProvider,
    graph: &'a RoadGraph,
    day_start_unix: i64,
    memo: BTreeMap<(StateId, StateId), f64>,
}

impl<'a> TransitTable<'a> {
    pub fn new(provider: &'a dyn TrafficProvider, graph: &'a RoadGraph, day_start_unix: i64) -> Self {
        Self { provider, graph, day_start_unix, memo: BTreeMap::new() }
    }

    pub fn get(&mut self, identity: &Identity, from: StateId, to: StateId) -> Result<f64, SchedulerError> {
        if let Some(&t) = self.memo.get(&(from, to)) {
            return Ok(t);
        }
        let t = transit_time_pessimistic(self.provider, identity.state(from), identity.state(to), self.graph, self.day_start_unix)?;
        self.memo.insert((from, to), t);
        Ok(t)
    }

    pub fn for_route(&mut self, identity: &Identity, route: &DayRoute) -> Result<Vec<f64>, SchedulerError> {
        route.states.windows(2).map(|w| self.get(identity, w[0], w[1])).collect()
    }
}

fn arrival_var(k: usize) -> usize {
    2 * k
}

fn departure_var(k: usize) -> usize {
    2 * k + 1
}

/// Schedule program over `(t^a_k, t^d_k)` per visit. The first visit arrives at
/// midnight, the last departs at the end of the day, and every later visit must
/// arrive strictly inside its window (one second past the earliest bound).
pub fn build_schedule_lp(route: &DayRoute, identity: &Identity, transits: &[f64], coeffs: &[f64]) -> LinearProgram {
    let n = route.states.len();
    assert_eq!(transits.len() + 1, n, "one transit per leg");
    assert_eq!(coeffs.len(), n, "one objective coefficient per visit");
    let mut lp = LinearProgram::new(2 * n);
    lp.upper = vec![DAY_END_S; 2 * n];
    for (k, &c) in coeffs.iter().enumerate() {
        lp.objective[arrival_var(k)] = c;
        lp.objective[departure_var(k)] = c;
    }
    lp.add_terms(&[(arrival_var(0), 1.0)], Relation::Eq, 0.0, "day start");
    lp.add_terms(&[(departure_var(n - 1), 1.0)], Relation::Eq, DAY_END_S, "day end");
    for (k, &sid) in route.states.iter().enumerate() {
        let st = identity.state(sid);
        lp.add_terms(
            &[(departure_var(k), 1.0), (arrival_var(k), -1.0)],
            Relation::Ge,
            st.t_min_s,
            format!("dwell at {} (visit {k})", st.label),
        );
        if k > 0 {
            let w = st.arrival_window;
            lp.add_terms(&[(arrival_var(k), 1.0)], Relation::Ge, w.earliest + 1.0, format!("earliest arrival at {} (visit {k})", st.label));
            lp.add_terms(&[(arrival_var(k), 1.0)], Relation::Le, w.latest, format!("latest arrival at {} (visit {k})", st.label));
            lp.add_terms(
                &[(arrival_var(k), 1.0), (departure_var(k - 1), -1.0)],
                Relation::Eq,
                transits[k - 1],
                format!("transit into {} (visit {k})", st.label),
            );
        }
    }
    lp
}

/// Every constraint a schedule must satisfy; returns the violations.
pub fn audit_schedule(schedule: &DaySchedule, identity: &Identity) -> Vec<String> {
    let mut out = Vec::new();
    let n = schedule.route.states.len();
    if schedule.times.len() != n || schedule.transit_times.len() + 1 != n {
        out.push(format!("{} visits, {} time pairs, {} transits", n, schedule.times.len(), schedule.transit_times.len()));
        return out;
    }
    let tol = AUDIT_TOL_S;
    for (k, (&sid, t)) in schedule.route.states.iter().zip(&schedule.times).enumerate() {
        let st = identity.state(sid);
        for (name, v) in [("arrival", t.arrival_s), ("departure", t.departure_s)] {
            if !(v >= -tol && v <= DAY_END_S + tol) {
                out.push(format!("visit {k} {name} {v} outside the day"));
            }
        }
        if t.departure_s - t.arrival_s < st.t_min_s - tol {
            out.push(format!("visit {k} dwell {} below {}", t.departure_s - t.arrival_s, st.t_min_s));
        }
        if k > 0 {
            let w = st.arrival_window;
            if t.arrival_s < w.earliest + 1.0 - tol || t.arrival_s > w.latest + tol {
                out.push(format!("visit {k} arrival {} outside ({}, {}]", t.arrival_s, w.earliest, w.latest));
            }
            let gap = t.arrival_s - schedule.times[k - 1].departure_s;
            if (gap - schedule.transit_times[k - 1]).abs() > tol {
                out.push(format!("visit {k} transit {gap} differs from {}", schedule.transit_times[k - 1]));
            }
        }
    }
    if schedule.times[0].arrival_s.abs() > tol {
        out.push("first arrival is not midnight".into());
    }
    if (schedule.times[n - 1].departure_s - DAY_END_S).abs() > tol {
        out.push("last departure is not the end of the day".into());
    }
    out
}

/// Convex combination `Σ r_i C_i`.
pub fn mix_corners(corners: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    assert_eq!(corners.len(), weights.len());
    let mut out = vec![0.0; corners[0].len()];
    for (c, &r) in corners.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(c) {
            *o += r * v;
        }
    }
    out
}

/// Positive weights summing to one, from normalized exponential variates.
fn simplex_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|e| e / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

pub fn sample_schedule(
    route: &DayRoute,
    identity: &Identity,
    transits: &[f64],
    rng_seed: u64,
    n_corners: usize,
) -> Result<DaySchedule, SchedulerError> {
    if n_corners == 0 {
        return Err(SchedulerError::NoCorners);
    }
    route.validate(identity, usize::MAX)?;
    if transits.len() + 1 != route.states.len() {
        return Err(SchedulerError::InvalidRoute(format!("{} transits for {} visits", transits.len(), route.states.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = route.states.len();
    let mut corners = Vec::with_capacity(n_corners);
    for _ in 0..n_corners {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lp = build_schedule_lp(route, identity, transits, &coeffs);
        let sol = solve_lp(&lp).map_err(|source| SchedulerError::Infeasible { route: route.labels(identity), source })?;
        corners.push(sol.x);
    }
    let weights = simplex_weights(&mut rng, n_corners);
    let x = mix_corners(&corners, &weights);
    let schedule = DaySchedule {
        route: route.clone(),
        times: (0..n).map(|k| VisitTimes { arrival_s: x[arrival_var(k)], departure_s: x[departure_var(k)] }).collect(),
        transit_times: transits.to_vec(),
    };
    let violations = audit_schedule(&schedule, identity);
    if violations.is_empty() {
        Ok(schedule)
    } else {
        Err(SchedulerError::Audit(violations))
    }
}

/// Samples a route and a schedule for it, resampling the route when the
/// schedule program is infeasible.
pub fn schedule_day(
    identity: &Identity,
    transits: &mut TransitTable<'_>,
    rng_seed: u64,
    n_corners: usize,
) -> Result<DaySchedule, SchedulerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut last_err = None;
    for _ in 0..=MAX_RESAMPLES {
        let route = sample_day_route(identity, rng.random())?;
        let legs = transits.for_route(identity, &route)?;
        match sample_schedule(&route, identity, &legs, rng.random(), n_corners) {
            Ok(s) => return Ok(s),
            Err(e @ SchedulerError::Infeasible { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{ArrivalWindow, StateKind};
    use crate::osm::PoiKind;

    fn state(id: StateId, label: &str, kind: StateKind, t_min_s: f64, window: ArrivalWindow) -> StateSpec {
        StateSpec {
            id,
            label: label.into(),
            kind,
            poi_kind: PoiKind::Residential,
            location: GeoPoint::new(0.0, id as f64 * 0.01).unwrap(),
            t_min_s,
            arrival_window: window,
            frequency_days: 1.0,
            occurrence_prob: 1.0,
            origin: None,
            destination: None,
        }
    }

    /// Hand-built identity whose Home row is (0.78, 0.12, 0.10).
    fn branching() -> Identity {
        let states = vec![
            state(0, "Home", StateKind::Significant, 0.0, ArrivalWindow::hours(15.0, 23.0)),
            state(1, "Work", StateKind::Significant, 8.0 * 3600.0, ArrivalWindow::hours(7.0, 10.0)),
            state(2, "School", StateKind::Transitional, 300.0, ArrivalWindow::hours(6.5, 9.0)),
            state(3, "Gas", StateKind::Transitional, 300.0, ArrivalWindow::ANY),
        ];
        let transitions = vec![
            vec![0.0, 0.78, 0.12, 0.10],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.5, 0.0],
        ];
        Identity { states, transitions, weekday: true, seed: 0, warnings: Vec::new() }
    }

    #[test]
    fn bracketing_rule() {
        let id = branching();
        assert_eq!(sample_next_state(&id, 0, 0.85).unwrap(), 2);
        assert_eq!(sample_next_state(&id, 0, 0.78).unwrap(), 1);
        assert_eq!(sample_next_state(&id, 0, 0.0).unwrap(), 1);
        assert_eq!(sample_next_state(&id, 0, 1.0).unwrap(), 3);
        assert_eq!(sample_next_state(&id, 1, 0.3).unwrap(), 0);
    }

    #[test]
    fn dead_state_is_an_error() {
        let mut id = branching();
        id.transitions[1] = vec![0.0; 4];
        assert_eq!(sample_next_state(&id, 1, 0.5), Err(SchedulerError::DeadState(1)));
    }

    #[test]
    fn empirical_frequencies_match_row() {
        let id = branching();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_next_state(&id, 0, rng.random::<f64>()).unwrap()] += 1;
        }
        for (j, &p) in id.transitions[0].iter().enumerate() {
            let f = counts[j] as f64 / draws as f64;
            assert!((f - p).abs() <= 0.02, "entry {j}: {f} vs {p}");
        }
    }

    #[test]
    fn routes_are_valid_and_deterministic() {
        let id = branching();
        for seed in 0..200 {
            let r = sample_day_route(&id, seed).unwrap();
            r.validate(&id, DEFAULT_MAX_ROUTE_LEN).unwrap();
            assert_eq!(r, sample_day_route(&id, seed).unwrap());
        }
    }

    #[test]
    fn looping_machine_gives_up() {
        let mut id = branching();
        // Gas and School bounce between each other forever
        id.transitions[2] = vec![0.0, 0.0, 0.0, 1.0];
        id.transitions[3] = vec![0.0, 0.0, 1.0, 0.0];
        id.transitions[0] = vec![0.0, 0.0, 0.0, 1.0];
        assert!(matches!(sample_day_route(&id, 1), Err(SchedulerError::RouteTooLong { .. })));
    }

    fn home_work() -> (Identity, DayRoute, Vec<f64>) {
        let states = vec![
            state(0, "Home", StateKind::Significant, 0.0, ArrivalWindow::ANY),
            state(1, "Work", StateKind::Significant, 8.0 * 3600.0, ArrivalWindow::hours(8.0, 9.0)),
        ];
        let id = Identity { states, transitions: vec![vec![0.0, 1.0], vec![1.0, 0.0]], weekday: true, seed: 0, warnings: Vec::new() };
        (id, DayRoute { states: vec![0, 1, 0] }, vec![1800.0, 1800.0])
    }

    #[test]
    fn home_work_corner_is_feasible_and_tight() {
        let (id, route, transits) = home_work();
        let lp = build_schedule_lp(&route, &id, &transits, &[0.3, -0.7, 0.2]);
        let sol = solve_lp(&lp).unwrap();
        assert!(lp.violations(&sol.x, 1e-6).is_empty());
        let tight = lp.constraints.iter().filter(|c| {
            let lhs: f64 = c.coeffs.iter().zip(&sol.x).map(|(a, v)| a * v).sum();
            c.relation != Relation::Eq && (lhs - c.rhs).abs() < 1e-6
        });
        assert!(tight.count() >= 1);
    }

    #[test]
    fn inverted_window_is_infeasible() {
        let (mut id, route, transits) = home_work();
        id.states[1].arrival_window = ArrivalWindow { earliest: 9.0 * 3600.0, latest: 8.0 * 3600.0 };
        let err = sample_schedule(&route, &id, &transits, 1, 3).unwrap_err();
        match err {
            SchedulerError::Infeasible { source: LpError::Infeasible { violated }, .. } => assert!(!violated.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_corner_is_the_corner() {
        let (id, route, transits) = home_work();
        let s = sample_schedule(&route, &id, &transits, 5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coeffs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let corner = solve_lp(&build_schedule_lp(&route, &id, &transits, &coeffs)).unwrap().x;
        let flat: Vec<f64> = s.times.iter().flat_map(|t| [t.arrival_s, t.departure_s]).collect();
        assert_eq!(flat, corner);
    }

    #[test]
    fn midpoint_of_two_corners_is_feasible() {
        let (id, route, transits) = home_work();
        let a = solve_lp(&build_schedule_lp(&route, &id, &transits, &[1.0, 1.0, 1.0])).unwrap().x;
        let b = solve_lp(&build_schedule_lp(&route, &id, &transits, &[-1.0, -1.0, -1.0])).unwrap().x;
        let m = mix_corners(&[a.clone(), b.clone()], &[0.5, 0.5]);
        for i in 0..m.len() {
            assert_eq!(m[i], 0.5 * a[i] + 0.5 * b[i]);
        }
        let schedule = DaySchedule {
            route: route.clone(),
            times: (0..3).map(|k| VisitTimes { arrival_s: m[2 * k], departure_s: m[2 * k + 1] }).collect(),
            transit_times: transits.clone(),
        };
        assert!(audit_schedule(&schedule, &id).is_empty());
    }

    #[test]
    fn seeded_schedules_pass_audit_and_differ() {
        let (id, route, transits) = home_work();
        let mut seen = Vec::new();
        for seed in 0..100 {
            let s = sample_schedule(&route, &id, &transits, seed, DEFAULT_N_CORNERS).unwrap();
            assert!(audit_schedule(&s, &id).is_empty());
            seen.push(s.times);
        }
        seen.sort_by(|a, b| a[1].arrival_s.total_cmp(&b[1].arrival_s));
        seen.dedup();
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn audit_flags_broken_transit() {
        let (id, route, transits) = home_work();
        let mut s = sample_schedule(&route, &id, &transits, 3, 2).unwrap();
        s.times[1].arrival_s += 10.0;
        assert!(!audit_schedule(&s, &id).is_empty());
    }
}
