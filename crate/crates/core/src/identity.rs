//! Probabilistic user identities: states, attributes and the transition matrix.
//!
//! A day cycles through the significant states (Home, Work, and optionally a
//! second Work block after lunch). Transitional states hang off one of those
//! legs: they originate at a significant state and lead to the next one.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_distance, GeoPoint};
use crate::osm::{Poi, PoiKind};

pub type StateId = usize;

/// Last second of the day.
pub const DAY_END_S: f64 = 86_399.0;

pub const HOME: StateId = 0;
pub const ANCHOR: StateId = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentityError {
    #[error("no {kind} candidates for state {label:?}")]
    NoCandidates { label: String, kind: PoiKind },
    #[error("invalid identity config: {0}")]
    Config(String),
    #[error("home and work coincide; fuel round trip is zero")]
    ZeroRoundTrip,
    #[error("mileage and tank capacity must be positive")]
    NonPositiveFuel,
    #[error("transition structure invalid: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Significant,
    Transitional,
}

/// Arrival bounds in seconds of day, `earliest < latest`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalWindow {
    pub earliest: f64,
    pub latest: f64,
}

impl ArrivalWindow {
    pub const ANY: ArrivalWindow = ArrivalWindow { earliest: 0.0, latest: DAY_END_S };

    pub fn new(earliest: f64, latest: f64) -> Result<Self, IdentityError> {
        let w = ArrivalWindow { earliest, latest };
        w.validate()?;
        Ok(w)
    }

    pub fn hours(earliest_h: f64, latest_h: f64) -> Self {
        ArrivalWindow { earliest: earliest_h * 3600.0, latest: latest_h * 3600.0 }
    }

    fn validate(&self) -> Result<(), IdentityError> {
        let inside = |t: f64| (0.0..=DAY_END_S).contains(&t);
        if inside(self.earliest) && inside(self.latest) && self.earliest < self.latest {
            Ok(())
        } else {
            Err(IdentityError::Config(format!("arrival window ({}, {}) invalid", self.earliest, self.latest)))
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.earliest + self.latest)
    }
}

impl Default for ArrivalWindow {
    fn default() -> Self {
        Self::ANY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub id: StateId,
    pub label: String,
    pub kind: StateKind,
    pub poi_kind: PoiKind,
    pub location: GeoPoint,
    pub t_min_s: f64,
    pub arrival_window: ArrivalWindow,
    pub frequency_days: f64,
    pub occurrence_prob: f64,
    /// Significant state a transitional state is entered from.
    pub origin: Option<StateId>,
    /// For transitional states, the significant state they lead to; for
    /// significant states, the next significant state of the daily cycle.
    pub destination: Option<StateId>,
}

impl StateSpec {
    pub fn is_significant(&self) -> bool {
        self.kind == StateKind::Significant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub states: Vec<StateSpec>,
    /// Row-stochastic transition matrix indexed by state id.
    pub transitions: Vec<Vec<f64>>,
    pub weekday: bool,
    pub seed: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Identity {
    pub fn state(&self, id: StateId) -> &StateSpec {
        &self.states[id]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn successors(&self, id: StateId) -> impl Iterator<Item = (StateId, f64)> + '_ {
        self.transitions[id].iter().copied().enumerate().filter(|(_, p)| *p > 0.0)
    }
}

/// Which leg of the daily cycle a transitional state sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    /// Home to the anchor (Work).
    Outbound,
    /// Between the two Work blocks; forces the Work split.
    Midday,
    /// Last anchor block back Home.
    Return,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FrequencyRule {
    /// Visit once every `U(l, u)` workdays.
    Uniform { l: f64, u: f64 },
    /// Days of commuting before the tank falls below a quarter.
    Fuel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificantTemplate {
    pub label: String,
    pub poi_kind: PoiKind,
    pub t_min_s: f64,
    pub arrival_window: ArrivalWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionalTemplate {
    pub label: String,
    pub poi_kind: PoiKind,
    pub leg: Leg,
    pub t_min_s: f64,
    pub arrival_window: ArrivalWindow,
    pub frequency: FrequencyRule,
}

/// Labels and windows of the two Work blocks when lunch splits the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkSplit {
    pub afternoon_label: String,
    pub evening_label: String,
    pub evening_window: ArrivalWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityConfig {
    pub weekday: bool,
    pub workdays_per_year: f64,
    pub home: SignificantTemplate,
    pub anchor: SignificantTemplate,
    pub work_split: Option<WorkSplit>,
    pub transitional: Vec<TransitionalTemplate>,
    /// Fuel economy range in km per liter.
    pub mileage_km_per_l: (f64, f64),
    /// Tank capacity range in liters.
    pub tank_l: (f64, f64),
    /// Draw this many transitional templates at random; all when `None`.
    pub transitional_count: Option<usize>,
}

impl IdentityConfig {
    /// Home, Work, School, Gas Station, Lunch and Dinner.
    pub fn weekday() -> Self {
        Self {
            weekday: true,
            workdays_per_year: 250.0,
            home: SignificantTemplate {
                label: "Home".into(),
                poi_kind: PoiKind::Residential,
                t_min_s: 0.0,
                arrival_window: ArrivalWindow::hours(15.0, 22.5),
            },
            anchor: SignificantTemplate {
                label: "Work".into(),
                poi_kind: PoiKind::Work,
                t_min_s: 8.0 * 3600.0,
                arrival_window: ArrivalWindow::hours(7.5, 10.0),
            },
            work_split: Some(WorkSplit {
                afternoon_label: "Work (afternoon)".into(),
                evening_label: "Work (evening)".into(),
                evening_window: ArrivalWindow::hours(11.0, 16.0),
            }),
            transitional: vec![
                TransitionalTemplate {
                    label: "School".into(),
                    poi_kind: PoiKind::School,
                    leg: Leg::Outbound,
                    t_min_s: 300.0,
                    arrival_window: ArrivalWindow::hours(7.0, 8.5),
                    frequency: FrequencyRule::Uniform { l: 2.0, u: 10.0 },
                },
                TransitionalTemplate {
                    label: "Gas Station".into(),
                    poi_kind: PoiKind::GasStation,
                    leg: Leg::Outbound,
                    t_min_s: 300.0,
                    arrival_window: ArrivalWindow::ANY,
                    frequency: FrequencyRule::Fuel,
                },
                TransitionalTemplate {
                    label: "Lunch".into(),
                    poi_kind: PoiKind::Restaurant,
                    leg: Leg::Midday,
                    t_min_s: 1800.0,
                    arrival_window: ArrivalWindow::hours(11.5, 13.5),
                    frequency: FrequencyRule::Uniform { l: 1.0, u: 5.0 },
                },
                TransitionalTemplate {
                    label: "Dinner".into(),
                    poi_kind: PoiKind::Restaurant,
                    leg: Leg::Return,
                    t_min_s: 2700.0,
                    arrival_window: ArrivalWindow::hours(18.0, 21.0),
                    frequency: FrequencyRule::Uniform { l: 5.0, u: 20.0 },
                },
            ],
            mileage_km_per_l: (8.0, 18.0),
            tank_l: (40.0, 70.0),
            transitional_count: None,
        }
    }

    /// Home, Cinema and a Restaurant on the way back.
    pub fn weekend() -> Self {
        Self {
            weekday: false,
            workdays_per_year: 250.0,
            home: SignificantTemplate {
                label: "Home".into(),
                poi_kind: PoiKind::Residential,
                t_min_s: 0.0,
                arrival_window: ArrivalWindow::hours(12.0, 23.0),
            },
            anchor: SignificantTemplate {
                label: "Cinema".into(),
                poi_kind: PoiKind::Cinema,
                t_min_s: 2.0 * 3600.0,
                arrival_window: ArrivalWindow::hours(10.0, 20.0),
            },
            work_split: None,
            transitional: vec![TransitionalTemplate {
                label: "Dinner".into(),
                poi_kind: PoiKind::Restaurant,
                leg: Leg::Return,
                t_min_s: 2700.0,
                arrival_window: ArrivalWindow::hours(17.0, 22.0),
                frequency: FrequencyRule::Uniform { l: 1.0, u: 3.0 },
            }],
            mileage_km_per_l: (8.0, 18.0),
            tank_l: (40.0, 70.0),
            transitional_count: None,
        }
    }

    /// Home and Work only.
    pub fn two_state() -> Self {
        Self { work_split: None, transitional: Vec::new(), ..Self::weekday() }
    }

    pub fn validate(&self) -> Result<(), IdentityError> {
        if !(self.workdays_per_year > 0.0) {
            return Err(IdentityError::Config("workdays_per_year must be positive".into()));
        }
        for t in [&self.home, &self.anchor] {
            t.arrival_window.validate()?;
            if !(t.t_min_s >= 0.0) {
                return Err(IdentityError::Config(format!("{}: negative t_min", t.label)));
            }
        }
        if let Some(split) = &self.work_split {
            split.evening_window.validate()?;
        }
        for t in &self.transitional {
            t.arrival_window.validate()?;
            if !(t.t_min_s >= 0.0) {
                return Err(IdentityError::Config(format!("{}: negative t_min", t.label)));
            }
            if let FrequencyRule::Uniform { l, u } = t.frequency {
                if !(l >= 1.0 && u >= l) {
                    return Err(IdentityError::Config(format!("{}: frequency bounds need 1 <= l <= u", t.label)));
                }
            }
        }
        let (m_lo, m_hi) = self.mileage_km_per_l;
        let (c_lo, c_hi) = self.tank_l;
        if !(m_lo > 0.0 && m_hi >= m_lo && c_lo > 0.0 && c_hi >= c_lo) {
            return Err(IdentityError::NonPositiveFuel);
        }
        Ok(())
    }
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self::weekday()
    }
}

/// Days of home-work commuting before fuel falls below a quarter tank.
///
/// `mileage` is in km per liter and `capacity` in liters. Never less than one.
pub fn gas_frequency(mileage: f64, capacity: f64, home: &GeoPoint, work: &GeoPoint) -> Result<f64, IdentityError> {
    if !(mileage > 0.0 && capacity > 0.0) {
        return Err(IdentityError::NonPositiveFuel);
    }
    let round_trip_m = haversine_distance(home, work) + haversine_distance(work, home);
    if round_trip_m <= 0.0 {
        return Err(IdentityError::ZeroRoundTrip);
    }
    let days = (0.75 * mileage * capacity * 1000.0 / round_trip_m).floor();
    Ok(days.max(1.0))
}

/// Whether the connectivity rules permit a transition from `i` to `j`.
pub fn transition_allowed(states: &[StateSpec], i: StateId, j: StateId) -> bool {
    if i == j {
        return false;
    }
    let (qi, qj) = (&states[i], &states[j]);
    // significant origin of a transitional state
    if qi.is_significant() && !qj.is_significant() && qj.origin == Some(i) {
        return true;
    }
    // transitional state into its destination, or the significant cycle
    if qj.is_significant() && qi.destination == Some(j) {
        return true;
    }
    if !qi.is_significant() && !qj.is_significant() {
        if let (Some(si), Some(sj)) = (qi.origin, qj.origin) {
            if si == sj {
                let base = &states[si].location;
                return haversine_distance(base, &qi.location) < haversine_distance(base, &qj.location);
            }
        }
    }
    false
}

/// Builds the row-stochastic transition matrix. Returns warnings for rows
/// whose transitional mass exceeded one.
pub fn build_transitions(states: &[StateSpec]) -> Result<(Vec<Vec<f64>>, Vec<String>), IdentityError> {
    let s = states.len();
    if s < 2 || !states[HOME].is_significant() || !states[ANCHOR].is_significant() {
        return Err(IdentityError::Structure("states 0 and 1 must be significant".into()));
    }
    for st in states {
        let dangling = |x: Option<StateId>| x.is_some_and(|k| k >= s || !states[k].is_significant());
        if dangling(st.origin) || dangling(st.destination) {
            return Err(IdentityError::Structure(format!("{} references a non-significant state", st.label)));
        }
        if !st.is_significant() && (st.origin.is_none() || st.destination.is_none()) {
            return Err(IdentityError::Structure(format!("{} lacks origin or destination", st.label)));
        }
    }

    let mut warnings = Vec::new();
    let mut m = vec![vec![0.0; s]; s];
    for i in 0..s {
        for j in 0..s {
            if transition_allowed(states, i, j) && !(states[i].is_significant() && states[j].is_significant()) {
                m[i][j] = states[i].occurrence_prob * states[j].occurrence_prob;
            }
        }
    }
    for i in (0..s).filter(|&i| states[i].is_significant()) {
        let Some(next) = states[i].destination else { continue };
        let mass: f64 = m[i].iter().sum();
        let residual = 1.0 - mass;
        if residual < 0.0 {
            warnings.push(format!(
                "{}: transitional mass {mass:.4} exceeds 1; residual to {} clamped to 0",
                states[i].label, states[next].label
            ));
        }
        m[i][next] = residual.max(0.0);
    }
    for row in &mut m {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|p| *p /= total);
        }
    }
    Ok((m, warnings))
}

fn pick_uniform(rng: &mut ChaCha8Rng, pois: &[Poi], kind: PoiKind, label: &str) -> Result<GeoPoint, IdentityError> {
    let candidates: Vec<&Poi> = pois.iter().filter(|p| p.kind == kind).collect();
    candidates
        .choose(rng)
        .map(|p| p.location)
        .ok_or_else(|| IdentityError::NoCandidates { label: label.to_string(), kind })
}

/// Candidate minimizing the summed distance to `home` and `work`; first wins on ties.
pub fn nearest_to_both(pois: &[Poi], kind: PoiKind, home: &GeoPoint, work: &GeoPoint) -> Option<GeoPoint> {
    let mut best: Option<(f64, GeoPoint)> = None;
    for p in pois.iter().filter(|p| p.kind == kind) {
        let d = haversine_distance(&p.location, home) + haversine_distance(&p.location, work);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, p.location));
        }
    }
    best.map(|(_, loc)| loc)
}

fn draw_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Constructs a user's state machine; deterministic in `rng_seed`.
pub fn build_identity(pois: &[Poi], cfg: &IdentityConfig, rng_seed: u64) -> Result<Identity, IdentityError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let home_loc = pick_uniform(&mut rng, pois, cfg.home.poi_kind, &cfg.home.label)?;
    let anchor_loc = pick_uniform(&mut rng, pois, cfg.anchor.poi_kind, &cfg.anchor.label)?;

    let mut templates: Vec<&TransitionalTemplate> = cfg.transitional.iter().collect();
    if let Some(n) = cfg.transitional_count {
        if n < templates.len() {
            let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, templates.len(), n).into_vec();
            keep.sort_unstable();
            templates = keep.into_iter().map(|k| templates[k]).collect();
        }
    }
    let split = cfg.work_split.as_ref().filter(|_| templates.iter().any(|t| t.leg == Leg::Midday));

    let significant = |id, label: &str, t_min_s, arrival_window, location, destination| StateSpec {
        id,
        label: label.to_string(),
        kind: StateKind::Significant,
        poi_kind: if id == HOME { cfg.home.poi_kind } else { cfg.anchor.poi_kind },
        location,
        t_min_s,
        arrival_window,
        frequency_days: 1.0,
        occurrence_prob: 1.0,
        origin: None,
        destination: Some(destination),
    };

    let mut states = vec![significant(HOME, &cfg.home.label, cfg.home.t_min_s, cfg.home.arrival_window, home_loc, ANCHOR)];
    let evening = if let Some(split) = split {
        let half = 0.5 * cfg.anchor.t_min_s;
        states.push(significant(ANCHOR, &split.afternoon_label, half, cfg.anchor.arrival_window, anchor_loc, 2));
        states.push(significant(2, &split.evening_label, half, split.evening_window, anchor_loc, HOME));
        2
    } else {
        states.push(significant(ANCHOR, &cfg.anchor.label, cfg.anchor.t_min_s, cfg.anchor.arrival_window, anchor_loc, HOME));
        ANCHOR
    };

    for t in templates {
        let (origin, destination) = match t.leg {
            Leg::Outbound => (HOME, ANCHOR),
            Leg::Midday if split.is_some() => (ANCHOR, evening),
            Leg::Midday => unreachable!("midday templates force a split when one is configured"),
            Leg::Return => (evening, HOME),
        };
        let location = nearest_to_both(pois, t.poi_kind, &home_loc, &anchor_loc)
            .ok_or_else(|| IdentityError::NoCandidates { label: t.label.clone(), kind: t.poi_kind })?;
        let frequency_days = match t.frequency {
            FrequencyRule::Uniform { l, u } => draw_in(&mut rng, (l, u)),
            FrequencyRule::Fuel => {
                let m = draw_in(&mut rng, cfg.mileage_km_per_l);
                let c = draw_in(&mut rng, cfg.tank_l);
                gas_frequency(m, c, &home_loc, &anchor_loc)?
            }
        };
        let w = cfg.workdays_per_year;
        states.push(StateSpec {
            id: states.len(),
            label: t.label.clone(),
            kind: StateKind::Transitional,
            poi_kind: t.poi_kind,
            location,
            t_min_s: t.t_min_s,
            arrival_window: t.arrival_window,
            frequency_days,
            occurrence_prob: (w / frequency_days) / w,
            origin: Some(origin),
            destination: Some(destination),
        });
    }

    let (transitions, warnings) = build_transitions(&states)?;
    Ok(Identity { states, transitions, weekday: cfg.weekday, seed: rng_seed, warnings })
}
