use crate::osm::RoadGraph;
use crate::routing::{fastest_path, nearest_vertex};

use super::{RouteStep, TrafficError, TrafficModel, TrafficProvider, TrafficQuery};

/// Extra slowdown applied by the pessimistic model.
pub const PESSIMISTIC_FACTOR: f64 = 1.2;

/// Fixed rush-hour schedule keyed on the UTC clock time of departure.
pub fn congestion_factor(seconds_of_day: i64) -> f64 {
    let h = seconds_of_day.rem_euclid(86_400) as f64 / 3600.0;
    if (7.0..10.0).contains(&h) {
        1.5
    } else if (16.0..19.0).contains(&h) {
        1.4
    } else {
        1.0
    }
}

/// One step per fastest path between consecutive waypoints.
pub fn offline_route(graph: &RoadGraph, q: &TrafficQuery) -> Result<Vec<RouteStep>, TrafficError> {
    q.validate(0)?;
    let mut factor = congestion_factor(q.departure);
    if q.model == TrafficModel::Pessimistic {
        factor *= PESSIMISTIC_FACTOR;
    }
    let snapped = q
        .waypoints
        .iter()
        .map(|p| nearest_vertex(graph, p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TrafficError::NoRoute(e.to_string()))?;
    let mut steps = Vec::new();
    for w in snapped.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        let path = fastest_path(graph, w[0], w[1]).map_err(|e| TrafficError::NoRoute(e.to_string()))?;
        let base: f64 = path.edge_indices.iter().map(|&e| graph.edge(e).length_m / graph.edge(e).speed_limit_mps).sum();
        steps.push(RouteStep { geometry: path.geometry, d_step: path.total_length_m, t_step: base * factor });
    }
    if steps.is_empty() {
        return Err(TrafficError::NoRoute("all waypoints snap to one vertex".into()));
    }
    Ok(steps)
}

/// Deterministic provider over a local road graph.
#[derive(Debug, Clone, Copy)]
pub struct OfflineProvider<'g> {
    graph: &'g RoadGraph,
}

impl<'g> OfflineProvider<'g> {
    pub fn new(graph: &'g RoadGraph) -> Self {
        Self { graph }
    }
}

impl TrafficProvider for OfflineProvider<'_> {
    fn get_route(&self, query: &TrafficQuery) -> Result<Vec<RouteStep>, TrafficError> {
        offline_route(self.graph, query)
    }
}
