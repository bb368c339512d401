//! Fastest paths over the road graph and waypoint extraction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::geo::{haversine_distance, GeoPoint, Polyline};
use crate::osm::{RoadGraph, VertexId};

pub const DEFAULT_TURN_THRESHOLD_DEG: f64 = 30.0;
pub const DEFAULT_MAX_WAYPOINTS: usize = 23;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("graph has no vertices")]
    EmptyGraph,
    #[error("vertex {0} not in graph")]
    UnknownVertex(VertexId),
    #[error("no route from {src} to {dst}")]
    NoRoute { src: VertexId, dst: VertexId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub vertex_ids: Vec<VertexId>,
    /// Edge index used between consecutive vertices.
    pub edge_indices: Vec<usize>,
    pub geometry: Polyline,
    pub total_time_s: f64,
    pub total_length_m: f64,
}

/// Vertex closest to `p`; the smallest id wins ties.
pub fn nearest_vertex(graph: &RoadGraph, p: &GeoPoint) -> Result<VertexId, RoutingError> {
    let mut best: Option<(f64, VertexId)> = None;
    for (&id, q) in graph.vertices() {
        let d = haversine_distance(p, q);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, id));
        }
    }
    best.map(|(_, id)| id).ok_or(RoutingError::EmptyGraph)
}

#[derive(PartialEq)]
struct Queued {
    time: f64,
    vertex: VertexId,
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, vertex)
        other.time.total_cmp(&self.time).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn trace(pred: &BTreeMap<VertexId, (VertexId, usize)>, src: VertexId, v: VertexId) -> Vec<VertexId> {
    let mut path = vec![v];
    let mut cur = v;
    while cur != src {
        cur = pred[&cur].0;
        path.push(cur);
    }
    path.reverse();
    path
}

/// Dijkstra on edge travel times. Among equally fast paths the one with the
/// lexicographically smallest vertex-id sequence is returned.
pub fn fastest_path(graph: &RoadGraph, src: VertexId, dst: VertexId) -> Result<PathResult, RoutingError> {
    for v in [src, dst] {
        if graph.vertex(v).is_none() {
            return Err(RoutingError::UnknownVertex(v));
        }
    }
    let mut dist: BTreeMap<VertexId, f64> = BTreeMap::new();
    let mut pred: BTreeMap<VertexId, (VertexId, usize)> = BTreeMap::new();
    let mut settled: std::collections::BTreeSet<VertexId> = Default::default();
    let mut heap = BinaryHeap::new();
    dist.insert(src, 0.0);
    heap.push(Queued { time: 0.0, vertex: src });

    while let Some(Queued { time, vertex: u }) = heap.pop() {
        if !settled.insert(u) {
            continue;
        }
        if u == dst {
            break;
        }
        for &ei in graph.incident(u) {
            let e = graph.edge(ei);
            let v = e.other(u);
            if settled.contains(&v) {
                continue;
            }
            let nd = time + e.travel_time_s;
            match dist.get(&v) {
                Some(&cur) if nd > cur => {}
                Some(&cur) if nd == cur => {
                    let (pu, pe) = pred[&v];
                    // parallel edges from the same predecessor: lowest index wins
                    let better = if pu == u {
                        ei < pe
                    } else {
                        let mut cand = trace(&pred, src, u);
                        cand.push(v);
                        cand < trace(&pred, src, v)
                    };
                    if better {
                        pred.insert(v, (u, ei));
                    }
                }
                _ => {
                    dist.insert(v, nd);
                    pred.insert(v, (u, ei));
                    heap.push(Queued { time: nd, vertex: v });
                }
            }
        }
    }

    if !settled.contains(&dst) {
        return Err(RoutingError::NoRoute { src, dst });
    }
    let vertex_ids = trace(&pred, src, dst);
    let edge_indices: Vec<usize> = vertex_ids[1..].iter().map(|v| pred[v].1).collect();
    Ok(assemble(graph, vertex_ids, edge_indices))
}

fn assemble(graph: &RoadGraph, vertex_ids: Vec<VertexId>, edge_indices: Vec<usize>) -> PathResult {
    let mut geometry = Polyline::new(vec![graph.vertex(vertex_ids[0]).expect("vertex")]).expect("non-empty");
    let mut total_time_s = 0.0;
    let mut total_length_m = 0.0;
    for (k, &ei) in edge_indices.iter().enumerate() {
        let e = graph.edge(ei);
        geometry = geometry.concat(&e.geometry_from(vertex_ids[k]));
        total_time_s += e.travel_time_s;
        total_length_m += e.length_m;
    }
    PathResult { vertex_ids, edge_indices, geometry, total_time_s, total_length_m }
}

fn heading_change_deg(incoming: &Polyline, outgoing: &Polyline) -> f64 {
    let pin = incoming.points();
    let pout = outgoing.points();
    let (a, b) = (pin[pin.len() - 2], pin[pin.len() - 1]);
    let (c, d) = (pout[0], pout[1]);
    let h_in = a.bearing_to(&b);
    let h_out = c.bearing_to(&d);
    let mut delta = (h_out - h_in).to_degrees().rem_euclid(360.0);
    if delta > 180.0 {
        delta = 360.0 - delta;
    }
    delta
}

/// Positions along `path.vertex_ids` that become waypoints: both ends, stop
/// signs, and turns sharper than `turn_threshold_deg`.
pub fn waypoint_indices(path: &PathResult, graph: &RoadGraph, max_waypoints: usize, turn_threshold_deg: f64) -> Vec<usize> {
    let n = path.vertex_ids.len();
    if n < 2 {
        return (0..n).collect();
    }
    let mut interior = Vec::new();
    for k in 1..n - 1 {
        let v = path.vertex_ids[k];
        let incoming = graph.edge(path.edge_indices[k - 1]).geometry_from(path.vertex_ids[k - 1]);
        let outgoing = graph.edge(path.edge_indices[k]).geometry_from(v);
        if graph.is_stop(v) || heading_change_deg(&incoming, &outgoing) > turn_threshold_deg {
            interior.push(k);
        }
    }
    let budget = max_waypoints.max(2) - 2;
    if interior.len() > budget {
        let m = interior.len();
        interior = (0..budget).map(|i| interior[((2 * i + 1) * m) / (2 * budget)]).collect();
    }
    let mut out = Vec::with_capacity(interior.len() + 2);
    out.push(0);
    out.extend(interior);
    out.push(n - 1);
    out
}

/// Waypoint coordinates for a traffic query along `path`.
pub fn split_waypoints(path: &PathResult, graph: &RoadGraph, max_waypoints: usize) -> Vec<GeoPoint> {
    waypoint_indices(path, graph, max_waypoints, DEFAULT_TURN_THRESHOLD_DEG)
        .into_iter()
        .map(|k| graph.vertex(path.vertex_ids[k]).expect("path vertex"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osm::Edge;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    /// Straight-segment edges with a chosen travel time.
    fn graph(coords: &[(VertexId, f64, f64)], edges: &[(VertexId, VertexId, f64)], stops: &[VertexId]) -> RoadGraph {
        let vertices: BTreeMap<_, _> = coords.iter().map(|&(id, la, lo)| (id, pt(la, lo))).collect();
        let es = edges
            .iter()
            .map(|&(u, v, t)| {
                let geom = Polyline::new(vec![vertices[&u], vertices[&v]]).unwrap();
                let speed = geom.total_length_m() / t;
                Edge::new(u, v, geom, speed)
            })
            .collect();
        RoadGraph::from_parts(vertices, es, stops.iter().copied().collect()).unwrap()
    }

    #[test]
    fn nearest_vertex_rules() {
        let g = graph(&[(1, 0.0, 0.0), (2, 0.0, 0.002), (3, 0.0, 0.001)], &[(1, 2, 10.0)], &[]);
        assert_eq!(nearest_vertex(&g, &pt(0.0, 0.002)).unwrap(), 2);
        // binary-exact longitudes keep the two distances bitwise equal
        let g2 = graph(&[(5, 0.0, 0.0), (4, 0.0, 0.25)], &[(5, 4, 10.0)], &[]);
        assert_eq!(nearest_vertex(&g2, &pt(0.0, 0.125)).unwrap(), 4);
        let single = graph(&[(9, 1.0, 1.0)], &[], &[]);
        assert_eq!(nearest_vertex(&single, &pt(0.0, 0.0)).unwrap(), 9);
        let empty = RoadGraph::from_parts(BTreeMap::new(), vec![], BTreeSet::new()).unwrap();
        assert_eq!(nearest_vertex(&empty, &pt(0.0, 0.0)), Err(RoutingError::EmptyGraph));
    }

    #[test]
    fn identity_path() {
        let g = graph(&[(1, 0.0, 0.0), (2, 0.0, 0.001)], &[(1, 2, 10.0)], &[]);
        let p = fastest_path(&g, 1, 1).unwrap();
        assert_eq!(p.vertex_ids, vec![1]);
        assert_eq!(p.total_time_s, 0.0);
    }

    #[test]
    fn detour_beats_slow_direct_edge() {
        let g = graph(&[(1, 0.0, 0.0), (2, 0.001, 0.001), (3, 0.0, 0.002)], &[(1, 3, 100.0), (1, 2, 40.0), (2, 3, 40.0)], &[]);
        let p = fastest_path(&g, 1, 3).unwrap();
        assert_eq!(p.vertex_ids, vec![1, 2, 3]);
        assert!((p.total_time_s - 80.0).abs() < 1e-9);
    }

    #[test]
    fn tie_prefers_lexicographic_path() {
        // 1-2-4 and 1-3-4 both take 20 s
        let g = graph(
            &[(1, 0.0, 0.0), (2, 0.001, 0.001), (3, -0.001, 0.001), (4, 0.0, 0.002)],
            &[(1, 3, 10.0), (3, 4, 10.0), (1, 2, 10.0), (2, 4, 10.0)],
            &[],
        );
        assert_eq!(fastest_path(&g, 1, 4).unwrap().vertex_ids, vec![1, 2, 4]);
    }

    #[test]
    fn unreachable() {
        let g = graph(&[(1, 0.0, 0.0), (2, 0.0, 0.001), (3, 1.0, 1.0)], &[(1, 2, 5.0)], &[]);
        assert_eq!(fastest_path(&g, 1, 3), Err(RoutingError::NoRoute { src: 1, dst: 3 }));
        assert_eq!(fastest_path(&g, 1, 7), Err(RoutingError::UnknownVertex(7)));
    }

    fn brute_force(g: &RoadGraph, src: VertexId, dst: VertexId) -> Option<f64> {
        fn dfs(g: &RoadGraph, u: VertexId, dst: VertexId, t: f64, seen: &mut Vec<VertexId>, best: &mut Option<f64>) {
            if u == dst {
                if best.is_none_or(|b| t < b) {
                    *best = Some(t);
                }
                return;
            }
            for &ei in g.incident(u) {
                let e = g.edge(ei);
                let v = e.other(u);
                if !seen.contains(&v) {
                    seen.push(v);
                    dfs(g, v, dst, t + e.travel_time_s, seen, best);
                    seen.pop();
                }
            }
        }
        let mut best = None;
        dfs(g, src, dst, 0.0, &mut vec![src], &mut best);
        best
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(2..=8usize);
            let coords: Vec<(VertexId, f64, f64)> =
                (0..n).map(|i| (i as VertexId, rng.random_range(0.0..0.01), rng.random_range(0.0..0.01))).collect();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(0.4) && coords[i].1 != coords[j].1 {
                        edges.push((i as VertexId, j as VertexId, rng.random_range(1..20) as f64));
                    }
                }
            }
            let g = graph(&coords, &edges, &[]);
            let expect = brute_force(&g, 0, (n - 1) as VertexId);
            match fastest_path(&g, 0, (n - 1) as VertexId) {
                Ok(p) => {
                    assert_eq!(Some(p.total_time_s), expect);
                    let resum: f64 = p.edge_indices.iter().map(|&e| g.edge(e).travel_time_s).sum();
                    assert!((resum - p.total_time_s).abs() <= 1e-6 * p.total_time_s.max(1.0));
                }
                Err(RoutingError::NoRoute { .. }) => assert_eq!(expect, None),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn straight_path_has_only_endpoints() {
        let g = graph(&[(1, 0.0, 0.0), (2, 0.0, 0.001), (3, 0.0, 0.002)], &[(1, 2, 5.0), (2, 3, 5.0)], &[]);
        let p = fastest_path(&g, 1, 3).unwrap();
        assert_eq!(split_waypoints(&p, &g, 23), vec![pt(0.0, 0.0), pt(0.0, 0.002)]);
    }

    #[test]
    fn right_angle_and_stop_split() {
        let g = graph(
            &[(1, 0.0, 0.0), (2, 0.0, 0.001), (3, 0.001, 0.001), (4, 0.002, 0.001)],
            &[(1, 2, 5.0), (2, 3, 5.0), (3, 4, 5.0)],
            &[3],
        );
        let p = fastest_path(&g, 1, 4).unwrap();
        assert_eq!(waypoint_indices(&p, &g, 23, 30.0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn subsampling_keeps_endpoints() {
        // zig-zag: every interior vertex is a turn
        let n = 52;
        let coords: Vec<(VertexId, f64, f64)> =
            (0..n).map(|i| (i as VertexId, if i % 2 == 0 { 0.0 } else { 0.001 }, i as f64 * 0.001)).collect();
        let edges: Vec<(VertexId, VertexId, f64)> = (0..n - 1).map(|i| (i as VertexId, i as VertexId + 1, 5.0)).collect();
        let g = graph(&coords, &edges, &[]);
        let p = fastest_path(&g, 0, (n - 1) as VertexId).unwrap();
        let idx = waypoint_indices(&p, &g, 23, 30.0);
        assert_eq!(idx.len(), 23);
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), n - 1);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}
