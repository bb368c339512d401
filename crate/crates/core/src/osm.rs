//! OpenStreetMap XML ingestion: POI catalogue and routable road graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, Polyline};

pub type VertexId = i64;

#[derive(Debug, Error)]
pub enum OsmError {
    #[error("malformed OSM XML at line {line}, column {column}: {message}")]
    Xml { line: u32, column: u32, message: String },
    #[error("invalid element at line {line}: {message}")]
    Element { line: u32, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge {index} references unknown vertex {vertex}")]
    MissingVertex { index: usize, vertex: VertexId },
    #[error("edge {index} has non-positive length or speed")]
    DegenerateEdge { index: usize },
    #[error("edge {index} travel time inconsistent with length/speed")]
    InconsistentTime { index: usize },
    #[error("stop node {0} is not a vertex")]
    UnknownStop(VertexId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiKind {
    Residential,
    Work,
    School,
    GasStation,
    Restaurant,
    Cinema,
}

impl PoiKind {
    pub const ALL: [PoiKind; 6] = [
        PoiKind::Residential,
        PoiKind::Work,
        PoiKind::School,
        PoiKind::GasStation,
        PoiKind::Restaurant,
        PoiKind::Cinema,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PoiKind::Residential => "residential",
            PoiKind::Work => "work",
            PoiKind::School => "school",
            PoiKind::GasStation => "gas_station",
            PoiKind::Restaurant => "restaurant",
            PoiKind::Cinema => "cinema",
        }
    }

    /// Tag whitelist. Amenity takes precedence over building when both are set.
    pub fn classify(building: Option<&str>, amenity: Option<&str>) -> Option<PoiKind> {
        let by_amenity = match amenity {
            Some("school") => Some(PoiKind::School),
            Some("fuel") => Some(PoiKind::GasStation),
            Some("restaurant" | "cafe" | "fast_food") => Some(PoiKind::Restaurant),
            Some("cinema") => Some(PoiKind::Cinema),
            _ => None,
        };
        by_amenity.or(match building {
            Some("apartments" | "house" | "residential" | "bungalow") => Some(PoiKind::Residential),
            Some("commercial" | "industrial") => Some(PoiKind::Work),
            _ => None,
        })
    }
}

impl std::fmt::Display for PoiKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    /// `n<id>` for node POIs, `w<id>` for way POIs.
    pub id: String,
    pub kind: PoiKind,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: VertexId,
    pub v: VertexId,
    /// Oriented from `u` to `v`.
    pub geometry: Polyline,
    pub length_m: f64,
    pub speed_limit_mps: f64,
    pub travel_time_s: f64,
}

impl Edge {
    pub fn new(u: VertexId, v: VertexId, geometry: Polyline, speed_limit_mps: f64) -> Self {
        let length_m = geometry.total_length_m();
        Self {
            u,
            v,
            geometry,
            length_m,
            speed_limit_mps,
            travel_time_s: length_m / speed_limit_mps,
        }
    }

    pub fn other(&self, from: VertexId) -> VertexId {
        if from == self.u {
            self.v
        } else {
            self.u
        }
    }

    /// Geometry oriented to start at `from`.
    pub fn geometry_from(&self, from: VertexId) -> Polyline {
        if from == self.u {
            self.geometry.clone()
        } else {
            let mut pts = self.geometry.points().to_vec();
            pts.reverse();
            Polyline::new(pts).expect("non-empty")
        }
    }
}

/// Undirected road graph. Vertices are OSM node ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct RoadGraph {
    vertices: BTreeMap<VertexId, GeoPoint>,
    edges: Vec<Edge>,
    stop_nodes: BTreeSet<VertexId>,
    adjacency: BTreeMap<VertexId, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    vertices: BTreeMap<VertexId, GeoPoint>,
    edges: Vec<Edge>,
    stop_nodes: BTreeSet<VertexId>,
}

impl TryFrom<RawGraph> for RoadGraph {
    type Error = GraphError;
    fn try_from(raw: RawGraph) -> Result<Self, Self::Error> {
        RoadGraph::from_parts(raw.vertices, raw.edges, raw.stop_nodes)
    }
}

impl From<RoadGraph> for RawGraph {
    fn from(g: RoadGraph) -> Self {
        RawGraph { vertices: g.vertices, edges: g.edges, stop_nodes: g.stop_nodes }
    }
}

impl RoadGraph {
    pub fn from_parts(
        vertices: BTreeMap<VertexId, GeoPoint>,
        edges: Vec<Edge>,
        stop_nodes: BTreeSet<VertexId>,
    ) -> Result<Self, GraphError> {
        let mut adjacency: BTreeMap<VertexId, Vec<usize>> = vertices.keys().map(|&v| (v, Vec::new())).collect();
        for (index, e) in edges.iter().enumerate() {
            for vertex in [e.u, e.v] {
                if !vertices.contains_key(&vertex) {
                    return Err(GraphError::MissingVertex { index, vertex });
                }
            }
            if !(e.length_m > 0.0 && e.speed_limit_mps > 0.0) || !e.length_m.is_finite() {
                return Err(GraphError::DegenerateEdge { index });
            }
            let expected = e.length_m / e.speed_limit_mps;
            if ((e.travel_time_s - expected) / expected).abs() > 1e-9 {
                return Err(GraphError::InconsistentTime { index });
            }
            adjacency.get_mut(&e.u).expect("checked").push(index);
            if e.v != e.u {
                adjacency.get_mut(&e.v).expect("checked").push(index);
            }
        }
        if let Some(s) = stop_nodes.iter().find(|s| !vertices.contains_key(s)) {
            return Err(GraphError::UnknownStop(*s));
        }
        Ok(Self { vertices, edges, stop_nodes, adjacency })
    }

    pub fn vertices(&self) -> &BTreeMap<VertexId, GeoPoint> {
        &self.vertices
    }

    pub fn vertex(&self, id: VertexId) -> Option<GeoPoint> {
        self.vertices.get(&id).copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> &Edge {
        &self.edges[index]
    }

    pub fn stop_nodes(&self) -> &BTreeSet<VertexId> {
        &self.stop_nodes
    }

    pub fn is_stop(&self, v: VertexId) -> bool {
        self.stop_nodes.contains(&v)
    }

    /// Indices of the edges incident to `v`.
    pub fn incident(&self, v: VertexId) -> &[usize] {
        self.adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Everything recovered from one extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extract {
    pub pois: Vec<Poi>,
    pub graph: RoadGraph,
    pub warnings: Vec<String>,
}

const KMH: f64 = 1000.0 / 3600.0;
const MPH: f64 = 1609.344 / 3600.0;

/// Highway classes that never carry cars.
const NON_VEHICULAR: &[&str] = &[
    "footway", "path", "cycleway", "steps", "pedestrian", "bridleway", "corridor", "platform", "proposed",
    "construction", "elevator",
];

fn class_default_kmh(highway_class: &str) -> f64 {
    match highway_class.strip_suffix("_link").unwrap_or(highway_class) {
        "motorway" => 100.0,
        "primary" => 60.0,
        "secondary" => 50.0,
        "residential" => 40.0,
        "service" => 20.0,
        _ => 40.0,
    }
}

fn parse_maxspeed(raw: &str) -> Option<f64> {
    let s = raw.trim();
    let (num, factor) = if let Some(n) = s.strip_suffix("mph") {
        (n, MPH)
    } else if let Some(n) = s.strip_suffix("km/h").or_else(|| s.strip_suffix("kmh")).or_else(|| s.strip_suffix("kph")) {
        (n, KMH)
    } else {
        (s, KMH)
    };
    let value: f64 = num.trim().parse().ok()?;
    (value.is_finite() && value > 0.0).then_some(value * factor)
}

/// Speed limit in m/s for a highway class, honoring `maxspeed` when it parses.
/// The second value carries a warning when a present `maxspeed` was unusable.
pub fn default_speed(highway_class: &str, maxspeed: Option<&str>) -> (f64, Option<String>) {
    let fallback = class_default_kmh(highway_class) * KMH;
    match maxspeed {
        None => (fallback, None),
        Some(raw) => match parse_maxspeed(raw) {
            Some(v) => (v, None),
            None => (fallback, Some(format!("unparseable maxspeed {raw:?}; using {highway_class} default"))),
        },
    }
}

struct RawNode {
    point: GeoPoint,
    tags: HashMap<String, String>,
}

struct RawWay {
    id: i64,
    line: u32,
    refs: Vec<i64>,
    tags: HashMap<String, String>,
}

fn tags_of(node: &roxmltree::Node) -> HashMap<String, String> {
    node.children()
        .filter(|c| c.has_tag_name("tag"))
        .filter_map(|c| Some((c.attribute("k")?.to_string(), c.attribute("v")?.to_string())))
        .collect()
}

fn attr<'a>(doc: &roxmltree::Document, node: &roxmltree::Node<'a, 'a>, name: &str) -> Result<&'a str, OsmError> {
    node.attribute(name).ok_or_else(|| OsmError::Element {
        line: doc.text_pos_at(node.range().start).row,
        message: format!("<{}> missing attribute {name}", node.tag_name().name()),
    })
}

fn parse_num<T: std::str::FromStr>(doc: &roxmltree::Document, node: &roxmltree::Node, raw: &str) -> Result<T, OsmError> {
    raw.parse().map_err(|_| OsmError::Element {
        line: doc.text_pos_at(node.range().start).row,
        message: format!("cannot parse {raw:?} on <{}>", node.tag_name().name()),
    })
}

/// Parses an OSM XML document into POIs and a road graph.
pub fn parse_extract(xml_bytes: &[u8]) -> Result<Extract, OsmError> {
    let text = std::str::from_utf8(xml_bytes).map_err(|e| {
        let prefix = &xml_bytes[..e.valid_up_to()];
        let line = 1 + prefix.iter().filter(|&&b| b == b'\n').count() as u32;
        OsmError::Xml { line, column: 0, message: e.to_string() }
    })?;
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        OsmError::Xml { line: pos.row, column: pos.col, message: e.to_string() }
    })?;

    let mut warnings = Vec::new();
    let mut nodes: HashMap<i64, RawNode> = HashMap::new();
    let mut node_order: Vec<i64> = Vec::new();
    let mut ways: Vec<RawWay> = Vec::new();

    for el in doc.root_element().children().filter(|n| n.is_element()) {
        match el.tag_name().name() {
            "node" => {
                let id: i64 = parse_num(&doc, &el, attr(&doc, &el, "id")?)?;
                let lat: f64 = parse_num(&doc, &el, attr(&doc, &el, "lat")?)?;
                let lon: f64 = parse_num(&doc, &el, attr(&doc, &el, "lon")?)?;
                let point = GeoPoint::new(lat, lon).map_err(|e| OsmError::Element {
                    line: doc.text_pos_at(el.range().start).row,
                    message: e.to_string(),
                })?;
                if nodes.insert(id, RawNode { point, tags: tags_of(&el) }).is_none() {
                    node_order.push(id);
                }
            }
            "way" => {
                let id: i64 = parse_num(&doc, &el, attr(&doc, &el, "id")?)?;
                let mut refs = Vec::new();
                for nd in el.children().filter(|c| c.has_tag_name("nd")) {
                    refs.push(parse_num(&doc, &nd, attr(&doc, &nd, "ref")?)?);
                }
                ways.push(RawWay {
                    id,
                    line: doc.text_pos_at(el.range().start).row,
                    refs,
                    tags: tags_of(&el),
                });
            }
            _ => {}
        }
    }

    // ways with dangling references are dropped entirely
    ways.retain(|w| match w.refs.iter().find(|r| !nodes.contains_key(r)) {
        Some(missing) => {
            warnings.push(format!("way {} (line {}) references missing node {missing}; skipped", w.id, w.line));
            false
        }
        None => true,
    });

    let mut pois = Vec::new();
    for id in &node_order {
        let n = &nodes[id];
        let kind = PoiKind::classify(n.tags.get("building").map(String::as_str), n.tags.get("amenity").map(String::as_str));
        if let Some(kind) = kind {
            pois.push(Poi { id: format!("n{id}"), kind, location: n.point });
        }
    }
    for w in &ways {
        let Some(kind) = PoiKind::classify(w.tags.get("building").map(String::as_str), w.tags.get("amenity").map(String::as_str))
        else {
            continue;
        };
        let mut refs: &[i64] = &w.refs;
        if refs.len() > 1 && refs.first() == refs.last() {
            refs = &refs[..refs.len() - 1];
        }
        if refs.is_empty() {
            warnings.push(format!("way {} has no nodes; POI skipped", w.id));
            continue;
        }
        let n = refs.len() as f64;
        let lat = refs.iter().map(|r| nodes[r].point.lat()).sum::<f64>() / n;
        let lon = refs.iter().map(|r| nodes[r].point.lon()).sum::<f64>() / n;
        let location = GeoPoint::new(lat, lon).expect("centroid of valid points");
        pois.push(Poi { id: format!("w{}", w.id), kind, location });
    }

    let graph = build_graph(&nodes, &ways, &mut warnings);
    Ok(Extract { pois, graph, warnings })
}

fn build_graph(nodes: &HashMap<i64, RawNode>, ways: &[RawWay], warnings: &mut Vec<String>) -> RoadGraph {
    let highways: Vec<&RawWay> = ways
        .iter()
        .filter(|w| w.tags.get("highway").is_some_and(|h| !NON_VEHICULAR.contains(&h.as_str())))
        .filter(|w| {
            if w.refs.len() < 2 {
                warnings.push(format!("highway way {} has fewer than two nodes; skipped", w.id));
                false
            } else {
                true
            }
        })
        .collect();

    let mut way_count: HashMap<i64, usize> = HashMap::new();
    for w in &highways {
        let distinct: BTreeSet<i64> = w.refs.iter().copied().collect();
        for r in distinct {
            *way_count.entry(r).or_default() += 1;
        }
    }
    let is_stop = |id: &i64| nodes[id].tags.get("highway").is_some_and(|h| h == "stop");

    let mut vertex_ids: BTreeSet<i64> = BTreeSet::new();
    for w in &highways {
        vertex_ids.insert(w.refs[0]);
        vertex_ids.insert(*w.refs.last().expect("len >= 2"));
        for r in &w.refs {
            if way_count[r] >= 2 || is_stop(r) {
                vertex_ids.insert(*r);
            }
        }
    }

    let mut edges = Vec::new();
    for w in &highways {
        let highway_class = w.tags["highway"].as_str();
        let (speed, warn) = default_speed(highway_class, w.tags.get("maxspeed").map(String::as_str));
        if let Some(msg) = warn {
            warnings.push(format!("way {}: {msg}", w.id));
        }
        let mut start = 0;
        for k in 1..w.refs.len() {
            if !vertex_ids.contains(&w.refs[k]) {
                continue;
            }
            let pts: Vec<GeoPoint> = w.refs[start..=k].iter().map(|r| nodes[r].point).collect();
            let geometry = Polyline::new(pts).expect("non-empty");
            if geometry.total_length_m() > 0.0 {
                edges.push(Edge::new(w.refs[start], w.refs[k], geometry, speed));
            } else {
                warnings.push(format!("way {}: zero-length segment {}-{} skipped", w.id, w.refs[start], w.refs[k]));
            }
            start = k;
        }
    }

    let vertices: BTreeMap<VertexId, GeoPoint> = vertex_ids.iter().map(|id| (*id, nodes[id].point)).collect();
    let stop_nodes: BTreeSet<VertexId> = vertex_ids.iter().copied().filter(is_stop).collect();
    RoadGraph::from_parts(vertices, edges, stop_nodes).expect("construction upholds graph invariants")
}
