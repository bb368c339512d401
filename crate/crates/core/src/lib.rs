//! Synthetic driving trajectories from probabilistic mobility identities.
//!
//! The crate turns an OpenStreetMap extract into a POI catalogue and a road
//! graph, builds per-user state machines over those POIs, schedules each day
//! with a randomized linear program, routes the legs, and synthesizes
//! per-second acceleration profiles that match measured driving statistics.
//! Location obfuscation and an evaluation harness round it off.

// NaN-rejecting checks read as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod evaluation;
pub mod export;
pub mod geo;
pub mod identity;
pub mod kinematics;
pub mod obfuscation;
pub mod osm;
pub mod pipeline;
pub mod routing;
pub mod scheduler;
pub mod traffic;

pub use geo::{haversine_distance, GeoPoint, Polyline};
pub use identity::{build_identity, Identity, IdentityConfig, StateSpec};
pub use osm::{parse_extract, Extract, Poi, PoiKind, RoadGraph};
