//! Traffic-annotated route steps behind a single provider contract.
//!
//! [`OfflineProvider`] is a deterministic model over the local road graph and
//! is what tests and reproducible runs use. [`RemoteProvider`] talks to a
//! Google-style directions endpoint with rate limiting and a disk cache.

mod cache;
mod offline;
pub mod polyline;
mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, Polyline};

pub use cache::DiskCache;
pub use offline::{congestion_factor, offline_route, OfflineProvider, PESSIMISTIC_FACTOR};
pub use polyline::{decode_polyline, encode_polyline, PolylineError};
pub use remote::{
    Clock, HttpResponse, HttpTransport, RemoteConfig, RemoteProvider, SystemClock, TokenBucket, UreqTransport,
    API_KEY_ENV,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("invalid traffic query: {0}")]
    InvalidQuery(String),
    #[error("no route: {0}")]
    NoRoute(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("quota exceeded: {message} (retry after {retry_after_s:?} s)")]
    Quota { retry_after_s: Option<u64>, message: String },
    #[error("request denied: {message}")]
    Denied { retry_after_s: Option<u64>, message: String },
    #[error("directions service returned zero results")]
    ZeroResults,
    #[error("malformed directions response: {0}")]
    Decode(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("environment variable {0} not set")]
    MissingApiKey(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficModel {
    Pessimistic,
    BestGuess,
}

impl TrafficModel {
    pub fn api_name(&self) -> &'static str {
        match self {
            TrafficModel::Pessimistic => "pessimistic",
            TrafficModel::BestGuess => "best_guess",
        }
    }
}

/// One provider step: geometry, length and traversal time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteStep {
    pub geometry: Polyline,
    pub d_step: f64,
    pub t_step: f64,
}

impl RouteStep {
    /// Joins consecutive steps into one.
    pub fn merge(&self, next: &RouteStep) -> RouteStep {
        RouteStep {
            geometry: self.geometry.concat(&next.geometry),
            d_step: self.d_step + next.d_step,
            t_step: self.t_step + next.t_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficQuery {
    pub waypoints: Vec<GeoPoint>,
    /// Departure as Unix seconds (UTC).
    pub departure: i64,
    pub model: TrafficModel,
}

impl TrafficQuery {
    pub fn validate(&self, epoch: i64) -> Result<(), TrafficError> {
        if self.waypoints.len() < 2 {
            return Err(TrafficError::InvalidQuery("need at least two waypoints".into()));
        }
        if self.departure < epoch {
            return Err(TrafficError::InvalidQuery(format!("departure {} precedes epoch {epoch}", self.departure)));
        }
        Ok(())
    }

    /// Stable textual form used for cache keys.
    pub fn canonical(&self) -> String {
        let pts: Vec<String> = self.waypoints.iter().map(|p| format!("{:.6},{:.6}", p.lat(), p.lon())).collect();
        format!("v1|{}|{}|{}", pts.join(";"), self.departure, self.model.api_name())
    }
}

pub trait TrafficProvider {
    /// Ordered steps covering the query's waypoints.
    fn get_route(&self, query: &TrafficQuery) -> Result<Vec<RouteStep>, TrafficError>;
}
