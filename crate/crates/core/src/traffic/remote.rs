use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::geo::Polyline;

use super::polyline::decode_polyline;
use super::{DiskCache, RouteStep, TrafficError, TrafficProvider, TrafficQuery};

pub const API_KEY_ENV: &str = "MOBISYNTH_API_KEY";

pub trait Clock: Send + Sync {
    /// Monotonic seconds since an arbitrary origin.
    fn now(&self) -> f64;
    fn sleep(&self, seconds: f64);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep(&self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds));
        }
    }
}

/// Token bucket that blocks callers until a request slot is available.
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    clock: Arc<dyn Clock>,
    state: Mutex<(f64, f64)>,
}

impl TokenBucket {
    /// `rate` tokens per second, holding at most `capacity` (at least one).
    pub fn new(rate: f64, capacity: f64, clock: Arc<dyn Clock>) -> Self {
        let capacity = capacity.max(1.0);
        let now = clock.now();
        Self { rate, capacity, clock, state: Mutex::new((capacity, now)) }
    }

    pub fn acquire(&self) {
        // the lock is held while sleeping so dispatch is serialized
        let mut state = self.state.lock().expect("token bucket poisoned");
        loop {
            let now = self.clock.now();
            let (tokens, last) = *state;
            let tokens = (tokens + (now - last) * self.rate).min(self.capacity);
            if tokens >= 1.0 {
                *state = (tokens - 1.0, now);
                return;
            }
            *state = (tokens, now);
            self.clock.sleep((1.0 - tokens) / self.rate);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub retry_after_s: Option<u64>,
    pub body: String,
}

pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, TrafficError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self { agent: ureq::Agent::new_with_config(config) }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl HttpTransport for UreqTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, TrafficError> {
        let mut resp = self.agent.get(url).call().map_err(|e| TrafficError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after_s = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse().ok());
        let body = resp.body_mut().read_to_string().map_err(|e| TrafficError::Transport(e.to_string()))?;
        Ok(HttpResponse { status, retry_after_s, body })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: String,
    pub requests_per_second: f64,
    /// Queries departing before this Unix time are rejected locally.
    pub epoch: i64,
}

impl RemoteConfig {
    pub fn from_env(epoch: i64) -> Result<Self, TrafficError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| TrafficError::MissingApiKey(API_KEY_ENV))?;
        Ok(Self {
            base_url: "https://maps.googleapis.com/maps/api/directions/json".into(),
            api_key,
            requests_per_second: 10.0,
            epoch,
        })
    }
}

/// Directions-API client. Cached responses never touch the network.
pub struct RemoteProvider {
    config: RemoteConfig,
    transport: Box<dyn HttpTransport>,
    limiter: TokenBucket,
    cache: Option<DiskCache>,
}

#[derive(Deserialize)]
struct ApiValue {
    value: f64,
}

#[derive(Deserialize)]
struct ApiPolyline {
    points: String,
}

#[derive(Deserialize)]
struct ApiStep {
    distance: ApiValue,
    duration: ApiValue,
    polyline: ApiPolyline,
}

#[derive(Deserialize)]
struct ApiLeg {
    duration: Option<ApiValue>,
    duration_in_traffic: Option<ApiValue>,
    steps: Vec<ApiStep>,
}

#[derive(Deserialize)]
struct ApiRoute {
    legs: Vec<ApiLeg>,
}

#[derive(Deserialize)]
struct ApiResponse {
    status: String,
    #[serde(default)]
    error_message: Option<String>,
    #[serde(default)]
    routes: Vec<ApiRoute>,
}

fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' | b',' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig, transport: Box<dyn HttpTransport>, clock: Arc<dyn Clock>, cache: Option<DiskCache>) -> Self {
        let limiter = TokenBucket::new(config.requests_per_second, 1.0, clock);
        Self { config, transport, limiter, cache }
    }

    pub fn request_url(&self, q: &TrafficQuery) -> String {
        let fmt = |p: &crate::geo::GeoPoint| format!("{:.6},{:.6}", p.lat(), p.lon());
        let n = q.waypoints.len();
        let mut url = format!(
            "{}?origin={}&destination={}&mode=driving&departure_time={}&traffic_model={}",
            self.config.base_url,
            fmt(&q.waypoints[0]),
            fmt(&q.waypoints[n - 1]),
            q.departure,
            q.model.api_name()
        );
        if n > 2 {
            // via: keeps a single leg so traffic duration is reported
            let via: Vec<String> = q.waypoints[1..n - 1].iter().map(|p| format!("via:{}", fmt(p))).collect();
            url.push_str("&waypoints=");
            url.push_str(&encode_component(&via.join("|")));
        }
        url.push_str("&key=");
        url.push_str(&encode_component(&self.config.api_key));
        url
    }

    fn fetch(&self, q: &TrafficQuery) -> Result<Vec<RouteStep>, TrafficError> {
        self.limiter.acquire();
        let resp = self.transport.get(&self.request_url(q))?;
        match resp.status {
            200 => {}
            429 => {
                return Err(TrafficError::Quota { retry_after_s: resp.retry_after_s, message: "HTTP 429".into() });
            }
            401 | 403 => {
                return Err(TrafficError::Denied {
                    retry_after_s: resp.retry_after_s,
                    message: format!("HTTP {}", resp.status),
                })
            }
            s => return Err(TrafficError::Transport(format!("HTTP {s}"))),
        }
        parse_response(&resp.body, resp.retry_after_s)
    }
}

/// Converts a directions JSON body into steps, scaling step durations by
/// each leg's traffic-aware duration.
pub(crate) fn parse_response(body: &str, retry_after_s: Option<u64>) -> Result<Vec<RouteStep>, TrafficError> {
    let api: ApiResponse = serde_json::from_str(body).map_err(|e| TrafficError::Decode(e.to_string()))?;
    let message = api.error_message.unwrap_or_else(|| api.status.clone());
    match api.status.as_str() {
        "OK" => {}
        "ZERO_RESULTS" | "NOT_FOUND" => return Err(TrafficError::ZeroResults),
        "OVER_QUERY_LIMIT" | "OVER_DAILY_LIMIT" => return Err(TrafficError::Quota { retry_after_s, message }),
        "REQUEST_DENIED" => return Err(TrafficError::Denied { retry_after_s, message }),
        "INVALID_REQUEST" | "MAX_WAYPOINTS_EXCEEDED" | "MAX_ROUTE_LENGTH_EXCEEDED" => {
            return Err(TrafficError::InvalidQuery(message))
        }
        _ => return Err(TrafficError::Transport(message)),
    }
    let route = api.routes.into_iter().next().ok_or(TrafficError::ZeroResults)?;
    let mut steps: Vec<RouteStep> = Vec::new();
    let mut pending: Option<RouteStep> = None;
    for leg in route.legs {
        let scale = match (&leg.duration, &leg.duration_in_traffic) {
            (Some(d), Some(t)) if d.value > 0.0 => t.value / d.value,
            _ => 1.0,
        };
        for s in leg.steps {
            let pts = decode_polyline(&s.polyline.points).map_err(|e| TrafficError::Decode(e.to_string()))?;
            if pts.is_empty() || s.distance.value <= 0.0 {
                continue;
            }
            let step = RouteStep {
                geometry: Polyline::new(pts).expect("non-empty"),
                d_step: s.distance.value,
                t_step: s.duration.value * scale,
            };
            // zero-duration steps ride along with their successor
            let step = match pending.take() {
                Some(prev) => prev.merge(&step),
                None => step,
            };
            if step.t_step > 0.0 {
                steps.push(step);
            } else {
                pending = Some(step);
            }
        }
    }
    if let Some(rest) = pending {
        match steps.last_mut() {
            Some(last) => *last = last.merge(&rest),
            None => return Err(TrafficError::Decode("route without positive-duration steps".into())),
        }
    }
    if steps.is_empty() {
        return Err(TrafficError::ZeroResults);
    }
    Ok(steps)
}

impl TrafficProvider for RemoteProvider {
    fn get_route(&self, query: &TrafficQuery) -> Result<Vec<RouteStep>, TrafficError> {
        query.validate(self.config.epoch)?;
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(query)? {
                return Ok(hit);
            }
        }
        let steps = self.fetch(query)?;
        if let Some(cache) = &self.cache {
            cache.put(query, &steps)?;
        }
        Ok(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::traffic::polyline::encode_polyline;
    use crate::traffic::TrafficModel;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[derive(Default)]
    struct FakeClock {
        t: Mutex<f64>,
    }

    impl Clock for FakeClock {
        fn now(&self) -> f64 {
            *self.t.lock().unwrap()
        }
        fn sleep(&self, seconds: f64) {
            *self.t.lock().unwrap() += seconds.max(0.0);
        }
    }

    struct Canned {
        calls: Arc<AtomicUsize>,
        dispatch_times: Arc<Mutex<Vec<f64>>>,
        clock: Arc<FakeClock>,
        response: HttpResponse,
    }

    impl HttpTransport for Canned {
        fn get(&self, url: &str) -> Result<HttpResponse, TrafficError> {
            assert!(url.contains("traffic_model="));
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.dispatch_times.lock().unwrap().push(self.clock.now());
            Ok(self.response.clone())
        }
    }

    fn ok_body() -> String {
        let a = GeoPoint::new(40.0, -105.0).unwrap();
        let b = GeoPoint::new(40.001, -105.0).unwrap();
        let c = GeoPoint::new(40.001, -105.002).unwrap();
        serde_json::json!({
            "status": "OK",
            "routes": [{"legs": [{
                "duration": {"value": 100.0},
                "duration_in_traffic": {"value": 150.0},
                "steps": [
                    {"distance": {"value": 111.0}, "duration": {"value": 40.0}, "polyline": {"points": encode_polyline(&[a, b])}},
                    {"distance": {"value": 170.0}, "duration": {"value": 60.0}, "polyline": {"points": encode_polyline(&[b, c])}}
                ]
            }]}]
        })
        .to_string()
    }

    fn provider(response: HttpResponse, cache: Option<DiskCache>) -> (RemoteProvider, Arc<AtomicUsize>, Arc<Mutex<Vec<f64>>>) {
        let clock = Arc::new(FakeClock::default());
        let calls = Arc::new(AtomicUsize::new(0));
        let times = Arc::new(Mutex::new(Vec::new()));
        let transport = Canned { calls: calls.clone(), dispatch_times: times.clone(), clock: clock.clone(), response };
        let cfg = RemoteConfig { base_url: "https://example.invalid/directions".into(), api_key: "k".into(), requests_per_second: 2.0, epoch: 0 };
        (RemoteProvider::new(cfg, Box::new(transport), clock, cache), calls, times)
    }

    fn query(departure: i64) -> TrafficQuery {
        TrafficQuery {
            waypoints: vec![GeoPoint::new(40.0, -105.0).unwrap(), GeoPoint::new(40.0005, -105.0).unwrap(), GeoPoint::new(40.001, -105.002).unwrap()],
            departure,
            model: TrafficModel::BestGuess,
        }
    }

    #[test]
    fn parses_steps_with_traffic_scaling() {
        let (p, _, _) = provider(HttpResponse { status: 200, retry_after_s: None, body: ok_body() }, None);
        let steps = p.get_route(&query(100)).unwrap();
        assert_eq!(steps.len(), 2);
        assert!((steps[0].t_step - 60.0).abs() < 1e-9);
        assert!((steps[1].t_step - 90.0).abs() < 1e-9);
        assert!(steps.iter().all(|s| s.d_step > 0.0 && s.t_step > 0.0));
        let url = p.request_url(&query(100));
        assert!(url.contains("&waypoints=via%3A40.000500,-105.000000&key=k"), "{url}");
    }

    #[test]
    fn quota_error_carries_retry_after() {
        let body = r#"{"status":"OVER_QUERY_LIMIT","error_message":"slow down","routes":[]}"#.to_string();
        let (p, _, _) = provider(HttpResponse { status: 200, retry_after_s: Some(30), body }, None);
        assert_eq!(
            p.get_route(&query(100)),
            Err(TrafficError::Quota { retry_after_s: Some(30), message: "slow down".into() })
        );
        let (p, _, _) = provider(HttpResponse { status: 429, retry_after_s: Some(7), body: String::new() }, None);
        assert!(matches!(p.get_route(&query(100)), Err(TrafficError::Quota { retry_after_s: Some(7), .. })));
    }

    #[test]
    fn zero_results_and_denied() {
        let (p, _, _) = provider(HttpResponse { status: 200, retry_after_s: None, body: r#"{"status":"ZERO_RESULTS"}"#.into() }, None);
        assert_eq!(p.get_route(&query(100)), Err(TrafficError::ZeroResults));
        let (p, _, _) = provider(HttpResponse { status: 200, retry_after_s: None, body: r#"{"status":"REQUEST_DENIED"}"#.into() }, None);
        assert!(matches!(p.get_route(&query(100)), Err(TrafficError::Denied { .. })));
    }

    #[test]
    fn rejects_departure_before_epoch() {
        let (mut p, calls, _) = provider(HttpResponse { status: 200, retry_after_s: None, body: ok_body() }, None);
        p.config.epoch = 1_000;
        assert!(matches!(p.get_route(&query(999)), Err(TrafficError::InvalidQuery(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn cache_hit_skips_network() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        let (p, calls, _) = provider(HttpResponse { status: 200, retry_after_s: None, body: ok_body() }, Some(cache.clone()));
        let first = p.get_route(&query(100)).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let bytes = std::fs::read(cache.path_for(&query(100))).unwrap();
        let second = p.get_route(&query(100)).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(first, second);
        assert_eq!(serde_json::to_vec_pretty(&second).unwrap(), bytes);
    }

    #[test]
    fn rate_limit_respected() {
        let (p, calls, times) = provider(HttpResponse { status: 200, retry_after_s: None, body: ok_body() }, None);
        for k in 0..10 {
            p.get_route(&query(100 + k)).unwrap();
        }
        assert_eq!(calls.load(Ordering::SeqCst), 10);
        let times = times.lock().unwrap();
        // 2 requests per second with a burst of one: dispatches at least 0.5 s apart
        for w in times.windows(2) {
            assert!(w[1] - w[0] >= 0.5 - 1e-9, "{:?}", *times);
        }
        for (i, t) in times.iter().enumerate() {
            let in_window = times.iter().filter(|u| **u >= *t && **u < *t + 1.0).count();
            assert!(in_window <= 2, "window at {i}");
        }
    }

    #[test]
    fn missing_key_env() {
        // only meaningful when the variable is absent in the test environment
        if std::env::var(API_KEY_ENV).is_err() {
            assert_eq!(RemoteConfig::from_env(0), Err(TrafficError::MissingApiKey(API_KEY_ENV)));
        }
    }
}
