//! Trajectory writers and readers: GeoJSON, GPX and CSV.
//!
//! GeoJSON output is a single LineString feature whose `times` property holds
//! one epoch-second timestamp per coordinate. GPX uses track points with
//! ISO-8601 UTC times. CSV has the columns `t_unix_s,lat,lon,speed_mps,accel_mps2`.

use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::kinematics::Fix;
use crate::pipeline::{Segment, Trajectory};

pub const CSV_HEADER: [&str; 5] = ["t_unix_s", "lat", "lon", "speed_mps", "accel_mps2"];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trajectory file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Geojson,
    Gpx,
    Csv,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Geojson => "geojson",
            Format::Gpx => "gpx",
            Format::Csv => "csv",
        }
    }

    pub fn from_extension(ext: &str) -> Option<Format> {
        match ext.to_ascii_lowercase().as_str() {
            "geojson" | "json" => Some(Format::Geojson),
            "gpx" => Some(Format::Gpx),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

/// Whole seconds print as integers.
fn time_value(t: f64) -> Value {
    if t.fract() == 0.0 && t.abs() < 9e15 {
        json!(t as i64)
    } else {
        json!(t)
    }
}

/// Fixes plus optional span annotations, as stored in a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFile {
    pub fixes: Vec<Fix>,
    pub segments: Option<Vec<Segment>>,
}

impl From<&Trajectory> for TrackFile {
    fn from(t: &Trajectory) -> Self {
        TrackFile { fixes: t.fixes.clone(), segments: Some(t.segments.clone()) }
    }
}

pub fn to_geojson(track: &TrackFile) -> String {
    let coords: Vec<Value> = track.fixes.iter().map(|f| json!([f.point.lon(), f.point.lat()])).collect();
    let mut props = serde_json::Map::new();
    props.insert("times".into(), Value::Array(track.fixes.iter().map(|f| time_value(f.t)).collect()));
    props.insert("speed_mps".into(), json!(track.fixes.iter().map(|f| f.speed).collect::<Vec<_>>()));
    props.insert("accel_mps2".into(), json!(track.fixes.iter().map(|f| f.accel).collect::<Vec<_>>()));
    if let Some(segs) = &track.segments {
        props.insert("segments".into(), serde_json::to_value(segs).expect("segments serialize"));
    }
    let feature = json!({
        "type": "Feature",
        "geometry": { "type": "LineString", "coordinates": coords },
        "properties": Value::Object(props),
    });
    let mut s = serde_json::to_string(&feature).expect("feature serializes");
    s.push('\n');
    s
}

pub fn from_geojson(text: &str) -> Result<TrackFile, ExportError> {
    let v: Value = serde_json::from_str(text)?;
    let bad = |m: &str| ExportError::Format(m.to_owned());
    let coords = v["geometry"]["coordinates"].as_array().ok_or_else(|| bad("missing LineString coordinates"))?;
    let props = &v["properties"];
    let times = props["times"].as_array().ok_or_else(|| bad("missing times property"))?;
    if times.len() != coords.len() {
        return Err(bad("times and coordinates differ in length"));
    }
    let column = |name: &str| -> Result<Vec<f64>, ExportError> {
        match props[name].as_array() {
            Some(a) if a.len() == coords.len() => a.iter().map(|x| x.as_f64().ok_or_else(|| bad(name))).collect(),
            Some(_) => Err(bad(name)),
            None => Ok(vec![f64::NAN; coords.len()]),
        }
    };
    let speeds = column("speed_mps")?;
    let accels = column("accel_mps2")?;
    let mut fixes = Vec::with_capacity(coords.len());
    for (i, c) in coords.iter().enumerate() {
        let lon = c[0].as_f64().ok_or_else(|| bad("coordinate"))?;
        let lat = c[1].as_f64().ok_or_else(|| bad("coordinate"))?;
        let point = GeoPoint::new(lat, lon).map_err(|e| ExportError::Format(e.to_string()))?;
        let t = times[i].as_f64().ok_or_else(|| bad("time"))?;
        fixes.push(Fix { t, point, speed: speeds[i], accel: accels[i] });
    }
    let segments = match props.get("segments") {
        Some(s) => Some(serde_json::from_value(s.clone())?),
        None => None,
    };
    Ok(TrackFile { fixes, segments })
}

fn iso_time(t: f64) -> String {
    let secs = t.floor();
    let nanos = ((t - secs) * 1e9).round().min(999_999_999.0) as u32;
    DateTime::from_timestamp(secs as i64, nanos)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_else(|| format!("{t}"))
}

pub fn to_gpx(track: &TrackFile, name: &str) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str("<gpx version=\"1.1\" creator=\"mobisynth\" xmlns=\"http://www.topografix.com/GPX/1/1\">\n");
    s.push_str("  <trk>\n");
    let _ = writeln!(s, "    <name>{}</name>", escape_xml(name));
    s.push_str("    <trkseg>\n");
    for f in &track.fixes {
        let _ = writeln!(s, "      <trkpt lat=\"{}\" lon=\"{}\"><time>{}</time></trkpt>", f.point.lat(), f.point.lon(), iso_time(f.t));
    }
    s.push_str("    </trkseg>\n  </trk>\n</gpx>\n");
    s
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t_unix_s: f64,
    lat: f64,
    lon: f64,
    speed_mps: f64,
    accel_mps2: f64,
}

pub fn to_csv(fixes: &[Fix]) -> Result<String, ExportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for f in fixes {
        let t = if f.t.fract() == 0.0 { format!("{}", f.t as i64) } else { format!("{}", f.t) };
        w.write_record([t, f.point.lat().to_string(), f.point.lon().to_string(), f.speed.to_string(), f.accel.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| ExportError::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv(text: &str) -> Result<Vec<Fix>, ExportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(ExportError::Format(format!("unexpected header {header:?}")));
    }
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            let point = GeoPoint::new(row.lat, row.lon).map_err(|e| ExportError::Format(e.to_string()))?;
            Ok(Fix { t: row.t_unix_s, point, speed: row.speed_mps, accel: row.accel_mps2 })
        })
        .collect()
}

/// Reads a trajectory file, choosing the format by extension.
pub fn read_track(path: &std::path::Path) -> Result<TrackFile, ExportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExportError::Format(format!("{}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()).and_then(Format::from_extension) {
        Some(Format::Geojson) => from_geojson(&text),
        Some(Format::Csv) => Ok(TrackFile { fixes: from_csv(&text)?, segments: None }),
        _ => Err(ExportError::Format(format!("{}: expected .geojson or .csv", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::SegmentKind;

    fn sample() -> TrackFile {
        let fixes = (0..4)
            .map(|k| Fix { t: 1_700_000_000.0 + k as f64, point: GeoPoint::new(40.0 + k as f64 * 1e-4, -105.0).unwrap(), speed: 1.5 * k as f64, accel: 0.25 })
            .collect();
        TrackFile { fixes, segments: Some(vec![Segment { kind: SegmentKind::Drive, start: 0, end: 4, label: "leg".into() }]) }
    }

    #[test]
    fn geojson_round_trips() {
        let t = sample();
        let text = to_geojson(&t);
        assert!(text.contains("\"times\":[1700000000,1700000001,1700000002,1700000003]"), "{text}");
        assert_eq!(from_geojson(&text).unwrap(), t);
    }

    #[test]
    fn csv_round_trips_with_the_fixed_header() {
        let t = sample();
        let text = to_csv(&t.fixes).unwrap();
        assert!(text.starts_with("t_unix_s,lat,lon,speed_mps,accel_mps2\n1700000000,40,-105,0,0.25\n"), "{text}");
        assert_eq!(from_csv(&text).unwrap(), t.fixes);
        assert!(from_csv("t,lat,lon\n").is_err());
    }

    #[test]
    fn gpx_has_one_point_per_fix_with_utc_times() {
        let text = to_gpx(&sample(), "day <1>");
        assert_eq!(text.matches("<trkpt ").count(), 4);
        assert!(text.contains("<time>2023-11-14T22:13:20Z</time>"), "{text}");
        assert!(text.contains("<name>day &lt;1&gt;</name>"));
    }
}
