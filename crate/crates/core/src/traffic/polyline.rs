//! Google encoded-polyline codec at 1e-5 precision.

use thiserror::Error;

use crate::geo::GeoPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolylineError {
    #[error("invalid character {ch:?} at offset {offset}")]
    InvalidChar { offset: usize, ch: char },
    #[error("truncated value starting at offset {offset}")]
    Truncated { offset: usize },
    #[error("decoded coordinate out of range at offset {offset}")]
    OutOfRange { offset: usize },
}

const FACTOR: f64 = 1e5;

fn push_value(mut value: i64, out: &mut String) {
    value = if value < 0 { !(value << 1) } else { value << 1 };
    while value >= 0x20 {
        out.push(char::from((((value & 0x1f) | 0x20) + 63) as u8));
        value >>= 5;
    }
    out.push(char::from((value + 63) as u8));
}

pub fn encode_polyline(points: &[GeoPoint]) -> String {
    let mut out = String::new();
    let (mut plat, mut plon) = (0i64, 0i64);
    for p in points {
        let lat = (p.lat() * FACTOR).round() as i64;
        let lon = (p.lon() * FACTOR).round() as i64;
        push_value(lat - plat, &mut out);
        push_value(lon - plon, &mut out);
        plat = lat;
        plon = lon;
    }
    out
}

fn read_value(bytes: &[u8], pos: &mut usize) -> Result<i64, PolylineError> {
    let start = *pos;
    let mut result: i64 = 0;
    let mut shift = 0;
    loop {
        let Some(&b) = bytes.get(*pos) else {
            return Err(PolylineError::Truncated { offset: start });
        };
        if !(63..=126).contains(&b) || shift > 60 {
            return Err(PolylineError::InvalidChar { offset: *pos, ch: b as char });
        }
        let chunk = (b - 63) as i64;
        *pos += 1;
        result |= (chunk & 0x1f) << shift;
        shift += 5;
        if chunk < 0x20 {
            break;
        }
    }
    Ok(if result & 1 == 1 { !(result >> 1) } else { result >> 1 })
}

/// Decodes an encoded polyline into points; an empty string yields no points.
pub fn decode_polyline(encoded: &str) -> Result<Vec<GeoPoint>, PolylineError> {
    let bytes = encoded.as_bytes();
    let mut pos = 0;
    let (mut lat, mut lon) = (0i64, 0i64);
    let mut out = Vec::new();
    while pos < bytes.len() {
        let offset = pos;
        lat += read_value(bytes, &mut pos)?;
        lon += read_value(bytes, &mut pos)?;
        let p = GeoPoint::new(lat as f64 / FACTOR, lon as f64 / FACTOR).map_err(|_| PolylineError::OutOfRange { offset })?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_vector() {
        let pts = decode_polyline("_p~iF~ps|U_ulLnnqC_mqNvxq`@").unwrap();
        let expect = [(38.5, -120.2), (40.7, -120.95), (43.252, -126.453)];
        assert_eq!(pts.len(), 3);
        for (p, (la, lo)) in pts.iter().zip(expect) {
            assert!((p.lat() - la).abs() < 1e-9 && (p.lon() - lo).abs() < 1e-9);
        }
        let prefix = decode_polyline("_p~iF~ps|U_ulLnnqC").unwrap();
        assert_eq!(prefix, pts[..2].to_vec());
        assert_eq!(encode_polyline(&pts), "_p~iF~ps|U_ulLnnqC_mqNvxq`@");
    }

    #[test]
    fn empty_and_broken_inputs() {
        assert!(decode_polyline("").unwrap().is_empty());
        assert_eq!(decode_polyline("_p~iF"), Err(PolylineError::Truncated { offset: 5 }));
        assert_eq!(decode_polyline("_p~i"), Err(PolylineError::Truncated { offset: 0 }));
        assert!(matches!(decode_polyline("_p~iF~ps|U \n"), Err(PolylineError::InvalidChar { offset: 10, .. })));
    }

    proptest! {
        #[test]
        fn grid_roundtrip(raw in proptest::collection::vec((-9_000_000i64..9_000_000, -18_000_000i64..18_000_000), 0..20)) {
            let pts: Vec<GeoPoint> = raw.iter().map(|&(a, b)| GeoPoint::new(a as f64 / 1e5, b as f64 / 1e5).unwrap()).collect();
            let enc = encode_polyline(&pts);
            let dec = decode_polyline(&enc).unwrap();
            prop_assert_eq!(encode_polyline(&dec), enc);
            for (p, q) in pts.iter().zip(&dec) {
                prop_assert!((p.lat() - q.lat()).abs() < 1e-9 && (p.lon() - q.lon()).abs() < 1e-9);
            }
        }
    }
}
