use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{RouteStep, TrafficError, TrafficQuery};

/// Content-addressed store of provider responses: one JSON file per
/// canonical query hash.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, TrafficError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| TrafficError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(query: &TrafficQuery) -> String {
        hex::encode(Sha256::digest(query.canonical().as_bytes()))
    }

    pub fn path_for(&self, query: &TrafficQuery) -> PathBuf {
        self.dir.join(format!("{}.json", Self::key(query)))
    }

    pub fn get(&self, query: &TrafficQuery) -> Result<Option<Vec<RouteStep>>, TrafficError> {
        let path = self.path_for(query);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| TrafficError::Cache(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(TrafficError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    pub fn put(&self, query: &TrafficQuery, steps: &[RouteStep]) -> Result<(), TrafficError> {
        let path = self.path_for(query);
        let body = serde_json::to_vec_pretty(steps).map_err(|e| TrafficError::Cache(e.to_string()))?;
        // write-then-rename so concurrent readers never observe partial files
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| TrafficError::Cache(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoPoint, Polyline};
    use crate::traffic::TrafficModel;

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        let a = GeoPoint::new(47.123456789, 8.1).unwrap();
        let b = GeoPoint::new(47.2, 8.2).unwrap();
        let q = TrafficQuery { waypoints: vec![a, b], departure: 10, model: TrafficModel::BestGuess };
        assert_eq!(cache.get(&q).unwrap(), None);
        let steps = vec![RouteStep { geometry: Polyline::new(vec![a, b]).unwrap(), d_step: 1.0 / 3.0, t_step: 0.1 + 0.2 }];
        cache.put(&q, &steps).unwrap();
        assert_eq!(cache.get(&q).unwrap(), Some(steps));
        assert_eq!(DiskCache::key(&q).len(), 64);
        let other = TrafficQuery { model: TrafficModel::Pessimistic, ..q.clone() };
        assert_ne!(DiskCache::key(&q), DiskCache::key(&other));
    }
}
