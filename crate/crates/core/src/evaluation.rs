//! Temporal features, perturbation probes, `|a|` summaries and a k-NN
//! baseline for telling trajectory sets apart.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::haversine_distance;
use crate::kinematics::{add_gps_noise, Fix};
use crate::pipeline::Trajectory;

/// Speeds below this count as idle, m/s.
pub const IDLE_SPEED_MPS: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 fixes, got {0}")]
    TooFewFixes(usize),
    #[error("no samples to summarize")]
    Empty,
    #[error("empty training set")]
    NoTraining,
    #[error("k = {k} but only {n} training vectors")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub max_accel: f64,
    pub min_accel: f64,
    pub mean_accel: f64,
    pub std_accel: f64,
    pub mean_abs_accel: f64,
    pub std_abs_accel: f64,
    pub max_speed: f64,
    pub idle_time_s: f64,
    pub distance_m: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 9] = [
        "max_accel",
        "min_accel",
        "mean_accel",
        "std_accel",
        "mean_abs_accel",
        "std_abs_accel",
        "max_speed",
        "idle_time_s",
        "distance_m",
    ];

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.max_accel,
            self.min_accel,
            self.mean_accel,
            self.std_accel,
            self.mean_abs_accel,
            self.std_abs_accel,
            self.max_speed,
            self.idle_time_s,
            self.distance_m,
        ]
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (mean, (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Speeds and accelerations from the annotations, finite-differenced where a
/// value is missing (NaN).
fn kinematics_of(fixes: &[Fix]) -> (Vec<f64>, Vec<f64>) {
    let n = fixes.len();
    let speed: Vec<f64> = (0..n)
        .map(|i| {
            if !fixes[i].speed.is_nan() {
                return fixes[i].speed;
            }
            let (a, b) = if i == 0 { (0, 1) } else { (i - 1, i) };
            let dt = fixes[b].t - fixes[a].t;
            if dt > 0.0 {
                haversine_distance(&fixes[a].point, &fixes[b].point) / dt
            } else {
                0.0
            }
        })
        .collect();
    let accel = (0..n)
        .map(|i| {
            if !fixes[i].accel.is_nan() {
                return fixes[i].accel;
            }
            if i == 0 {
                return 0.0;
            }
            let dt = fixes[i].t - fixes[i - 1].t;
            if dt > 0.0 {
                (speed[i] - speed[i - 1]) / dt
            } else {
                0.0
            }
        })
        .collect();
    (speed, accel)
}

pub fn extract_features(fixes: &[Fix]) -> Result<FeatureVector, EvalError> {
    if fixes.len() < 2 {
        return Err(EvalError::TooFewFixes(fixes.len()));
    }
    let (speed, accel) = kinematics_of(fixes);
    let abs: Vec<f64> = accel.iter().map(|a| a.abs()).collect();
    let (mean_accel, std_accel) = mean_std(&accel);
    let (mean_abs_accel, std_abs_accel) = mean_std(&abs);
    let mut idle_time_s = 0.0;
    let mut distance_m = 0.0;
    for i in 0..fixes.len() - 1 {
        if speed[i] < IDLE_SPEED_MPS {
            idle_time_s += fixes[i + 1].t - fixes[i].t;
        }
        distance_m += haversine_distance(&fixes[i].point, &fixes[i + 1].point);
    }
    Ok(FeatureVector {
        max_accel: accel.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_accel: accel.iter().copied().fold(f64::INFINITY, f64::min),
        mean_accel,
        std_accel,
        mean_abs_accel,
        std_abs_accel,
        max_speed: speed.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        idle_time_s,
        distance_m,
    })
}

/// Compresses time by `speed_factor` around the first fix and adds gaussian
/// displacement with per-axis std `teleport_sigma_m`. Speeds scale by the
/// factor and accelerations by its square.
pub fn perturb(fixes: &[Fix], speed_factor: f64, teleport_sigma_m: f64, rng_seed: u64) -> Result<Vec<Fix>, EvalError> {
    if !(speed_factor >= 1.0) || !(teleport_sigma_m >= 0.0) {
        return Err(EvalError::Invalid(format!("factor {speed_factor}, sigma {teleport_sigma_m}")));
    }
    let Some(t0) = fixes.first().map(|f| f.t) else { return Ok(Vec::new()) };
    let fast: Vec<Fix> = fixes
        .iter()
        .map(|f| Fix {
            t: t0 + (f.t - t0) / speed_factor,
            point: f.point,
            speed: f.speed * speed_factor,
            accel: f.accel * speed_factor * speed_factor,
        })
        .collect();
    Ok(add_gps_noise(&fast, teleport_sigma_m, rng_seed))
}

pub fn perturb_trajectory(t: &Trajectory, speed_factor: f64, teleport_sigma_m: f64, rng_seed: u64) -> Result<Trajectory, EvalError> {
    Ok(Trajectory { fixes: perturb(&t.fixes, speed_factor, teleport_sigma_m, rng_seed)?, ..t.clone() })
}

/// `|a|` samples of every drive segment, skipping each segment's entry fix.
pub fn drive_abs_accel(t: &Trajectory) -> Vec<f64> {
    t.drives().flat_map(|d| t.segment_fixes(d)[1..].iter().map(|f| f.accel.abs())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsAccelSummary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub samples: usize,
}

pub fn summarize_samples(values: &[f64]) -> Result<AbsAccelSummary, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut v: Vec<f64> = values.iter().map(|a| a.abs()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let (mean, std) = mean_std(&v);
    Ok(AbsAccelSummary { mean, median, std, samples: n })
}

/// Pooled `|a|` statistics over the drive segments of all routes.
pub fn summarize_abs_accel(routes: &[Trajectory]) -> Result<AbsAccelSummary, EvalError> {
    summarize_samples(&routes.iter().flat_map(drive_abs_accel).collect::<Vec<_>>())
}

/// Per-feature z-scoring fitted on a training set; constant features keep unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: [f64; 9],
    scale: [f64; 9],
}

impl Standardizer {
    pub fn fit(rows: &[FeatureVector]) -> Result<Self, EvalError> {
        if rows.is_empty() {
            return Err(EvalError::NoTraining);
        }
        let mut mean = [0.0; 9];
        let mut scale = [1.0; 9];
        for j in 0..9 {
            let col: Vec<f64> = rows.iter().map(|r| r.to_array()[j]).collect();
            let (m, s) = mean_std(&col);
            mean[j] = m;
            if s > 0.0 {
                scale[j] = s;
            }
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, f: &FeatureVector) -> [f64; 9] {
        let mut x = f.to_array();
        for (j, v) in x.iter_mut().enumerate() {
            *v = (*v - self.mean[j]) / self.scale[j];
        }
        x
    }
}

/// Majority label among the `k` nearest training vectors in standardized
/// space. Ties go to the label of the single nearest neighbour.
pub fn knn_classify<L: Clone + PartialEq>(train: &[(FeatureVector, L)], k: usize, query: &FeatureVector) -> Result<L, EvalError> {
    let rows: Vec<FeatureVector> = train.iter().map(|(f, _)| *f).collect();
    let z = Standardizer::fit(&rows)?;
    let train_z: Vec<[f64; 9]> = rows.iter().map(|f| z.apply(f)).collect();
    let labels: Vec<&L> = train.iter().map(|(_, l)| l).collect();
    knn_prepared(&train_z, &labels, k, &z.apply(query)).cloned()
}

fn knn_prepared<'a, L: PartialEq>(train: &[[f64; 9]], labels: &[&'a L], k: usize, q: &[f64; 9]) -> Result<&'a L, EvalError> {
    if train.is_empty() {
        return Err(EvalError::NoTraining);
    }
    if k == 0 || k > train.len() {
        return Err(EvalError::KTooLarge { k, n: train.len() });
    }
    let mut order: Vec<(f64, usize)> =
        train.iter().enumerate().map(|(i, x)| (x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes: Vec<(&L, usize)> = Vec::new();
    for &(_, i) in &order[..k] {
        match votes.iter_mut().find(|(l, _)| *l == labels[i]) {
            Some(v) => v.1 += 1,
            None => votes.push((labels[i], 1)),
        }
    }
    let top = votes.iter().map(|v| v.1).max().expect("k ≥ 1");
    let nearest = labels[order[0].1];
    let leaders: Vec<&L> = votes.iter().filter(|v| v.1 == top).map(|v| v.0).collect();
    Ok(if leaders.len() == 1 { leaders[0] } else { nearest })
}

/// Mean held-out accuracy over `iterations` random splits, each holding out
/// `test_fraction` of the data. Standardization is refitted per split.
pub fn holdout_accuracy<L: Clone + PartialEq>(
    data: &[(FeatureVector, L)],
    k: usize,
    test_fraction: f64,
    iterations: usize,
    rng_seed: u64,
) -> Result<f64, EvalError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) || iterations == 0 {
        return Err(EvalError::Invalid(format!("test fraction {test_fraction}, {iterations} iterations")));
    }
    let n_test = ((data.len() as f64 * test_fraction).round() as usize).max(1);
    if data.len() < n_test + k {
        return Err(EvalError::KTooLarge { k, n: data.len().saturating_sub(n_test) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for _ in 0..iterations {
        idx.shuffle(&mut rng);
        let (test, train) = idx.split_at(n_test);
        let rows: Vec<FeatureVector> = train.iter().map(|&i| data[i].0).collect();
        let z = Standardizer::fit(&rows)?;
        let train_z: Vec<[f64; 9]> = rows.iter().map(|f| z.apply(f)).collect();
        let labels: Vec<&L> = train.iter().map(|&i| &data[i].1).collect();
        let mut correct = 0;
        for &i in test {
            if *knn_prepared(&train_z, &labels, k, &z.apply(&data[i].0))? == data[i].1 {
                correct += 1;
            }
        }
        total += correct as f64 / n_test as f64;
    }
    Ok(total / iterations as f64)
}

/// Delimited text with the 9 feature names as header.
pub fn features_to_csv(rows: &[FeatureVector]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FeatureVector::NAMES)?;
    for r in rows {
        w.write_record(r.to_array().iter().map(|v| v.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;

    fn straight(n: usize, v: f64) -> Vec<Fix> {
        let p = GeoPoint::new(0.0, 0.0).unwrap();
        (0..n).map(|k| Fix { t: 100.0 + k as f64, point: p.destination(0.0, v * k as f64), speed: v, accel: 0.0 }).collect()
    }

    #[test]
    fn uniform_motion_features() {
        let f = extract_features(&straight(11, 10.0)).unwrap();
        assert_eq!((f.std_accel, f.max_speed, f.idle_time_s), (0.0, 10.0, 0.0));
        assert!((f.distance_m - 100.0).abs() < 1e-6);
        assert_eq!(f.to_array().len(), 9);
    }

    #[test]
    fn stationary_track_is_all_idle() {
        let f = extract_features(&straight(30, 0.0)).unwrap();
        assert_eq!(f.idle_time_s, 29.0);
        assert_eq!(f.distance_m, 0.0);
        assert!(extract_features(&straight(1, 0.0)).is_err());
    }

    #[test]
    fn missing_annotations_are_differenced() {
        let mut fixes = straight(5, 4.0);
        fixes.iter_mut().for_each(|f| {
            f.speed = f64::NAN;
            f.accel = f64::NAN;
        });
        let f = extract_features(&fixes).unwrap();
        assert!((f.max_speed - 4.0).abs() < 1e-6 && f.max_accel.abs() < 1e-6);
    }

    #[test]
    fn perturb_identity_and_compression() {
        let fixes = straight(21, 3.0);
        assert_eq!(perturb(&fixes, 1.0, 0.0, 1).unwrap(), fixes);
        let fast = perturb(&fixes, 5.0, 0.0, 1).unwrap();
        assert_eq!(fast.last().unwrap().t - fast[0].t, 4.0);
        assert_eq!(extract_features(&fast).unwrap().max_speed, 15.0);
        assert!(perturb(&fixes, 0.5, 0.0, 1).is_err());
    }

    #[test]
    fn summary_of_constant_magnitudes() {
        let s = summarize_samples(&[0.5, -0.5, 0.5, -0.5]).unwrap();
        assert_eq!((s.mean, s.median, s.std), (0.5, 0.5, 0.0));
        assert!(summarize_samples(&[]).is_err());
        let a = summarize_samples(&[0.1, 0.9, 0.3]).unwrap();
        let b = summarize_samples(&[0.9, 0.3, 0.1]).unwrap();
        assert_eq!(a, b);
    }

    fn fv(x: f64) -> FeatureVector {
        FeatureVector {
            max_accel: x,
            min_accel: -x,
            mean_accel: 0.0,
            std_accel: x / 2.0,
            mean_abs_accel: x / 3.0,
            std_abs_accel: x / 4.0,
            max_speed: 10.0 * x,
            idle_time_s: 5.0,
            distance_m: 100.0 * x,
        }
    }

    #[test]
    fn knn_prefers_duplicates_and_breaks_ties_by_nearest() {
        let train = vec![(fv(1.0), "a"), (fv(2.0), "b"), (fv(3.0), "c")];
        assert_eq!(knn_classify(&train, 1, &fv(2.0)).unwrap(), "b");
        // one vote each: nearest wins
        assert_eq!(knn_classify(&train, 3, &fv(2.9)).unwrap(), "c");
        assert!(knn_classify::<&str>(&[], 1, &fv(1.0)).is_err());
        assert!(knn_classify(&train, 4, &fv(1.0)).is_err());
    }

    #[test]
    fn features_csv_has_nine_columns() {
        let text = features_to_csv(&[fv(1.0)]).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 9);
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 9);
    }
}
